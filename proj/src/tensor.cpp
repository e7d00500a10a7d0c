#include "ood/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ood/errors.hpp"

namespace ood {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e <= 0) {
      throw std::invalid_argument("tensor extents must be positive, got " +
                                  shape_str(shape));
    }
  }
}

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void quantize_if_f32(std::vector<double>& v, DType dt) {
  if (dt == DType::F32) {
    for (auto& x : v) x = quantize_f32(x);
  }
}

thread_local Tape* g_active_tape = nullptr;

DType promote(DType a, DType b) {
  return (a == DType::F64 || b == DType::F64) ? DType::F64 : DType::F32;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

void ensure_grad_sized(const detail::NodePtr& n) {
  if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
}

}  // namespace

Tensor make_op_result(Shape shape, DType dt, std::vector<double> value,
                      bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->dtype = dt;
  n->requires_grad = requires_grad;
  quantize_if_f32(value, dt);
  n->value = std::move(value);
  return Tensor(std::move(n));
}

// ---- Tensor ----

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(1, 0.0);
}

Tensor Tensor::zeros(Shape shape, DType dt) {
  check_shape_extents(shape);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)), 0.0);
  return make_op_result(std::move(shape), dt, std::move(v), false);
}

Tensor Tensor::full(Shape shape, double value, DType dt) {
  check_shape_extents(shape);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)), value);
  return make_op_result(std::move(shape), dt, std::move(v), false);
}

Tensor Tensor::scalar(double value, DType dt) {
  return make_op_result(Shape{}, dt, {value}, false);
}

Tensor Tensor::from_data(Shape shape, std::span<const double> data, DType dt) {
  check_shape_extents(shape);
  if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
    throw std::invalid_argument("from_data: " + std::to_string(data.size()) +
                                " values for shape " + shape_str(shape));
  }
  return make_op_result(std::move(shape), dt,
                        std::vector<double>(data.begin(), data.end()), false);
}

Tensor Tensor::from_data(Shape shape, std::initializer_list<double> data, DType dt) {
  return from_data(std::move(shape), std::span<const double>(data.begin(), data.size()), dt);
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item(): tensor has " + std::to_string(size()) +
                                " elements");
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  if (idx.size() != node_->shape.size()) {
    throw std::invalid_argument("at(): rank mismatch");
  }
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (auto i : idx) {
    if (i < 0 || i >= node_->shape[k]) throw std::invalid_argument("at(): index out of range");
    flat = flat * node_->shape[k] + i;
    ++k;
  }
  return node_->value[static_cast<std::size_t>(flat)];
}

void Tensor::assign(std::span<const double> v) {
  if (v.size() != node_->value.size()) {
    throw std::invalid_argument("assign: size mismatch");
  }
  std::copy(v.begin(), v.end(), node_->value.begin());
  quantize_if_f32(node_->value, node_->dtype);
}

void Tensor::fill(double v) {
  std::fill(node_->value.begin(), node_->value.end(),
            node_->dtype == DType::F32 ? quantize_f32(v) : v);
}

void Tensor::apply(const std::function<double(double)>& fn) {
  for (auto& x : node_->value) x = fn(x);
  quantize_if_f32(node_->value, node_->dtype);
}

Tensor Tensor::clone() const {
  return make_op_result(node_->shape, node_->dtype, node_->value, false);
}

// ---- Tape ----

Tape::~Tape() = default;

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* op, std::vector<detail::NodePtr> inputs,
                  detail::NodePtr output, std::function<void()> pull) {
  records_.push_back(Record{op, std::move(inputs), std::move(output), std::move(pull)});
}

void Tape::reset() { records_.clear(); }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (records_.empty()) {
    throw std::invalid_argument("backward: tape is empty");
  }
  for (const auto& r : records_) {
    for (const auto& in : r.inputs) {
      in->grad.assign(in->value.size(), 0.0);
    }
    r.output->grad.assign(r.output->value.size(), 0.0);
  }
  auto loss_node = loss.node();
  ensure_grad_sized(loss_node);
  std::fill(loss_node->grad.begin(), loss_node->grad.end(), 0.0);
  loss_node->grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->pull();
  }
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

// ---- op helpers ----

namespace {

bool tracing(std::initializer_list<const Tensor*> ins) {
  if (g_active_tape == nullptr) return false;
  for (auto* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

using detail::NodePtr;

// Unary elementwise op with dvalue = df(x) computed from input and output values.
Tensor unary_elementwise(const char* name, const Tensor& a,
                         const std::function<double(double)>& f,
                         const std::function<double(double, double)>& df_xy) {
  const auto& av = a.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  bool rec = tracing({&a});
  Tensor y = make_op_result(a.shape(), a.dtype(), std::move(out), rec);
  if (rec) {
    NodePtr an = a.node(), yn = y.node();
    g_active_tape->record(name, {an}, yn, [an, yn, df_xy]() {
      if (!an->requires_grad) return;
      for (std::size_t i = 0; i < an->value.size(); ++i) {
        an->grad[i] += yn->grad[i] * df_xy(an->value[i], yn->value[i]);
      }
    });
  }
  return y;
}

}  // namespace

// ---- binary elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  bool rec = tracing({&a, &b});
  Tensor y = make_op_result(a.shape(), promote(a.dtype(), b.dtype()), std::move(out), rec);
  if (rec) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    g_active_tape->record("add", {an, bn}, yn, [an, bn, yn]() {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i];
        if (bn->requires_grad) bn->grad[i] += yn->grad[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  bool rec = tracing({&a, &b});
  Tensor y = make_op_result(a.shape(), promote(a.dtype(), b.dtype()), std::move(out), rec);
  if (rec) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    g_active_tape->record("sub", {an, bn}, yn, [an, bn, yn]() {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i];
        if (bn->requires_grad) bn->grad[i] -= yn->grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  bool rec = tracing({&a, &b});
  Tensor y = make_op_result(a.shape(), promote(a.dtype(), b.dtype()), std::move(out), rec);
  if (rec) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    g_active_tape->record("mul", {an, bn}, yn, [an, bn, yn]() {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i] * bn->value[i];
        if (bn->requires_grad) bn->grad[i] += yn->grad[i] * an->value[i];
      }
    });
  }
  return y;
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_elementwise("add_scalar", a,
                           [s](double x) { return x + s; },
                           [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary_elementwise("scale", a,
                           [s](double x) { return x * s; },
                           [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// ---- unary elementwise ----

Tensor relu(const Tensor& a) {
  return unary_elementwise("relu", a,
                           [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  auto f = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary_elementwise("sigmoid", a, f,
                           [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_op(const Tensor& a) {
  return unary_elementwise("exp", a, [](double x) { return std::exp(x); },
                           [](double, double y) { return y; });
}

Tensor log_op(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) {
      throw std::invalid_argument(
          "log: non-positive entry " + std::to_string(v) +
          " (use log_eps for the stabilized variant)");
    }
  }
  return unary_elementwise("log", a, [](double x) { return std::log(x); },
                           [](double x, double) { return 1.0 / x; });
}

Tensor log_eps(const Tensor& a, double eps) {
  for (double v : a.values()) {
    if (!(v + eps > 0.0)) {
      throw std::invalid_argument("log_eps: entry " + std::to_string(v) +
                                  " + eps is non-positive");
    }
  }
  return unary_elementwise("log_eps", a,
                           [eps](double x) { return std::log(x + eps); },
                           [eps](double x, double) { return 1.0 / (x + eps); });
}

Tensor square(const Tensor& a) {
  return unary_elementwise("square", a, [](double x) { return x * x; },
                           [](double x, double) { return 2.0 * x; });
}

Tensor clamp01(const Tensor& a) {
  return unary_elementwise(
      "clamp01", a,
      [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); },
      [](double x, double) { return (x > 0.0 && x < 1.0) ? 1.0 : 0.0; });
}

// ---- matmul / transpose ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const double* ap = a.node()->value.data();
  const double* bp = b.node()->value.data();
  std::vector<double> out(static_cast<std::size_t>(m * n));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < k; ++t) acc += ap[i * k + t] * bp[t * n + j];
      out[static_cast<std::size_t>(i * n + j)] = acc;
    }
  }
  bool rec = tracing({&a, &b});
  Tensor y = make_op_result({m, n}, promote(a.dtype(), b.dtype()), std::move(out), rec);
  if (rec) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    g_active_tape->record("matmul", {an, bn}, yn, [an, bn, yn, m, k, n]() {
      const double* g = yn->grad.data();
      if (an->requires_grad) {
        double* ga = an->grad.data();
        const double* bp2 = bn->value.data();
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t t = 0; t < k; ++t) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) acc += g[i * n + j] * bp2[t * n + j];
            ga[i * k + t] += acc;
          }
      }
      if (bn->requires_grad) {
        double* gb = bn->grad.data();
        const double* ap2 = an->value.data();
        for (std::int64_t t = 0; t < k; ++t)
          for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < m; ++i) acc += ap2[i * k + t] * g[i * n + j];
            gb[t * n + j] += acc;
          }
      }
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose: expects rank 2, got " + shape_str(a.shape()));
  }
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  const double* ap = a.node()->value.data();
  std::vector<double> out(static_cast<std::size_t>(m * n));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[static_cast<std::size_t>(j * m + i)] = ap[i * n + j];
  bool rec = tracing({&a});
  Tensor y = make_op_result({n, m}, a.dtype(), std::move(out), rec);
  if (rec) {
    NodePtr an = a.node(), yn = y.node();
    g_active_tape->record("transpose", {an}, yn, [an, yn, m, n]() {
      if (!an->requires_grad) return;
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) an->grad[i * n + j] += yn->grad[j * m + i];
    });
  }
  return y;
}

// ---- conv2d ----

namespace {

struct ConvDims {
  std::int64_t batch, cin, h, w, cout, kh, kw, ho, wo;
  bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, int stride, int padding) {
  if (k.rank() != 4) {
    throw std::invalid_argument("conv2d: kernels must be [F,C,kh,kw], got " +
                                shape_str(k.shape()));
  }
  if (x.rank() != 3 && x.rank() != 4) {
    throw std::invalid_argument("conv2d: input must be [C,H,W] or [B,C,H,W], got " +
                                shape_str(x.shape()));
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  ConvDims d;
  d.batched = x.rank() == 4;
  d.batch = d.batched ? x.shape()[0] : 1;
  d.cin = x.shape()[d.batched ? 1 : 0];
  d.h = x.shape()[d.batched ? 2 : 1];
  d.w = x.shape()[d.batched ? 3 : 2];
  d.cout = k.shape()[0];
  d.kh = k.shape()[2];
  d.kw = k.shape()[3];
  if (k.shape()[1] != d.cin) {
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                " vs kernels " + shape_str(k.shape()));
  }
  if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(k.shape()) +
                                " larger than padded input " + shape_str(x.shape()));
  }
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int padding) {
  ConvDims d = conv_dims(x, kernels, stride, padding);
  const double* xp = x.node()->value.data();
  const double* kp = kernels.node()->value.data();
  std::vector<double> out(static_cast<std::size_t>(d.batch * d.cout * d.ho * d.wo));
  // Accumulation order (c, i, j ascending, single accumulator) matches the
  // im2col weight-matrix formulation, so the two paths agree bit-for-bit.
  for (std::int64_t b = 0; b < d.batch; ++b) {
    const double* xb = xp + b * d.cin * d.h * d.w;
    double* ob = out.data() + b * d.cout * d.ho * d.wo;
    for (std::int64_t f = 0; f < d.cout; ++f) {
      const double* kf = kp + f * d.cin * d.kh * d.kw;
      for (std::int64_t oy = 0; oy < d.ho; ++oy) {
        for (std::int64_t ox = 0; ox < d.wo; ++ox) {
          double acc = 0.0;
          const std::int64_t y0 = oy * stride - padding;
          const std::int64_t x0 = ox * stride - padding;
          for (std::int64_t c = 0; c < d.cin; ++c) {
            const double* xc = xb + c * d.h * d.w;
            const double* kc = kf + c * d.kh * d.kw;
            for (std::int64_t i = 0; i < d.kh; ++i) {
              const std::int64_t yy = y0 + i;
              if (yy < 0 || yy >= d.h) continue;
              for (std::int64_t j = 0; j < d.kw; ++j) {
                const std::int64_t xx = x0 + j;
                if (xx < 0 || xx >= d.w) continue;
                acc += xc[yy * d.w + xx] * kc[i * d.kw + j];
              }
            }
          }
          ob[(f * d.ho + oy) * d.wo + ox] = acc;
        }
      }
    }
  }
  Shape oshape = d.batched ? Shape{d.batch, d.cout, d.ho, d.wo} : Shape{d.cout, d.ho, d.wo};
  bool rec = tracing({&x, &kernels});
  Tensor y = make_op_result(std::move(oshape), promote(x.dtype(), kernels.dtype()),
                            std::move(out), rec);
  if (rec) {
    NodePtr xn = x.node(), kn = kernels.node(), yn = y.node();
    g_active_tape->record("conv2d", {xn, kn}, yn, [xn, kn, yn, d, stride, padding]() {
      const double* g = yn->grad.data();
      const bool need_x = xn->requires_grad;
      const bool need_k = kn->requires_grad;
      if (!need_x && !need_k) return;
      for (std::int64_t b = 0; b < d.batch; ++b) {
        const double* xb = xn->value.data() + b * d.cin * d.h * d.w;
        double* gxb = need_x ? xn->grad.data() + b * d.cin * d.h * d.w : nullptr;
        const double* gb = g + b * d.cout * d.ho * d.wo;
        for (std::int64_t f = 0; f < d.cout; ++f) {
          const double* kf = kn->value.data() + f * d.cin * d.kh * d.kw;
          double* gkf = need_k ? kn->grad.data() + f * d.cin * d.kh * d.kw : nullptr;
          for (std::int64_t oy = 0; oy < d.ho; ++oy) {
            for (std::int64_t ox = 0; ox < d.wo; ++ox) {
              const double go = gb[(f * d.ho + oy) * d.wo + ox];
              if (go == 0.0) continue;
              const std::int64_t y0 = oy * stride - padding;
              const std::int64_t x0 = ox * stride - padding;
              for (std::int64_t c = 0; c < d.cin; ++c) {
                for (std::int64_t i = 0; i < d.kh; ++i) {
                  const std::int64_t yy = y0 + i;
                  if (yy < 0 || yy >= d.h) continue;
                  for (std::int64_t j = 0; j < d.kw; ++j) {
                    const std::int64_t xx = x0 + j;
                    if (xx < 0 || xx >= d.w) continue;
                    const std::int64_t xi = (c * d.h + yy) * d.w + xx;
                    const std::int64_t ki = (c * d.kh + i) * d.kw + j;
                    if (need_x) gxb[xi] += go * kf[ki];
                    if (need_k) gkf[ki] += go * xb[xi];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return y;
}

// ---- reductions ----

namespace {

void check_nonempty(const char* op, const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument(std::string(op) + ": empty tensor");
}

}  // namespace

Tensor sum_all(const Tensor& a) {
  check_nonempty("sum", a);
  double s = 0.0;
  for (double v : a.values()) s += v;
  bool rec = tracing({&a});
  Tensor y = make_op_result(Shape{}, a.dtype(), {s}, rec);
  if (rec) {
    NodePtr an = a.node(), yn = y.node();
    g_active_tape->record("sum", {an}, yn, [an, yn]() {
      if (!an->requires_grad) return;
      const double g = yn->grad[0];
      for (auto& gi : an->grad) gi += g;
    });
  }
  return y;
}

Tensor mean_all(const Tensor& a) {
  check_nonempty("mean", a);
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  bool rec = tracing({&a});
  Tensor y = make_op_result(Shape{}, a.dtype(), {s * inv}, rec);
  if (rec) {
    NodePtr an = a.node(), yn = y.node();
    g_active_tape->record("mean", {an}, yn, [an, yn, inv]() {
      if (!an->requires_grad) return;
      const double g = yn->grad[0] * inv;
      for (auto& gi : an->grad) gi += g;
    });
  }
  return y;
}

Tensor max_all(const Tensor& a) {
  check_nonempty("max", a);
  std::size_t arg = 0;
  double best = a.values()[0];
  for (std::size_t i = 1; i < a.node()->value.size(); ++i) {
    if (a.node()->value[i] > best) {
      best = a.node()->value[i];
      arg = i;
    }
  }
  bool rec = tracing({&a});
  Tensor y = make_op_result(Shape{}, a.dtype(), {best}, rec);
  if (rec) {
    NodePtr an = a.node(), yn = y.node();
    g_active_tape->record("max", {an}, yn, [an, yn, arg]() {
      if (!an->requires_grad) return;
      an->grad[arg] += yn->grad[0];
    });
  }
  return y;
}

Tensor logsumexp_all(const Tensor& a) {
  check_nonempty("logsumexp", a);
  double m = a.values()[0];
  for (double v : a.values()) m = std::max(m, v);
  double s = 0.0;
  for (double v : a.values()) s += std::exp(v - m);
  const double lse = m + std::log(s);
  bool rec = tracing({&a});
  Tensor y = make_op_result(Shape{}, a.dtype(), {lse}, rec);
  if (rec) {
    NodePtr an = a.node(), yn = y.node();
    g_active_tape->record("logsumexp", {an}, yn, [an, yn, m, s]() {
      if (!an->requires_grad) return;
      const double g = yn->grad[0];
      for (std::size_t i = 0; i < an->value.size(); ++i) {
        an->grad[i] += g * std::exp(an->value[i] - m) / s;
      }
    });
  }
  return y;
}

Tensor softmax(const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw std::invalid_argument("softmax: expects rank 1 or 2, got " + shape_str(a.shape()));
  }
  check_nonempty("softmax", a);
  const std::int64_t cols = a.shape().back();
  const std::int64_t rows = a.size() / cols;
  const double* ap = a.node()->value.data();
  std::vector<double> out(a.node()->value.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = ap + r * cols;
    double m = row[0];
    for (std::int64_t j = 1; j < cols; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) s += std::exp(row[j] - m);
    for (std::int64_t j = 0; j < cols; ++j)
      out[static_cast<std::size_t>(r * cols + j)] = std::exp(row[j] - m) / s;
  }
  bool rec = tracing({&a});
  Tensor y = make_op_result(a.shape(), a.dtype(), std::move(out), rec);
  if (rec) {
    NodePtr an = a.node(), yn = y.node();
    g_active_tape->record("softmax", {an}, yn, [an, yn, rows, cols]() {
      if (!an->requires_grad) return;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* s = yn->value.data() + r * cols;
        const double* g = yn->grad.data() + r * cols;
        double dot = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) dot += g[j] * s[j];
        for (std::int64_t j = 0; j < cols; ++j) {
          an->grad[r * cols + j] += s[j] * (g[j] - dot);
        }
      }
    });
  }
  return y;
}

Tensor avgpool2d(const Tensor& x, int window) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw std::invalid_argument("avgpool2d: input must be [C,H,W] or [B,C,H,W], got " +
                                shape_str(x.shape()));
  }
  if (window < 1) throw std::invalid_argument("avgpool2d: window must be >= 1");
  const bool batched = x.rank() == 4;
  const std::int64_t batch = batched ? x.shape()[0] : 1;
  const std::int64_t c = x.shape()[batched ? 1 : 0];
  const std::int64_t h = x.shape()[batched ? 2 : 1];
  const std::int64_t w = x.shape()[batched ? 3 : 2];
  if (window > h || window > w) {
    throw std::invalid_argument("avgpool2d: window larger than input " + shape_str(x.shape()));
  }
  const std::int64_t ho = h / window, wo = w / window;
  const double inv = 1.0 / (static_cast<double>(window) * window);
  const double* xp = x.node()->value.data();
  std::vector<double> out(static_cast<std::size_t>(batch * c * ho * wo));
  for (std::int64_t bc = 0; bc < batch * c; ++bc) {
    const double* plane = xp + bc * h * w;
    double* oplane = out.data() + bc * ho * wo;
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (int i = 0; i < window; ++i)
          for (int j = 0; j < window; ++j)
            acc += plane[(oy * window + i) * w + ox * window + j];
        oplane[oy * wo + ox] = acc * inv;
      }
    }
  }
  Shape oshape = batched ? Shape{batch, c, ho, wo} : Shape{c, ho, wo};
  bool rec = tracing({&x});
  Tensor y = make_op_result(std::move(oshape), x.dtype(), std::move(out), rec);
  if (rec) {
    NodePtr xn = x.node(), yn = y.node();
    const std::int64_t planes = batch * c;
    g_active_tape->record("avgpool2d", {xn}, yn, [xn, yn, planes, h, w, ho, wo, window, inv]() {
      if (!xn->requires_grad) return;
      for (std::int64_t bc = 0; bc < planes; ++bc) {
        double* gx = xn->grad.data() + bc * h * w;
        const double* gy = yn->grad.data() + bc * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy)
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const double g = gy[oy * wo + ox] * inv;
            for (int i = 0; i < window; ++i)
              for (int j = 0; j < window; ++j)
                gx[(oy * window + i) * w + ox * window + j] += g;
          }
      }
    });
  }
  return y;
}

Tensor global_avgpool(const Tensor& x) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw std::invalid_argument("global_avgpool: input must be [C,H,W] or [B,C,H,W], got " +
                                shape_str(x.shape()));
  }
  const bool batched = x.rank() == 4;
  const std::int64_t batch = batched ? x.shape()[0] : 1;
  const std::int64_t c = x.shape()[batched ? 1 : 0];
  const std::int64_t hw = x.shape()[batched ? 2 : 1] * x.shape()[batched ? 3 : 2];
  const double inv = 1.0 / static_cast<double>(hw);
  const double* xp = x.node()->value.data();
  std::vector<double> out(static_cast<std::size_t>(batch * c));
  for (std::int64_t bc = 0; bc < batch * c; ++bc) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) acc += xp[bc * hw + i];
    out[static_cast<std::size_t>(bc)] = acc * inv;
  }
  Shape oshape = batched ? Shape{batch, c} : Shape{c};
  bool rec = tracing({&x});
  Tensor y = make_op_result(std::move(oshape), x.dtype(), std::move(out), rec);
  if (rec) {
    NodePtr xn = x.node(), yn = y.node();
    const std::int64_t planes = batch * c;
    g_active_tape->record("global_avgpool", {xn}, yn, [xn, yn, planes, hw, inv]() {
      if (!xn->requires_grad) return;
      for (std::int64_t bc = 0; bc < planes; ++bc) {
        const double g = yn->grad[static_cast<std::size_t>(bc)] * inv;
        for (std::int64_t i = 0; i < hw; ++i) xn->grad[bc * hw + i] += g;
      }
    });
  }
  return y;
}

Tensor instance_norm(const Tensor& x, double eps) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw std::invalid_argument("instance_norm: input must be [C,H,W] or [B,C,H,W], got " +
                                shape_str(x.shape()));
  }
  const bool batched = x.rank() == 4;
  const std::int64_t planes = (batched ? x.shape()[0] * x.shape()[1] : x.shape()[0]);
  const std::int64_t hw = x.shape()[batched ? 2 : 1] * x.shape()[batched ? 3 : 2];
  const double* xp = x.node()->value.data();
  std::vector<double> out(x.node()->value.size());
  std::vector<double> means(static_cast<std::size_t>(planes));
  std::vector<double> invs(static_cast<std::size_t>(planes));
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* plane = xp + p * hw;
    double mu = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) mu += plane[i];
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) {
      const double d = plane[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(hw);
    const double inv = 1.0 / std::sqrt(var + eps);
    means[static_cast<std::size_t>(p)] = mu;
    invs[static_cast<std::size_t>(p)] = inv;
    for (std::int64_t i = 0; i < hw; ++i) out[p * hw + i] = (plane[i] - mu) * inv;
  }
  bool rec = tracing({&x});
  Tensor y = make_op_result(x.shape(), x.dtype(), std::move(out), rec);
  if (rec) {
    NodePtr xn = x.node(), yn = y.node();
    auto mu = std::move(means);
    auto inv = std::move(invs);
    g_active_tape->record("instance_norm", {xn}, yn, [xn, yn, mu, inv, planes, hw]() {
      if (!xn->requires_grad) return;
      for (std::int64_t p = 0; p < planes; ++p) {
        const double* xv = xn->value.data() + p * hw;
        const double* g = yn->grad.data() + p * hw;
        double gmean = 0.0, gxhat = 0.0;
        const double m = mu[static_cast<std::size_t>(p)];
        const double s = inv[static_cast<std::size_t>(p)];
        for (std::int64_t i = 0; i < hw; ++i) {
          const double xhat = (xv[i] - m) * s;
          gmean += g[i];
          gxhat += g[i] * xhat;
        }
        gmean /= static_cast<double>(hw);
        gxhat /= static_cast<double>(hw);
        double* gx = xn->grad.data() + p * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double xhat = (xv[i] - m) * s;
          gx[i] += s * (g[i] - gmean - xhat * gxhat);
        }
      }
    });
  }
  return y;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  if (b.rank() != 1) {
    throw std::invalid_argument("add_rowvec: bias must be rank 1, got " + shape_str(b.shape()));
  }
  if (a.rank() == 1) return add(a, b);
  if (a.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  const double* ap = a.node()->value.data();
  const double* bp = b.node()->value.data();
  std::vector<double> out(a.node()->value.size());
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i * n + j)] = ap[i * n + j] + bp[j];
  bool rec = tracing({&a, &b});
  Tensor y = make_op_result(a.shape(), promote(a.dtype(), b.dtype()), std::move(out), rec);
  if (rec) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    g_active_tape->record("add_rowvec", {an, bn}, yn, [an, bn, yn, m, n]() {
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          const double g = yn->grad[i * n + j];
          if (an->requires_grad) an->grad[i * n + j] += g;
          if (bn->requires_grad) bn->grad[j] += g;
        }
    });
  }
  return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape_extents(shape);
  if (numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  }
  bool rec = tracing({&a});
  Tensor y = make_op_result(std::move(shape), a.dtype(), a.node()->value, rec);
  if (rec) {
    NodePtr an = a.node(), yn = y.node();
    g_active_tape->record("reshape", {an}, yn, [an, yn]() {
      if (!an->requires_grad) return;
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += yn->grad[i];
    });
  }
  return y;
}

Tensor concat1d(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat1d: no parts");
  std::vector<double> out;
  bool rec = false;
  DType dt = DType::F32;
  for (const auto& p : parts) {
    if (p.rank() > 1) {
      throw std::invalid_argument("concat1d: parts must be rank 0 or 1, got " +
                                  shape_str(p.shape()));
    }
    out.insert(out.end(), p.values().begin(), p.values().end());
    if (Tape::active() && p.requires_grad()) rec = true;
    dt = promote(dt, p.dtype());
  }
  Tensor y = make_op_result({static_cast<std::int64_t>(out.size())}, dt, std::move(out), rec);
  if (rec) {
    std::vector<detail::NodePtr> ins;
    ins.reserve(parts.size());
    for (const auto& p : parts) ins.push_back(p.node());
    NodePtr yn = y.node();
    auto inputs = ins;
    g_active_tape->record("concat1d", std::move(ins), yn, [inputs, yn]() {
      std::size_t off = 0;
      for (const auto& in : inputs) {
        if (in->requires_grad) {
          for (std::size_t i = 0; i < in->value.size(); ++i) in->grad[i] += yn->grad[off + i];
        }
        off += in->value.size();
      }
    });
  }
  return y;
}

Tensor cross_entropy_mean(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy: logits must be [B,K], got " +
                                shape_str(logits.shape()));
  }
  const std::int64_t bsz = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != bsz) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) throw std::invalid_argument("cross_entropy: label out of range");
  }
  const double* lp = logits.node()->value.data();
  double loss = 0.0;
  for (std::int64_t b = 0; b < bsz; ++b) {
    const double* row = lp + b * k;
    double m = row[0];
    for (std::int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    loss += m + std::log(s) - row[labels[b]];
  }
  loss /= static_cast<double>(bsz);
  bool rec = tracing({&logits});
  Tensor y = make_op_result(Shape{}, logits.dtype(), {loss}, rec);
  if (rec) {
    NodePtr ln = logits.node(), yn = y.node();
    std::vector<int> labs(labels.begin(), labels.end());
    g_active_tape->record("cross_entropy", {ln}, yn, [ln, yn, labs, bsz, k]() {
      if (!ln->requires_grad) return;
      const double g = yn->grad[0] / static_cast<double>(bsz);
      for (std::int64_t b = 0; b < bsz; ++b) {
        const double* row = ln->value.data() + b * k;
        double m = row[0];
        for (std::int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
        for (std::int64_t j = 0; j < k; ++j) {
          const double p = std::exp(row[j] - m) / s;
          ln->grad[b * k + j] += g * (p - (j == labs[b] ? 1.0 : 0.0));
        }
      }
    });
  }
  return y;
}

}  // namespace ood
