#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ood {

// Element type of a tensor. Values are held as doubles in memory either way;
// F32 tensors are quantized through float after every operation, so they
// carry exactly the values a float32 pipeline would store while all
// accumulation happens in 64-bit.
enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  DType dtype = DType::F64;
  bool requires_grad = false;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily by Tape::backward
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense n-dimensional array, a cheap shared handle to its storage node.
/// Mutation is only possible through assign/fill/apply on leaves (optimizer
/// updates); everything else produces new tensors.
class Tensor {
 public:
  Tensor();  // scalar zero

  static Tensor zeros(Shape shape, DType dt = DType::F64);
  static Tensor full(Shape shape, double v, DType dt = DType::F64);
  static Tensor scalar(double v, DType dt = DType::F64);
  static Tensor from_data(Shape shape, std::span<const double> data,
                          DType dt = DType::F64);
  static Tensor from_data(Shape shape, std::initializer_list<double> data,
                          DType dt = DType::F64);

  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  DType dtype() const { return node_->dtype; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  std::span<const double> values() const { return node_->value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }

  double item() const;
  double at(std::initializer_list<std::int64_t> idx) const;

  void assign(std::span<const double> v);
  void fill(double v);
  void apply(const std::function<double(double)>& fn);

  Tensor clone() const;  // deep copy, detached from any tape, requires_grad off

  detail::NodePtr node() const { return node_; }  // internal

 private:
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;

  friend class Tape;
  friend Tensor make_op_result(Shape shape, DType dt, std::vector<double> value,
                               bool requires_grad);
};

/// Linear record of executed operations. Ops append records while a Tape is
/// active on the current thread; records are in execution order, which is a
/// topological order of the graph. backward() replays them once, in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  /// Populates grads of every requires_grad node reachable from `loss`.
  /// loss must be a scalar produced while this tape was active.
  /// Grads of all nodes touched by this tape are zeroed first, so calling
  /// backward twice on the same tape yields identical results.
  void backward(const Tensor& loss);

  void reset();
  std::size_t size() const { return records_.size(); }

  static Tape* active();

  struct Record {
    const char* op;
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    std::function<void()> pull;  // accumulate input grads from output grad
  };

  void record(const char* op, std::vector<detail::NodePtr> inputs,
              detail::NodePtr output, std::function<void()> pull);

 private:
  std::vector<Record> records_;
};

/// Activates a tape on the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---- operations ----
// All ops run eagerly; if a tape is active and an input requires grad, a
// record with the matching backward rule is appended.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Cross-correlation, x: [C,H,W] or [B,C,H,W], kernels: [F,C,kh,kw].
Tensor conv2d(const Tensor& x, const Tensor& kernels, int stride, int padding);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);               // rejects non-positive entries
Tensor log_eps(const Tensor& a, double eps);  // log(a + eps)
Tensor square(const Tensor& a);
Tensor clamp01(const Tensor& a);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor max_all(const Tensor& a);        // grad flows to the first argmax
Tensor logsumexp_all(const Tensor& a);  // max-shift stabilized

// Rowwise over the last axis; rank 1 or 2.
Tensor softmax(const Tensor& a);

// Non-overlapping window average, stride == window. x: [C,H,W] or [B,C,H,W].
Tensor avgpool2d(const Tensor& x, int window);
// Mean over H,W per channel: [C,H,W] -> [C], [B,C,H,W] -> [B,C].
Tensor global_avgpool(const Tensor& x);

// Per-channel standardization over H,W (no affine parameters).
Tensor instance_norm(const Tensor& x, double eps = 1e-5);

// a: [m,n] or [n]; b: [n]. Adds b to every row of a.
Tensor add_rowvec(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat1d(std::span<const Tensor> parts);

// Mean softmax cross-entropy over the batch. logits: [B,K].
Tensor cross_entropy_mean(const Tensor& logits, std::span<const int> labels);

// add/sub/mul with identical shapes only; scalar variants are explicit.
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace ood
