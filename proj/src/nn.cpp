#include "ood/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "ood/rng.hpp"

namespace ood {

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::AvgPool2d: return "avgpool2d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::InstanceNorm: return "instance_norm";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "dense") return LayerKind::Dense;
  if (name == "conv2d") return LayerKind::Conv2d;
  if (name == "relu") return LayerKind::Relu;
  if (name == "avgpool2d") return LayerKind::AvgPool2d;
  if (name == "flatten") return LayerKind::Flatten;
  if (name == "instance_norm") return LayerKind::InstanceNorm;
  throw std::invalid_argument("unknown layer kind: " + name);
}

LayerSpec LayerSpec::dense(std::int64_t in, std::int64_t out) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv2d(std::int64_t in_ch, std::int64_t out_ch, int ksize, int stride,
                            int padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv2d;
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  s.ksize = ksize;
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::Relu;
  return s;
}

LayerSpec LayerSpec::avgpool2d(int window) {
  LayerSpec s;
  s.kind = LayerKind::AvgPool2d;
  s.window = window;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

LayerSpec LayerSpec::instance_norm(double eps) {
  LayerSpec s;
  s.kind = LayerKind::InstanceNorm;
  s.eps = eps;
  return s;
}

namespace {

Shape propagate_shape(const LayerSpec& spec, const Shape& in, int index) {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("layer " + std::to_string(index) + " (" +
                                layer_kind_name(spec.kind) + "): " + why +
                                ", incoming shape " + shape_str(in));
  };
  switch (spec.kind) {
    case LayerKind::Dense:
      if (in.size() != 1 || in[0] != spec.in) fail("expects a vector of " + std::to_string(spec.in));
      return {spec.out};
    case LayerKind::Conv2d: {
      if (in.size() != 3 || in[0] != spec.in_ch) {
        fail("expects [C,H,W] with C=" + std::to_string(spec.in_ch));
      }
      const std::int64_t h = in[1], w = in[2];
      if (spec.ksize > h + 2 * spec.padding || spec.ksize > w + 2 * spec.padding) {
        fail("kernel larger than padded input");
      }
      const std::int64_t ho = (h + 2 * spec.padding - spec.ksize) / spec.stride + 1;
      const std::int64_t wo = (w + 2 * spec.padding - spec.ksize) / spec.stride + 1;
      return {spec.out_ch, ho, wo};
    }
    case LayerKind::Relu:
      return in;
    case LayerKind::AvgPool2d: {
      if (in.size() != 3) fail("expects [C,H,W]");
      if (spec.window > in[1] || spec.window > in[2]) fail("window larger than input");
      return {in[0], in[1] / spec.window, in[2] / spec.window};
    }
    case LayerKind::Flatten:
      return {numel(in)};
    case LayerKind::InstanceNorm:
      if (in.size() != 3) fail("expects [C,H,W]");
      return in;
  }
  fail("unhandled kind");
  return {};
}

}  // namespace

Network::Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.layers.empty()) throw std::invalid_argument("network: no layers");
  if (cfg_.input_shape.empty()) throw std::invalid_argument("network: empty input shape");
  Shape cur = cfg_.input_shape;
  int index = 0;
  for (const auto& spec : cfg_.layers) {
    layer_param_base_.push_back(params_.size());
    cur = propagate_shape(spec, cur, index);
    layer_shapes_.push_back(cur);
    auto rng = make_rng(cfg_.seed, static_cast<std::uint64_t>(index));
    if (spec.kind == LayerKind::Dense) {
      const double limit = std::sqrt(6.0 / static_cast<double>(spec.in));
      Tensor w = Tensor::zeros({spec.in, spec.out});
      w.apply([&](double) { return uniform(rng, -limit, limit); });
      Tensor b = Tensor::zeros({spec.out});
      params_.push_back(w);
      params_.push_back(b);
    } else if (spec.kind == LayerKind::Conv2d) {
      const double fan_in = static_cast<double>(spec.in_ch) * spec.ksize * spec.ksize;
      const double limit = std::sqrt(6.0 / fan_in);
      Tensor k = Tensor::zeros({spec.out_ch, spec.in_ch, spec.ksize, spec.ksize});
      k.apply([&](double) { return uniform(rng, -limit, limit); });
      params_.push_back(k);
    }
    ++index;
  }
  if (cfg_.encoder_cut < 0 || cfg_.encoder_cut >= static_cast<int>(cfg_.layers.size())) {
    throw std::invalid_argument("network: encoder_cut out of range");
  }
  for (int t : cfg_.taps) {
    if (t < 0 || t >= static_cast<int>(cfg_.layers.size())) {
      throw std::invalid_argument("network: tap index out of range");
    }
  }
}

std::int64_t Network::input_dim() const { return numel(cfg_.input_shape); }

std::int64_t Network::latent_dim() const {
  return numel(layer_shapes_[static_cast<std::size_t>(cfg_.encoder_cut)]);
}

std::int64_t Network::logit_dim() const { return numel(layer_shapes_.back()); }

void Network::set_params_requires_grad(bool on) {
  for (auto& p : params_) p.set_requires_grad(on);
}

std::vector<Tensor> Network::layer_params(int layer_index) const {
  if (layer_index < 0 || layer_index >= static_cast<int>(cfg_.layers.size())) {
    throw std::invalid_argument("layer_params: index out of range");
  }
  const auto& spec = cfg_.layers[static_cast<std::size_t>(layer_index)];
  const std::size_t base = layer_param_base_[static_cast<std::size_t>(layer_index)];
  if (spec.kind == LayerKind::Dense) return {params_[base], params_[base + 1]};
  if (spec.kind == LayerKind::Conv2d) return {params_[base]};
  return {};
}

Tensor Network::apply_layer(const LayerSpec& spec, std::size_t param_base, const Tensor& x,
                            bool batched) const {
  switch (spec.kind) {
    case LayerKind::Dense: {
      if (batched) {
        return add_rowvec(matmul(x, params_[param_base]), params_[param_base + 1]);
      }
      Tensor y = add_rowvec(matmul(reshape(x, {1, x.size()}), params_[param_base]),
                            params_[param_base + 1]);
      return reshape(y, {spec.out});
    }
    case LayerKind::Conv2d:
      return conv2d(x, params_[param_base], spec.stride, spec.padding);
    case LayerKind::Relu:
      return relu(x);
    case LayerKind::AvgPool2d:
      return avgpool2d(x, spec.window);
    case LayerKind::Flatten: {
      if (batched) return reshape(x, {x.shape()[0], x.size() / x.shape()[0]});
      return reshape(x, {x.size()});
    }
    case LayerKind::InstanceNorm:
      return instance_norm(x, spec.eps);
  }
  throw std::logic_error("unhandled layer kind");
}

Network::BatchForward Network::forward_batch(const Tensor& x) const {
  Shape expect = cfg_.input_shape;
  if (x.rank() != static_cast<int>(expect.size()) + 1 ||
      !std::equal(expect.begin(), expect.end(), x.shape().begin() + 1)) {
    throw std::invalid_argument("forward_batch: input " + shape_str(x.shape()) +
                                " does not match {B}+" + shape_str(expect));
  }
  // Dense layers need [B,n]; conv stacks need [B,C,H,W]; both match directly.
  Tensor cur = x;
  Tensor z;
  for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
    cur = apply_layer(cfg_.layers[i], layer_param_base_[i], cur, true);
    if (static_cast<int>(i) == cfg_.encoder_cut) z = cur;
  }
  BatchForward out;
  const std::int64_t bsz = x.shape()[0];
  out.z = z.rank() == 2 ? z : reshape(z, {bsz, z.size() / bsz});
  out.logits = cur.rank() == 2 ? cur : reshape(cur, {bsz, cur.size() / bsz});
  return out;
}

Network::Forward Network::forward(const Tensor& x, bool want_taps) const {
  if (x.shape() != cfg_.input_shape) {
    throw std::invalid_argument("forward: input " + shape_str(x.shape()) +
                                " does not match " + shape_str(cfg_.input_shape));
  }
  Tensor cur = x;
  Forward out;
  if (want_taps) out.taps.resize(cfg_.taps.size());
  for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
    cur = apply_layer(cfg_.layers[i], layer_param_base_[i], cur, false);
    if (static_cast<int>(i) == cfg_.encoder_cut) out.z = cur;
    if (want_taps) {
      for (std::size_t t = 0; t < cfg_.taps.size(); ++t) {
        if (cfg_.taps[t] == static_cast<int>(i)) out.taps[t] = cur;
      }
    }
  }
  out.logits = cur;
  if (out.z.rank() > 1) out.z = reshape(out.z, {out.z.size()});
  if (out.logits.rank() > 1) out.logits = reshape(out.logits, {out.logits.size()});
  return out;
}

}  // namespace ood
