#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ood/tensor.hpp"

namespace ood {

enum class LayerKind { Dense, Conv2d, Relu, AvgPool2d, Flatten, InstanceNorm };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::int64_t in = 0, out = 0;          // dense
  std::int64_t in_ch = 0, out_ch = 0;    // conv2d
  int ksize = 0, stride = 1, padding = 0;
  int window = 0;                        // avgpool2d
  double eps = 1e-5;                     // instance_norm

  static LayerSpec dense(std::int64_t in, std::int64_t out);
  static LayerSpec conv2d(std::int64_t in_ch, std::int64_t out_ch, int ksize,
                          int stride = 1, int padding = 0);
  static LayerSpec relu();
  static LayerSpec avgpool2d(int window);
  static LayerSpec flatten();
  static LayerSpec instance_norm(double eps = 1e-5);
};

struct NetworkConfig {
  std::vector<LayerSpec> layers;
  Shape input_shape;       // per sample, e.g. {1,28,28} or {784}
  int encoder_cut = -1;    // layer index whose output is z
  std::vector<int> taps;   // layer indices exported as feature maps
  std::uint64_t seed = 0;  // parameter init seed
  std::string id;          // registry name, informational
};

/// Feed-forward layer stack over the tensor ops. Forward is pure; parameters
/// are leaf tensors owned by the network and mutated only by optimizers.
class Network {
 public:
  explicit Network(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }
  const Shape& input_shape() const { return cfg_.input_shape; }
  std::int64_t input_dim() const;
  std::int64_t latent_dim() const;
  std::int64_t logit_dim() const;
  // Per-sample output shape of each layer.
  const std::vector<Shape>& layer_shapes() const { return layer_shapes_; }

  struct Forward {
    Tensor z;
    Tensor logits;
    std::vector<Tensor> taps;
  };
  /// Single sample; x shape must equal input_shape. Differentiable when a
  /// tape is active and x (or a parameter) requires grad.
  Forward forward(const Tensor& x, bool want_taps = false) const;

  struct BatchForward {
    Tensor z;       // [B, latent_dim]
    Tensor logits;  // [B, logit_dim]
  };
  /// x shape must be {B} + input_shape.
  BatchForward forward_batch(const Tensor& x) const;

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  void set_params_requires_grad(bool on);

  /// Parameter tensors of a given layer (dense: weight [in,out], bias [out];
  /// conv2d: kernels [F,C,kh,kw]); empty for parameterless layers.
  std::vector<Tensor> layer_params(int layer_index) const;

 private:
  Tensor apply_layer(const LayerSpec& spec, std::size_t param_base, const Tensor& x,
                     bool batched) const;

  NetworkConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::size_t> layer_param_base_;  // index into params_ per layer
  std::vector<Shape> layer_shapes_;
};

}  // namespace ood
