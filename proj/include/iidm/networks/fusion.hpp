#pragma once

#include "iidm/networks/layers.hpp"

namespace iidm {

struct FusionSpec {
  int heads = 1;
  int proj_width = 0;     // 0: same as the UNet channel width
  double mlp_ratio = 2.0;  // hidden width of the per-position MLP
  int min_level = 1;       // finest UNet level that gets fused (0 = full resolution)
};

/// Cross-attention from UNet features (queries) to condition features
/// (keys, values), then a per-position MLP, both residual:
///
///   h' = h + Wo softmax(Q^T K / sqrt(d)) V      Q = Wq h, K = Wk f, V = Wv f
///   out = h' + W2 relu(W1 h' + b1) + b2
template <typename Scalar>
class CrossAttentionFusion {
 public:
  CrossAttentionFusion(ParameterStore<Scalar>& store, const std::string& name, int channels, int cond_channels,
                       const FusionSpec& spec, Rng& rng);

  /// h: [C, H, W], condition: [C_f, H, W] -> [C, H, W].
  Var<Scalar> operator()(Tape<Scalar>& tape, const Var<Scalar>& h, const Var<Scalar>& condition) const;

  /// Attention output before the Wo projection, [proj_width, H*W].
  Var<Scalar> attend(Tape<Scalar>& tape, const Var<Scalar>& h, const Var<Scalar>& condition) const;

  /// Row-stochastic attention matrix of one head, [H*W (queries), H*W (keys)].
  Var<Scalar> attention_weights(Tape<Scalar>& tape, const Var<Scalar>& h, const Var<Scalar>& condition,
                                int head = 0) const;

  int channels() const { return channels_; }
  int proj_width() const { return proj_; }
  int heads() const { return heads_; }

  Linear<Scalar> query, key, value, out, mlp1, mlp2;

  static std::size_t parameter_count(int channels, int cond_channels, const FusionSpec& spec);

 private:
  void check(const Var<Scalar>& h, const Var<Scalar>& condition) const;

  int channels_;
  int cond_channels_;
  int proj_;
  int heads_;
};

}  // namespace iidm
