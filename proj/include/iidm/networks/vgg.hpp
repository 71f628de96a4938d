#pragma once

#include "iidm/networks/layers.hpp"

#include <string>
#include <vector>

namespace iidm {

/// VGG-style stack of 3x3 conv + relu layers with 2x2 max-pools after some of
/// them. The feature head is every layer before the first pool; its output
/// keeps the input's spatial size and serves as f0.
struct VggConfig {
  int in_channels = 4;
  std::vector<int> channels;
  std::vector<bool> pool_after;

  /// Standard VGG-11/16/19 convolutional trunks.
  static VggConfig vgg(int variant, int in_channels = 3);
  /// Desk-scale teacher: `depth` layers of `width` channels, no pools.
  static VggConfig toy(int in_channels = 4, int width = 32, int depth = 2);

  std::size_t depth() const { return channels.size(); }
  std::size_t head_depth() const;
  int head_channels() const { return channels.at(head_depth() - 1); }

  /// Same layout with fewer channels; each length must lie in [1, teacher].
  VggConfig distilled(const std::vector<int>& lengths) const;
  /// Only the feature head.
  VggConfig head() const;

  /// Sum over layers of 9 C_in C_out + C_out.
  std::size_t parameter_count() const;
  void validate() const;
};

template <typename Scalar>
class VggFeatures {
 public:
  /// Registers its parameters in `store`, or in a store of its own.
  VggFeatures(VggConfig config, Rng& rng, const std::string& prefix = "vgg");
  VggFeatures(VggConfig config, ParameterStore<Scalar>& store, Rng& rng, const std::string& prefix = "vgg");
  VggFeatures(const VggFeatures&) = delete;
  VggFeatures& operator=(const VggFeatures&) = delete;

  const VggConfig& config() const { return config_; }
  ParameterStore<Scalar>& parameters() { return *store_; }
  const ParameterStore<Scalar>& parameters() const { return *store_; }
  const std::vector<Conv2d<Scalar>>& convs() const { return convs_; }

  /// f0: output of the feature head.
  Var<Scalar> forward(Tape<Scalar>& tape, const Var<Scalar>& image) const;

  /// Outputs of layers 1..count (post-relu, before any pool that follows).
  std::vector<Var<Scalar>> layer_outputs(Tape<Scalar>& tape, const Var<Scalar>& image, std::size_t count) const;

  /// Runs layer `index` (0-based) on the previous layer's output, applying
  /// the pool that precedes it, if any.
  Var<Scalar> layer(Tape<Scalar>& tape, std::size_t index, const Var<Scalar>& previous) const;

 private:
  VggConfig config_;
  ParameterStore<Scalar> own_;
  ParameterStore<Scalar>* store_;
  std::vector<Conv2d<Scalar>> convs_;
};

}  // namespace iidm
