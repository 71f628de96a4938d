#pragma once

#include "iidm/networks/unet.hpp"
#include "iidm/networks/vgg.hpp"

#include <memory>
#include <optional>

namespace iidm {

struct DenoiserConfig {
  int bands = 4;
  /// Feature head producing f0; without one, f0 is the input image itself.
  std::optional<VggConfig> extractor;
  UNetConfig unet = UNetConfig::doubling(16, 3);
  bool fusion = true;
  FusionSpec fusion_spec;
  int time_width = 64;

  int f0_channels() const { return extractor ? extractor->head_channels() : bands; }
  void validate() const;
};

/// Noise predictor eps_theta(x, t, y_t, gamma_t): f0 from the feature head,
/// UNet on concat(y_t, f0), condition pyramid from f0 for fused levels, and a
/// sinusoidal embedding of gamma_t added as a channel bias at every level.
template <typename Scalar>
class Denoiser {
 public:
  Denoiser(DenoiserConfig config, Rng& rng);
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;

  /// x: [bands, H, W], y_t: [1, H, W] -> predicted noise [1, H, W].
  Var<Scalar> operator()(Tape<Scalar>& tape, const BasicTensor<Scalar>& x, const Var<Scalar>& y_t, double gamma) const;

  const DenoiserConfig& config() const { return config_; }
  ParameterStore<Scalar>& parameters() { return store_; }
  const ParameterStore<Scalar>& parameters() const { return store_; }

  /// Closed-form count for a config, without building the model.
  static std::size_t parameter_count(const DenoiserConfig& config);

 private:
  DenoiserConfig config_;
  ParameterStore<Scalar> store_;
  std::unique_ptr<VggFeatures<Scalar>> extractor_;
  std::unique_ptr<ConditionPyramid<Scalar>> pyramid_;
  std::unique_ptr<TimeEmbedding<Scalar>> time_;
  std::unique_ptr<UNet<Scalar>> unet_;
};

UNetOptions unet_options(const DenoiserConfig& config);

}  // namespace iidm
