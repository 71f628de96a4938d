#include "iidm/networks/denoiser.hpp"

#include <algorithm>

namespace iidm {

void DenoiserConfig::validate() const {
  if (bands <= 0) throw std::invalid_argument("denoiser needs at least one input band");
  if (extractor) {
    extractor->validate();
    if (extractor->in_channels != bands) {
      throw std::invalid_argument("extractor expects " + std::to_string(extractor->in_channels) +
                                  " bands but the denoiser has " + std::to_string(bands));
    }
  }
  unet.validate();
  if (time_width <= 0) throw std::invalid_argument("time width must be positive");
}

namespace {

// Deepest fused level (fusion runs from min_level through the bottleneck), or
// -1 when nothing is fused.
int pyramid_levels(const DenoiserConfig& config) {
  if (!config.fusion) return -1;
  const int deepest = config.unet.levels() - 1;
  return deepest >= std::max(config.fusion_spec.min_level, 0) ? deepest : -1;
}

}  // namespace

UNetOptions unet_options(const DenoiserConfig& config) {
  UNetOptions o;
  o.in_channels = 1 + config.f0_channels();
  o.out_channels = 1;
  o.time_width = config.time_width;
  o.cond_channels = pyramid_levels(config) >= 0 ? config.f0_channels() : 0;
  o.fusion = config.fusion_spec;
  return o;
}

template <typename Scalar>
Denoiser<Scalar>::Denoiser(DenoiserConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  if (config_.extractor) {
    extractor_ = std::make_unique<VggFeatures<Scalar>>(config_.extractor->head(), store_, rng, "extractor");
  }
  if (const int levels = pyramid_levels(config_); levels >= 0) {
    pyramid_ = std::make_unique<ConditionPyramid<Scalar>>(store_, "pyramid", config_.f0_channels(), levels, rng);
  }
  time_ = std::make_unique<TimeEmbedding<Scalar>>(store_, "time", config_.time_width, rng);
  unet_ = std::make_unique<UNet<Scalar>>(config_.unet, unet_options(config_), store_, rng, "unet");
}

template <typename Scalar>
std::size_t Denoiser<Scalar>::parameter_count(const DenoiserConfig& config) {
  config.validate();
  std::size_t n = 0;
  if (config.extractor) n += config.extractor->head().parameter_count();
  n += static_cast<std::size_t>(std::max(pyramid_levels(config), 0)) *
       Conv2d<Scalar>::parameter_count(config.f0_channels(), config.f0_channels(), 3);
  n += Linear<Scalar>::parameter_count(TimeEmbedding<Scalar>::kSinusoidDim, config.time_width) +
       Linear<Scalar>::parameter_count(config.time_width, config.time_width);
  return n + UNet<Scalar>::parameter_count(config.unet, unet_options(config));
}

template <typename Scalar>
Var<Scalar> Denoiser<Scalar>::operator()(Tape<Scalar>& tape, const BasicTensor<Scalar>& x, const Var<Scalar>& y_t,
                                         double gamma) const {
  if (x.rank() != 3 || x.dim(0) != config_.bands) {
    throw ShapeError("denoiser expects x with " + std::to_string(config_.bands) + " bands, got " +
                     shape_string(x.shape()));
  }
  if (y_t.shape() != Shape{1, x.dim(1), x.dim(2)}) {
    throw ShapeError("denoiser: y_t " + shape_string(y_t.shape()) + " does not match x " + shape_string(x.shape()));
  }
  auto xv = tape.constant(x);
  auto f0 = extractor_ ? extractor_->forward(tape, xv) : xv;
  std::vector<Var<Scalar>> condition;
  if (pyramid_) condition = (*pyramid_)(tape, f0);
  auto time = (*time_)(tape, gamma);
  return (*unet_)(tape, concat<Scalar>({y_t, f0}), condition, time);
}

template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace iidm
