#include "iidm/networks/unet.hpp"

#include <cmath>

namespace iidm {

UNetConfig UNetConfig::doubling(int base, int levels) {
  if (base <= 0 || levels <= 0) throw std::invalid_argument("UNet base and level count must be positive");
  UNetConfig c;
  for (int i = 0; i < levels; ++i) {
    c.channels.push_back(base << i);
    c.channels.push_back(base << i);
  }
  return c;
}

void UNetConfig::validate() const {
  if (channels.empty() || channels.size() % 2 != 0) {
    throw std::invalid_argument("UNet channel tuple needs two entries per level, got " +
                                std::to_string(channels.size()));
  }
  for (int c : channels)
    if (c <= 0) throw std::invalid_argument("UNet channel counts must be positive");
}

template <typename Scalar>
ConditionPyramid<Scalar>::ConditionPyramid(ParameterStore<Scalar>& store, const std::string& name, int channels,
                                           int levels, Rng& rng) {
  if (levels < 0) throw std::invalid_argument("pyramid levels must be nonnegative");
  for (int i = 1; i <= levels; ++i)
    convs_.push_back(Conv2d<Scalar>::create(store, name + ".conv" + std::to_string(i), channels, channels, 3, 2, 1, rng));
}

template <typename Scalar>
std::vector<Var<Scalar>> ConditionPyramid<Scalar>::operator()(Tape<Scalar>& tape, const Var<Scalar>& f0) const {
  const Shape& s = f0.shape();
  const int factor = 1 << levels();
  if (s.size() != 3 || s[1] % factor != 0 || s[2] % factor != 0) {
    throw ShapeError("condition pyramid: spatial dims of " + shape_string(s) + " not divisible by " +
                     std::to_string(factor));
  }
  std::vector<Var<Scalar>> out{f0};
  for (const auto& conv : convs_) out.push_back(conv(tape, out.back()));
  return out;
}

template <typename Scalar>
TimeEmbedding<Scalar>::TimeEmbedding(ParameterStore<Scalar>& store, const std::string& name, int width, Rng& rng)
    : width_(width),
      l1_(Linear<Scalar>::create(store, name + ".l1", kSinusoidDim, width, rng)),
      l2_(Linear<Scalar>::create(store, name + ".l2", width, width, rng)) {}

template <typename Scalar>
BasicTensor<Scalar> TimeEmbedding<Scalar>::sinusoid(double gamma) {
  constexpr int half = kSinusoidDim / 2;
  BasicTensor<Scalar> e({kSinusoidDim, 1});
  const double pos = 1000.0 * gamma;
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / half);
    e[static_cast<std::size_t>(k)] = static_cast<Scalar>(std::sin(pos * freq));
    e[static_cast<std::size_t>(k + half)] = static_cast<Scalar>(std::cos(pos * freq));
  }
  return e;
}

template <typename Scalar>
Var<Scalar> TimeEmbedding<Scalar>::operator()(Tape<Scalar>& tape, double gamma) const {
  return l2_(tape, relu(l1_(tape, tape.constant(sinusoid(gamma)))));
}

template <typename Scalar>
UNet<Scalar>::UNet(UNetConfig config, UNetOptions options, ParameterStore<Scalar>& store, Rng& rng,
                   const std::string& name)
    : config_(std::move(config)), options_(options) {
  config_.validate();
  const int levels = config_.levels();
  const int e = options_.time_width;
  int cin = options_.in_channels;
  for (int i = 0; i < levels; ++i) {
    const std::string n = name + ".down" + std::to_string(i);
    down_.push_back(Level{Conv2d<Scalar>::create(store, n + ".a", cin, config_.a(i), 3, 1, 1, rng),
                          Conv2d<Scalar>::create(store, n + ".b", config_.a(i), config_.b(i), 3, 1, 1, rng),
                          Linear<Scalar>::create(store, n + ".t", e, config_.a(i), rng)});
    cin = config_.b(i);
  }
  up_.resize(static_cast<std::size_t>(std::max(levels - 1, 0)));
  for (int i = levels - 2; i >= 0; --i) {
    const std::string n = name + ".up" + std::to_string(i);
    auto& u = up_[static_cast<std::size_t>(i)];
    u.up.emplace(store, n + ".implicit", config_.b(i + 1), config_.b(i), config_.b(i), rng);
    u.conv_a = Conv2d<Scalar>::create(store, n + ".a", 2 * config_.b(i), config_.a(i), 3, 1, 1, rng);
    u.conv_b = Conv2d<Scalar>::create(store, n + ".b", config_.a(i), config_.b(i), 3, 1, 1, rng);
    u.time_bias = Linear<Scalar>::create(store, n + ".t", e, config_.a(i), rng);
  }
  fusion_.resize(static_cast<std::size_t>(levels));
  for (int i = levels - 1; i >= 0; --i) {
    if (fuses(i)) {
      fusion_[static_cast<std::size_t>(i)].emplace(store, name + ".fuse" + std::to_string(i), config_.b(i),
                                                   options_.cond_channels, options_.fusion, rng);
    }
  }
  head_ = Conv2d<Scalar>::create(store, name + ".head", config_.b(0), options_.out_channels, 1, 1, 0, rng);
}

template <typename Scalar>
bool UNet<Scalar>::fuses(int level) const {
  return options_.cond_channels > 0 && level >= options_.fusion.min_level && level < config_.levels();
}

template <typename Scalar>
int UNet<Scalar>::fused_max_level() const {
  return fuses(config_.levels() - 1) ? config_.levels() - 1 : -1;
}

template <typename Scalar>
std::size_t UNet<Scalar>::parameter_count(const UNetConfig& config, const UNetOptions& options) {
  config.validate();
  const int levels = config.levels();
  const int e = options.time_width;
  std::size_t n = 0;
  int cin = options.in_channels;
  for (int i = 0; i < levels; ++i) {
    n += Conv2d<Scalar>::parameter_count(cin, config.a(i), 3) +
         Conv2d<Scalar>::parameter_count(config.a(i), config.b(i), 3) +
         Linear<Scalar>::parameter_count(e, config.a(i));
    cin = config.b(i);
  }
  for (int i = 0; i + 1 < levels; ++i) {
    n += ImplicitUpsampler<Scalar>::parameter_count(config.b(i + 1), config.b(i), config.b(i)) +
         Conv2d<Scalar>::parameter_count(2 * config.b(i), config.a(i), 3) +
         Conv2d<Scalar>::parameter_count(config.a(i), config.b(i), 3) + Linear<Scalar>::parameter_count(e, config.a(i));
  }
  if (options.cond_channels > 0)
    for (int i = std::max(options.fusion.min_level, 0); i < levels; ++i)
      n += CrossAttentionFusion<Scalar>::parameter_count(config.b(i), options.cond_channels, options.fusion);
  return n + Conv2d<Scalar>::parameter_count(config.b(0), options.out_channels, 1);
}

template <typename Scalar>
Var<Scalar> UNet<Scalar>::block(Tape<Scalar>& tape, const Conv2d<Scalar>& conv_a, const Conv2d<Scalar>& conv_b,
                                const Linear<Scalar>& time_bias, const Var<Scalar>& x, const Var<Scalar>& time) const {
  auto t = reshape(time_bias(tape, relu(time)), {conv_a.out_channels()});
  auto a = relu(add_channel_bias(conv_a(tape, x), t));
  return relu(conv_b(tape, a));
}

template <typename Scalar>
Var<Scalar> UNet<Scalar>::operator()(Tape<Scalar>& tape, const Var<Scalar>& x, const std::vector<Var<Scalar>>& condition,
                                     const Var<Scalar>& time) const {
  const int levels = config_.levels();
  const Shape& s = x.shape();
  const int factor = 1 << (levels - 1);
  if (s.size() != 3 || s[0] != options_.in_channels) {
    throw ShapeError("unet: expected " + std::to_string(options_.in_channels) + " input channels, got " +
                     shape_string(s));
  }
  if (s[1] % factor != 0 || s[2] % factor != 0) {
    throw ShapeError("unet: spatial dims " + shape_string(s) + " not divisible by " + std::to_string(factor) +
                     " for " + std::to_string(levels) + " levels");
  }
  if (static_cast<int>(condition.size()) <= fused_max_level()) {
    throw ShapeError("unet: fusion needs condition levels 0.." + std::to_string(fused_max_level()) + ", got " +
                     std::to_string(condition.size()));
  }

  auto fuse = [&](int level, const Var<Scalar>& h) {
    const auto& f = fusion_[static_cast<std::size_t>(level)];
    if (!f) return h;
    try {
      return (*f)(tape, h, condition[static_cast<std::size_t>(level)]);
    } catch (const ShapeError& e) {
      throw ShapeError("unet level " + std::to_string(level) + ": " + e.what());
    }
  };

  std::vector<Var<Scalar>> skips;
  Var<Scalar> h = x;
  for (int i = 0; i < levels; ++i) {
    if (i > 0) h = avg_pool2(h);
    const auto& l = down_[static_cast<std::size_t>(i)];
    h = block(tape, l.conv_a, l.conv_b, l.time_bias, h, time);
    skips.push_back(h);
  }
  h = fuse(levels - 1, h);
  for (int i = levels - 2; i >= 0; --i) {
    const auto& u = up_[static_cast<std::size_t>(i)];
    const Shape& skip = skips[static_cast<std::size_t>(i)].shape();
    Var<Scalar> up;
    try {
      up = (*u.up)(tape, h, {skip[1], skip[2]});
    } catch (const ShapeError& e) {
      throw ShapeError("unet level " + std::to_string(i) + ": " + e.what());
    }
    h = block(tape, u.conv_a, u.conv_b, u.time_bias, concat<Scalar>({up, skips[static_cast<std::size_t>(i)]}), time);
    h = fuse(i, h);
  }
  return head_(tape, h);
}

template class ConditionPyramid<float>;
template class ConditionPyramid<double>;
template class TimeEmbedding<float>;
template class TimeEmbedding<double>;
template class UNet<float>;
template class UNet<double>;

}  // namespace iidm
