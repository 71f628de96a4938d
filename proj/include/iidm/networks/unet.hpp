#pragma once

#include "iidm/networks/fusion.hpp"
#include "iidm/networks/implicit.hpp"
#include "iidm/networks/layers.hpp"

#include <optional>
#include <vector>

namespace iidm {

/// Two channel counts per level, (a_0, b_0, a_1, b_1, ...): level i runs
/// conv3 -> a_i -> conv3 -> b_i. The last level is the bottleneck.
struct UNetConfig {
  std::vector<int> channels;

  static UNetConfig teacher() { return {{64, 64, 128, 128, 256, 256, 512, 512, 1024, 1024}}; }
  static UNetConfig distilled() { return {{44, 44, 88, 88, 176, 176, 352, 352, 704, 704}}; }
  /// (b, b, 2b, 2b, ...) over `levels` levels.
  static UNetConfig doubling(int base, int levels);

  int levels() const { return static_cast<int>(channels.size() / 2); }
  int a(int level) const { return channels.at(static_cast<std::size_t>(2 * level)); }
  int b(int level) const { return channels.at(static_cast<std::size_t>(2 * level + 1)); }
  void validate() const;
};

/// f(i) = Conv_i(f(i-1)), 3x3 stride-2 convolutions at constant width.
template <typename Scalar>
class ConditionPyramid {
 public:
  ConditionPyramid(ParameterStore<Scalar>& store, const std::string& name, int channels, int levels, Rng& rng);

  /// [f0, f1, ..., f_levels]. Spatial dims of f0 must be divisible by 2^levels.
  std::vector<Var<Scalar>> operator()(Tape<Scalar>& tape, const Var<Scalar>& f0) const;

  int levels() const { return static_cast<int>(convs_.size()); }

 private:
  std::vector<Conv2d<Scalar>> convs_;
};

/// 64-d sinusoid of the noise level, then Linear -> relu -> Linear.
template <typename Scalar>
class TimeEmbedding {
 public:
  static constexpr int kSinusoidDim = 64;

  TimeEmbedding(ParameterStore<Scalar>& store, const std::string& name, int width, Rng& rng);

  /// [width, 1]
  Var<Scalar> operator()(Tape<Scalar>& tape, double gamma) const;

  static BasicTensor<Scalar> sinusoid(double gamma);

  int width() const { return width_; }

 private:
  int width_;
  Linear<Scalar> l1_, l2_;
};

struct UNetOptions {
  int in_channels = 1;
  int out_channels = 1;
  int time_width = 64;
  /// Condition channels for fusion; 0 disables fusion.
  int cond_channels = 0;
  FusionSpec fusion;
};

/// Encoder levels with skips, a bottleneck, and decoder levels that upsample
/// with ImplicitUpsampler, concatenate the skip and (optionally) fuse with the
/// condition pyramid. Levels from fusion.min_level up to the bottleneck fuse.
template <typename Scalar>
class UNet {
 public:
  UNet(UNetConfig config, UNetOptions options, ParameterStore<Scalar>& store, Rng& rng, const std::string& name = "unet");

  /// x: [in_channels, H, W]; condition: pyramid levels 0..fused_max_level()
  /// (ignored without fusion); time: [time_width, 1]. Returns [out_channels, H, W].
  Var<Scalar> operator()(Tape<Scalar>& tape, const Var<Scalar>& x, const std::vector<Var<Scalar>>& condition,
                         const Var<Scalar>& time) const;

  const UNetConfig& config() const { return config_; }
  bool fuses(int level) const;
  /// Deepest fused level, or -1 without fusion.
  int fused_max_level() const;

  static std::size_t parameter_count(const UNetConfig& config, const UNetOptions& options);

 private:
  struct Level {
    Conv2d<Scalar> conv_a, conv_b;
    Linear<Scalar> time_bias;
  };
  struct UpLevel {
    std::optional<ImplicitUpsampler<Scalar>> up;
    Conv2d<Scalar> conv_a, conv_b;
    Linear<Scalar> time_bias;
  };

  Var<Scalar> block(Tape<Scalar>& tape, const Conv2d<Scalar>& conv_a, const Conv2d<Scalar>& conv_b,
                    const Linear<Scalar>& time_bias, const Var<Scalar>& x, const Var<Scalar>& time) const;

  UNetConfig config_;
  UNetOptions options_;
  std::vector<Level> down_;
  std::vector<UpLevel> up_;  // index i: decoder level i (0 .. levels-2)
  std::vector<std::optional<CrossAttentionFusion<Scalar>>> fusion_;  // per level
  Conv2d<Scalar> head_;
};

}  // namespace iidm
