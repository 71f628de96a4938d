#pragma once

#include "iidm/networks/layers.hpp"

#include <array>

namespace iidm {

/// Two-layer coordinate MLP used as a 2x upsampler. Each fine cell evaluates
///
///   D(z, o) = W2 relu(Wf z + Wc o + b1) + b2
///
/// on the nearest coarse feature z and the cell's offset o inside that coarse
/// cell, o in {-0.5, 0.5}^2 on the [-1, 1]^2 cell frame.
template <typename Scalar>
class ImplicitUpsampler {
 public:
  ImplicitUpsampler(ParameterStore<Scalar>& store, const std::string& name, int in_channels, int out_channels,
                    int hidden, Rng& rng);

  /// [C_in, H, W] -> [C_out, 2H, 2W]. `target` must be exactly (2H, 2W).
  Var<Scalar> operator()(Tape<Scalar>& tape, const Var<Scalar>& coarse, std::array<int, 2> target) const;
  Var<Scalar> operator()(Tape<Scalar>& tape, const Var<Scalar>& coarse) const;

  /// D evaluated at a continuous position (y, x) in coarse-pixel units: the
  /// nearest coarse feature is at (floor y, floor x) and the offset is
  /// 2 * frac - 1 per axis.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> query(const BasicTensor<Scalar>& coarse, double y, double x) const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int hidden() const { return hidden_; }

  Parameter<Scalar>* w_feature = nullptr;  // [hidden, C_in]
  Parameter<Scalar>* w_coord = nullptr;    // [hidden, 2]  (row offset, column offset)
  Parameter<Scalar>* b1 = nullptr;         // [hidden]
  Parameter<Scalar>* w2 = nullptr;         // [C_out, hidden]
  Parameter<Scalar>* b2 = nullptr;         // [C_out]

  static std::size_t parameter_count(int in_channels, int out_channels, int hidden) {
    return static_cast<std::size_t>(hidden) * static_cast<std::size_t>(in_channels + 2 + 1) +
           static_cast<std::size_t>(out_channels) * static_cast<std::size_t>(hidden + 1);
  }

 private:
  int in_;
  int out_;
  int hidden_;
};

}  // namespace iidm
