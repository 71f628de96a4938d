#pragma once

#include "iidm/numerics/ops.hpp"
#include "iidm/numerics/rng.hpp"

#include <string>

namespace iidm {

/// k x k convolution with bias, He-normal initialised. Holds pointers into the
/// owning ParameterStore.
template <typename Scalar>
struct Conv2d {
  Parameter<Scalar>* weight = nullptr;  // [C_out, C_in, k, k]
  Parameter<Scalar>* bias = nullptr;    // [C_out]
  int stride = 1;
  int padding = 0;

  static Conv2d create(ParameterStore<Scalar>& store, const std::string& name, int in_channels, int out_channels,
                       int kernel, int stride, int padding, Rng& rng);

  Var<Scalar> operator()(Tape<Scalar>& tape, const Var<Scalar>& x) const;

  int in_channels() const { return weight->value.dim(1); }
  int out_channels() const { return weight->value.dim(0); }

  /// k^2 C_in C_out + C_out
  static std::size_t parameter_count(int in_channels, int out_channels, int kernel) {
    return static_cast<std::size_t>(kernel) * static_cast<std::size_t>(kernel) * static_cast<std::size_t>(in_channels) *
               static_cast<std::size_t>(out_channels) +
           static_cast<std::size_t>(out_channels);
  }
};

/// Affine map over the leading axis: [in, N] -> [out, N].
template <typename Scalar>
struct Linear {
  Parameter<Scalar>* weight = nullptr;  // [out, in]
  Parameter<Scalar>* bias = nullptr;    // [out]

  static Linear create(ParameterStore<Scalar>& store, const std::string& name, int in_features, int out_features,
                       Rng& rng);

  Var<Scalar> operator()(Tape<Scalar>& tape, const Var<Scalar>& x) const;

  static std::size_t parameter_count(int in_features, int out_features) {
    return static_cast<std::size_t>(in_features + 1) * static_cast<std::size_t>(out_features);
  }
};

/// [C, H, W] -> [C, H*W]
template <typename Scalar>
Var<Scalar> flatten_spatial(const Var<Scalar>& x);

}  // namespace iidm
