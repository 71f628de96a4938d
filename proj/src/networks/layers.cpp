#include "iidm/networks/layers.hpp"

#include <cmath>

namespace iidm {

template <typename Scalar>
Conv2d<Scalar> Conv2d<Scalar>::create(ParameterStore<Scalar>& store, const std::string& name, int in_channels,
                                      int out_channels, int kernel, int stride, int padding, Rng& rng) {
  if (in_channels <= 0 || out_channels <= 0) throw ShapeError(name + ": channel counts must be positive");
  auto w = draw_normal<Scalar>(rng, {out_channels, in_channels, kernel, kernel});
  w.vec() *= static_cast<Scalar>(std::sqrt(2.0 / (in_channels * kernel * kernel)));
  Conv2d c;
  c.weight = &store.add(name + ".w", std::move(w));
  c.bias = &store.add(name + ".b", BasicTensor<Scalar>({out_channels}));
  c.stride = stride;
  c.padding = padding;
  return c;
}

template <typename Scalar>
Var<Scalar> Conv2d<Scalar>::operator()(Tape<Scalar>& tape, const Var<Scalar>& x) const {
  return conv2d(x, tape.parameter(*weight), tape.parameter(*bias), stride, padding);
}

template <typename Scalar>
Linear<Scalar> Linear<Scalar>::create(ParameterStore<Scalar>& store, const std::string& name, int in_features,
                                      int out_features, Rng& rng) {
  auto w = draw_normal<Scalar>(rng, {out_features, in_features});
  w.vec() *= static_cast<Scalar>(std::sqrt(2.0 / in_features));
  Linear l;
  l.weight = &store.add(name + ".w", std::move(w));
  l.bias = &store.add(name + ".b", BasicTensor<Scalar>({out_features}));
  return l;
}

template <typename Scalar>
Var<Scalar> Linear<Scalar>::operator()(Tape<Scalar>& tape, const Var<Scalar>& x) const {
  return add_channel_bias(matmul(tape.parameter(*weight), x), tape.parameter(*bias));
}

template <typename Scalar>
Var<Scalar> flatten_spatial(const Var<Scalar>& x) {
  if (x.value().rank() != 3) throw ShapeError("flatten_spatial expects [C, H, W], got " + shape_string(x.shape()));
  return reshape(x, {x.shape()[0], x.shape()[1] * x.shape()[2]});
}

template struct Conv2d<float>;
template struct Conv2d<double>;
template struct Linear<float>;
template struct Linear<double>;
template Var<float> flatten_spatial(const Var<float>&);
template Var<double> flatten_spatial(const Var<double>&);

}  // namespace iidm
