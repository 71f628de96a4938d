#include "iidm/networks/implicit.hpp"

#include <cmath>

namespace iidm {

template <typename Scalar>
ImplicitUpsampler<Scalar>::ImplicitUpsampler(ParameterStore<Scalar>& store, const std::string& name, int in_channels,
                                             int out_channels, int hidden, Rng& rng)
    : in_(in_channels), out_(out_channels), hidden_(hidden) {
  if (in_channels <= 0 || out_channels <= 0 || hidden <= 0) throw ShapeError(name + ": widths must be positive");
  const double s1 = std::sqrt(2.0 / (in_channels + 2));
  auto wf = draw_normal<Scalar>(rng, {hidden, in_channels});
  wf.vec() *= static_cast<Scalar>(s1);
  auto wc = draw_normal<Scalar>(rng, {hidden, 2});
  wc.vec() *= static_cast<Scalar>(s1);
  auto w2v = draw_normal<Scalar>(rng, {out_channels, hidden});
  w2v.vec() *= static_cast<Scalar>(std::sqrt(2.0 / hidden));
  w_feature = &store.add(name + ".wf", std::move(wf));
  w_coord = &store.add(name + ".wc", std::move(wc));
  b1 = &store.add(name + ".b1", BasicTensor<Scalar>({hidden}));
  w2 = &store.add(name + ".w2", std::move(w2v));
  b2 = &store.add(name + ".b2", BasicTensor<Scalar>({out_channels}));
}

template <typename Scalar>
Var<Scalar> ImplicitUpsampler<Scalar>::operator()(Tape<Scalar>& tape, const Var<Scalar>& coarse) const {
  const Shape& s = coarse.shape();
  if (s.size() != 3) throw ShapeError("implicit upsample expects [C, H, W], got " + shape_string(s));
  return (*this)(tape, coarse, {2 * s[1], 2 * s[2]});
}

template <typename Scalar>
Var<Scalar> ImplicitUpsampler<Scalar>::operator()(Tape<Scalar>& tape, const Var<Scalar>& coarse,
                                                  std::array<int, 2> target) const {
  const Shape& s = coarse.shape();
  if (s.size() != 3 || s[0] != in_) {
    throw ShapeError("implicit upsample expects " + std::to_string(in_) + " channels, got " + shape_string(s));
  }
  if (target[0] != 2 * s[1] || target[1] != 2 * s[2]) {
    throw ShapeError("implicit upsample only doubles: " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                     " cannot map to " + std::to_string(target[0]) + "x" + std::to_string(target[1]));
  }
  const int h = target[0], w = target[1];

  // Feature term first at coarse resolution (cheaper), then replicated.
  auto wf = reshape(tape.parameter(*w_feature), {hidden_, in_, 1, 1});
  auto feat = upsample_nearest2(conv2d(coarse, wf, std::nullopt, 1, 0));

  BasicTensor<Scalar> offsets({2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      offsets.at(0, y, x) = y % 2 ? Scalar(0.5) : Scalar(-0.5);
      offsets.at(1, y, x) = x % 2 ? Scalar(0.5) : Scalar(-0.5);
    }
  auto wc = reshape(tape.parameter(*w_coord), {hidden_, 2, 1, 1});
  auto coord = conv2d(tape.constant(std::move(offsets)), wc, tape.parameter(*b1), 1, 0);

  auto hidden = relu(add(feat, coord));
  auto k2 = reshape(tape.parameter(*w2), {out_, hidden_, 1, 1});
  return conv2d(hidden, k2, tape.parameter(*b2), 1, 0);
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> ImplicitUpsampler<Scalar>::query(const BasicTensor<Scalar>& coarse, double y,
                                                                          double x) const {
  if (coarse.rank() != 3 || coarse.dim(0) != in_) throw ShapeError("implicit query: bad coarse shape");
  const int cy = std::clamp(static_cast<int>(std::floor(y)), 0, coarse.dim(1) - 1);
  const int cx = std::clamp(static_cast<int>(std::floor(x)), 0, coarse.dim(2) - 1);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z(in_);
  for (int c = 0; c < in_; ++c) z(c) = coarse.at(c, cy, cx);
  Eigen::Matrix<Scalar, 2, 1> o;
  o << static_cast<Scalar>(2.0 * (y - cy) - 1.0), static_cast<Scalar>(2.0 * (x - cx) - 1.0);
  auto wf = w_feature->value.matrix();
  auto wc = w_coord->value.matrix();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> pre = wf * z + wc * o + b1->value.vec();
  return w2->value.matrix() * pre.cwiseMax(Scalar(0)) + b2->value.vec();
}

template class ImplicitUpsampler<float>;
template class ImplicitUpsampler<double>;

}  // namespace iidm
