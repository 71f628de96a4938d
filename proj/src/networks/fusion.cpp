#include "iidm/networks/fusion.hpp"

#include <cmath>

namespace iidm {

namespace {

struct Widths {
  int proj;
  int hidden;
};

Widths widths(int channels, const FusionSpec& spec) {
  const int proj = spec.proj_width > 0 ? spec.proj_width : channels;
  if (spec.heads <= 0) throw std::invalid_argument("fusion head count must be positive");
  if (channels % proj != 0) {
    throw std::invalid_argument("fusion projection width " + std::to_string(proj) + " must divide channel width " +
                                std::to_string(channels));
  }
  if (proj % spec.heads != 0) {
    throw std::invalid_argument("fusion projection width " + std::to_string(proj) + " not divisible by " +
                                std::to_string(spec.heads) + " heads");
  }
  const int hidden = static_cast<int>(std::lround(spec.mlp_ratio * channels));
  if (hidden <= 0) throw std::invalid_argument("fusion MLP width must be positive");
  return {proj, hidden};
}

}  // namespace

template <typename Scalar>
CrossAttentionFusion<Scalar>::CrossAttentionFusion(ParameterStore<Scalar>& store, const std::string& name,
                                                   int channels, int cond_channels, const FusionSpec& spec, Rng& rng)
    : channels_(channels), cond_channels_(cond_channels), heads_(spec.heads) {
  const auto w = widths(channels, spec);
  proj_ = w.proj;
  query = Linear<Scalar>::create(store, name + ".q", channels, proj_, rng);
  key = Linear<Scalar>::create(store, name + ".k", cond_channels, proj_, rng);
  value = Linear<Scalar>::create(store, name + ".v", cond_channels, proj_, rng);
  out = Linear<Scalar>::create(store, name + ".o", proj_, channels, rng);
  mlp1 = Linear<Scalar>::create(store, name + ".mlp1", channels, w.hidden, rng);
  mlp2 = Linear<Scalar>::create(store, name + ".mlp2", w.hidden, channels, rng);
  // Start close to the identity map so fusion does not swamp the UNet path.
  out.weight->value.vec() *= Scalar(0.1);
  mlp2.weight->value.vec() *= Scalar(0.1);
}

template <typename Scalar>
std::size_t CrossAttentionFusion<Scalar>::parameter_count(int channels, int cond_channels, const FusionSpec& spec) {
  const auto w = widths(channels, spec);
  return Linear<Scalar>::parameter_count(channels, w.proj) + 2 * Linear<Scalar>::parameter_count(cond_channels, w.proj) +
         Linear<Scalar>::parameter_count(w.proj, channels) + Linear<Scalar>::parameter_count(channels, w.hidden) +
         Linear<Scalar>::parameter_count(w.hidden, channels);
}

template <typename Scalar>
void CrossAttentionFusion<Scalar>::check(const Var<Scalar>& h, const Var<Scalar>& condition) const {
  const Shape& hs = h.shape();
  const Shape& cs = condition.shape();
  if (hs.size() != 3 || cs.size() != 3 || hs[1] != cs[1] || hs[2] != cs[2]) {
    throw ShapeError("fusion: features " + shape_string(hs) + " and condition " + shape_string(cs) +
                     " must share spatial dims");
  }
  if (hs[0] != channels_ || cs[0] != cond_channels_) {
    throw ShapeError("fusion: expected " + std::to_string(channels_) + " feature and " +
                     std::to_string(cond_channels_) + " condition channels");
  }
}

template <typename Scalar>
Var<Scalar> CrossAttentionFusion<Scalar>::attention_weights(Tape<Scalar>& tape, const Var<Scalar>& h,
                                                            const Var<Scalar>& condition, int head) const {
  check(h, condition);
  const int d = proj_ / heads_;
  auto q = slice(query(tape, flatten_spatial(h)), head * d, d);
  auto k = slice(key(tape, flatten_spatial(condition)), head * d, d);
  auto logits = scale(matmul(q, k, true, false), static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d))));
  return softmax_rows(logits);
}

template <typename Scalar>
Var<Scalar> CrossAttentionFusion<Scalar>::attend(Tape<Scalar>& tape, const Var<Scalar>& h,
                                                 const Var<Scalar>& condition) const {
  check(h, condition);
  const int d = proj_ / heads_;
  const auto inv_sqrt_d = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(d)));
  auto q = query(tape, flatten_spatial(h));
  auto f = flatten_spatial(condition);
  auto k = key(tape, f);
  auto v = value(tape, f);
  std::vector<Var<Scalar>> heads;
  for (int i = 0; i < heads_; ++i) {
    auto qi = heads_ == 1 ? q : slice(q, i * d, d);
    auto ki = heads_ == 1 ? k : slice(k, i * d, d);
    auto vi = heads_ == 1 ? v : slice(v, i * d, d);
    auto a = softmax_rows(scale(matmul(qi, ki, true, false), inv_sqrt_d));  // [N_q, N_k]
    heads.push_back(matmul(vi, a, false, true));                           // [d, N_q]
  }
  return heads_ == 1 ? heads.front() : concat(heads);
}

template <typename Scalar>
Var<Scalar> CrossAttentionFusion<Scalar>::operator()(Tape<Scalar>& tape, const Var<Scalar>& h,
                                                     const Var<Scalar>& condition) const {
  const Shape shape = h.shape();
  auto flat = flatten_spatial(h);
  auto fused = add(flat, out(tape, attend(tape, h, condition)));
  fused = add(fused, mlp2(tape, relu(mlp1(tape, fused))));
  return reshape(fused, shape);
}

template class CrossAttentionFusion<float>;
template class CrossAttentionFusion<double>;

}  // namespace iidm
