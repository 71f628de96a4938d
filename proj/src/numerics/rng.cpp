#include "iidm/numerics/rng.hpp"

#include <cmath>
#include <numbers>

namespace iidm {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t splitmix64_finalize(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
  ++counter_;
  return splitmix64_finalize(seed_ + counter_ * kGolden);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const auto span = static_cast<unsigned __int128>(static_cast<std::uint64_t>(hi - lo) + 1);
  const auto wide = static_cast<unsigned __int128>(next_u64()) * span;
  return lo + static_cast<std::int64_t>(static_cast<std::uint64_t>(wide >> 64));
}

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t stream) const {
  return Rng(splitmix64_finalize(seed_ ^ splitmix64_finalize(stream + kGolden)), 0);
}

template <typename Scalar>
BasicTensor<Scalar> draw_normal(Rng& rng, const Shape& shape) {
  BasicTensor<Scalar> out(shape);
  auto v = out.values();
  std::size_t i = 0;
  for (; i + 1 < v.size(); i += 2) {
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    v[i] = static_cast<Scalar>(r * std::cos(a));
    v[i + 1] = static_cast<Scalar>(r * std::sin(a));
  }
  if (i < v.size()) v[i] = static_cast<Scalar>(rng.normal());
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> draw_uniform(Rng& rng, const Shape& shape, Scalar lo, Scalar hi) {
  BasicTensor<Scalar> out(shape);
  for (auto& x : out.values()) x = lo + static_cast<Scalar>(rng.uniform()) * (hi - lo);
  return out;
}

template BasicTensor<float> draw_normal<float>(Rng&, const Shape&);
template BasicTensor<double> draw_normal<double>(Rng&, const Shape&);
template BasicTensor<float> draw_uniform<float>(Rng&, const Shape&, float, float);
template BasicTensor<double> draw_uniform<double>(Rng&, const Shape&, double, double);

}  // namespace iidm
