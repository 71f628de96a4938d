#include "iidm/cli/synth.hpp"

#include "iidm/numerics/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace iidm {

void SynthOptions::validate() const {
  if (count < 1) throw std::invalid_argument("synth count must be positive");
  if (size < 16 || size % 16 != 0) throw std::invalid_argument("synth size must be a positive multiple of 16");
  if (bands < 4) throw std::invalid_argument("synth needs at least 4 bands");
  if (waves < 1 || max_frequency < 1) throw std::invalid_argument("synth needs waves >= 1 and max frequency >= 1");
  if (!(forest_threshold >= 0 && forest_threshold < 1)) throw std::invalid_argument("forest threshold outside [0, 1)");
  if (noise_amplitude < 0 || clutter_max < 0 || clutter_max > 1) throw std::invalid_argument("bad noise/clutter levels");
}

namespace {

// Sum of random low-frequency cosines rescaled into [0, 1].
std::vector<double> smooth_field(Rng& rng, const SynthOptions& o) {
  const int s = o.size;
  std::vector<double> f(static_cast<std::size_t>(s) * static_cast<std::size_t>(s), 0.0);
  double amp_total = 0;
  for (int k = 0; k < o.waves; ++k) {
    int u = 0, v = 0;
    while (u == 0 && v == 0) {
      u = static_cast<int>(rng.uniform_int(-o.max_frequency, o.max_frequency));
      v = static_cast<int>(rng.uniform_int(-o.max_frequency, o.max_frequency));
    }
    const double a = 0.2 + rng.uniform(), phase = 2 * std::numbers::pi * rng.uniform();
    amp_total += a;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        f[static_cast<std::size_t>(y * s + x)] += a * std::cos(2 * std::numbers::pi * (u * x + v * y) / s + phase);
  }
  for (double& v : f) v = 0.5 + 0.5 * v / amp_total;
  return f;
}

}  // namespace

SynthTile synth_tile(const SynthOptions& o, int index) {
  o.validate();
  Rng rng = Rng(o.seed).fork(static_cast<std::uint64_t>(index));
  const int s = o.size;
  const auto n = static_cast<std::size_t>(s) * static_cast<std::size_t>(s);
  SynthTile t{RasterGrid(s, s, o.bands), RasterGrid(s, s, 1), RasterGrid(s, s, 1)};

  std::vector<std::vector<double>> b;
  for (int c = 0; c < o.bands; ++c) {
    b.push_back(smooth_field(rng, o));
    for (std::size_t i = 0; i < n; ++i) t.x.values[static_cast<std::size_t>(c) * n + i] = static_cast<float>(b.back()[i]);
  }
  const auto forest = smooth_field(rng, o);
  const auto noise = smooth_field(rng, o);
  const auto clutter = smooth_field(rng, o);
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_forest = forest[i] > o.forest_threshold;
    t.mask.values[i] = is_forest ? 255.0f : 0.0f;
    double y;
    if (is_forest) {
      const double d0 = (b[0][i] - 0.5) / 0.15, d1 = (b[1][i] - 0.5) / 0.15, d2 = (b[2][i] - 0.5) / 0.15,
                   d3 = (b[3][i] - 0.5) / 0.15;
      const double z = 1.4 * d0 + 0.9 * d0 * d1 + 1.0 * std::sin(1.5 * d2) * d3;
      const double sig = 1 / (1 + std::exp(-z));
      y = 0.15 + 0.7 * sig + o.noise_amplitude * (2 * noise[i] - 1);
    } else {
      y = o.clutter_max * clutter[i];
    }
    t.y.values[i] = static_cast<float>(std::clamp(y, 0.0, 1.0));
  }
  return t;
}

std::vector<SynthTile> synth_dataset(const SynthOptions& o) {
  o.validate();
  std::vector<SynthTile> out;
  out.reserve(static_cast<std::size_t>(o.count));
  for (int i = 0; i < o.count; ++i) out.push_back(synth_tile(o, i));
  return out;
}

std::string synth_manifest(const SynthOptions& o) {
  std::ostringstream os;
  os.precision(10);
  os << "key,value\n"
     << "generator,smooth-cosine-v1\n"
     << "seed," << o.seed << "\ncount," << o.count << "\nsize," << o.size << "\nbands," << o.bands << "\nwaves,"
     << o.waves << "\nmax_frequency," << o.max_frequency << "\nforest_threshold," << o.forest_threshold
     << "\nnoise_amplitude," << o.noise_amplitude << "\nclutter_max," << o.clutter_max << '\n';
  return os.str();
}

}  // namespace iidm
