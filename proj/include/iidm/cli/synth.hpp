#pragma once

#include "iidm/preprocess/raster.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace iidm {

/// Generator for the desk-scale stand-in dataset.
///
///   bands b_i   = 0.5 + 0.5 * sum_k a_k cos(2 pi (u_k x + v_k y) / S + phi_k) / sum_k |a_k|
///   forest      = (same construction, separate draw) > forest_threshold
///   density     = clamp(0.15 + 0.7 * s + noise_amplitude * n, 0, 1) on forest,
///   s           = sigmoid(6 (b_0 b_1 - 0.25) + 2.5 sin(2 pi b_2) (b_3 - 0.5))
///   non-forest  = unrelated clutter in [0, clutter_max]
///
/// Frequencies u_k, v_k are integers in [-max_frequency, max_frequency]; n is
/// a smooth unit-amplitude field built like a band.
struct SynthOptions {
  std::uint64_t seed = 7;
  int count = 250;
  int size = 64;
  int bands = 4;
  int waves = 6;
  int max_frequency = 3;
  double forest_threshold = 0.35;
  double noise_amplitude = 0.03;
  double clutter_max = 0.6;

  void validate() const;
};

struct SynthTile {
  RasterGrid x;     // [bands, size, size] in [0, 1]
  RasterGrid y;     // [1, size, size] in [0, 1], clutter outside the forest
  RasterGrid mask;  // 0 / 255
};

/// Tile `index` depends only on (seed, index).
SynthTile synth_tile(const SynthOptions& options, int index);
std::vector<SynthTile> synth_dataset(const SynthOptions& options);

/// key,value lines recording the generation parameters.
std::string synth_manifest(const SynthOptions& options);

}  // namespace iidm
