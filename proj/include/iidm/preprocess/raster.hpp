#pragma once

#include "iidm/numerics/tensor.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace iidm {

/// Plain desk-scale grid: `channels` planes of `height` x `width` floats,
/// channel-major then row-major. No georeferencing.
struct RasterGrid {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> values;
  float nodata = std::numeric_limits<float>::quiet_NaN();

  RasterGrid() = default;
  RasterGrid(int width, int height, int channels, float fill = 0.0f);
  RasterGrid(int width, int height, int channels, std::vector<float> values);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(width) +
           static_cast<std::size_t>(x);
  }
  float& at(int c, int y, int x) { return values[index(c, y, x)]; }
  float at(int c, int y, int x) const { return values[index(c, y, x)]; }

  bool is_nodata(float v) const { return std::isnan(nodata) ? std::isnan(v) : v == nodata; }
  std::size_t valid_count() const;

  /// Throws ShapeError unless dims are positive and the value count matches.
  void validate() const;

  /// [C, H, W] view of the values; nodata is copied verbatim.
  Tensor to_tensor() const;
  static RasterGrid from_tensor(const Tensor& t, float nodata = std::numeric_limits<float>::quiet_NaN());
};

/// Single-channel raster holding exactly 0 (non-forest) or 255 (forest).
class ForestMask {
 public:
  static constexpr float kForest = 255.0f;
  static constexpr float kOther = 0.0f;

  /// Rejects multi-channel grids and any value other than 0 or 255.
  explicit ForestMask(RasterGrid grid);

  const RasterGrid& grid() const { return grid_; }
  int width() const { return grid_.width; }
  int height() const { return grid_.height; }
  bool forest(int y, int x) const { return grid_.at(0, y, x) == kForest; }
  std::size_t forest_count() const;

 private:
  RasterGrid grid_;
};

}  // namespace iidm
