#include "iidm/preprocess/raster.hpp"

#include <algorithm>

namespace iidm {

RasterGrid::RasterGrid(int w, int h, int c, float fill) : width(w), height(h), channels(c) {
  if (w <= 0 || h <= 0 || c <= 0) throw ShapeError("raster dimensions must be positive");
  values.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill);
}

RasterGrid::RasterGrid(int w, int h, int c, std::vector<float> v)
    : width(w), height(h), channels(c), values(std::move(v)) {
  validate();
}

void RasterGrid::validate() const {
  if (width <= 0 || height <= 0 || channels <= 0) throw ShapeError("raster dimensions must be positive");
  const std::size_t expected = pixel_count() * static_cast<std::size_t>(channels);
  if (values.size() != expected) {
    throw ShapeError("raster holds " + std::to_string(values.size()) + " values, expected " +
                     std::to_string(expected) + " for " + std::to_string(width) + "x" + std::to_string(height) +
                     "x" + std::to_string(channels));
  }
}

std::size_t RasterGrid::valid_count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [&](float v) { return !is_nodata(v); }));
}

Tensor RasterGrid::to_tensor() const {
  validate();
  return Tensor({channels, height, width}, values);
}

RasterGrid RasterGrid::from_tensor(const Tensor& t, float nodata) {
  if (t.rank() != 3) throw ShapeError("raster tensor must be [C, H, W], got " + shape_string(t.shape()));
  RasterGrid g(t.dim(2), t.dim(1), t.dim(0), t.to_vector());
  g.nodata = nodata;
  return g;
}

ForestMask::ForestMask(RasterGrid grid) : grid_(std::move(grid)) {
  grid_.validate();
  if (grid_.channels != 1) throw ShapeError("forest mask must be single-channel");
  for (float v : grid_.values) {
    if (v != kForest && v != kOther) {
      throw std::invalid_argument("forest mask values must be 0 or 255, found " + std::to_string(v));
    }
  }
}

std::size_t ForestMask::forest_count() const {
  return static_cast<std::size_t>(std::count(grid_.values.begin(), grid_.values.end(), kForest));
}

}  // namespace iidm
