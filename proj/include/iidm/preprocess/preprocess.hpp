#pragma once

#include "iidm/preprocess/raster.hpp"

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace iidm {

/// IPCC-style volume-to-carbon coefficients.
struct CarbonCoefficients {
  double delta = 1.90;    // volume expansion
  double rho = 0.5;       // bulk density, t/m^3
  double gamma_c = 0.5;   // carbon content rate
  double expansion = 2.439;

  void validate() const;
};

struct PixelIndex {
  int row = 0;
  int col = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

struct SurveyPlaque {
  std::string id;
  double v_ha = 0;       // m^3 per hectare
  double area_ha = 0;
  std::vector<PixelIndex> footprint;

  void validate() const;
};

/// C = expansion * delta * rho * gamma_c * (v_ha * area), in Mg.
double carbon_stock(const SurveyPlaque& plaque, const CarbonCoefficients& coeff = {});

/// Spreads each plaque's carbon over its footprint with weights proportional to
/// canopy height. Nodata canopy counts as height 0; an all-zero footprint falls
/// back to uniform weights. Pixels outside every footprint are nodata.
/// Overlapping or out-of-bounds footprints are rejected.
RasterGrid density_map(const std::vector<SurveyPlaque>& plaques, const RasterGrid& canopy,
                       const CarbonCoefficients& coeff = {});

/// Forest pixels pass through; the rest become nodata (all channels).
RasterGrid apply_mask(const RasterGrid& raster, const ForestMask& mask);

/// Row-major tiles of size x size. Trailing tiles are completed by reflect
/// padding; count per axis is ceil((extent - size) / stride) + 1.
std::vector<RasterGrid> tile(const RasterGrid& raster, int size, int stride);

struct Normalized {
  RasterGrid raster;
  float min = 0;
  float max = 0;
};

/// Affine map of valid pixels onto [0, 1]; a constant raster maps to 0.
Normalized normalize(const RasterGrid& raster);
RasterGrid denormalize(const RasterGrid& raster, float min, float max);

/// CSV with header `id,v_ha,area_ha,pixels`; pixels is `row:col;row:col;...`.
std::vector<SurveyPlaque> parse_survey_csv(std::istream& in);
std::vector<SurveyPlaque> read_survey_csv(const std::string& path);

}  // namespace iidm
