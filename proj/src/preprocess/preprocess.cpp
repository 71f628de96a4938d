#include "iidm/preprocess/preprocess.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace iidm {

void CarbonCoefficients::validate() const {
  for (double v : {delta, rho, gamma_c, expansion}) {
    if (!(v > 0) || !std::isfinite(v)) throw std::invalid_argument("carbon coefficients must be positive and finite");
  }
}

void SurveyPlaque::validate() const {
  if (!(v_ha >= 0) || !std::isfinite(v_ha)) throw std::invalid_argument("plaque '" + id + "': negative volume per hectare");
  if (!(area_ha > 0) || !std::isfinite(area_ha)) throw std::invalid_argument("plaque '" + id + "': area must be positive");
}

double carbon_stock(const SurveyPlaque& plaque, const CarbonCoefficients& coeff) {
  coeff.validate();
  plaque.validate();
  const double volume = plaque.v_ha * plaque.area_ha;
  return coeff.expansion * (coeff.delta * coeff.rho * coeff.gamma_c * volume);
}

RasterGrid density_map(const std::vector<SurveyPlaque>& plaques, const RasterGrid& canopy,
                       const CarbonCoefficients& coeff) {
  canopy.validate();
  if (canopy.channels != 1) throw ShapeError("canopy raster must be single-channel");
  RasterGrid out(canopy.width, canopy.height, 1, canopy.nodata);
  std::unordered_map<std::size_t, const std::string*> owner;

  for (const auto& plaque : plaques) {
    if (plaque.footprint.empty()) throw std::invalid_argument("plaque '" + plaque.id + "' has an empty footprint");
    const double stock = carbon_stock(plaque, coeff);

    std::vector<double> heights;
    heights.reserve(plaque.footprint.size());
    double total = 0;
    for (const auto& px : plaque.footprint) {
      if (px.row < 0 || px.row >= canopy.height || px.col < 0 || px.col >= canopy.width) {
        throw std::out_of_range("plaque '" + plaque.id + "' pixel " + std::to_string(px.row) + ":" +
                                std::to_string(px.col) + " lies outside the canopy raster");
      }
      const std::size_t idx = canopy.index(0, px.row, px.col);
      auto [it, inserted] = owner.emplace(idx, &plaque.id);
      if (!inserted) {
        throw std::invalid_argument("plaques '" + *it->second + "' and '" + plaque.id + "' overlap at " +
                                    std::to_string(px.row) + ":" + std::to_string(px.col));
      }
      const float h = canopy.values[idx];
      double height = canopy.is_nodata(h) ? 0.0 : static_cast<double>(h);
      if (height < 0) throw std::invalid_argument("negative canopy height inside plaque '" + plaque.id + "'");
      heights.push_back(height);
      total += height;
    }

    const double n = static_cast<double>(heights.size());
    for (std::size_t i = 0; i < heights.size(); ++i) {
      const double w = total > 0 ? heights[i] / total : 1.0 / n;
      out.at(0, plaque.footprint[i].row, plaque.footprint[i].col) = static_cast<float>(stock * w);
    }
  }
  return out;
}

RasterGrid apply_mask(const RasterGrid& raster, const ForestMask& mask) {
  raster.validate();
  if (raster.width != mask.width() || raster.height != mask.height()) {
    throw ShapeError("mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                     " but raster is " + std::to_string(raster.width) + "x" + std::to_string(raster.height));
  }
  RasterGrid out = raster;
  for (int y = 0; y < raster.height; ++y)
    for (int x = 0; x < raster.width; ++x)
      if (!mask.forest(y, x))
        for (int c = 0; c < raster.channels; ++c) out.at(c, y, x) = raster.nodata;
  return out;
}

namespace {

// numpy-style "reflect": mirror about the edge pixel without repeating it.
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

int tile_count(int extent, int size, int stride) {
  if (extent <= size) return 1;
  return (extent - size + stride - 1) / stride + 1;
}

}  // namespace

std::vector<RasterGrid> tile(const RasterGrid& raster, int size, int stride) {
  raster.validate();
  if (size <= 0 || stride <= 0) throw std::invalid_argument("tile size and stride must be positive");
  if (size > std::min(raster.width, raster.height)) {
    throw std::invalid_argument("tile size " + std::to_string(size) + " exceeds raster extent " +
                                std::to_string(raster.width) + "x" + std::to_string(raster.height));
  }
  const int nx = tile_count(raster.width, size, stride);
  const int ny = tile_count(raster.height, size, stride);
  std::vector<RasterGrid> tiles;
  tiles.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
  for (int ty = 0; ty < ny; ++ty) {
    for (int tx = 0; tx < nx; ++tx) {
      RasterGrid t(size, size, raster.channels);
      t.nodata = raster.nodata;
      for (int c = 0; c < raster.channels; ++c)
        for (int y = 0; y < size; ++y) {
          const int sy = reflect_index(ty * stride + y, raster.height);
          for (int x = 0; x < size; ++x) t.at(c, y, x) = raster.at(c, sy, reflect_index(tx * stride + x, raster.width));
        }
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

Normalized normalize(const RasterGrid& raster) {
  raster.validate();
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (float v : raster.values) {
    if (raster.is_nodata(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo > hi) throw std::invalid_argument("cannot normalize an all-nodata raster");
  Normalized out{raster, lo, hi};
  const double span = static_cast<double>(hi) - static_cast<double>(lo);
  for (float& v : out.raster.values) {
    if (raster.is_nodata(v)) continue;
    v = span > 0 ? static_cast<float>((static_cast<double>(v) - lo) / span) : 0.0f;
  }
  return out;
}

RasterGrid denormalize(const RasterGrid& raster, float min, float max) {
  raster.validate();
  RasterGrid out = raster;
  const double span = static_cast<double>(max) - static_cast<double>(min);
  for (float& v : out.values) {
    if (raster.is_nodata(v)) continue;
    v = static_cast<float>(static_cast<double>(min) + static_cast<double>(v) * span);
  }
  return out;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) parts.push_back(cur);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& s, const std::string& what, int line) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw std::invalid_argument("survey line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<SurveyPlaque> parse_survey_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "id,v_ha,area_ha,pixels") {
    throw std::invalid_argument("survey CSV must start with header 'id,v_ha,area_ha,pixels'");
  }
  std::vector<SurveyPlaque> plaques;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 4) {
      throw std::invalid_argument("survey line " + std::to_string(lineno) + ": expected 4 fields");
    }
    SurveyPlaque p;
    p.id = trim(fields[0]);
    p.v_ha = parse_number(trim(fields[1]), "v_ha", lineno);
    p.area_ha = parse_number(trim(fields[2]), "area_ha", lineno);
    for (const auto& pair : split(trim(fields[3]), ';')) {
      const auto rc = split(trim(pair), ':');
      if (rc.size() != 2) {
        throw std::invalid_argument("survey line " + std::to_string(lineno) + ": bad pixel '" + pair + "'");
      }
      const double r = parse_number(trim(rc[0]), "row", lineno), c = parse_number(trim(rc[1]), "col", lineno);
      if (r != std::floor(r) || c != std::floor(c)) {
        throw std::invalid_argument("survey line " + std::to_string(lineno) + ": non-integer pixel '" + pair + "'");
      }
      p.footprint.push_back({static_cast<int>(r), static_cast<int>(c)});
    }
    if (p.footprint.empty()) {
      throw std::invalid_argument("survey line " + std::to_string(lineno) + ": plaque '" + p.id + "' has no pixels");
    }
    p.validate();
    plaques.push_back(std::move(p));
  }
  return plaques;
}

std::vector<SurveyPlaque> read_survey_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open survey CSV '" + path + "'");
  return parse_survey_csv(in);
}

}  // namespace iidm
