#pragma once

#include "iidm/numerics/tensor.hpp"
#include "iidm/preprocess/raster.hpp"

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace iidm {

/// Malformed or truncated file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// IIDR raster: "IIDR", u32 version = 1, u32 width, u32 height, u32 channels,
/// then width*height*channels little-endian float32 (row-major within a
/// channel, channels sequential). NaN is nodata. Float bits are copied
/// verbatim, so NaN payloads survive a round trip.
inline constexpr std::uint32_t kIidrVersion = 1;

void write_iidr(std::ostream& out, const RasterGrid& raster);
RasterGrid read_iidr(std::istream& in);
void write_iidr(const std::string& path, const RasterGrid& raster);
RasterGrid read_iidr(const std::string& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Checkpoint: "IIDC", u32 version, u64 config fingerprint, the config text
/// (u32 length + bytes), u32 tensor count, then per tensor u32 name length,
/// name, u32 rank, rank x u32 dims, element-count float32. All little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::uint64_t fingerprint = 0;
  std::string config;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  void put(NamedTensor tensor);  // replaces a tensor of the same name
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void write_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::string& path);

/// Byte-wise equality including float bit patterns (NaN == NaN when the bits agree).
bool bit_identical(const RasterGrid& a, const RasterGrid& b);
bool bit_identical(const Checkpoint& a, const Checkpoint& b);

/// Heatmap ramp "viridis-9": 9 anchor colours sampled from viridis, linearly
/// interpolated. Values are mapped through [lo, hi]; nodata is transparent.
struct Rgba {
  std::uint8_t r, g, b, a;
  friend bool operator==(const Rgba&, const Rgba&) = default;
};
inline constexpr const char* kRampName = "viridis-9";
Rgba ramp_color(float value, float lo, float hi);

/// RGBA pixels of channel 0, row-major. lo/hi default to the valid range.
std::vector<Rgba> heatmap(const RasterGrid& raster, float lo, float hi);
void write_heatmap_png(const std::string& path, const RasterGrid& raster);
void write_heatmap_png(const std::string& path, const RasterGrid& raster, float lo, float hi);

struct PngImage {
  int width = 0;
  int height = 0;
  std::vector<Rgba> pixels;
};
PngImage read_png(const std::string& path);

}  // namespace iidm
