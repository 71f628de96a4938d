#include "iidm/cli/formats.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>

namespace iidm {

namespace {

constexpr std::uint32_t kMaxDim = 1u << 20;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_floats(std::ostream& out, const std::vector<float>& values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int k = 0; k < 4; ++k) buf[4 * i + static_cast<std::size_t>(k)] = static_cast<char>((bits >> (8 * k)) & 0xff);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError(std::string("truncated ") + what);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  std::array<unsigned char, 4> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const char* what) {
  const std::uint64_t lo = get_u32(in, what);
  return lo | (static_cast<std::uint64_t>(get_u32(in, what)) << 32);
}

std::vector<float> get_floats(std::istream& in, std::size_t n, const char* what) {
  std::vector<unsigned char> buf(n * 4);
  read_exact(in, reinterpret_cast<char*>(buf.data()), buf.size(), what);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(buf[4 * i]) | (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

std::string get_string(std::istream& in, std::uint32_t limit, const char* what) {
  const auto n = get_u32(in, what);
  if (n > limit) throw FormatError(std::string(what) + " length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  read_exact(in, s.data(), n, what);
  return s;
}

void expect_magic(std::istream& in, const char* magic, const char* what) {
  std::array<char, 4> m{};
  read_exact(in, m.data(), 4, what);
  if (std::memcmp(m.data(), magic, 4) != 0) throw FormatError(std::string("not an ") + what + " file (bad magic)");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot open " + path);
  return f;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

}  // namespace

void write_iidr(std::ostream& out, const RasterGrid& raster) {
  raster.validate();
  out.write("IIDR", 4);
  put_u32(out, kIidrVersion);
  put_u32(out, static_cast<std::uint32_t>(raster.width));
  put_u32(out, static_cast<std::uint32_t>(raster.height));
  put_u32(out, static_cast<std::uint32_t>(raster.channels));
  put_floats(out, raster.values);
  if (!out) throw std::runtime_error("IIDR write failed");
}

RasterGrid read_iidr(std::istream& in) {
  expect_magic(in, "IIDR", "IIDR");
  const auto version = get_u32(in, "IIDR header");
  if (version != kIidrVersion) throw FormatError("unsupported IIDR version " + std::to_string(version));
  const auto w = get_u32(in, "IIDR header"), h = get_u32(in, "IIDR header"), c = get_u32(in, "IIDR header");
  if (w == 0 || h == 0 || c == 0 || w > kMaxDim || h > kMaxDim || c > 4096)
    throw FormatError("IIDR dimensions out of range: " + std::to_string(w) + "x" + std::to_string(h) + "x" +
                      std::to_string(c));
  const std::size_t n = static_cast<std::size_t>(w) * h * c;
  RasterGrid r(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c), get_floats(in, n, "IIDR payload"));
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("IIDR payload longer than 4*w*h*c bytes");
  return r;
}

void write_iidr(const std::string& path, const RasterGrid& raster) {
  auto f = open_out(path);
  write_iidr(f, raster);
}

RasterGrid read_iidr(const std::string& path) {
  auto f = open_in(path);
  try {
    return read_iidr(f);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::put(NamedTensor tensor) {
  for (auto& t : tensors)
    if (t.name == tensor.name) {
      t = std::move(tensor);
      return;
    }
  tensors.push_back(std::move(tensor));
}

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out.write("IIDC", 4);
  put_u32(out, ck.version);
  put_u64(out, ck.fingerprint);
  put_u32(out, static_cast<std::uint32_t>(ck.config.size()));
  out.write(ck.config.data(), static_cast<std::streamsize>(ck.config.size()));
  put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    std::size_t n = 1;
    for (int d : t.shape) {
      if (d < 0) throw ShapeError("checkpoint tensor " + t.name + " has a negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    if (n != t.data.size()) throw ShapeError("checkpoint tensor " + t.name + " data does not match its shape");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_floats(out, t.data);
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  expect_magic(in, "IIDC", "checkpoint");
  Checkpoint ck;
  ck.version = get_u32(in, "checkpoint header");
  if (ck.version != Checkpoint::kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(ck.version));
  ck.fingerprint = get_u64(in, "checkpoint header");
  ck.config = get_string(in, 1u << 24, "checkpoint config");
  const auto count = get_u32(in, "checkpoint header");
  if (count > (1u << 20)) throw FormatError("checkpoint tensor count out of range");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = get_string(in, 4096, "checkpoint tensor name");
    const auto rank = get_u32(in, "checkpoint tensor");
    if (rank > 8) throw FormatError("checkpoint tensor " + t.name + " rank out of range");
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = get_u32(in, "checkpoint tensor");
      if (d > kMaxDim) throw FormatError("checkpoint tensor " + t.name + " dimension out of range");
      t.shape.push_back(static_cast<int>(d));
      n *= d;
      if (n > (std::size_t{1} << 32)) throw FormatError("checkpoint tensor " + t.name + " too large");
    }
    t.data = get_floats(in, n, "checkpoint tensor data");
    ck.tensors.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return ck;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  auto f = open_out(path);
  write_checkpoint(f, ck);
}

Checkpoint read_checkpoint(const std::string& path) {
  auto f = open_in(path);
  try {
    return read_checkpoint(f);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

bool bit_identical(const RasterGrid& a, const RasterGrid& b) {
  return a.width == b.width && a.height == b.height && a.channels == b.channels && same_bits(a.values, b.values);
}

bool bit_identical(const Checkpoint& a, const Checkpoint& b) {
  if (a.version != b.version || a.fingerprint != b.fingerprint || a.config != b.config ||
      a.tensors.size() != b.tensors.size())
    return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto &x = a.tensors[i], &y = b.tensors[i];
    if (x.name != y.name || x.shape != y.shape || !same_bits(x.data, y.data)) return false;
  }
  return true;
}

namespace {

// viridis at 0, 1/8, ..., 1
constexpr std::array<std::array<int, 3>, 9> kViridis{{{68, 1, 84},
                                                     {71, 44, 122},
                                                     {59, 81, 139},
                                                     {44, 113, 142},
                                                     {33, 144, 141},
                                                     {39, 173, 129},
                                                     {92, 200, 99},
                                                     {170, 220, 50},
                                                     {253, 231, 37}}};

}  // namespace

Rgba ramp_color(float value, float lo, float hi) {
  if (std::isnan(value)) return {0, 0, 0, 0};
  double u = hi > lo ? (static_cast<double>(value) - lo) / (static_cast<double>(hi) - lo) : 0.0;
  u = std::clamp(u, 0.0, 1.0) * 8.0;
  const int i = std::min(static_cast<int>(u), 7);
  const double f = u - i;
  auto mix = [&](int ch) {
    const double v = kViridis[static_cast<std::size_t>(i)][static_cast<std::size_t>(ch)] * (1 - f) +
                     kViridis[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(ch)] * f;
    return static_cast<std::uint8_t>(std::lround(v));
  };
  return {mix(0), mix(1), mix(2), 255};
}

std::vector<Rgba> heatmap(const RasterGrid& raster, float lo, float hi) {
  raster.validate();
  std::vector<Rgba> px(raster.pixel_count());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const float v = raster.values[i];
    px[i] = raster.is_nodata(v) || !std::isfinite(v) ? Rgba{0, 0, 0, 0} : ramp_color(v, lo, hi);
  }
  return px;
}

void write_heatmap_png(const std::string& path, const RasterGrid& raster) {
  float lo = 0, hi = 0;
  bool any = false;
  for (std::size_t i = 0; i < raster.pixel_count(); ++i) {
    const float v = raster.values[i];
    if (raster.is_nodata(v) || !std::isfinite(v)) continue;
    lo = any ? std::min(lo, v) : v;
    hi = any ? std::max(hi, v) : v;
    any = true;
  }
  write_heatmap_png(path, raster, lo, hi);
}

void write_heatmap_png(const std::string& path, const RasterGrid& raster, float lo, float hi) {
  const auto px = heatmap(raster, lo, hi);
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed for " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(raster.width), static_cast<png_uint_32>(raster.height), 8,
               PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < raster.height; ++y)
    png_write_row(png, reinterpret_cast<png_const_bytep>(px.data() + static_cast<std::size_t>(y) * raster.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

PngImage read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) throw FormatError("cannot read PNG " + path);
  image.format = PNG_FORMAT_RGBA;
  PngImage out{static_cast<int>(image.width), static_cast<int>(image.height), {}};
  out.pixels.resize(static_cast<std::size_t>(image.width) * image.height);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError("cannot decode PNG " + path);
  }
  return out;
}

}  // namespace iidm
