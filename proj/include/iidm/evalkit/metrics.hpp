#pragma once

#include "iidm/preprocess/raster.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace iidm {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;  // dynamic range L; also the PSNR peak

  void validate() const;
};

/// Error metrics over the pixels valid in both rasters (and forest, when a mask
/// is given). PSNR is +infinity when MSE is 0.
struct MetricReport {
  double mae = 0;
  double mse = 0;
  double rmse = 0;
  double psnr = 0;
  double ssim = 0;
  std::size_t n_valid = 0;
};

inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

double psnr_from_mse(double mse, double range = 1.0);

/// Pools pixel errors and SSIM windows over any number of raster pairs, so a
/// tiled test set is scored as one population.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(SsimParams ssim = {});

  /// Single-channel pred/truth of equal dims. SSIM uses every window whose
  /// pixels are all valid; a pair with no such window contributes to the
  /// pixel metrics only.
  void add(const RasterGrid& pred, const RasterGrid& truth, const ForestMask* mask = nullptr);

  std::size_t valid_pixels() const { return n_; }
  std::size_t ssim_windows() const { return windows_; }

  /// Throws when no pixel was valid, or when no SSIM window was.
  MetricReport report() const;

 private:
  SsimParams params_;
  Eigen::MatrixXd kernel_;
  double abs_sum_ = 0, sq_sum_ = 0, ssim_sum_ = 0;
  std::size_t n_ = 0, windows_ = 0;
};

MetricReport metrics(const RasterGrid& pred, const RasterGrid& truth, const ForestMask* mask = nullptr,
                     const SsimParams& ssim = {});

/// Normalized 2-D Gaussian window.
Eigen::MatrixXd gaussian_window(int size, double sigma);

/// Linear baseline y ~ w . bands + b.
struct OlsModel {
  std::vector<double> weights;
  double bias = 0;

  double predict(const float* bands, std::size_t stride) const;
  /// Single-channel prediction; pixels that are nodata in any band, or
  /// outside the mask, come out as nodata.
  RasterGrid predict(const RasterGrid& x, const ForestMask* mask = nullptr) const;
};

/// Accumulates the normal equations over many (x, y, mask) triples.
class OlsProblem {
 public:
  explicit OlsProblem(int bands);

  void add(const RasterGrid& x, const RasterGrid& y, const ForestMask* mask = nullptr);
  std::size_t samples() const { return n_; }

  /// Solves (X^T X + 1e-8 I) beta = X^T y with the bias column appended.
  OlsModel solve() const;

 private:
  int bands_;
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xty_;
  std::size_t n_ = 0;
};

OlsModel ols_fit(const RasterGrid& x, const RasterGrid& y, const ForestMask* mask = nullptr);

/// Coefficient of determination of `model` on the valid pixels.
double r_squared(const OlsModel& model, const RasterGrid& x, const RasterGrid& y, const ForestMask* mask = nullptr);

// ---- ablation grid ------------------------------------------------------

enum class ExtractorKind { none, vgg, kd_vgg };
enum class UnetKind { full, kd };

std::string to_string(ExtractorKind kind);
std::string to_string(UnetKind kind);
ExtractorKind parse_extractor_kind(const std::string& name);
UnetKind parse_unet_kind(const std::string& name);

struct AblationFlags {
  bool mask = true;
  ExtractorKind extractor = ExtractorKind::vgg;
  UnetKind unet = UnetKind::kd;
  bool fusion = true;

  /// Stable identifier, e.g. "mask-vgg-kd-attn".
  std::string key() const;
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

/// Every combination, ordered by (mask, extractor, unet, fusion) with "on" /
/// later enum values last.
std::vector<AblationFlags> ablation_combinations();

struct AblationRow {
  AblationFlags flags;
  MetricReport report;
};

/// Produces a row's metrics; returns nullopt when neither a checkpoint nor
/// train-small mode is available for the combination.
using AblationRunner = std::function<std::optional<MetricReport>(const AblationFlags&)>;

/// Runs `runner` over `combinations` in order; a combination without a result
/// is rejected naming its key.
std::vector<AblationRow> ablation_grid(const std::vector<AblationFlags>& combinations, const AblationRunner& runner);

/// Header `mask,extractor,unet,fusion,mae,rmse,ssim,psnr,n_valid`.
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Best published module combination, kept only as a formatting fixture.
AblationRow published_reference_row();

}  // namespace iidm
