#include "iidm/evalkit/metrics.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace iidm {

void SsimParams::validate() const {
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("SSIM window must be odd and positive");
  if (!(sigma > 0)) throw std::invalid_argument("SSIM sigma must be positive");
  if (!(k1 > 0 && k2 > 0)) throw std::invalid_argument("SSIM constants K1, K2 must be positive");
  if (!(range > 0)) throw std::invalid_argument("dynamic range must be positive");
}

double psnr_from_mse(double mse, double range) {
  if (mse < 0) throw std::invalid_argument("negative MSE");
  return mse == 0 ? kPsnrInfinite : 10.0 * std::log10(range * range / mse);
}

Eigen::MatrixXd gaussian_window(int size, double sigma) {
  Eigen::MatrixXd w(size, size);
  const int r = size / 2;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) w(y, x) = std::exp(-((y - r) * (y - r) + (x - r) * (x - r)) / (2 * sigma * sigma));
  return w / w.sum();
}

MetricAccumulator::MetricAccumulator(SsimParams ssim) : params_(ssim) {
  params_.validate();
  kernel_ = gaussian_window(params_.window, params_.sigma);
}

void MetricAccumulator::add(const RasterGrid& pred, const RasterGrid& truth, const ForestMask* mask) {
  pred.validate();
  truth.validate();
  if (pred.width != truth.width || pred.height != truth.height || pred.channels != truth.channels) {
    throw ShapeError("prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.height) + "x" +
                     std::to_string(pred.channels) + " does not match truth " + std::to_string(truth.width) + "x" +
                     std::to_string(truth.height) + "x" + std::to_string(truth.channels));
  }
  if (pred.channels != 1) throw ShapeError("metrics expect single-channel rasters");
  if (mask && (mask->width() != pred.width || mask->height() != pred.height)) {
    throw ShapeError("mask dims do not match the rasters");
  }
  const int w = pred.width, h = pred.height;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> valid(h, w);
  Eigen::MatrixXd p(h, w), t(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float a = pred.at(0, y, x), b = truth.at(0, y, x);
      valid(y, x) = !pred.is_nodata(a) && !truth.is_nodata(b) && (!mask || mask->forest(y, x));
      p(y, x) = a;
      t(y, x) = b;
      if (valid(y, x)) {
        const double d = static_cast<double>(a) - static_cast<double>(b);
        abs_sum_ += std::abs(d);
        sq_sum_ += d * d;
        ++n_;
      }
    }
  }

  const int k = params_.window;
  const double c1 = (params_.k1 * params_.range) * (params_.k1 * params_.range);
  const double c2 = (params_.k2 * params_.range) * (params_.k2 * params_.range);
  for (int y0 = 0; y0 + k <= h; ++y0) {
    for (int x0 = 0; x0 + k <= w; ++x0) {
      if (!valid.block(y0, x0, k, k).all()) continue;
      const auto pb = p.block(y0, x0, k, k);
      const auto tb = t.block(y0, x0, k, k);
      const double mp = (kernel_.array() * pb.array()).sum();
      const double mt = (kernel_.array() * tb.array()).sum();
      const double vp = (kernel_.array() * (pb.array() - mp).square()).sum();
      const double vt = (kernel_.array() * (tb.array() - mt).square()).sum();
      const double cov = (kernel_.array() * (pb.array() - mp) * (tb.array() - mt)).sum();
      ssim_sum_ += ((2 * mp * mt + c1) * (2 * cov + c2)) / ((mp * mp + mt * mt + c1) * (vp + vt + c2));
      ++windows_;
    }
  }
}

MetricReport MetricAccumulator::report() const {
  if (n_ == 0) throw std::invalid_argument("no valid pixels to score");
  if (windows_ == 0) {
    throw std::invalid_argument("no " + std::to_string(params_.window) + "x" + std::to_string(params_.window) +
                                " window lies fully inside the valid region; SSIM is undefined");
  }
  MetricReport r;
  r.n_valid = n_;
  r.mae = abs_sum_ / static_cast<double>(n_);
  r.mse = sq_sum_ / static_cast<double>(n_);
  r.rmse = std::sqrt(r.mse);
  r.psnr = psnr_from_mse(r.mse, params_.range);
  r.ssim = ssim_sum_ / static_cast<double>(windows_);
  return r;
}

MetricReport metrics(const RasterGrid& pred, const RasterGrid& truth, const ForestMask* mask, const SsimParams& ssim) {
  MetricAccumulator acc(ssim);
  acc.add(pred, truth, mask);
  return acc.report();
}

// ---- OLS ----------------------------------------------------------------

double OlsModel::predict(const float* bands, std::size_t stride) const {
  double v = bias;
  for (std::size_t b = 0; b < weights.size(); ++b) v += weights[b] * static_cast<double>(bands[b * stride]);
  return v;
}

RasterGrid OlsModel::predict(const RasterGrid& x, const ForestMask* mask) const {
  x.validate();
  if (static_cast<std::size_t>(x.channels) != weights.size()) {
    throw ShapeError("OLS model has " + std::to_string(weights.size()) + " bands, raster has " +
                     std::to_string(x.channels));
  }
  RasterGrid out(x.width, x.height, 1, std::numeric_limits<float>::quiet_NaN());
  const std::size_t plane = x.pixel_count();
  for (int y = 0; y < x.height; ++y) {
    for (int c = 0; c < x.width; ++c) {
      if (mask && !mask->forest(y, c)) continue;
      const std::size_t i = x.index(0, y, c);
      bool ok = true;
      for (int b = 0; b < x.channels; ++b) ok &= !x.is_nodata(x.values[i + static_cast<std::size_t>(b) * plane]);
      if (ok) out.at(0, y, c) = static_cast<float>(predict(&x.values[i], plane));
    }
  }
  return out;
}

OlsProblem::OlsProblem(int bands)
    : bands_(bands), xtx_(Eigen::MatrixXd::Zero(bands + 1, bands + 1)), xty_(Eigen::VectorXd::Zero(bands + 1)) {
  if (bands < 1) throw std::invalid_argument("OLS needs at least one band");
}

void OlsProblem::add(const RasterGrid& x, const RasterGrid& y, const ForestMask* mask) {
  x.validate();
  y.validate();
  if (x.channels != bands_ || y.channels != 1 || x.width != y.width || x.height != y.height) {
    throw ShapeError("OLS expects " + std::to_string(bands_) + "-band x and single-channel y of equal dims");
  }
  if (mask && (mask->width() != x.width || mask->height() != x.height)) throw ShapeError("mask dims differ");
  const std::size_t plane = x.pixel_count();
  Eigen::VectorXd row(bands_ + 1);
  for (int r = 0; r < x.height; ++r) {
    for (int c = 0; c < x.width; ++c) {
      if (mask && !mask->forest(r, c)) continue;
      const float target = y.at(0, r, c);
      if (y.is_nodata(target)) continue;
      const std::size_t i = x.index(0, r, c);
      bool ok = true;
      for (int b = 0; b < bands_; ++b) {
        const float v = x.values[i + static_cast<std::size_t>(b) * plane];
        ok &= !x.is_nodata(v);
        row(b) = v;
      }
      if (!ok) continue;
      row(bands_) = 1.0;
      xtx_.selfadjointView<Eigen::Lower>().rankUpdate(row);
      xty_ += row * static_cast<double>(target);
      ++n_;
    }
  }
}

OlsModel OlsProblem::solve() const {
  if (n_ <= static_cast<std::size_t>(bands_)) {
    throw std::invalid_argument("OLS needs more valid pixels (" + std::to_string(n_) + ") than bands (" +
                                std::to_string(bands_) + ")");
  }
  Eigen::MatrixXd a = xtx_.selfadjointView<Eigen::Lower>();
  a.diagonal().array() += 1e-8;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const Eigen::VectorXd beta = ldlt.solve(xty_);
  if (ldlt.info() != Eigen::Success || !beta.allFinite()) {
    throw std::invalid_argument("OLS normal equations are singular even with the ridge");
  }
  OlsModel m;
  m.weights.assign(beta.data(), beta.data() + bands_);
  m.bias = beta(bands_);
  return m;
}

OlsModel ols_fit(const RasterGrid& x, const RasterGrid& y, const ForestMask* mask) {
  OlsProblem p(x.channels);
  p.add(x, y, mask);
  return p.solve();
}

double r_squared(const OlsModel& model, const RasterGrid& x, const RasterGrid& y, const ForestMask* mask) {
  const RasterGrid pred = model.predict(x, mask);
  double sum = 0, n = 0;
  for (std::size_t i = 0; i < y.values.size(); ++i) {
    if (pred.is_nodata(pred.values[i]) || y.is_nodata(y.values[i])) continue;
    sum += y.values[i];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("no valid pixels for R^2");
  const double mean = sum / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < y.values.size(); ++i) {
    if (pred.is_nodata(pred.values[i]) || y.is_nodata(y.values[i])) continue;
    ss_res += (y.values[i] - pred.values[i]) * static_cast<double>(y.values[i] - pred.values[i]);
    ss_tot += (y.values[i] - mean) * (y.values[i] - mean);
  }
  return ss_tot == 0 ? 0.0 : 1.0 - ss_res / ss_tot;
}

// ---- ablation -----------------------------------------------------------

std::string to_string(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::none: return "none";
    case ExtractorKind::vgg: return "vgg";
    case ExtractorKind::kd_vgg: return "kd-vgg";
  }
  return "?";
}

std::string to_string(UnetKind kind) { return kind == UnetKind::full ? "full" : "kd"; }

ExtractorKind parse_extractor_kind(const std::string& name) {
  if (name == "none") return ExtractorKind::none;
  if (name == "vgg") return ExtractorKind::vgg;
  if (name == "kd-vgg") return ExtractorKind::kd_vgg;
  throw std::invalid_argument("unknown extractor '" + name + "' (expected none, vgg or kd-vgg)");
}

UnetKind parse_unet_kind(const std::string& name) {
  if (name == "full") return UnetKind::full;
  if (name == "kd") return UnetKind::kd;
  throw std::invalid_argument("unknown unet '" + name + "' (expected full or kd)");
}

std::string AblationFlags::key() const {
  return std::string(mask ? "mask" : "nomask") + "-" + to_string(extractor) + "-" + to_string(unet) + "-" +
         (fusion ? "attn" : "nofusion");
}

std::vector<AblationFlags> ablation_combinations() {
  std::vector<AblationFlags> out;
  for (bool mask : {false, true})
    for (auto ex : {ExtractorKind::none, ExtractorKind::vgg, ExtractorKind::kd_vgg})
      for (auto un : {UnetKind::full, UnetKind::kd})
        for (bool fusion : {false, true}) out.push_back({mask, ex, un, fusion});
  return out;
}

std::vector<AblationRow> ablation_grid(const std::vector<AblationFlags>& combinations, const AblationRunner& runner) {
  std::vector<AblationRow> rows;
  for (const auto& flags : combinations) {
    auto report = runner(flags);
    if (!report) {
      throw std::invalid_argument("no checkpoint for ablation row " + flags.key() + " and train-small is off");
    }
    rows.push_back({flags, *report});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(8);
  os << "mask,extractor,unet,fusion,mae,rmse,ssim,psnr,n_valid\n";
  for (const auto& r : rows) {
    os << (r.flags.mask ? "on" : "off") << ',' << to_string(r.flags.extractor) << ',' << to_string(r.flags.unet) << ','
       << (r.flags.fusion ? "attn+mlp" : "none") << ',' << r.report.mae << ',' << r.report.rmse << ','
       << r.report.ssim << ',' << r.report.psnr << ',' << r.report.n_valid << '\n';
  }
  return os.str();
}

AblationRow published_reference_row() {
  AblationRow r;
  r.flags = {true, ExtractorKind::vgg, UnetKind::kd, true};
  r.report.mae = 0.0687;
  r.report.rmse = 0.1211;
  r.report.mse = r.report.rmse * r.report.rmse;
  r.report.psnr = 21.8581;
  r.report.ssim = 0.7289;
  return r;
}

}  // namespace iidm
