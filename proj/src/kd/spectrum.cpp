#include "iidm/kd/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace iidm {

template <typename Scalar>
void BasicFeatureStack<Scalar>::validate() const {
  if (maps.empty()) throw std::invalid_argument("feature stack is empty");
  for (const auto& m : maps) {
    if (m.rows() != maps.front().rows()) throw std::invalid_argument("feature maps disagree on channel count");
    if (m.cols() == 0) throw std::invalid_argument("feature map has empty spatial extent");
  }
}

template <typename Scalar>
BasicCenteredFeatures<Scalar> center(const BasicFeatureStack<Scalar>& features) {
  features.validate();
  BasicCenteredFeatures<Scalar> out;
  out.layer = features.layer;
  out.maps.reserve(features.maps.size());
  for (const auto& m : features.maps) out.maps.push_back(m.colwise() - m.rowwise().mean());
  return out;
}

template <typename Scalar>
SymmetricEigen<Scalar> jacobi_eigen(const DenseMatrix<Scalar>& input, double tolerance, int max_sweeps) {
  const Eigen::Index n = input.rows();
  if (n != input.cols() || n == 0) throw std::invalid_argument("jacobi_eigen needs a nonempty square matrix");
  const double scale = std::max(static_cast<double>(input.norm()), 1e-300);
  tolerance = std::max(tolerance, 8.0 * static_cast<double>(std::numeric_limits<Scalar>::epsilon()));
  if (static_cast<double>((input - input.transpose()).norm()) > 1e-6 * scale) {
    throw std::logic_error("jacobi_eigen: matrix is not symmetric within tolerance");
  }
  DenseMatrix<Scalar> a = (input + input.transpose()) / Scalar(2);
  DenseMatrix<Scalar> v = DenseMatrix<Scalar>::Identity(n, n);

  auto off_norm = [&] {
    double s = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) s += static_cast<double>(a(i, j)) * static_cast<double>(a(i, j));
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < max_sweeps && off_norm() > tolerance * scale; ++sweep) {
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == Scalar(0)) continue;
        // Rotation zeroing a(p, q) (Golub & Van Loan, sym.schur2).
        const Scalar tau = (a(q, q) - a(p, p)) / (Scalar(2) * a(p, q));
        const Scalar t = (tau >= 0 ? Scalar(1) : Scalar(-1)) / (std::abs(tau) + std::sqrt(Scalar(1) + tau * tau));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (off_norm() > tolerance * scale * 10) throw std::runtime_error("jacobi_eigen did not converge");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });
  SymmetricEigen<Scalar> out{DenseVector<Scalar>(n), DenseMatrix<Scalar>(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

template <typename Scalar>
SpectrumStats spectrum(const BasicCenteredFeatures<Scalar>& features) {
  if (features.maps.empty()) throw std::invalid_argument("spectrum of an empty corpus");
  const int c = features.channels();
  SpectrumStats stats;
  stats.layer = features.layer;
  stats.mev.assign(static_cast<std::size_t>(c), 0.0);
  stats.mcev.assign(static_cast<std::size_t>(c), 0.0);
  for (const auto& m : features.maps) {
    if (m.rows() != c) throw std::invalid_argument("feature maps disagree on channel count");
    if (m.cols() < 2) throw std::invalid_argument("spectrum needs at least 2 spatial positions per image");
    const Eigen::MatrixXd f = m.template cast<double>();
    const Eigen::MatrixXd cov = (f * f.transpose()) / static_cast<double>(f.cols());
    auto eig = jacobi_eigen<double>(cov);
    std::vector<double> s(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) s[static_cast<std::size_t>(j)] = std::max(eig.values(j), 0.0);
    const double total = std::accumulate(s.begin(), s.end(), 0.0);

    std::vector<double> ev(s.size()), cev(s.size());
    double run = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      ev[j] = total > 0 ? s[j] / total : 0.0;
      run += s[j];
      cev[j] = total > 0 ? run / total : 1.0;
    }
    cev.back() = 1.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      stats.mev[j] += ev[j];
      stats.mcev[j] += cev[j];
    }
    stats.eigenvalues.push_back(std::move(s));
    stats.ev.push_back(std::move(ev));
    stats.cev.push_back(std::move(cev));
  }
  const double m = static_cast<double>(features.maps.size());
  for (auto& v : stats.mev) v /= m;
  for (auto& v : stats.mcev) v /= m;
  return stats;
}

int select_channel_length(const SpectrumStats& stats, double threshold) {
  if (!(threshold > 0 && threshold <= 1)) throw std::invalid_argument("mCEV threshold must lie in (0, 1]");
  if (stats.mcev.empty()) throw std::invalid_argument("empty spectrum");
  if (threshold == 1) return stats.channels();
  for (std::size_t l = 0; l < stats.mcev.size(); ++l)
    if (stats.mcev[l] >= threshold) return static_cast<int>(l + 1);
  return stats.channels();
}

std::vector<int> select_unet_channels(const std::vector<int>& requirements, const std::vector<int>& structure,
                                      int base_multiple) {
  if (requirements.size() != structure.size()) {
    throw std::invalid_argument("requirements and structure differ in length");
  }
  if (structure.empty() || structure.size() % 2 != 0) {
    throw std::invalid_argument("UNet structure needs two entries per level");
  }
  if (base_multiple <= 0) throw std::invalid_argument("base multiple must be positive");
  const int s0 = structure.front();
  for (std::size_t i = 0; i < structure.size(); i += 2) {
    const int expected = s0 << (i / 2);
    if (structure[i] != expected || structure[i + 1] != expected) {
      throw std::invalid_argument("UNet structure must follow the doubling pattern (s, s, 2s, 2s, ...)");
    }
  }
  long long base = 1;
  for (std::size_t i = 0; i < requirements.size(); ++i) {
    if (requirements[i] < 0) throw std::invalid_argument("negative channel requirement");
    if (requirements[i] > structure[i]) {
      throw std::invalid_argument("requirement " + std::to_string(requirements[i]) + " at level entry " +
                                  std::to_string(i + 1) + " exceeds its structural channel count " +
                                  std::to_string(structure[i]));
    }
    const long long ratio = 1LL << (i / 2);
    base = std::max(base, (requirements[i] + ratio - 1) / ratio);
  }
  base = (base + base_multiple - 1) / base_multiple * base_multiple;
  std::vector<int> out;
  for (std::size_t i = 0; i < structure.size(); ++i) out.push_back(static_cast<int>(base << (i / 2)));
  return out;
}

double kd_ratio(long long small_params, long long large_params) {
  if (small_params <= 0 || large_params <= 0) throw std::invalid_argument("parameter counts must be positive");
  if (small_params > large_params) throw std::invalid_argument("student is larger than the teacher");
  return 100.0 * (1.0 - static_cast<double>(small_params) / static_cast<double>(large_params));
}

std::string spectrum_csv(const std::vector<SpectrumStats>& layers) {
  std::ostringstream os;
  os.precision(10);
  os << "layer,channel_index,mEV,mCEV\n";
  for (const auto& s : layers)
    for (std::size_t j = 0; j < s.mcev.size(); ++j) os << s.layer << ',' << j + 1 << ',' << s.mev[j] << ',' << s.mcev[j] << '\n';
  return os.str();
}

template struct BasicFeatureStack<float>;
template struct BasicFeatureStack<double>;
template BasicCenteredFeatures<float> center(const BasicFeatureStack<float>&);
template BasicCenteredFeatures<double> center(const BasicFeatureStack<double>&);
template SymmetricEigen<float> jacobi_eigen(const DenseMatrix<float>&, double, int);
template SymmetricEigen<double> jacobi_eigen(const DenseMatrix<double>&, double, int);
template SpectrumStats spectrum(const BasicCenteredFeatures<float>&);
template SpectrumStats spectrum(const BasicCenteredFeatures<double>&);

}  // namespace iidm
