#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

namespace iidm {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One layer's features over a corpus: per image a C x (H*W) matrix. Spatial
/// size may differ between images; the channel count may not.
template <typename Scalar>
struct BasicFeatureStack {
  int layer = 1;
  std::vector<DenseMatrix<Scalar>> maps;

  int channels() const { return maps.empty() ? 0 : static_cast<int>(maps.front().rows()); }
  void validate() const;
};

/// Features with each channel's spatial mean removed, per image.
template <typename Scalar>
struct BasicCenteredFeatures {
  int layer = 1;
  std::vector<DenseMatrix<Scalar>> maps;

  int channels() const { return maps.empty() ? 0 : static_cast<int>(maps.front().rows()); }
};

using FeatureStack = BasicFeatureStack<float>;
using CenteredFeatures = BasicCenteredFeatures<float>;

template <typename Scalar>
BasicCenteredFeatures<Scalar> center(const BasicFeatureStack<Scalar>& features);

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are sorted descending; eigenvectors are the matching columns.
template <typename Scalar>
struct SymmetricEigen {
  DenseVector<Scalar> values;
  DenseMatrix<Scalar> vectors;
};

/// Sweeps until the off-diagonal Frobenius norm is below tolerance * ||A||_F
/// (raised to a few ulps of Scalar when that is coarser).
/// Rejects matrices whose asymmetry exceeds 1e-6 * ||A||_F.
template <typename Scalar>
SymmetricEigen<Scalar> jacobi_eigen(const DenseMatrix<Scalar>& a, double tolerance = 1e-10, int max_sweeps = 100);

/// Per-image spectra of F F^T / (H W) and their corpus means.
///
///   EV_j = s_j / sum(s)       CEV(L) = sum_{j <= L} s_j / sum(s)
///   mEV, mCEV: averages of EV, CEV over the M images.
///
/// An image whose features are identically zero has nothing to explain; its
/// CEV is taken as 1 at every length.
struct SpectrumStats {
  int layer = 1;
  std::vector<std::vector<double>> eigenvalues;  // per image, descending
  std::vector<std::vector<double>> ev;
  std::vector<std::vector<double>> cev;
  std::vector<double> mev;   // index L-1 holds mEV(L)
  std::vector<double> mcev;  // index L-1 holds mCEV(L)

  int channels() const { return static_cast<int>(mcev.size()); }
};

template <typename Scalar>
SpectrumStats spectrum(const BasicCenteredFeatures<Scalar>& features);

/// Smallest L with mCEV(L) >= threshold, for threshold in (0, 1]; threshold 1
/// keeps every channel even when trailing eigenvalues vanish.
int select_channel_length(const SpectrumStats& stats, double threshold);

/// Smallest base b, a multiple of `base_multiple`, such that the structure
/// scaled to start at b dominates `requirements` level-wise; returns the
/// scaled structure. The structure must follow (s, s, 2s, 2s, 4s, 4s, ...).
std::vector<int> select_unet_channels(const std::vector<int>& requirements, const std::vector<int>& structure,
                                      int base_multiple = 4);

/// 100 * (1 - small / large), in percent.
double kd_ratio(long long small_params, long long large_params);

/// CSV rows `layer,channel_index,mEV,mCEV` (channel_index is 1-based).
std::string spectrum_csv(const std::vector<SpectrumStats>& layers);

}  // namespace iidm
