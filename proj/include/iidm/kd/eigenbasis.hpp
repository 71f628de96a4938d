#pragma once

#include "iidm/kd/spectrum.hpp"
#include "iidm/numerics/ops.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace iidm {

/// Global per-layer basis W (C^e x C, orthonormal rows) shared by every image.
template <typename Scalar>
struct BasicEigenbasis {
  int layer = 1;
  DenseMatrix<Scalar> w;

  int reduced() const { return static_cast<int>(w.rows()); }
  int channels() const { return static_cast<int>(w.cols()); }
};

using Eigenbasis = BasicEigenbasis<float>;

/// ||W W^T - I||_F
template <typename Scalar>
double orthonormality_error(const DenseMatrix<Scalar>& w);

/// Orthonormal rows spanning the row space of `w` (thin QR of w^T, signs fixed
/// so the retraction is continuous).
template <typename Scalar>
DenseMatrix<Scalar> orthonormalize_rows(const DenseMatrix<Scalar>& w);

/// Mean over images of ||W^T W F - F||^2.
template <typename Scalar>
double reconstruction_error(const DenseMatrix<Scalar>& w, const BasicCenteredFeatures<Scalar>& corpus);

struct EigenbasisOptions {
  int batch_size = 8;
  int epochs = 200;
  /// 0 picks 0.25 / lambda_max of the corpus-mean second moment.
  double learning_rate = 0;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct EigenbasisResult {
  BasicEigenbasis<Scalar> basis;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  double learning_rate = 0;
  long steps = 0;
};

/// Mini-batch gradient descent on
///
///   L(W) = (1/|B|) sum_{k in B} ||W^T W F_k - F_k||^2
///
/// with grad = 2 W [(P - I) S + S (P - I)], P = W^T W, S = sum_B F_k F_k^T / |B|,
/// followed by a row re-orthonormalization after every step. Batches are a
/// fresh shuffle of the corpus each epoch. `init` defaults to a random
/// orthonormal matrix drawn from the seed. Throws NumericError naming the step
/// at which the loss became non-finite.
template <typename Scalar>
EigenbasisResult<Scalar> train_eigenbasis(const BasicCenteredFeatures<Scalar>& corpus, int reduced,
                                          const EigenbasisOptions& options = {},
                                          const std::optional<DenseMatrix<Scalar>>& init = std::nullopt);

/// One basis per layer; layers[i] is reduced to reduced[i] channels.
template <typename Scalar>
std::vector<BasicEigenbasis<Scalar>> train_global_eigenbases(const std::vector<BasicCenteredFeatures<Scalar>>& layers,
                                                             const std::vector<int>& reduced,
                                                             const EigenbasisOptions& options = {});

/// ||W^T F^e - F||^2 for C^e x HW student and C x HW teacher features.
template <typename Scalar>
double encoder_distill_loss(const DenseMatrix<Scalar>& student, const DenseMatrix<Scalar>& teacher,
                            const DenseMatrix<Scalar>& w);

enum class Reduction { sum, mean };

/// Differentiable form on [C, H, W] feature maps. Both sides are centered per
/// channel before comparison; `mean` divides by the teacher's element count.
template <typename Scalar>
Var<Scalar> encoder_distill_loss(const Var<Scalar>& student, const Var<Scalar>& teacher, const DenseMatrix<Scalar>& w,
                                 Reduction reduction = Reduction::sum);

/// ||a - b||^2 (or its mean) of two equally shaped values.
template <typename Scalar>
Var<Scalar> squared_error(const Var<Scalar>& a, const Var<Scalar>& b, Reduction reduction = Reduction::sum);

/// Rank-2 tensor holding a dense matrix.
template <typename Scalar>
BasicTensor<Scalar> to_tensor(const DenseMatrix<Scalar>& m);

}  // namespace iidm
