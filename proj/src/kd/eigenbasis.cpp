#include "iidm/kd/eigenbasis.hpp"

#include "iidm/numerics/rng.hpp"

#include <Eigen/QR>

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace iidm {

template <typename Scalar>
double orthonormality_error(const DenseMatrix<Scalar>& w) {
  const Eigen::MatrixXd wd = w.template cast<double>();
  return (wd * wd.transpose() - Eigen::MatrixXd::Identity(wd.rows(), wd.rows())).norm();
}

namespace {

Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& w) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(w.transpose());
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(w.cols(), w.rows());
  const Eigen::MatrixXd r = qr.matrixQR().topRows(w.rows()).template triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0) q.col(j) *= -1;
  return q.transpose();
}

void check_corpus(const auto& corpus) {
  if (corpus.maps.empty()) throw std::invalid_argument("eigenbasis training needs a nonempty corpus");
  for (const auto& m : corpus.maps)
    if (m.rows() != corpus.maps.front().rows()) throw std::invalid_argument("feature maps disagree on channel count");
}

}  // namespace

template <typename Scalar>
DenseMatrix<Scalar> orthonormalize_rows(const DenseMatrix<Scalar>& w) {
  if (w.rows() == 0 || w.rows() > w.cols()) throw std::invalid_argument("orthonormalize_rows needs 0 < rows <= cols");
  return orthonormalize(w.template cast<double>()).template cast<Scalar>();
}

template <typename Scalar>
double reconstruction_error(const DenseMatrix<Scalar>& w, const BasicCenteredFeatures<Scalar>& corpus) {
  check_corpus(corpus);
  const Eigen::MatrixXd wd = w.template cast<double>();
  if (wd.cols() != corpus.channels()) throw std::invalid_argument("basis width does not match the feature channels");
  const Eigen::MatrixXd p = wd.transpose() * wd;
  double total = 0;
  for (const auto& m : corpus.maps) {
    const Eigen::MatrixXd f = m.template cast<double>();
    total += (p * f - f).squaredNorm();
  }
  return total / static_cast<double>(corpus.maps.size());
}

template <typename Scalar>
EigenbasisResult<Scalar> train_eigenbasis(const BasicCenteredFeatures<Scalar>& corpus, int reduced,
                                          const EigenbasisOptions& options,
                                          const std::optional<DenseMatrix<Scalar>>& init) {
  check_corpus(corpus);
  const int c = corpus.channels();
  if (reduced < 1 || reduced > c) {
    throw std::invalid_argument("reduced width " + std::to_string(reduced) + " must lie in [1, " +
                                std::to_string(c) + "]");
  }
  if (options.batch_size < 1 || options.epochs < 0 || options.learning_rate < 0) {
    throw std::invalid_argument("eigenbasis options: batch size >= 1, epochs >= 0, learning rate >= 0");
  }

  // Second moments in double; they are all the loss ever needs.
  std::vector<Eigen::MatrixXd> moments;
  moments.reserve(corpus.maps.size());
  Eigen::MatrixXd mean_moment = Eigen::MatrixXd::Zero(c, c);
  for (const auto& m : corpus.maps) {
    const Eigen::MatrixXd f = m.template cast<double>();
    moments.push_back(f * f.transpose());
    mean_moment += moments.back();
  }
  mean_moment /= static_cast<double>(moments.size());

  Rng rng(options.seed);
  Eigen::MatrixXd w;
  if (init) {
    if (init->rows() != reduced || init->cols() != c) throw std::invalid_argument("initial basis has the wrong shape");
    w = init->template cast<double>();
  } else {
    w.resize(reduced, c);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    w = orthonormalize(w);
  }

  EigenbasisResult<Scalar> result;
  result.learning_rate = options.learning_rate;
  if (result.learning_rate == 0) {
    const double top = jacobi_eigen<double>(mean_moment).values(0);
    result.learning_rate = top > 0 ? 0.25 / top : 1.0;
  }

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(c, c);
  std::vector<std::size_t> order(moments.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double epoch_loss = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      Eigen::MatrixXd s = Eigen::MatrixXd::Zero(c, c);
      for (std::size_t k = start; k < stop; ++k) s += moments[order[k]];
      s /= static_cast<double>(stop - start);

      const Eigen::MatrixXd e = w.transpose() * w - eye;
      // ||E F||^2 summed over the batch is tr(E S E) after the 1/|B| scaling.
      const double loss = (e * s * e).trace();
      ++result.steps;
      if (!std::isfinite(loss)) {
        throw NumericError("eigenbasis training (layer " + std::to_string(corpus.layer) +
                           "): non-finite loss at step " + std::to_string(result.steps));
      }
      epoch_loss += loss;
      ++batches;
      w -= result.learning_rate * 2.0 * w * (e * s + s * e);
      w = orthonormalize(w);
    }
    result.epoch_loss.push_back(epoch_loss / batches);
  }

  result.basis.layer = corpus.layer;
  result.basis.w = w.template cast<Scalar>();
  return result;
}

template <typename Scalar>
std::vector<BasicEigenbasis<Scalar>> train_global_eigenbases(const std::vector<BasicCenteredFeatures<Scalar>>& layers,
                                                             const std::vector<int>& reduced,
                                                             const EigenbasisOptions& options) {
  if (layers.size() != reduced.size()) throw std::invalid_argument("one reduced width per layer is required");
  std::vector<BasicEigenbasis<Scalar>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    EigenbasisOptions o = options;
    o.seed = Rng(options.seed).fork(i).next_u64();
    out.push_back(train_eigenbasis(layers[i], reduced[i], o).basis);
  }
  return out;
}

template <typename Scalar>
double encoder_distill_loss(const DenseMatrix<Scalar>& student, const DenseMatrix<Scalar>& teacher,
                            const DenseMatrix<Scalar>& w) {
  if (student.rows() != w.rows() || teacher.rows() != w.cols() || student.cols() != teacher.cols()) {
    throw ShapeError("encoder loss: student " + std::to_string(student.rows()) + "x" + std::to_string(student.cols()) +
                     ", teacher " + std::to_string(teacher.rows()) + "x" + std::to_string(teacher.cols()) +
                     ", basis " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
  }
  return (w.transpose().template cast<double>() * student.template cast<double>() - teacher.template cast<double>())
      .squaredNorm();
}

template <typename Scalar>
BasicTensor<Scalar> to_tensor(const DenseMatrix<Scalar>& m) {
  BasicTensor<Scalar> t(Shape{static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return t;
}

template <typename Scalar>
Var<Scalar> squared_error(const Var<Scalar>& a, const Var<Scalar>& b, Reduction reduction) {
  if (a.shape() != b.shape()) {
    throw ShapeError("squared error of " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  auto s = sum_squares(sub(a, b));
  if (reduction == Reduction::mean) s = scale(s, Scalar(1) / static_cast<Scalar>(a.value().size()));
  return s;
}

template <typename Scalar>
Var<Scalar> encoder_distill_loss(const Var<Scalar>& student, const Var<Scalar>& teacher, const DenseMatrix<Scalar>& w,
                                 Reduction reduction) {
  const Shape& s = student.shape();
  const Shape& t = teacher.shape();
  if (s.size() != 3 || t.size() != 3 || s[0] != w.rows() || t[0] != w.cols() || s[1] != t[1] || s[2] != t[2]) {
    throw ShapeError("encoder loss: student " + shape_string(s) + ", teacher " + shape_string(t) + ", basis " +
                     std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
  }
  Tape<Scalar>& tape = *student.tape();
  auto fe = reshape(center_rows(student), Shape{s[0], s[1] * s[2]});
  auto f = reshape(center_rows(teacher), Shape{t[0], t[1] * t[2]});
  auto lifted = matmul(tape.constant(to_tensor(w)), fe, /*transpose_a=*/true);
  return squared_error(lifted, f, reduction);
}

#define IIDM_INSTANTIATE(S)                                                                                        \
  template double orthonormality_error(const DenseMatrix<S>&);                                                     \
  template DenseMatrix<S> orthonormalize_rows(const DenseMatrix<S>&);                                              \
  template double reconstruction_error(const DenseMatrix<S>&, const BasicCenteredFeatures<S>&);                    \
  template EigenbasisResult<S> train_eigenbasis(const BasicCenteredFeatures<S>&, int, const EigenbasisOptions&,    \
                                                const std::optional<DenseMatrix<S>>&);                             \
  template std::vector<BasicEigenbasis<S>> train_global_eigenbases(const std::vector<BasicCenteredFeatures<S>>&,   \
                                                                   const std::vector<int>&,                        \
                                                                   const EigenbasisOptions&);                      \
  template double encoder_distill_loss(const DenseMatrix<S>&, const DenseMatrix<S>&, const DenseMatrix<S>&);       \
  template BasicTensor<S> to_tensor(const DenseMatrix<S>&);                                                        \
  template Var<S> squared_error(const Var<S>&, const Var<S>&, Reduction);                                          \
  template Var<S> encoder_distill_loss(const Var<S>&, const Var<S>&, const DenseMatrix<S>&, Reduction);

IIDM_INSTANTIATE(float)
IIDM_INSTANTIATE(double)
#undef IIDM_INSTANTIATE

}  // namespace iidm
