#pragma once

#include "iidm/numerics/autodiff.hpp"

#include <map>
#include <span>
#include <string>

namespace iidm {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

/// First-order update rules. Gradients are read, never cleared; the caller
/// zeroes them between steps.
///
///   sgd:  p -= lr * g
///   adam: m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2
///         p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename Scalar>
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Optimizer(OptimizerKind kind, double learning_rate);

  /// Throws NumericError naming the first parameter with a non-finite gradient;
  /// no parameter is modified in that case.
  void step(std::span<Parameter<Scalar>* const> params);

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr);
  long step_count() const { return steps_; }

  struct Moments {
    BasicTensor<Scalar> first;
    BasicTensor<Scalar> second;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }

  /// Restores state saved from moments()/step_count(), e.g. from a checkpoint.
  void restore(long steps, std::map<std::string, Moments> moments);

 private:
  OptimizerKind kind_;
  double lr_;
  long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace iidm
