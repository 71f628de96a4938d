#include "iidm/numerics/optim.hpp"

#include <cmath>

namespace iidm {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

template <typename Scalar>
Optimizer<Scalar>::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(0) {
  set_learning_rate(learning_rate);
}

template <typename Scalar>
void Optimizer<Scalar>::set_learning_rate(double lr) {
  if (!(lr > 0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive and finite");
  lr_ = lr;
}

template <typename Scalar>
void Optimizer<Scalar>::step(std::span<Parameter<Scalar>* const> params) {
  for (const auto* p : params) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + p->name + "'");
  }
  ++steps_;
  if (kind_ == OptimizerKind::sgd) {
    for (auto* p : params) p->value.vec() -= static_cast<Scalar>(lr_) * p->grad.vec();
    return;
  }
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
  const auto b1 = static_cast<Scalar>(kBeta1);
  const auto b2 = static_cast<Scalar>(kBeta2);
  for (auto* p : params) {
    auto it = moments_.find(p->name);
    if (it == moments_.end()) {
      it = moments_.emplace(p->name, Moments{BasicTensor<Scalar>(p->value.shape()), BasicTensor<Scalar>(p->value.shape())})
               .first;
    }
    auto& m = it->second.first;
    auto& v = it->second.second;
    if (m.size() != p->value.size()) throw ShapeError("optimizer state shape mismatch for '" + p->name + "'");
    m.vec() = b1 * m.vec() + (Scalar(1) - b1) * p->grad.vec();
    v.vec() = b2 * v.vec() + (Scalar(1) - b2) * p->grad.vec().cwiseAbs2();
    const auto step_size = static_cast<Scalar>(lr_ / bc1);
    const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
    const auto eps = static_cast<Scalar>(kEps);
    p->value.vec().array() -= step_size * m.vec().array() / ((v.vec().array() * inv_bc2).sqrt() + eps);
  }
}

template <typename Scalar>
void Optimizer<Scalar>::restore(long steps, std::map<std::string, Moments> moments) {
  if (steps < 0) throw std::invalid_argument("optimizer step count must be nonnegative");
  steps_ = steps;
  moments_ = std::move(moments);
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace iidm
