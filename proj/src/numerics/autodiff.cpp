#include "iidm/numerics/autodiff.hpp"

namespace iidm {

template <typename Scalar>
Parameter<Scalar>& ParameterStore<Scalar>::add(std::string name, BasicTensor<Scalar> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter<Scalar>>(std::move(name), std::move(value)));
  return *params_.back();
}

template <typename Scalar>
Parameter<Scalar>* ParameterStore<Scalar>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename Scalar>
const Parameter<Scalar>* ParameterStore<Scalar>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> ParameterStore<Scalar>::all() {
  std::vector<Parameter<Scalar>*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename Scalar>
std::vector<const Parameter<Scalar>*> ParameterStore<Scalar>::all() const {
  std::vector<const Parameter<Scalar>*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename Scalar>
std::size_t ParameterStore<Scalar>::count() const {
  return params_.size();
}

template <typename Scalar>
std::size_t ParameterStore<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename Scalar>
void ParameterStore<Scalar>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(TensorT value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::parameter(Parameter<Scalar>& p) {
  if (auto it = leaves_.find(&p); it != leaves_.end()) return Var<Scalar>(this, it->second);
  const bool frozen = frozen_.count(&p) != 0;
  nodes_.push_back(Node{p.value, {}, {}, frozen ? nullptr : &p, !frozen});
  const int id = static_cast<int>(nodes_.size()) - 1;
  leaves_.emplace(&p, id);
  return Var<Scalar>(this, id);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(TensorT value, std::initializer_list<Var<Scalar>> parents, BackwardFn backward) {
  return record(std::move(value), std::vector<Var<Scalar>>(parents), std::move(backward));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(TensorT value, const std::vector<Var<Scalar>>& parents, BackwardFn backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape() != this) throw std::logic_error("tape: parent recorded on a different tape");
    needs = needs || requires_grad(p);
  }
  Node node{std::move(value), {}, {}, nullptr, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename Scalar>
BasicTensor<Scalar>& Tape<Scalar>::grad_buffer(const Var<Scalar>& v) {
  Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (n.grad.empty()) n.grad = TensorT(n.value.shape());
  return n.grad;
}

template <typename Scalar>
void Tape<Scalar>::accumulate(const Var<Scalar>& v, const TensorT& g) {
  Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw ShapeError("gradient shape " + shape_string(g.shape()) + " does not match value shape " +
                     shape_string(n.value.shape()));
  }
  if (n.grad.empty()) {
    n.grad = g.reshaped(n.value.shape());
  } else {
    n.grad.vec() += g.vec();
  }
}

template <typename Scalar>
void Tape<Scalar>::backward(const Var<Scalar>& loss, Scalar seed) {
  if (loss.tape() != this) throw std::logic_error("backward: loss recorded on a different tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  Node& root = nodes_.at(static_cast<std::size_t>(loss.id()));
  if (!root.requires_grad) return;
  root.grad = TensorT(root.value.shape(), seed);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) continue;
    if (n.param) {
      n.param->grad.vec() += n.grad.vec();
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
    // Intermediate gradients are not needed once propagated.
    if (!n.param) n.grad = TensorT();
  }
  for (auto& [param, id] : leaves_) nodes_[static_cast<std::size_t>(id)].grad = TensorT();
}

template struct Parameter<float>;
template struct Parameter<double>;
template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace iidm
