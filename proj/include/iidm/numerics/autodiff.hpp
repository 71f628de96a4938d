#pragma once

#include "iidm/numerics/tensor.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace iidm {

/// Trainable tensor with a gradient slot of identical shape.
template <typename Scalar>
struct Parameter {
  Parameter(std::string name_, BasicTensor<Scalar> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad.fill(Scalar(0)); }

  std::string name;
  BasicTensor<Scalar> value;
  BasicTensor<Scalar> grad;
};

/// Owns a model's parameters. Addresses stay stable for the lifetime of the
/// store, so layers may keep raw pointers into it.
template <typename Scalar>
class ParameterStore {
 public:
  Parameter<Scalar>& add(std::string name, BasicTensor<Scalar> value);

  Parameter<Scalar>* find(const std::string& name);
  const Parameter<Scalar>* find(const std::string& name) const;

  std::vector<Parameter<Scalar>*> all();
  std::vector<const Parameter<Scalar>*> all() const;

  std::size_t count() const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const BasicTensor<Scalar>& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape<Scalar>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode recording. Every primitive appends one node holding its value
/// and a closure that maps the node's output gradient onto its parents.
/// Nodes are replayed in reverse recording order by backward().
template <typename Scalar>
class Tape {
 public:
  using TensorT = BasicTensor<Scalar>;
  using BackwardFn = std::function<void(Tape&, const TensorT& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(TensorT value);

  /// Leaf bound to `p`: backward() adds into p.grad. One leaf per parameter.
  Var<Scalar> parameter(Parameter<Scalar>& p);

  /// Later parameter() calls for `p` yield constants: no gradient reaches it.
  void freeze(const Parameter<Scalar>& p) { frozen_.insert(&p); }
  void freeze(const ParameterStore<Scalar>& store) {
    for (const auto* p : store.all()) freeze(*p);
  }

  /// Appends a node. `backward` is dropped when no parent needs a gradient.
  Var<Scalar> record(TensorT value, std::initializer_list<Var<Scalar>> parents, BackwardFn backward);
  Var<Scalar> record(TensorT value, const std::vector<Var<Scalar>>& parents, BackwardFn backward);

  const TensorT& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(const Var<Scalar>& v) const { return nodes_.at(static_cast<std::size_t>(v.id())).requires_grad; }

  /// Adds `g` into the gradient of `v`; a no-op when `v` needs no gradient.
  void accumulate(const Var<Scalar>& v, const TensorT& g);
  /// Mutable gradient buffer of `v`, zero-allocated on first use.
  TensorT& grad_buffer(const Var<Scalar>& v);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every parameter leaf.
  /// Parameter gradients accumulate across calls until zeroed.
  void backward(const Var<Scalar>& loss, Scalar seed = Scalar(1));

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    BackwardFn backward;
    Parameter<Scalar>* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<Parameter<Scalar>*, int> leaves_;
  std::unordered_set<const Parameter<Scalar>*> frozen_;
};

template <typename Scalar>
const BasicTensor<Scalar>& Var<Scalar>::value() const {
  return tape_->value(id_);
}

}  // namespace iidm
