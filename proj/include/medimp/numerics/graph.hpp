#pragma once

#include "medimp/numerics/tensor.hpp"

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace medimp {

template <std::floating_point T>
class Graph;

/// Handle to one node of a Graph. Cheap to copy; valid while the graph lives.
template <std::floating_point T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* g, std::size_t id) : graph_(g), id_(id) {}

  [[nodiscard]] const Tensor<T>& value() const { return graph_->value(*this); }
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] Graph<T>* graph() const noexcept { return graph_; }
  [[nodiscard]] bool requires_grad() const { return graph_->requires_grad(*this); }
  [[nodiscard]] bool valid() const noexcept { return graph_ != nullptr; }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <std::floating_point T>
using TensorRefs = std::vector<const Tensor<T>*>;

template <std::floating_point T>
using ForwardFn = std::function<Tensor<T>(const TensorRefs<T>&)>;

/// Accumulates input gradients. grads[i] is null when input i needs no gradient.
template <std::floating_point T>
using BackwardFn = std::function<void(const TensorRefs<T>& inputs, const Tensor<T>& output,
                                      const Tensor<T>& grad_out,
                                      const std::vector<Tensor<T>*>& grads)>;

/// Reverse-mode computation record. Nodes are appended in evaluation order, which
/// is a topological order by construction.
template <std::floating_point T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> record(std::string op, const std::vector<Var<T>>& inputs, ForwardFn<T> fwd,
                BackwardFn<T> bwd) {
    Node n;
    n.op = std::move(op);
    n.inputs.reserve(inputs.size());
    bool any_grad = false;
    for (const auto& v : inputs) {
      if (v.graph() != this) throw std::logic_error("op '" + n.op + "' mixes graphs");
      n.inputs.push_back(v.id());
      any_grad = any_grad || nodes_[v.id()].requires_grad;
    }
    n.value = fwd(refs(n.inputs));
    n.requires_grad = any_grad;
    n.forward = std::move(fwd);
    n.backward = std::move(bwd);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  [[nodiscard]] const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id()).value; }
  [[nodiscard]] bool requires_grad(Var<T> v) const { return nodes_.at(v.id()).requires_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
  [[nodiscard]] const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }

  /// Gradient of the last backward() loss w.r.t. v; zeros when v was not reached.
  [[nodiscard]] Tensor<T> grad(Var<T> v) const {
    const auto& n = nodes_.at(v.id());
    if (n.grad) return *n.grad;
    return zeros_like(n.value);
  }

  void backward(Var<T> loss) {
    auto& out = nodes_.at(loss.id());
    if (out.value.numel() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(out.value.shape()));
    }
    for (auto& n : nodes_) n.grad.reset();
    out.grad = Tensor<T>(out.value.shape(), T{1});
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.grad || !n.backward || !n.requires_grad) continue;
      std::vector<Tensor<T>*> gin(n.inputs.size(), nullptr);
      for (std::size_t j = 0; j < n.inputs.size(); ++j) {
        auto& in = nodes_[n.inputs[j]];
        if (!in.requires_grad) continue;
        if (!in.grad) in.grad = zeros_like(in.value);
        gin[j] = &*in.grad;
      }
      n.backward(refs(n.inputs), n.value, *n.grad, gin);
    }
  }

  /// Re-evaluates every recorded op from the leaves and returns the node values.
  [[nodiscard]] std::vector<Tensor<T>> replay() const {
    std::vector<Tensor<T>> values;
    values.reserve(nodes_.size());
    for (const auto& n : nodes_) {
      if (!n.forward) {
        values.push_back(n.value);
        continue;
      }
      TensorRefs<T> in;
      in.reserve(n.inputs.size());
      for (auto id : n.inputs) in.push_back(&values[id]);
      values.push_back(n.forward(in));
    }
    return values;
  }

  /// True when replay() reproduces every stored value bit-exactly.
  [[nodiscard]] bool replay_matches() const {
    const auto values = replay();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!(values[i] == nodes_[i].value)) return false;
    }
    return true;
  }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    std::vector<std::size_t> inputs;
    ForwardFn<T> forward;
    BackwardFn<T> backward;
    std::string op;
    bool requires_grad = false;
  };

  TensorRefs<T> refs(const std::vector<std::size_t>& ids) const {
    TensorRefs<T> r;
    r.reserve(ids.size());
    for (auto id : ids) r.push_back(&nodes_[id].value);
    return r;
  }

  std::vector<Node> nodes_;
};

template <std::floating_point T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
  bool decay = true;  // subject to decoupled weight decay
};

/// Ordered, name-unique collection of model parameters.
template <std::floating_point T>
class ParameterStore {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, bool decay = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back(Parameter<T>{std::move(name), std::move(value), true, decay});
    return params_.back();
  }

  [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) > 0; }

  [[nodiscard]] Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return params_[it->second];
  }
  [[nodiscard]] const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return params_[it->second];
  }

  [[nodiscard]] std::vector<Parameter<T>>& all() noexcept { return params_; }
  [[nodiscard]] const std::vector<Parameter<T>>& all() const noexcept { return params_; }
  [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }

  /// Merges another store; names must stay unique.
  void merge(const ParameterStore& other) {
    for (const auto& p : other.all()) {
      auto& added = add(p.name, p.value, p.decay);
      added.trainable = p.trainable;
    }
  }

  template <std::floating_point U>
  [[nodiscard]] ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& p : params_) {
      auto& q = out.add(p.name, p.value.template cast<U>(), p.decay);
      q.trainable = p.trainable;
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters bound as leaves of one graph, looked up by name.
template <std::floating_point T>
class Bound {
 public:
  Bound() = default;
  explicit Bound(std::map<std::string, Var<T>> vars) : vars_(std::move(vars)) {}
  Bound(Graph<T>& g, const ParameterStore<T>& store, bool track_grads = true) {
    for (const auto& p : store.all()) {
      vars_.emplace(p.name, g.leaf(p.value, track_grads && p.trainable));
    }
  }

  [[nodiscard]] Var<T> operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::out_of_range("parameter '" + name + "' is not bound");
    return it->second;
  }

  [[nodiscard]] const std::map<std::string, Var<T>>& vars() const noexcept { return vars_; }

  /// Gradients for every bound parameter (zeros where unreached or frozen).
  [[nodiscard]] std::map<std::string, Tensor<T>> gradients(const Graph<T>& g) const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, v] : vars_) out.emplace(name, g.grad(v));
    return out;
  }

 private:
  std::map<std::string, Var<T>> vars_;
};

}  // namespace medimp
