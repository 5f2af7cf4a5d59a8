#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dcbd/tensor.hpp"

namespace dcbd {

using NodeId = std::size_t;

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// View handed to a node's backward closure while the tape is unwound.
class BackwardContext {
 public:
  const Tensor& grad() const { return *grad_; }
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  bool needs(std::size_t i) const;
  /// Gradient accumulator of input i, zero-filled on first access.
  Tensor& input_grad(std::size_t i);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, NodeId node, const Tensor& grad)
      : tape_(&tape), node_(node), grad_(&grad) {}

  Tape* tape_;
  NodeId node_;
  const Tensor* grad_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Gradients produced by one backward pass, indexed by node id.
class Gradients {
 public:
  /// nullptr when the node received no gradient.
  const Tensor* find(NodeId id) const;
  const Tensor* find(Var v) const { return find(v.id); }
  Tensor* find(NodeId id);
  Tensor* find(Var v) { return find(v.id); }
  /// Throws a contract error when absent.
  const Tensor& at(Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
};

/// Append-only record of a forward pass. Nodes are stored in creation order,
/// which is a topological order since every input must exist before use.
/// A tape supports a single backward pass; saved contexts are released as
/// the pass proceeds.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an operation node. The closure is dropped when no input
  /// requires a gradient.
  NodeId record(std::string op, std::span<const NodeId> inputs, Tensor value,
                BackwardFn backward);
  Var record(std::string op, std::initializer_list<Var> inputs, Tensor value,
             BackwardFn backward);

  const Tensor& value(NodeId id) const;
  const std::string& op(NodeId id) const;
  const std::vector<NodeId>& inputs(NodeId id) const;
  bool requires_grad(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  Gradients backward(Var loss);

 private:
  friend class BackwardContext;

  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<Tensor>* grads_ = nullptr;
  bool consumed_ = false;
};

/// Builds `f` on a fresh tape around a leaf holding the point.
using ScalarFn = std::function<Var(Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// Compares the tape gradient of `f` against central differences. The error
/// of a coordinate is |analytic - numeric| / max(1, |analytic|).
GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& point,
                                  double step);
/// Same, restricted to the listed coordinates.
GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& point,
                                  double step,
                                  std::span<const std::size_t> coords);

}  // namespace dcbd
