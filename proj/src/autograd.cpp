#include "dcbd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcbd/error.hpp"

namespace dcbd {

const Tensor& Var::value() const {
  if (tape == nullptr)
    fail(ErrorKind::structural, "var.unbound", "variable is not on a tape");
  return tape->value(id);
}

const Tensor& BackwardContext::output() const { return tape_->value(node_); }

const Tensor& BackwardContext::input(std::size_t i) const {
  return tape_->value(tape_->nodes_[node_].inputs.at(i));
}

bool BackwardContext::needs(std::size_t i) const {
  return tape_->nodes_[tape_->nodes_[node_].inputs.at(i)].requires_grad;
}

Tensor& BackwardContext::input_grad(std::size_t i) {
  NodeId in = tape_->nodes_[node_].inputs.at(i);
  Tensor& g = (*tape_->grads_)[in];
  if (g.empty()) g = Tensor(tape_->nodes_[in].value.shape());
  return g;
}

const Tensor* Gradients::find(NodeId id) const {
  if (id >= grads_.size() || grads_[id].empty()) return nullptr;
  return &grads_[id];
}

Tensor* Gradients::find(NodeId id) {
  if (id >= grads_.size() || grads_[id].empty()) return nullptr;
  return &grads_[id];
}

const Tensor& Gradients::at(Var v) const {
  const Tensor* g = find(v.id);
  if (g == nullptr)
    fail(ErrorKind::contract, "grad.missing",
         "node " + std::to_string(v.id) + " received no gradient");
  return *g;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

NodeId Tape::record(std::string op, std::span<const NodeId> inputs,
                    Tensor value, BackwardFn backward) {
  if (consumed_)
    fail(ErrorKind::contract, "tape.consumed",
         "cannot record on a tape after backward");
  bool any_grad = false;
  for (NodeId in : inputs) {
    if (in >= nodes_.size())
      fail(ErrorKind::structural, "tape.unknown_input",
           op + ": unknown input node " + std::to_string(in));
    any_grad = any_grad || nodes_[in].requires_grad;
  }
  Node n;
  n.op = std::move(op);
  n.inputs.assign(inputs.begin(), inputs.end());
  n.value = std::move(value);
  n.requires_grad = any_grad;
  if (any_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Var Tape::record(std::string op, std::initializer_list<Var> inputs,
                 Tensor value, BackwardFn backward) {
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape != this)
      fail(ErrorKind::structural, "tape.foreign_input",
           op + ": input belongs to another tape");
    ids.push_back(v.id);
  }
  return Var{this, record(std::move(op), ids, std::move(value),
                          std::move(backward))};
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id >= nodes_.size())
    fail(ErrorKind::structural, "tape.unknown_node",
         "unknown node " + std::to_string(id));
  return nodes_[id];
}

const Tensor& Tape::value(NodeId id) const { return node(id).value; }
const std::string& Tape::op(NodeId id) const { return node(id).op; }
const std::vector<NodeId>& Tape::inputs(NodeId id) const {
  return node(id).inputs;
}
bool Tape::requires_grad(NodeId id) const { return node(id).requires_grad; }

Gradients Tape::backward(Var loss) {
  if (loss.tape != this)
    fail(ErrorKind::structural, "tape.foreign_input",
         "loss belongs to another tape");
  const Node& root = node(loss.id);
  if (root.value.shape() != Shape{1, 1, 1, 1})
    fail(ErrorKind::contract, "backward.non_scalar",
         "backward needs a scalar loss, got " + root.value.shape().str());
  if (consumed_)
    fail(ErrorKind::contract, "tape.consumed", "tape already unwound");
  consumed_ = true;

  Gradients out;
  out.grads_.resize(nodes_.size());
  grads_ = &out.grads_;
  out.grads_[loss.id] = Tensor::scalar(1.0);
  for (NodeId i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || out.grads_[i].empty()) continue;
    BackwardContext ctx(*this, i, out.grads_[i]);
    n.backward(ctx);
    n.backward = nullptr;
  }
  grads_ = nullptr;
  return out;
}

namespace {

double eval_scalar(const ScalarFn& f, const Tensor& point) {
  Tape tape;
  Var y = f(tape.leaf(point, false));
  double v = y.value().item();
  if (!std::isfinite(v))
    fail(ErrorKind::numeric, "gradcheck.non_finite",
         "function value is not finite");
  return v;
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& point,
                                  double step,
                                  std::span<const std::size_t> coords) {
  if (!(step > 0.0))
    fail(ErrorKind::contract, "gradcheck.step", "step must be positive");
  Tape tape;
  Var x = tape.leaf(point);
  Var y = f(x);
  if (!std::isfinite(y.value().item()))
    fail(ErrorKind::numeric, "gradcheck.non_finite",
         "function value is not finite");
  Gradients grads = tape.backward(y);
  const Tensor* g = grads.find(x);
  Tensor zero(point.shape());
  const Tensor& analytic = g != nullptr ? *g : zero;

  GradCheckResult result;
  if (!coords.empty()) result.worst_index = coords.front();
  Tensor probe = point;
  for (std::size_t i : coords) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = eval_scalar(f, probe);
    probe[i] = saved - step;
    const double down = eval_scalar(f, probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& point,
                                  double step) {
  std::vector<std::size_t> all(point.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return finite_diff_check(f, point, step, all);
}

}  // namespace dcbd
