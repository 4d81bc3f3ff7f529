#include "phaseforge/autodiff.hpp"

namespace phaseforge::ad {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var{this, int(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var{this, int(nodes_.size()) - 1};
}

Var Tape::parameter(const std::string& name, Tensor value) {
  if (params_.contains(name)) throw UsageError("parameter registered twice: " + name);
  Var v = leaf(std::move(value));
  params_.emplace(name, v.id);
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape != this) throw UsageError("input variable belongs to a different tape");
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, int(nodes_.size()) - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("loss variable belongs to a different tape");
  Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1)
    throw UsageError("backward requires a scalar loss, got shape " +
                     shape_string(root.value.shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  root.grad = Tensor(root.value.shape(), Real(1));

  std::vector<Tensor*> input_grads;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.backward) continue;
    input_grads.clear();
    for (int in : n.inputs) {
      Node& src = nodes_[in];
      if (!src.requires_grad) {
        input_grads.push_back(nullptr);
        continue;
      }
      if (src.grad.empty()) src.grad = Tensor(src.value.shape());
      input_grads.push_back(&src.grad);
    }
    n.backward(n.grad, input_grads);
  }
}

std::map<std::string, Tensor> Tape::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : params_) out.emplace(name, grad(Var{const_cast<Tape*>(this), id}));
  return out;
}

}  // namespace phaseforge::ad
