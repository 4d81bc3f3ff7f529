#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "phaseforge/tensor.hpp"

namespace phaseforge::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Backward rule for one recorded primitive: receives the output gradient and one
/// gradient accumulator per input (nullptr when that input needs no gradient).
using BackwardFn =
    std::function<void(const Tensor& out_grad, std::vector<Tensor*>& input_grads)>;

/// Reverse-mode differentiation tape for a single forward pass.
///
/// Nodes are appended in creation order, so node ids increase strictly and every node's
/// inputs have smaller ids. Named parameters enter as leaves; after backward() their
/// gradients are available through gradients().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  Var parameter(const std::string& name, Tensor value);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient after backward(); zeros for nodes the loss does not depend on.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Accumulates dLoss/dNode into every upstream node. Loss must hold exactly one element.
  void backward(Var loss);

  /// Gradients of every named parameter, keyed by name.
  std::map<std::string, Tensor> gradients() const;
  const std::map<std::string, int>& parameters() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::map<std::string, int> params_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace phaseforge::ad
