#include "ynet/autograd.hpp"

#include "ynet/errors.hpp"

namespace ynet {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::param(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape != this) throw Error("op input recorded on a different tape");
    needs = needs || requires_grad(in);
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id)];
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[static_cast<size_t>(v.id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!requires_grad(v)) return;
  Tensor& buf = grad_buffer(v);
  if (!buf.same_shape(g)) {
    throw ShapeError("gradient shape " + to_string(g.shape()) + " does not match value " +
                     to_string(buf.shape()));
  }
  double* d = buf.ptr();
  const double* s = g.ptr();
  for (int64_t i = 0; i < buf.numel(); ++i) d[i] += s[i];
}

void Tape::backward(Var output) {
  if (output.tape != this) throw Error("backward() on a var from another tape");
  if (value(output).numel() != 1) {
    throw ShapeError("backward() needs a scalar output, got " + to_string(value(output).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  if (!requires_grad(output)) return;
  grad_buffer(output).fill(1.0);
  for (int64_t i = output.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(n.grad);
  }
}

}  // namespace ynet
