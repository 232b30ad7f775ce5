#pragma once

#include <cstdint>
#include <deque>
#include <functional>

#include "ynet/tensor.hpp"

namespace ynet {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int32_t id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode gradient context for one forward/backward pass.
///
/// Every op appends a node holding its output and a closure that pushes the
/// output gradient into its inputs. Nothing is shared between tapes, so
/// independent passes can run concurrently on separate tapes.
class Tape {
 public:
  using Backward = std::function<void(const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(Tensor value);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

  // Gradient of the last backward() output w.r.t. `v`; zeros if unreached.
  Tensor grad(Var v) const;

  // Zero-initialised gradient buffer for in-place accumulation.
  // Only valid for nodes that require grad.
  Tensor& grad_buffer(Var v);
  void accumulate(Var v, const Tensor& g);

  void backward(Var output);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace ynet
