#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "nar/rng.hpp"
#include "nar/tensor.hpp"

namespace nar {

// Handle into a Tape. Only valid for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense tensors. Nodes are appended in evaluation
// order, so creation order is a topological order and one reverse sweep
// visits every node exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaves. Inputs never receive gradients; params do.
  Var input(Tensor value);
  Var param(Tensor value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var relu(Var a);
  Var softplus(Var a);  // log(1 + e^x), stable
  Var softmax(Var a, int axis);
  Var log_softmax(Var a, int axis);
  Var layer_norm(Var x, Var gain, Var bias, double eps);  // over the last axis
  Var transpose(Var a);
  Var slice_cols(Var a, int c0, int c1);
  Var concat(const std::vector<Var>& parts, int axis);
  Var mean(Var a, int axis);  // reduces the given axis of a rank-2 tensor
  Var sum(Var a);             // all elements -> scalar
  Var dropout(Var a, double rate, Rng& rng);  // inverted dropout; identity if rate <= 0

  // Scaled dot-product attention composed from the primitives above:
  // softmax(q k^T / sqrt(cols(k))) v.
  Var attention(Var q, Var k, Var v);

  // Backward from a scalar loss. Rejects non-scalar nodes.
  void backward(Var loss);
  // Backward seeded at several scalar nodes with given output gradients.
  void backward(const std::vector<std::pair<Var, double>>& seeds);

  const Tensor& value(Var v) const;
  // Gradient of the swept objective w.r.t. v; zeros if v was never reached.
  const Tensor& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;  // lazily materialized as zeros
    std::function<void(Tape&)> backward;
    bool needs_grad = false;
  };

  Var emit(Tensor value, std::vector<Var> inputs, std::function<void(Tape&)> rule);
  Node& node(Var v);
  const Node& node(Var v) const;
  bool any_needs_grad(const std::vector<Var>& vs) const;
  Tensor& grad_buf(Var v);
  void accumulate(Var v, const Tensor& g);

  std::deque<Node> nodes_;  // deque: references from value()/grad() stay valid as nodes append
};

}  // namespace nar
