#pragma once

// Reverse-mode differentiation over Tensor values.
//
// A Tape records every operation of one forward pass. Var is a cheap handle
// (tape pointer + node index). Calling Tape::backward once on a scalar root
// fills gradients for every node that requires them; gradients accumulate
// additively when a node feeds several consumers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "softmcl/tensor.hpp"

namespace softmcl::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Zero tensor of value's shape when no gradient reached this node.
  Tensor grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Receives the output gradient; accumulates into parents through grad_buffer().
  using BackwardFn = std::function<void(const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Records an op result. Throws NumericError if `value` is not finite.
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn);

  // Runs reverse accumulation from a scalar root. May be called once per tape.
  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Tensor grad(std::size_t id) const;

  // Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad_buffer(Var v);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---- core op set -------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
// x [n,d] + bias [d], broadcast over rows.
Var add_bias(Var x, Var bias);
// [n,k] x [k,m] -> [n,m]
Var matmul(Var a, Var b);
// 2-D transpose.
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var exp(Var a);
Var log(Var a);
Var relu(Var a);
Var gelu(Var a);
// Softmax along `axis`; subtracts the max first.
Var softmax(Var a, std::size_t axis);
// Reduction along `axis` (axis removed from the shape).
Var sum(Var a, std::size_t axis);
Var sum_all(Var a);
Var mean(Var a);
// v / max(||v||, 1e-12) along `axis`.
Var l2_normalize(Var a, std::size_t axis);
// rows of table [n,d] selected by index -> [ids.size(), d]
Var gather_rows(Var table, std::span<const std::size_t> ids);
// Concatenation of two rank-2 tensors along axis 0 or 1.
Var concat(Var a, Var b, std::size_t axis);
// Row-wise layer normalization of x [n,d] with gain/bias [d].
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, std::uint64_t seed);
// Copy of `a` with no gradient path back to it.
Var detach(Var a);

// Multi-head scaled dot-product self-attention over a padded batch.
// q, k, v: [batch*seq, d]; key_mask: batch*seq flags, 0 = padding.
// Padding keys receive probability exactly zero.
Var multi_head_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads,
                         std::span<const std::uint8_t> key_mask);

// Weighted cross-entropy of masked log-softmax rows:
//   -sum_i sum_{j in mask_i} w_ij * (l_ij - logsumexp_{k in mask_i} l_ik)
// Rows whose weights are all zero contribute nothing. `mask` and `weights`
// are [m,C] row-major. A row with positive weight but empty mask throws.
Var masked_soft_cross_entropy(Var logits, std::span<const std::uint8_t> mask, std::span<const double> weights);

}  // namespace softmcl::ad
