#pragma once

// Reverse-mode automatic differentiation over a define-by-run tape.
//
// Every primitive evaluates eagerly and appends one node to the tape, so the
// node order is a topological order by construction. backward() walks the
// tape once in reverse, touching each node at most once.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tensor/tensor.hpp"

namespace infusion::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false, std::string name = {});
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op node. Throws Error(non_finite) naming the op and node index
  // if the value contains NaN or Inf.
  Var record(const char* op, Tensor value, std::vector<int> inputs, Backward backward);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const std::string& op_name(int id) const { return nodes_[id].op; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse pass from a scalar output. Gradients of every node on a path from a
  // requires_grad leaf are retained until the next backward().
  void backward(Var output);

  // Gradient of the last backward() output with respect to v; zeros if v does
  // not influence the output.
  Tensor gradient(Var v) const;

  // backward(output) followed by gradient(w) for each w.
  std::vector<Tensor> grad(Var output, std::span<const Var> wrt);

  // Accumulator for node id during backward(); nullptr when the node does not
  // require a gradient. Used by primitive implementations.
  Tensor* grad_slot(int id);
  const Tensor& out_grad(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  void check_owned(Var v, const char* what) const;

  std::vector<Node> nodes_;
  int last_output_ = -1;
};

// ---- primitives -----------------------------------------------------------

Var matmul(Var a, Var b);                                      // [m,k]x[k,n]
Var linear(Var x, Var weight, std::optional<Var> bias);        // x W^T + b
Var embedding(Var distribution, Var table);                    // one-hot (or relaxed) rows times table^T
Var add(Var a, Var b);                                         // same shape, or b broadcast over rows
Var mul(Var a, Var b);                                         // elementwise
Var scale(Var x, double c);
Var sum(Var x);
Var weighted_sum(Var x, const Tensor& weights);                // sum(w * x)
Var relu(Var x);
Var reshape(Var x, Shape shape);
Var chw_to_hwc(Var x);                                         // [B,C,H,W] -> [B*H*W, C]
Var im2col3x3(Var x, std::size_t batch, std::size_t height, std::size_t width);  // stride 1, pad 1
Var avgpool2x2(Var x, std::size_t batch, std::size_t height, std::size_t width);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads);
Var log_softmax(Var logits);
// sum_r w_r * CE(softmax(logits_r), targets_r); targets rows may be any
// nonnegative weights (one-hot, or a relaxed distribution).
Var softmax_cross_entropy(Var logits, Var targets, std::span<const double> row_weights);
Var gather(Var x, std::span<const int> columns);               // x[r, columns[r]]

// 3x3 same-padding convolution over NHWC rows, built from im2col + linear.
// Returns the conv output and (optionally) the unfolded patches it consumed.
Var conv3x3(Var x, Var weight, Var bias, std::size_t batch, std::size_t height, std::size_t width,
            Var* patches_out = nullptr);

}  // namespace infusion::ad
