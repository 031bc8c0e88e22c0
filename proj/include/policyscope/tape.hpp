#pragma once

#include <string>
#include <vector>

#include "policyscope/matrix.hpp"

namespace policyscope::ad {

// Primitive set. Everything the density networks and their training losses
// need composes from these nine ops.
enum class Op { Leaf, MatMul, Add, Mul, Tanh, Sigmoid, Exp, Log, Sum, LogSumExp };

const char* op_name(Op op);

// Reduction extent for Sum / LogSumExp.
enum class Reduce {
  All,        // (n,m) -> (1,1)
  Cols,       // (n,m) -> (n,1), per-row reduction across columns
  GroupRows,  // (n,1) -> (n/g,1), contiguous row blocks of length g
};

struct Node {
  Op op = Op::Leaf;
  int a = -1;
  int b = -1;
  Reduce reduce = Reduce::All;
  int group = 0;
  bool requires_grad = false;  // leaves: parameter vs constant
  bool grad_needed = false;    // any input path reaches a parameter leaf
  bool grad_written = false;   // backward bookkeeping: first touch overwrites
  Matrix mask;                 // MatMul only; empty = unmasked
  Matrix masked_w;             // MatMul: W∘mask cached by forward for backward
  Matrix value;
  Matrix grad;
  Matrix scratch_x, scratch_w;  // backward workspaces, sized on first use
};

// Reverse-mode tape over dense 2-D arrays. Build once per batch, then
// alternate leaf rebinds / forward / backward. Node order is the build order,
// which is a topological order by construction.
//
// Broadcasting: the second operand of add/mul may be (1,cols), (rows,1) or
// (1,1) against the first operand's shape. Nothing beyond 2-D.
class Tape {
 public:
  int leaf(Matrix v, bool requires_grad = false);
  int matmul(int x, int w);
  int matmul_masked(int x, int w, Matrix mask);
  int add(int a, int b);
  int mul(int a, int b);
  int tanh(int x);
  int sigmoid(int x);
  int exp(int x);
  int log(int x);
  int sum(int x, Reduce r, int group = 0);
  int logsumexp(int x, Reduce r, int group = 0);

  // Loss node must be 1x1.
  void set_loss(int id);

  // Recomputes every non-leaf node in order; returns the loss value.
  double forward();

  // Fills gradients for all parameter leaves. Gradients accumulate over
  // fan-out. Requires a prior forward() on the current leaf values.
  void backward();

  // Rebind a leaf's value (same shape required). Invalidates forward state.
  void set_leaf(int id, const Matrix& v);
  Matrix& leaf_value(int id);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  const Node& node(int id) const { return nodes_[id]; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  int push(Node n);
  const Node& in(int id) const { return nodes_[id]; }
  [[noreturn]] void fail(int id, const std::string& what) const;
  void check_id(int id) const;

  std::vector<Node> nodes_;
  int loss_ = -1;
  bool forward_done_ = false;
};

}  // namespace policyscope::ad
