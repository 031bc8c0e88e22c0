#include "policyscope/tape.hpp"

#include "policyscope/fastmath.hpp"

#include <cmath>
#include <stdexcept>

namespace policyscope::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "Leaf";
    case Op::MatMul: return "MatMul";
    case Op::Add: return "Add";
    case Op::Mul: return "Mul";
    case Op::Tanh: return "Tanh";
    case Op::Sigmoid: return "Sigmoid";
    case Op::Exp: return "Exp";
    case Op::Log: return "Log";
    case Op::Sum: return "Sum";
    case Op::LogSumExp: return "LogSumExp";
  }
  return "?";
}

namespace {

// How the second operand of Add/Mul lines up against the first.
enum class Bcast { Full, Row, Col, Scalar };

Bcast classify(const Matrix& a, const Matrix& b, const std::string& where) {
  if (a.same_shape(b)) return Bcast::Full;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  throw std::invalid_argument(where + ": incompatible shapes " + a.shape_str() + " vs " +
                              b.shape_str());
}

inline double bval(const Matrix& b, Bcast bc, int i, int j) {
  switch (bc) {
    case Bcast::Full: return b(i, j);
    case Bcast::Row: return b(0, j);
    case Bcast::Col: return b(i, 0);
    case Bcast::Scalar: return b(0, 0);
  }
  return 0.0;
}

// first gradient touch overwrites, later ones accumulate; saves a zero-fill
// pass and a full read-modify-write over every activation-sized array
inline void axpy_or_copy(const Matrix& src, Matrix& dst, bool& written) {
  if (written) {
    for (size_t k = 0; k < src.size(); ++k) dst.at_flat(k) += src.at_flat(k);
  } else {
    dst = src;
    written = true;
  }
}

// dst(bi,bj) += src(i,j) folded over the broadcast dims, in row-major order.
void reduce_accumulate(const Matrix& src, Bcast bc, Matrix& dst) {
  const int n = src.rows(), m = src.cols();
  switch (bc) {
    case Bcast::Full:
      for (size_t k = 0; k < src.size(); ++k) dst.at_flat(k) += src.at_flat(k);
      return;
    case Bcast::Scalar: {
      double acc = 0.0;
      for (size_t k = 0; k < src.size(); ++k) acc += src.at_flat(k);
      dst(0, 0) += acc;
      return;
    }
    case Bcast::Row:
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) dst(0, j) += src(i, j);
      return;
    case Bcast::Col:
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += src(i, j);
        dst(i, 0) += acc;
      }
      return;
  }
}

constexpr size_t kEwiseGrain = 16 * 1024;

}  // namespace

void Tape::check_id(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("tape: node id " + std::to_string(id) + " out of range");
}

void Tape::fail(int id, const std::string& what) const {
  throw std::invalid_argument("tape node #" + std::to_string(id) + " (" +
                              op_name(nodes_[id].op) + "): " + what);
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  forward_done_ = false;
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Matrix v, bool requires_grad) {
  if (v.empty()) throw std::invalid_argument("tape: empty leaf");
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = requires_grad;
  n.grad_needed = requires_grad;
  n.value = std::move(v);
  return push(std::move(n));
}

int Tape::matmul(int x, int w) { return matmul_masked(x, w, Matrix()); }

int Tape::matmul_masked(int x, int w, Matrix mask) {
  check_id(x);
  check_id(w);
  const Matrix& xv = nodes_[x].value;
  const Matrix& wv = nodes_[w].value;
  Node n;
  n.op = Op::MatMul;
  n.a = x;
  n.b = w;
  const int id = static_cast<int>(nodes_.size());
  if (xv.cols() != wv.rows())
    throw std::invalid_argument("tape node #" + std::to_string(id) + " (MatMul): inner dims " +
                                xv.shape_str() + " x " + wv.shape_str());
  if (!mask.empty() && !mask.same_shape(wv))
    throw std::invalid_argument("tape node #" + std::to_string(id) +
                                " (MatMul): mask shape " + mask.shape_str() +
                                " does not match weight " + wv.shape_str());
  n.mask = std::move(mask);
  n.grad_needed = nodes_[x].grad_needed || nodes_[w].grad_needed;
  n.value = Matrix(xv.rows(), wv.cols());
  return push(std::move(n));
}

int Tape::add(int a, int b) {
  check_id(a);
  check_id(b);
  const int id = static_cast<int>(nodes_.size());
  classify(nodes_[a].value, nodes_[b].value, "tape node #" + std::to_string(id) + " (Add)");
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.grad_needed = nodes_[a].grad_needed || nodes_[b].grad_needed;
  n.value = Matrix(nodes_[a].value.rows(), nodes_[a].value.cols());
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  check_id(a);
  check_id(b);
  const int id = static_cast<int>(nodes_.size());
  classify(nodes_[a].value, nodes_[b].value, "tape node #" + std::to_string(id) + " (Mul)");
  Node n;
  n.op = Op::Mul;
  n.a = a;
  n.b = b;
  n.grad_needed = nodes_[a].grad_needed || nodes_[b].grad_needed;
  n.value = Matrix(nodes_[a].value.rows(), nodes_[a].value.cols());
  return push(std::move(n));
}

namespace {
Node unary_node(Op op, int x, const Matrix& xv, bool grad_needed) {
  Node n;
  n.op = op;
  n.a = x;
  n.grad_needed = grad_needed;
  n.value = Matrix(xv.rows(), xv.cols());
  return n;
}
}  // namespace

int Tape::tanh(int x) {
  check_id(x);
  return push(unary_node(Op::Tanh, x, nodes_[x].value, nodes_[x].grad_needed));
}
int Tape::sigmoid(int x) {
  check_id(x);
  return push(unary_node(Op::Sigmoid, x, nodes_[x].value, nodes_[x].grad_needed));
}
int Tape::exp(int x) {
  check_id(x);
  return push(unary_node(Op::Exp, x, nodes_[x].value, nodes_[x].grad_needed));
}
int Tape::log(int x) {
  check_id(x);
  return push(unary_node(Op::Log, x, nodes_[x].value, nodes_[x].grad_needed));
}

int Tape::sum(int x, Reduce r, int group) {
  check_id(x);
  const Matrix& xv = nodes_[x].value;
  Node n;
  n.op = Op::Sum;
  n.a = x;
  n.reduce = r;
  n.group = group;
  const int id = static_cast<int>(nodes_.size());
  if (r == Reduce::All) {
    n.value = Matrix(1, 1);
  } else if (r == Reduce::Cols) {
    n.value = Matrix(xv.rows(), 1);
  } else {
    if (xv.cols() != 1 || group < 1 || xv.rows() % group != 0)
      throw std::invalid_argument("tape node #" + std::to_string(id) +
                                  " (Sum): bad row grouping of " + xv.shape_str() +
                                  " by " + std::to_string(group));
    n.value = Matrix(xv.rows() / group, 1);
  }
  n.grad_needed = nodes_[x].grad_needed;
  return push(std::move(n));
}

int Tape::logsumexp(int x, Reduce r, int group) {
  check_id(x);
  const Matrix& xv = nodes_[x].value;
  Node n;
  n.op = Op::LogSumExp;
  n.a = x;
  n.reduce = r;
  n.group = group;
  const int id = static_cast<int>(nodes_.size());
  if (r == Reduce::All) {
    n.value = Matrix(1, 1);
  } else if (r == Reduce::Cols) {
    n.value = Matrix(xv.rows(), 1);
  } else {
    if (xv.cols() != 1 || group < 1 || xv.rows() % group != 0)
      throw std::invalid_argument("tape node #" + std::to_string(id) +
                                  " (LogSumExp): bad row grouping of " + xv.shape_str() +
                                  " by " + std::to_string(group));
    n.value = Matrix(xv.rows() / group, 1);
  }
  n.grad_needed = nodes_[x].grad_needed;
  return push(std::move(n));
}

void Tape::set_loss(int id) {
  check_id(id);
  if (nodes_[id].value.rows() != 1 || nodes_[id].value.cols() != 1)
    fail(id, "loss must be 1x1, got " + nodes_[id].value.shape_str());
  loss_ = id;
}

void Tape::set_leaf(int id, const Matrix& v) {
  check_id(id);
  if (nodes_[id].op != Op::Leaf) fail(id, "set_leaf on non-leaf");
  if (!v.same_shape(nodes_[id].value))
    fail(id, "leaf rebind shape " + v.shape_str() + " != declared " +
                 nodes_[id].value.shape_str());
  nodes_[id].value = v;
  forward_done_ = false;
}

Matrix& Tape::leaf_value(int id) {
  check_id(id);
  if (nodes_[id].op != Op::Leaf) fail(id, "leaf_value on non-leaf");
  forward_done_ = false;
  return nodes_[id].value;
}

double Tape::forward() {
  if (loss_ < 0) throw std::logic_error("tape: forward without a loss node");
  for (size_t idx = 0; idx < nodes_.size(); ++idx) {
    Node& n = nodes_[idx];
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        const Matrix& x = nodes_[n.a].value;
        const Matrix& w = nodes_[n.b].value;
        if (n.mask.empty()) {
          kernels::gemm(x, w, n.value);
        } else {
          n.masked_w = kernels::hadamard(w, n.mask);
          kernels::gemm(x, n.masked_w, n.value);
        }
        break;
      }
      case Op::Add: {
        const Matrix& a = nodes_[n.a].value;
        const Matrix& b = nodes_[n.b].value;
        const Bcast bc = classify(a, b, "Add");
        const int rows = a.rows(), cols = a.cols();
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) n.value(i, j) = a(i, j) + bval(b, bc, i, j);
        break;
      }
      case Op::Mul: {
        const Matrix& a = nodes_[n.a].value;
        const Matrix& b = nodes_[n.b].value;
        const Bcast bc = classify(a, b, "Mul");
        const int rows = a.rows(), cols = a.cols();
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) n.value(i, j) = a(i, j) * bval(b, bc, i, j);
        break;
      }
      case Op::Tanh: {
        const Matrix& x = nodes_[n.a].value;
        const long sz = static_cast<long>(x.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (sz > static_cast<long>(kEwiseGrain))
#endif
        for (long k = 0; k < sz; ++k) n.value.at_flat(k) = fastmath::tanh(x.at_flat(k));
        break;
      }
      case Op::Sigmoid: {
        const Matrix& x = nodes_[n.a].value;
        const long sz = static_cast<long>(x.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (sz > static_cast<long>(kEwiseGrain))
#endif
        for (long k = 0; k < sz; ++k) n.value.at_flat(k) = fastmath::sigmoid(x.at_flat(k));
        break;
      }
      case Op::Exp: {
        const Matrix& x = nodes_[n.a].value;
        const long sz = static_cast<long>(x.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (sz > static_cast<long>(kEwiseGrain))
#endif
        for (long k = 0; k < sz; ++k) n.value.at_flat(k) = fastmath::exp(x.at_flat(k));
        break;
      }
      case Op::Log: {
        const Matrix& x = nodes_[n.a].value;
        const long sz = static_cast<long>(x.size());
        for (long k = 0; k < sz; ++k) n.value.at_flat(k) = std::log(x.at_flat(k));
        break;
      }
      case Op::Sum: {
        const Matrix& x = nodes_[n.a].value;
        if (n.reduce == Reduce::All) {
          double acc = 0.0;
          for (size_t k = 0; k < x.size(); ++k) acc += x.at_flat(k);
          n.value(0, 0) = acc;
        } else if (n.reduce == Reduce::Cols) {
          for (int i = 0; i < x.rows(); ++i) {
            double acc = 0.0;
            for (int j = 0; j < x.cols(); ++j) acc += x(i, j);
            n.value(i, 0) = acc;
          }
        } else {
          const int g = n.group;
          for (int i = 0; i < n.value.rows(); ++i) {
            double acc = 0.0;
            for (int k = 0; k < g; ++k) acc += x(i * g + k, 0);
            n.value(i, 0) = acc;
          }
        }
        break;
      }
      case Op::LogSumExp: {
        const Matrix& x = nodes_[n.a].value;
        auto lse_span = [&x](int first, int stride, int count) {
          double m = x.at_flat(first);
          for (int k = 1; k < count; ++k)
            m = std::max(m, x.at_flat(first + static_cast<size_t>(k) * stride));
          double acc = 0.0;
          for (int k = 0; k < count; ++k)
            acc += fastmath::exp(x.at_flat(first + static_cast<size_t>(k) * stride) - m);
          return m + std::log(acc);
        };
        if (n.reduce == Reduce::All) {
          n.value(0, 0) = lse_span(0, 1, static_cast<int>(x.size()));
        } else if (n.reduce == Reduce::Cols) {
          for (int i = 0; i < x.rows(); ++i) n.value(i, 0) = lse_span(i * x.cols(), 1, x.cols());
        } else {
          const int g = n.group;
          for (int i = 0; i < n.value.rows(); ++i) n.value(i, 0) = lse_span(i * g, 1, g);
        }
        break;
      }
    }
  }
  forward_done_ = true;
  return nodes_[loss_].value(0, 0);
}

void Tape::backward() {
  if (!forward_done_)
    throw std::logic_error("tape: backward called before forward on current leaf values");
  for (Node& n : nodes_) {
    if (!n.grad_needed) continue;
    if (!n.grad.same_shape(n.value)) n.grad = Matrix(n.value.rows(), n.value.cols());
    n.grad_written = false;
  }
  if (nodes_[loss_].grad_needed) {
    nodes_[loss_].grad(0, 0) = 1.0;
    nodes_[loss_].grad_written = true;
  }

  for (int idx = static_cast<int>(nodes_.size()) - 1; idx >= 0; --idx) {
    Node& n = nodes_[idx];
    if (n.op == Op::Leaf || !n.grad_needed || !n.grad_written) continue;
    const Matrix& dy = n.grad;
    switch (n.op) {
      case Op::MatMul: {
        Node& xn = nodes_[n.a];
        Node& wn = nodes_[n.b];
        const Matrix& wm = n.mask.empty() ? wn.value : n.masked_w;
        if (xn.grad_needed) {
          if (xn.grad_written) {
            if (!n.scratch_x.same_shape(xn.value))
              n.scratch_x = Matrix(xn.value.rows(), xn.value.cols());
            kernels::gemm_a_bt(dy, wm, n.scratch_x);
            for (size_t k = 0; k < n.scratch_x.size(); ++k)
              xn.grad.at_flat(k) += n.scratch_x.at_flat(k);
          } else {
            kernels::gemm_a_bt(dy, wm, xn.grad);
            xn.grad_written = true;
          }
        }
        if (wn.grad_needed) {
          Matrix* dw = &wn.grad;
          if (wn.grad_written) {
            if (!n.scratch_w.same_shape(wn.value))
              n.scratch_w = Matrix(wn.value.rows(), wn.value.cols());
            dw = &n.scratch_w;
          }
          kernels::gemm_at_b(xn.value, dy, *dw);
          if (!n.mask.empty()) {
            // masked connections carry no gradient
            for (size_t k = 0; k < dw->size(); ++k) dw->at_flat(k) *= n.mask.at_flat(k);
          }
          if (wn.grad_written) {
            for (size_t k = 0; k < dw->size(); ++k) wn.grad.at_flat(k) += dw->at_flat(k);
          } else {
            wn.grad_written = true;
          }
        }
        break;
      }
      case Op::Add: {
        Node& an = nodes_[n.a];
        Node& bn = nodes_[n.b];
        const Bcast bc = classify(an.value, bn.value, "Add");
        if (an.grad_needed) axpy_or_copy(dy, an.grad, an.grad_written);
        if (bn.grad_needed) {
          if (bc == Bcast::Full) {
            axpy_or_copy(dy, bn.grad, bn.grad_written);
          } else {
            if (!bn.grad_written) {
              bn.grad.fill(0.0);
              bn.grad_written = true;
            }
            reduce_accumulate(dy, bc, bn.grad);
          }
        }
        break;
      }
      case Op::Mul: {
        Node& an = nodes_[n.a];
        Node& bn = nodes_[n.b];
        const Bcast bc = classify(an.value, bn.value, "Mul");
        const int rows = an.value.rows(), cols = an.value.cols();
        if (an.grad_needed) {
          if (an.grad_written) {
            for (int i = 0; i < rows; ++i)
              for (int j = 0; j < cols; ++j)
                an.grad(i, j) += dy(i, j) * bval(bn.value, bc, i, j);
          } else {
            for (int i = 0; i < rows; ++i)
              for (int j = 0; j < cols; ++j)
                an.grad(i, j) = dy(i, j) * bval(bn.value, bc, i, j);
            an.grad_written = true;
          }
        }
        if (bn.grad_needed) {
          if (bc == Bcast::Full && !bn.grad_written) {
            for (int i = 0; i < rows; ++i)
              for (int j = 0; j < cols; ++j) bn.grad(i, j) = dy(i, j) * an.value(i, j);
            bn.grad_written = true;
          } else {
            if (!n.scratch_x.same_shape(n.value)) n.scratch_x = Matrix(rows, cols);
            Matrix& t = n.scratch_x;
            for (int i = 0; i < rows; ++i)
              for (int j = 0; j < cols; ++j) t(i, j) = dy(i, j) * an.value(i, j);
            if (!bn.grad_written) {
              bn.grad.fill(0.0);
              bn.grad_written = true;
            }
            reduce_accumulate(t, bc, bn.grad);
          }
        }
        break;
      }
      case Op::Tanh: {
        Node& xn = nodes_[n.a];
        if (!xn.grad_needed) break;
        if (xn.grad_written) {
          for (size_t k = 0; k < dy.size(); ++k) {
            const double y = n.value.at_flat(k);
            xn.grad.at_flat(k) += dy.at_flat(k) * (1.0 - y * y);
          }
        } else {
          for (size_t k = 0; k < dy.size(); ++k) {
            const double y = n.value.at_flat(k);
            xn.grad.at_flat(k) = dy.at_flat(k) * (1.0 - y * y);
          }
          xn.grad_written = true;
        }
        break;
      }
      case Op::Sigmoid: {
        Node& xn = nodes_[n.a];
        if (!xn.grad_needed) break;
        if (xn.grad_written) {
          for (size_t k = 0; k < dy.size(); ++k) {
            const double y = n.value.at_flat(k);
            xn.grad.at_flat(k) += dy.at_flat(k) * y * (1.0 - y);
          }
        } else {
          for (size_t k = 0; k < dy.size(); ++k) {
            const double y = n.value.at_flat(k);
            xn.grad.at_flat(k) = dy.at_flat(k) * y * (1.0 - y);
          }
          xn.grad_written = true;
        }
        break;
      }
      case Op::Exp: {
        Node& xn = nodes_[n.a];
        if (!xn.grad_needed) break;
        if (xn.grad_written) {
          for (size_t k = 0; k < dy.size(); ++k)
            xn.grad.at_flat(k) += dy.at_flat(k) * n.value.at_flat(k);
        } else {
          for (size_t k = 0; k < dy.size(); ++k)
            xn.grad.at_flat(k) = dy.at_flat(k) * n.value.at_flat(k);
          xn.grad_written = true;
        }
        break;
      }
      case Op::Log: {
        Node& xn = nodes_[n.a];
        if (!xn.grad_needed) break;
        if (xn.grad_written) {
          for (size_t k = 0; k < dy.size(); ++k)
            xn.grad.at_flat(k) += dy.at_flat(k) / xn.value.at_flat(k);
        } else {
          for (size_t k = 0; k < dy.size(); ++k)
            xn.grad.at_flat(k) = dy.at_flat(k) / xn.value.at_flat(k);
          xn.grad_written = true;
        }
        break;
      }
      case Op::Sum: {
        Node& xn = nodes_[n.a];
        if (!xn.grad_needed) break;
        if (!xn.grad_written) {
          xn.grad.fill(0.0);
          xn.grad_written = true;
        }
        Matrix& dx = xn.grad;
        if (n.reduce == Reduce::All) {
          const double g = dy(0, 0);
          for (size_t k = 0; k < dx.size(); ++k) dx.at_flat(k) += g;
        } else if (n.reduce == Reduce::Cols) {
          for (int i = 0; i < dx.rows(); ++i)
            for (int j = 0; j < dx.cols(); ++j) dx(i, j) += dy(i, 0);
        } else {
          const int g = n.group;
          for (int i = 0; i < n.value.rows(); ++i)
            for (int k = 0; k < g; ++k) dx(i * g + k, 0) += dy(i, 0);
        }
        break;
      }
      case Op::LogSumExp: {
        Node& xn = nodes_[n.a];
        if (!xn.grad_needed) break;
        if (!xn.grad_written) {
          xn.grad.fill(0.0);
          xn.grad_written = true;
        }
        const Matrix& x = xn.value;
        Matrix& dx = xn.grad;
        if (n.reduce == Reduce::All) {
          const double y = n.value(0, 0), g = dy(0, 0);
          for (size_t k = 0; k < x.size(); ++k)
            dx.at_flat(k) += g * fastmath::exp(x.at_flat(k) - y);
        } else if (n.reduce == Reduce::Cols) {
          for (int i = 0; i < x.rows(); ++i) {
            const double y = n.value(i, 0), g = dy(i, 0);
            for (int j = 0; j < x.cols(); ++j) dx(i, j) += g * fastmath::exp(x(i, j) - y);
          }
        } else {
          const int g = n.group;
          for (int i = 0; i < n.value.rows(); ++i) {
            const double y = n.value(i, 0), gy = dy(i, 0);
            for (int k = 0; k < g; ++k)
              dx(i * g + k, 0) += gy * fastmath::exp(x(i * g + k, 0) - y);
          }
        }
        break;
      }
      default:
        break;
    }
  }

  // a parameter never reached by the loss still reports a zero gradient
  for (Node& n : nodes_) {
    if (n.op == Op::Leaf && n.requires_grad && !n.grad_written) {
      n.grad.fill(0.0);
      n.grad_written = true;
    }
  }
}

}  // namespace policyscope::ad
