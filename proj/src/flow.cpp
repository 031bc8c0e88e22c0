#include "policyscope/flow.hpp"

#include "policyscope/fastmath.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace policyscope::flow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

std::vector<int> hidden_degrees(int dim, int width) {
  // Degrees cycle over 1..d-1 so every output keeps a connection path; for
  // d == 1 the outputs legitimately see nothing but bias and conditioner.
  std::vector<int> deg(width);
  const int span = std::max(1, dim - 1);
  for (int k = 0; k < width; ++k) deg[k] = 1 + (k % span);
  return deg;
}

Matrix input_mask(int dim, const std::vector<int>& deg_h) {
  // m1[i][k] = 1 iff deg_h[k] >= input degree (i+1)
  Matrix m(dim, static_cast<int>(deg_h.size()));
  for (int i = 0; i < dim; ++i)
    for (size_t k = 0; k < deg_h.size(); ++k) m(i, static_cast<int>(k)) = deg_h[k] >= i + 1;
  return m;
}

Matrix hidden_mask(const std::vector<int>& from, const std::vector<int>& to) {
  Matrix m(static_cast<int>(from.size()), static_cast<int>(to.size()));
  for (size_t a = 0; a < from.size(); ++a)
    for (size_t b = 0; b < to.size(); ++b)
      m(static_cast<int>(a), static_cast<int>(b)) = to[b] >= from[a];
  return m;
}

Matrix output_mask(const std::vector<int>& deg_h, int dim) {
  // strict inequality: output slot i connects to hidden units of degree < i+1
  Matrix m(static_cast<int>(deg_h.size()), dim);
  for (size_t k = 0; k < deg_h.size(); ++k)
    for (int i = 0; i < dim; ++i) m(static_cast<int>(k), i) = i + 1 > deg_h[k];
  return m;
}

Matrix random_weights(int rows, int cols, Rng& rng) {
  Matrix w(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) w(i, j) = scale * rng.normal();
  return w;
}

Matrix reverse_cols(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) y(i, j) = x(i, x.cols() - 1 - j);
  return y;
}

void check_finite(const Matrix& z, const char* what) {
  for (size_t k = 0; k < z.size(); ++k)
    if (!std::isfinite(z.at_flat(k)))
      throw std::invalid_argument(std::string(what) + ": non-finite input");
}

using GemmFn = void (*)(const Matrix&, const Matrix&, Matrix&);

void made_forward_impl(const MadeLayer& layer, double bound, const Matrix& x,
                       const Matrix& cond, Matrix* mu, Matrix* alpha, GemmFn gemm,
                       bool parallel) {
  const int n = x.rows();
  const int h1 = layer.w1.cols();
  const int h2 = layer.w2.cols();
  const int d = layer.w_mu.cols();
  const bool par = parallel && static_cast<long>(n) * h1 > 8192;
  (void)par;

  Matrix a1(n, h1);
  gemm(x, kernels::hadamard(layer.w1, layer.m1), a1);
  Matrix c1(n, h1);
  gemm(cond, layer.v1, c1);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < h1; ++j) a1(i, j) = fastmath::tanh(a1(i, j) + layer.b1(0, j) + c1(i, j));

  Matrix a2(n, h2);
  gemm(a1, kernels::hadamard(layer.w2, layer.m2), a2);
  Matrix c2(n, h2);
  gemm(cond, layer.v2, c2);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < h2; ++j) a2(i, j) = fastmath::tanh(a2(i, j) + layer.b2(0, j) + c2(i, j));

  *mu = Matrix(n, d);
  gemm(a2, kernels::hadamard(layer.w_mu, layer.m_out), *mu);
  Matrix cm(n, d);
  gemm(cond, layer.v_mu, cm);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) (*mu)(i, j) += layer.b_mu(0, j) + cm(i, j);

  *alpha = Matrix(n, d);
  gemm(a2, kernels::hadamard(layer.w_alpha, layer.m_out), *alpha);
  Matrix ca(n, d);
  gemm(cond, layer.v_alpha, ca);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (par)
#endif
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const double raw = (*alpha)(i, j) + layer.b_alpha(0, j) + ca(i, j);
      (*alpha)(i, j) = bound * fastmath::tanh(raw / bound);
    }
}

}  // namespace

std::vector<Matrix*> FlowModel::parameters() {
  std::vector<Matrix*> out;
  out.reserve(layers.size() * 12);
  for (MadeLayer& l : layers) {
    out.push_back(&l.w1);
    out.push_back(&l.b1);
    out.push_back(&l.v1);
    out.push_back(&l.w2);
    out.push_back(&l.b2);
    out.push_back(&l.v2);
    out.push_back(&l.w_mu);
    out.push_back(&l.b_mu);
    out.push_back(&l.v_mu);
    out.push_back(&l.w_alpha);
    out.push_back(&l.b_alpha);
    out.push_back(&l.v_alpha);
  }
  return out;
}

std::vector<const Matrix*> FlowModel::parameters() const {
  std::vector<const Matrix*> out;
  for (const Matrix* m : const_cast<FlowModel*>(this)->parameters()) out.push_back(m);
  return out;
}

FlowModel init_model(int dim, const FlowConfig& cfg, Rng& rng) {
  if (dim < 1) throw std::invalid_argument("init_model: dim must be >= 1");
  if (cfg.n_layers < 1) throw std::invalid_argument("init_model: need at least one layer");
  if (cfg.hidden.size() != 2) throw std::invalid_argument("init_model: expected two hidden sizes");
  if (!(cfg.log_scale_bound > 0))
    throw std::invalid_argument("init_model: log_scale_bound must be positive");

  FlowModel model;
  model.dim = dim;
  model.cond_dim = 1;
  model.log_scale_bound = cfg.log_scale_bound;
  model.hidden = cfg.hidden;
  model.layers.resize(cfg.n_layers);

  const int h1 = cfg.hidden[0];
  const int h2 = cfg.hidden[1];
  for (MadeLayer& l : model.layers) {
    l.deg_h1 = hidden_degrees(dim, h1);
    l.deg_h2 = hidden_degrees(dim, h2);
    l.m1 = input_mask(dim, l.deg_h1);
    l.m2 = hidden_mask(l.deg_h1, l.deg_h2);
    l.m_out = output_mask(l.deg_h2, dim);

    l.w1 = random_weights(dim, h1, rng);
    l.v1 = random_weights(1, h1, rng);
    l.w2 = random_weights(h1, h2, rng);
    l.v2 = random_weights(1, h2, rng);
    l.b1 = Matrix(1, h1);
    l.b2 = Matrix(1, h2);
    // zero affine outputs: the fresh flow is exactly the identity map
    l.w_mu = Matrix(h2, dim);
    l.b_mu = Matrix(1, dim);
    l.v_mu = Matrix(1, dim);
    l.w_alpha = Matrix(h2, dim);
    l.b_alpha = Matrix(1, dim);
    l.v_alpha = Matrix(1, dim);
  }
  return model;
}

void made_forward(const MadeLayer& layer, double log_scale_bound, const Matrix& x,
                  const Matrix& cond, Matrix* mu, Matrix* alpha, ExecPath path) {
  const bool parallel = path == ExecPath::Parallel;
  made_forward_impl(layer, log_scale_bound, x, cond, mu, alpha,
                    parallel ? kernels::gemm : kernels::gemm_serial, parallel);
}

ForwardResult forward_transform(const FlowModel& model, const Matrix& z,
                                const std::vector<double>& cond_raw, ExecPath path) {
  if (z.cols() != model.dim)
    throw std::invalid_argument("forward_transform: expected " + std::to_string(model.dim) +
                                " columns, got " + std::to_string(z.cols()));
  if (static_cast<int>(cond_raw.size()) != z.rows())
    throw std::invalid_argument("forward_transform: cond length " +
                                std::to_string(cond_raw.size()) + " != rows " +
                                std::to_string(z.rows()));
  check_finite(z, "forward_transform");

  const int n = z.rows();
  Matrix cond(n, 1);
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(cond_raw[i]))
      throw std::invalid_argument("forward_transform: non-finite conditioning value");
    cond(i, 0) = model.standardize_reward(cond_raw[i]);
  }

  ForwardResult res;
  res.log_det.assign(n, 0.0);
  Matrix v = z;
  Matrix mu, alpha;
  for (size_t l = 0; l < model.layers.size(); ++l) {
    if (l > 0) v = reverse_cols(v);
    made_forward(model.layers[l], model.log_scale_bound, v, cond, &mu, &alpha, path);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < model.dim; ++j) {
        v(i, j) = (v(i, j) - mu(i, j)) * fastmath::exp(-alpha(i, j));
        res.log_det[i] -= alpha(i, j);
      }
  }
  res.base = std::move(v);
  res.log_prob.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double ss = 0.0;
    for (int j = 0; j < model.dim; ++j) ss += res.base(i, j) * res.base(i, j);
    res.log_prob[i] = -0.5 * model.dim * kLog2Pi - 0.5 * ss + res.log_det[i];
  }
  return res;
}

std::vector<double> log_prob(const FlowModel& model, const Matrix& z,
                             const std::vector<double>& cond_raw, ExecPath path) {
  return forward_transform(model, z, cond_raw, path).log_prob;
}

double log_prob_point(const FlowModel& model, const std::vector<double>& z, double cond_raw) {
  Matrix zm(1, static_cast<int>(z.size()));
  for (size_t j = 0; j < z.size(); ++j) zm(0, static_cast<int>(j)) = z[j];
  return log_prob(model, zm, std::vector<double>{cond_raw})[0];
}

Matrix sample(const FlowModel& model, double cond_raw, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("flow sample: n must be >= 1");
  if (!std::isfinite(cond_raw))
    throw std::invalid_argument("flow sample: non-finite conditioning value");
  const int d = model.dim;
  Matrix v(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) v(i, j) = rng.normal();

  Matrix cond(n, 1, model.standardize_reward(cond_raw));
  Matrix mu, alpha;
  for (int l = static_cast<int>(model.layers.size()) - 1; l >= 0; --l) {
    // invert the affine map dimension by dimension: slot i's (mu, alpha)
    // depend only on already-recovered slots < i
    Matrix t(n, d);
    for (int i = 0; i < d; ++i) {
      made_forward(model.layers[l], model.log_scale_bound, t, cond, &mu, &alpha);
      for (int r = 0; r < n; ++r) t(r, i) = v(r, i) * fastmath::exp(alpha(r, i)) + mu(r, i);
    }
    v = std::move(t);
    if (l > 0) v = reverse_cols(v);
  }
  return v;
}

int build_log_prob_graph(ad::Tape& tape, const FlowModel& model, int z_node, int cond_node,
                         std::vector<int>* param_leaves) {
  const int d = model.dim;
  const int neg_one = tape.leaf(Matrix(1, 1, -1.0));
  const int inv_bound = tape.leaf(Matrix(1, 1, 1.0 / model.log_scale_bound));
  const int bound = tape.leaf(Matrix(1, 1, model.log_scale_bound));

  int reversal = -1;
  if (model.layers.size() > 1 && d > 1) {
    Matrix p(d, d);
    for (int j = 0; j < d; ++j) p(j, d - 1 - j) = 1.0;
    reversal = tape.leaf(std::move(p));
  }

  int v = z_node;
  int log_det = -1;
  for (size_t l = 0; l < model.layers.size(); ++l) {
    const MadeLayer& layer = model.layers[l];
    if (l > 0 && reversal >= 0) v = tape.matmul(v, reversal);

    // leaves in canonical parameter order
    const int w1 = tape.leaf(layer.w1, true);
    const int b1 = tape.leaf(layer.b1, true);
    const int v1 = tape.leaf(layer.v1, true);
    const int w2 = tape.leaf(layer.w2, true);
    const int b2 = tape.leaf(layer.b2, true);
    const int v2 = tape.leaf(layer.v2, true);
    const int w_mu = tape.leaf(layer.w_mu, true);
    const int b_mu = tape.leaf(layer.b_mu, true);
    const int v_mu = tape.leaf(layer.v_mu, true);
    const int w_alpha = tape.leaf(layer.w_alpha, true);
    const int b_alpha = tape.leaf(layer.b_alpha, true);
    const int v_alpha = tape.leaf(layer.v_alpha, true);
    for (int id : {w1, b1, v1, w2, b2, v2, w_mu, b_mu, v_mu, w_alpha, b_alpha, v_alpha})
      param_leaves->push_back(id);

    const int h1 =
        tape.tanh(tape.add(tape.add(tape.matmul_masked(v, w1, layer.m1), b1),
                           tape.matmul(cond_node, v1)));
    const int h2 =
        tape.tanh(tape.add(tape.add(tape.matmul_masked(h1, w2, layer.m2), b2),
                           tape.matmul(cond_node, v2)));
    const int mu = tape.add(tape.add(tape.matmul_masked(h2, w_mu, layer.m_out), b_mu),
                            tape.matmul(cond_node, v_mu));
    const int a_raw =
        tape.add(tape.add(tape.matmul_masked(h2, w_alpha, layer.m_out), b_alpha),
                 tape.matmul(cond_node, v_alpha));
    const int alpha = tape.mul(tape.tanh(tape.mul(a_raw, inv_bound)), bound);

    const int u = tape.mul(tape.add(v, tape.mul(mu, neg_one)),
                           tape.exp(tape.mul(alpha, neg_one)));
    const int neg_row_alpha = tape.mul(tape.sum(alpha, ad::Reduce::Cols), neg_one);
    log_det = (log_det < 0) ? neg_row_alpha : tape.add(log_det, neg_row_alpha);
    v = u;
  }

  const int half_neg = tape.leaf(Matrix(1, 1, -0.5));
  const int base_const = tape.leaf(Matrix(1, 1, -0.5 * d * kLog2Pi));
  const int sumsq = tape.sum(tape.mul(v, v), ad::Reduce::Cols);
  const int base_logp = tape.add(tape.mul(sumsq, half_neg), base_const);
  return tape.add(base_logp, log_det);
}

}  // namespace policyscope::flow
