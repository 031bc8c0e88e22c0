#pragma once

#include <vector>

#include "policyscope/matrix.hpp"
#include "policyscope/rng.hpp"
#include "policyscope/tape.hpp"

namespace policyscope::flow {

struct FlowConfig {
  int n_layers = 5;
  std::vector<int> hidden = {50, 50};
  double log_scale_bound = 7.0;
};

// One masked autoregressive block: two hidden tanh layers and affine
// (mu, alpha) outputs. Binary masks enforce that output slot i depends only
// on inputs with index < i; the scalar conditioner feeds every hidden and
// output unit unmasked.
struct MadeLayer {
  Matrix w1, b1, v1;  // input->h1 (masked), row bias, cond->h1
  Matrix w2, b2, v2;  // h1->h2 (masked)
  Matrix w_mu, b_mu, v_mu;
  Matrix w_alpha, b_alpha, v_alpha;

  Matrix m1, m2, m_out;  // 0/1 masks, shapes matching w1/w2/w_mu
  std::vector<int> deg_h1, deg_h2;
};

struct RewardNorm {
  double mean = 0.0;
  double stddev = 1.0;
};

// Conditional MAF over the unbounded space. Input order is reversed between
// consecutive layers (fixed, reproducible). Immutable after training;
// concurrent read-only log_prob/sample calls are safe.
struct FlowModel {
  int dim = 0;
  int cond_dim = 1;
  double log_scale_bound = 7.0;
  RewardNorm reward_norm;
  std::vector<int> hidden;
  std::vector<MadeLayer> layers;

  // Trainable arrays in canonical order:
  // per layer: w1, b1, v1, w2, b2, v2, w_mu, b_mu, v_mu, w_alpha, b_alpha, v_alpha.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;

  double standardize_reward(double r) const {
    return (r - reward_norm.mean) / reward_norm.stddev;
  }
};

// Freshly initialized model is exactly the identity map: hidden weights get
// small random values, every affine-output weight and bias is zero.
FlowModel init_model(int dim, const FlowConfig& cfg, Rng& rng);

enum class ExecPath { Parallel, Serial };

// (mu, alpha) for a full input batch; alpha squashed to [-bound, +bound].
void made_forward(const MadeLayer& layer, double log_scale_bound, const Matrix& x,
                  const Matrix& cond, Matrix* mu, Matrix* alpha,
                  ExecPath path = ExecPath::Parallel);

struct ForwardResult {
  Matrix base;                   // image of z in base space, row per input
  std::vector<double> log_det;   // sum of log|det J| over layers
  std::vector<double> log_prob;  // log N(base) + log_det
};

// Density-direction pass (z -> base). cond is the raw reward, standardized
// internally via reward_norm.
ForwardResult forward_transform(const FlowModel& model, const Matrix& z,
                                const std::vector<double>& cond_raw,
                                ExecPath path = ExecPath::Parallel);

std::vector<double> log_prob(const FlowModel& model, const Matrix& z,
                             const std::vector<double>& cond_raw,
                             ExecPath path = ExecPath::Parallel);
double log_prob_point(const FlowModel& model, const std::vector<double>& z, double cond_raw);

// n draws in unbounded space: base normals pushed through the inverse
// transform, sequentially dimension by dimension per layer.
Matrix sample(const FlowModel& model, double cond_raw, int n, Rng& rng);

// Builds the log q(z|cond) column (rows x 1) on a tape. Creates one parameter
// leaf per trainable array, appended to param_leaves in canonical order;
// z_node and cond_node are existing tape nodes (cond already standardized).
int build_log_prob_graph(ad::Tape& tape, const FlowModel& model, int z_node, int cond_node,
                         std::vector<int>* param_leaves);

}  // namespace policyscope::flow
