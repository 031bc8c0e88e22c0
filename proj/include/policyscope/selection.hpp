#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "policyscope/envs.hpp"
#include "policyscope/inference.hpp"

namespace policyscope::selection {

// The agent's distribution over an object's initial state and parameters, in
// normalized [0,1] coordinates per dimension.
struct Belief {
  std::vector<double> mean;
  std::vector<double> variance;
};

// Per-dimension Gaussian draws truncated by rejection to [0,1], then affinely
// rescaled to [lo, hi]. Throws when the rejection rate exceeds 99.9%.
Matrix sample_belief(const Belief& belief, const PriorSpec& spec, int n, Rng& rng);

// Monte-Carlo estimate of the expected log posterior density over the belief
// samples (given in bounded units). The to_unbounded log-Jacobian is added
// per sample so scores are densities over the original bounded space.
double cross_entropy_score(const inference::PosteriorCertificate& cert, const Matrix& samples);

// argmax of cross_entropy_score over a single shared sample set; ties break
// to the lexicographically smallest policy id. All certificates must share
// the same prior ranges.
std::string select_task(const std::vector<const inference::PosteriorCertificate*>& certs,
                        const Belief& belief, int n_samples, Rng& rng);

struct MethodStats {
  std::string method;
  double mean_reward = 0.0;
  double std_err = 0.0;
  int n = 0;
};

struct SelectionResult {
  std::vector<MethodStats> methods;             // learned, random, always-<id>...
  std::vector<std::string> learned_choices;     // chosen task per belief
};

struct SelectionConfig {
  int n_beliefs = 1000;
  int score_samples = 256;  // Monte-Carlo samples per belief for the score
  // Belief centers are drawn per dimension from N(center_mean,
  // center_variance) truncated to [0,1]; each belief then has a fixed
  // per-dimension spread around its center.
  double center_mean = 0.5;
  double center_variance = 0.7;
  double belief_variance = 0.02;
};

// Paired-seed comparison of the learned selector against random and
// always-<policy> baselines: per belief, one ground truth is drawn from the
// belief, every method chooses a task, and one rollout is executed at the
// ground-truth vector with identical noise seeds across methods.
SelectionResult run_selection_experiment(
    const std::vector<const inference::PosteriorCertificate*>& certs, const envs::Env& env,
    const SelectionConfig& cfg, uint64_t seed);

}  // namespace policyscope::selection
