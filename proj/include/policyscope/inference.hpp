#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "policyscope/envs.hpp"
#include "policyscope/flow.hpp"
#include "policyscope/priors.hpp"

namespace policyscope::inference {

struct DatasetEntry {
  ParamVector param;  // bounded simulator units
  ParamVector z;      // to_unbounded image under the run's PriorSpec
  double reward = 0.0;
  int round_index = 0;
};

// Accumulated (parameters, reward) pairs. Entries are append-only across
// refinement rounds.
struct RoundDataset {
  std::vector<DatasetEntry> entries;

  size_t size() const { return entries.size(); }
  double reward_mean() const;
  double reward_std() const;  // population std, floored away from zero
  double reward_max() const;
};

enum class RStarMode { Max, Percentile95 };
enum class LossMode { AtomicApt, MaxLikelihood };

struct DiscoverConfig {
  int n_rounds = 10;             // refinement iterations I
  int rollouts_per_round = 500;  // rho
  int atoms = 10;                // contrastive set size K
  int batch_size = 256;
  double learning_rate = 5e-4;
  int max_epochs = 500;
  int patience = 20;
  double validation_fraction = 0.1;
  RStarMode r_star_mode = RStarMode::Max;
  LossMode loss_mode = LossMode::AtomicApt;
  double prior_mix = 0.0;  // fraction of proposal draws taken from the prior
  flow::FlowConfig flow;

  void validate() const;
};

// The persisted unit of task selection: the trained conditional flow, its
// prior spec, the target reward it is conditioned on, and provenance.
struct PosteriorCertificate {
  flow::FlowModel model;
  PriorSpec prior;
  double r_star = 0.0;
  std::string env_id;
  std::string policy_id;
  DiscoverConfig config;
  uint64_t seed = 0;
  bool complete = true;
  int rounds_completed = 0;
  std::vector<double> r_star_history;
  std::vector<double> train_loss_history;
  std::vector<double> val_loss_history;
  std::vector<double> self_loglik_history;
};

struct RoundRecord {
  int round = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double r_star = 0.0;
  double wall_time_s = 0.0;
};
using RoundSink = std::function<void(const RoundRecord&)>;

struct RolloutPair {
  ParamVector param;
  double reward = 0.0;
};

using Proposal = std::function<ParamVector(Rng&)>;

// Exactly `rollouts` pairs, ordered by rollout index; each rollout gets its
// own rng stream derived from (round_seed, index), so parallel collection is
// bit-identical to serial. Inputs the simulator rejects are redrawn up to
// 100 times, then an error is raised.
std::vector<RolloutPair> collect_round(const envs::Env& env, const std::string& policy_id,
                                       const Proposal& proposal, int rollouts,
                                       uint64_t round_seed);

void append_round(RoundDataset& dataset, const std::vector<RolloutPair>& pairs,
                  const PriorSpec& spec, int round_index);

// Atom table for a batch of n elements: row j holds j itself first, then k-1
// distinct other indices drawn uniformly without replacement.
std::vector<int> draw_atoms(int n, int k, Rng& rng);

// Value of the atomic contrastive loss on a batch, computed through the
// plain (non-tape) density path. Per element j, the score of atom z is
// log q(z | r_j) - log p(z); the loss is -log softmax at the true atom,
// averaged over the batch. Training uses an autodiff graph of the same
// construction; a test pins the two routes together.
double atomic_apt_loss(const flow::FlowModel& model, const Matrix& z_batch,
                       const std::vector<double>& rewards, int k, const PriorSpec& spec,
                       const std::vector<int>& atom_table);
double atomic_apt_loss(const flow::FlowModel& model, const Matrix& z_batch,
                       const std::vector<double>& rewards, int k, const PriorSpec& spec,
                       Rng& rng);

// Same loss through the autodiff graph the trainer optimizes. Kept public so
// tests can pin the two routes together.
double atomic_apt_loss_tape(const flow::FlowModel& model, const Matrix& z_batch,
                            const std::vector<double>& rewards, int k, const PriorSpec& spec,
                            const std::vector<int>& atom_table);

// Loss plus parameter gradients through the training graph, ordered like
// FlowModel::parameters(). Gradient-check tests difference this against the
// plain loss value path.
double atomic_apt_loss_grad(const flow::FlowModel& model, const Matrix& z_batch,
                            const std::vector<double>& rewards, int k, const PriorSpec& spec,
                            const std::vector<int>& atom_table, std::vector<Matrix>* grads);

struct TrainDiagnostics {
  std::vector<double> train_loss_per_epoch;
  std::vector<double> val_loss_per_epoch;
  double best_val = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
  int lr_halvings = 0;
};

struct TrainAbortError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One round of optimization: Adam on the atomic loss over minibatches, early
// stopping on a held-out split, returns the parameters with the best
// validation loss. Reward standardization statistics must already be set
// from the full accumulated dataset (run_discover does this). Non-finite
// losses halve the learning rate and restart the epoch, at most 3 times,
// then the round aborts with TrainAbortError.
flow::FlowModel train_round(flow::FlowModel model, const RoundDataset& dataset,
                            const PriorSpec& spec, const DiscoverConfig& cfg, uint64_t seed,
                            TrainDiagnostics* diag = nullptr);

double select_r_star(const RoundDataset& dataset, RStarMode mode = RStarMode::Max);

// The full sequential loop: collect rollouts from the current proposal,
// append, fit the flow, extract r*, condition the next proposal on it. If a
// round aborts, the certificate of the last completed round is returned
// flagged incomplete.
PosteriorCertificate run_discover(const envs::Env& env, const std::string& policy_id,
                                  const DiscoverConfig& cfg, uint64_t seed,
                                  const RoundSink& sink = nullptr);

struct PosteriorMetrics {
  double oracle_success_fraction = 0.0;
  double mean_true_reward = 0.0;
  double self_entropy_estimate = 0.0;
  int n = 0;
};

PosteriorMetrics evaluate_posterior(const PosteriorCertificate& cert, const envs::Env& env,
                                    int n, uint64_t seed);

// Same metrics with the uniform prior in place of the posterior: the
// baseline posterior quality is compared against. Its success fraction
// estimates the viable-region volume.
PosteriorMetrics evaluate_prior_baseline(const envs::Env& env, const std::string& policy_id,
                                         int n, uint64_t seed);

}  // namespace policyscope::inference
