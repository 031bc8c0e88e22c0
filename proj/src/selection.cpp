#include "policyscope/selection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace policyscope::selection {

namespace {

void check_belief(const Belief& belief, const PriorSpec& spec) {
  if (static_cast<int>(belief.mean.size()) != spec.dim() ||
      belief.variance.size() != belief.mean.size())
    throw std::invalid_argument("belief: dimension mismatch with prior spec");
  for (double v : belief.variance)
    if (!(v >= 0.0)) throw std::invalid_argument("belief: variances must be >= 0");
}

Belief constant_belief(int dim, double mean, double variance) {
  Belief b;
  b.mean.assign(dim, mean);
  b.variance.assign(dim, variance);
  return b;
}

void check_certs(const std::vector<const inference::PosteriorCertificate*>& certs) {
  if (certs.empty()) throw std::invalid_argument("select_task: no certificates");
  for (const auto* c : certs)
    if (!c->prior.same_ranges(certs.front()->prior))
      throw std::invalid_argument("select_task: certificates have mismatched prior ranges");
}

}  // namespace

Matrix sample_belief(const Belief& belief, const PriorSpec& spec, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_belief: n must be >= 1");
  check_belief(belief, spec);
  const int d = spec.dim();
  Matrix out(n, d);
  long attempts = 0;
  const long attempt_budget = 1000L * static_cast<long>(n) * d + 10'000L;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const double sd = std::sqrt(belief.variance[j]);
      double u;
      do {
        u = belief.mean[j] + sd * rng.normal();
        if (++attempts > attempt_budget)
          throw std::runtime_error("sample_belief: rejection rate above 99.9% (degenerate belief)");
      } while (u < 0.0 || u > 1.0);
      out(i, j) = spec.lo[j] + (spec.hi[j] - spec.lo[j]) * u;
    }
  }
  return out;
}

double cross_entropy_score(const inference::PosteriorCertificate& cert, const Matrix& samples) {
  if (samples.rows() < 1) throw std::invalid_argument("cross_entropy_score: no samples");
  if (samples.cols() != cert.prior.dim())
    throw std::invalid_argument("cross_entropy_score: sample dimension mismatch");
  const Matrix z = to_unbounded_rows(samples, cert.prior);
  const std::vector<double> lp = flow::log_prob(
      cert.model, z, std::vector<double>(static_cast<size_t>(z.rows()), cert.r_star));
  double acc = 0.0;
  ParamVector zi(z.cols());
  for (int i = 0; i < z.rows(); ++i) {
    for (int j = 0; j < z.cols(); ++j) zi[static_cast<size_t>(j)] = z(i, j);
    acc += lp[static_cast<size_t>(i)] + log_jacobian_to_unbounded(zi, cert.prior);
  }
  return acc / static_cast<double>(z.rows());
}

std::string select_task(const std::vector<const inference::PosteriorCertificate*>& certs,
                        const Belief& belief, int n_samples, Rng& rng) {
  check_certs(certs);
  const Matrix samples = sample_belief(belief, certs.front()->prior, n_samples, rng);
  std::string best_id;
  double best_score = 0.0;
  bool first = true;
  for (const auto* cert : certs) {
    const double score = cross_entropy_score(*cert, samples);
    if (first || score > best_score ||
        (score == best_score && cert->policy_id < best_id)) {
      best_score = score;
      best_id = cert->policy_id;
      first = false;
    }
  }
  return best_id;
}

SelectionResult run_selection_experiment(
    const std::vector<const inference::PosteriorCertificate*>& certs, const envs::Env& env,
    const SelectionConfig& cfg, uint64_t seed) {
  check_certs(certs);
  if (cfg.n_beliefs < 1) throw std::invalid_argument("selection: n_beliefs must be >= 1");
  for (const auto* c : certs) {
    const auto& ids = env.spec().policy_ids;
    if (std::find(ids.begin(), ids.end(), c->policy_id) == ids.end())
      throw std::invalid_argument("selection: env has no policy '" + c->policy_id + "'");
  }

  const int d = certs.front()->prior.dim();
  const int n_methods = 2 + static_cast<int>(certs.size());
  // per-method reward per belief; methods: 0 learned, 1 random, 2.. always-<cert>
  std::vector<std::vector<double>> rewards(n_methods,
                                           std::vector<double>(cfg.n_beliefs, 0.0));
  std::vector<std::string> choices(cfg.n_beliefs);

  bool failed = false;
  std::string failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
  for (int k = 0; k < cfg.n_beliefs; ++k) {
    try {
      // belief center, ground truth, score samples, arm flip, rollout noise:
      // independent streams derived from (seed, k) so the comparison is
      // paired and order-independent
      Rng center_rng(derive_seed(seed, static_cast<uint64_t>(k), 0));
      const Belief hyper = constant_belief(d, cfg.center_mean, cfg.center_variance);
      const Matrix center = sample_belief(hyper, certs.front()->prior, 1, center_rng);

      Belief belief;
      belief.variance.assign(d, cfg.belief_variance);
      belief.mean.resize(d);
      for (int j = 0; j < d; ++j) {
        const double lo = certs.front()->prior.lo[j], hi = certs.front()->prior.hi[j];
        belief.mean[j] = (center(0, j) - lo) / (hi - lo);
      }

      Rng truth_rng(derive_seed(seed, static_cast<uint64_t>(k), 1));
      const Matrix truth = sample_belief(belief, certs.front()->prior, 1, truth_rng);
      ParamVector x(d);
      for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] = truth(0, j);

      Rng score_rng(derive_seed(seed, static_cast<uint64_t>(k), 2));
      const std::string learned = select_task(certs, belief, cfg.score_samples, score_rng);
      choices[k] = learned;

      Rng arm_rng(derive_seed(seed, static_cast<uint64_t>(k), 3));
      const std::string random_arm =
          certs[arm_rng.uniform_int(static_cast<int>(certs.size()))]->policy_id;

      auto paired_rollout = [&](const std::string& policy) {
        Rng noise(derive_seed(seed, static_cast<uint64_t>(k), 4));
        return env.rollout(policy, x, noise);
      };
      rewards[0][k] = paired_rollout(learned);
      rewards[1][k] = paired_rollout(random_arm);
      for (size_t c = 0; c < certs.size(); ++c)
        rewards[2 + c][k] = paired_rollout(certs[c]->policy_id);
    } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
      {
        failed = true;
        failure = e.what();
      }
    }
  }
  if (failed) throw std::runtime_error(failure);

  SelectionResult res;
  res.learned_choices = std::move(choices);
  std::vector<std::string> names = {"learned", "random"};
  for (const auto* c : certs) names.push_back("always-" + c->policy_id);
  for (int m = 0; m < n_methods; ++m) {
    MethodStats st;
    st.method = names[static_cast<size_t>(m)];
    st.n = cfg.n_beliefs;
    double mean = 0.0;
    for (double r : rewards[m]) mean += r;
    mean /= static_cast<double>(cfg.n_beliefs);
    double var = 0.0;
    for (double r : rewards[m]) var += (r - mean) * (r - mean);
    var = cfg.n_beliefs > 1 ? var / static_cast<double>(cfg.n_beliefs - 1) : 0.0;
    st.mean_reward = mean;
    st.std_err = std::sqrt(var / static_cast<double>(cfg.n_beliefs));
    res.methods.push_back(std::move(st));
  }
  return res;
}

}  // namespace policyscope::selection
