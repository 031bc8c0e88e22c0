#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "policyscope/inference.hpp"

using namespace policyscope;
using namespace policyscope::inference;

namespace {

PriorSpec unit_spec(int d) {
  PriorSpec s;
  for (int i = 0; i < d; ++i) {
    s.names.push_back("x" + std::to_string(i));
    s.lo.push_back(0.0);
    s.hi.push_back(1.0);
  }
  return s;
}

flow::FlowModel tiny_model(int d, uint64_t seed, double jitter = 0.0) {
  flow::FlowConfig fc;
  fc.n_layers = 2;
  fc.hidden = {10, 10};
  Rng rng(seed);
  flow::FlowModel m = flow::init_model(d, fc, rng);
  if (jitter > 0.0)
    for (Matrix* p : m.parameters())
      for (size_t k = 0; k < p->size(); ++k) p->at_flat(k) += jitter * rng.normal();
  return m;
}

DiscoverConfig quick_config() {
  DiscoverConfig cfg;
  cfg.n_rounds = 1;
  cfg.rollouts_per_round = 400;
  cfg.atoms = 10;
  cfg.batch_size = 128;
  cfg.max_epochs = 60;
  cfg.patience = 10;
  cfg.flow.n_layers = 3;
  cfg.flow.hidden = {24, 24};
  return cfg;
}

// env whose rollouts go non-finite: exercises the abort path
class BrokenEnv final : public envs::Env {
 public:
  BrokenEnv() {
    spec_.env_id = "broken";
    spec_.policy_ids = {"default"};
    spec_.prior = unit_spec(2);
    spec_.oracle_available = false;
  }
  const envs::EnvSpec& spec() const override { return spec_; }
  double rollout(const std::string&, const ParamVector&, Rng&) const override {
    return std::numeric_limits<double>::infinity();
  }
  double oracle(const std::string&, const ParamVector&) const override {
    throw std::logic_error("no oracle");
  }

 private:
  envs::EnvSpec spec_;
};

// env that rejects every input: exercises the resample limit
class PickyEnv final : public envs::Env {
 public:
  explicit PickyEnv(bool accept_any) : accept_any_(accept_any) {
    spec_.env_id = "picky";
    spec_.policy_ids = {"default"};
    spec_.prior = unit_spec(1);
    spec_.oracle_available = false;
  }
  const envs::EnvSpec& spec() const override { return spec_; }
  bool validate(const ParamVector& x) const override {
    return accept_any_ ? x[0] < 0.9 : false;
  }
  double rollout(const std::string&, const ParamVector& x, Rng&) const override { return x[0]; }
  double oracle(const std::string&, const ParamVector&) const override {
    throw std::logic_error("no oracle");
  }

 private:
  envs::EnvSpec spec_;
  bool accept_any_;
};

}  // namespace

TEST_CASE("atom tables put the true atom first and never repeat") {
  Rng rng(3);
  const auto table = draw_atoms(40, 7, rng);
  for (int j = 0; j < 40; ++j) {
    CHECK(table[j * 7] == j);
    std::set<int> seen;
    for (int t = 0; t < 7; ++t) {
      const int c = table[j * 7 + t];
      CHECK(c >= 0);
      CHECK(c < 40);
      CHECK(!seen.count(c));
      seen.insert(c);
    }
  }
  CHECK_THROWS_AS(draw_atoms(5, 6, rng), std::invalid_argument);
  CHECK_THROWS_AS(draw_atoms(5, 1, rng), std::invalid_argument);
}

TEST_CASE("equal-score batches give exactly log K") {
  const PriorSpec spec = unit_spec(3);
  const flow::FlowModel model = tiny_model(3, 5, 0.4);
  for (int k : {2, 5, 10}) {
    // every row identical, so every atom in a set scores the same
    Matrix z(16, 3);
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 3; ++j) z(i, j) = 0.3 * (j + 1);
    const std::vector<double> rewards(16, 1.25);
    Rng rng(7);
    const double loss = atomic_apt_loss(model, z, rewards, k, spec, rng);
    CHECK(loss == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-9));
  }
}

TEST_CASE("atomic loss is nonnegative on random batches") {
  const PriorSpec spec = unit_spec(2);
  for (uint64_t seed = 0; seed < 30; ++seed) {
    const flow::FlowModel model = tiny_model(2, 100 + seed, 0.5);
    Rng rng(200 + seed);
    Matrix z(24, 2);
    for (size_t k = 0; k < z.size(); ++k) z.at_flat(k) = 2.0 * rng.normal();
    std::vector<double> rewards(24);
    for (double& r : rewards) r = rng.uniform(-1.0, 1.0);
    const double loss = atomic_apt_loss(model, z, rewards, 6, spec, rng);
    CHECK(loss >= 0.0);
    CHECK(std::isfinite(loss));
  }
}

TEST_CASE("K bounds are enforced") {
  const PriorSpec spec = unit_spec(2);
  const flow::FlowModel model = tiny_model(2, 9);
  Matrix z(8, 2, 0.1);
  const std::vector<double> rewards(8, 0.0);
  Rng rng(1);
  CHECK_THROWS_AS(atomic_apt_loss(model, z, rewards, 9, spec, rng), std::invalid_argument);
  CHECK_THROWS_AS(atomic_apt_loss(model, z, rewards, 1, spec, rng), std::invalid_argument);
}

TEST_CASE("tape and plain routes of the atomic loss agree") {
  const PriorSpec spec = unit_spec(3);
  for (uint64_t seed = 0; seed < 10; ++seed) {
    flow::FlowModel model = tiny_model(3, 300 + seed, 0.5);
    model.reward_norm = {0.5, 2.0};
    Rng rng(400 + seed);
    Matrix z(20, 3);
    for (size_t k = 0; k < z.size(); ++k) z.at_flat(k) = 1.5 * rng.normal();
    std::vector<double> rewards(20);
    for (double& r : rewards) r = rng.uniform(-2.0, 2.0);
    const auto atoms = draw_atoms(20, 5, rng);
    const double a = atomic_apt_loss(model, z, rewards, 5, spec, atoms);
    const double b = atomic_apt_loss_tape(model, z, rewards, 5, spec, atoms);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("collect_round draws the prior uniformly in round zero") {
  auto env = envs::make_env("gaussbench-d2");
  const PriorSpec& prior = env->spec().prior;
  const Proposal proposal = [&prior](Rng& rng) { return sample_uniform_prior(prior, rng); };
  const auto pairs = collect_round(*env, "default", proposal, 500, 99);
  REQUIRE(pairs.size() == 500);
  for (int j = 0; j < 2; ++j) {
    double mean = 0.0;
    for (const auto& p : pairs) mean += p.param[j];
    mean /= 500.0;
    // uniform(0,1): se = 1/sqrt(12*500)
    CHECK(std::abs(mean - 0.5) <= 3.0 / std::sqrt(12.0 * 500.0));
  }
}

TEST_CASE("collect_round is deterministic and thread-count invariant") {
  auto env = envs::make_env("puckworld");
  const PriorSpec& prior = env->spec().prior;
  const Proposal proposal = [&prior](Rng& rng) { return sample_uniform_prior(prior, rng); };
  set_threads(1);
  const auto a = collect_round(*env, "push", proposal, 300, 42);
  set_threads(2);
  const auto b = collect_round(*env, "push", proposal, 300, 42);
  set_threads(1);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].reward == b[i].reward);
    CHECK(a[i].param == b[i].param);
  }
}

TEST_CASE("simulator rejection resamples and eventually errors") {
  const PickyEnv always_reject(false);
  const PickyEnv sometimes(true);
  const Proposal proposal = [](Rng& rng) { return ParamVector{rng.uniform()}; };
  CHECK_THROWS_AS(collect_round(always_reject, "default", proposal, 4, 1),
                  std::runtime_error);
  const auto pairs = collect_round(sometimes, "default", proposal, 50, 1);
  for (const auto& p : pairs) CHECK(p.param[0] < 0.9);
}

TEST_CASE("r* extraction") {
  RoundDataset d;
  const PriorSpec spec = unit_spec(1);
  auto add = [&](double r) {
    std::vector<RolloutPair> p{{ParamVector{0.5}, r}};
    append_round(d, p, spec, 0);
  };
  add(0.0);
  add(0.0);
  add(1.0);
  CHECK(select_r_star(d) == 1.0);

  RoundDataset zeros;
  add(0.0);
  std::vector<RolloutPair> p{{ParamVector{0.5}, 0.0}};
  append_round(zeros, p, spec, 0);
  CHECK(select_r_star(zeros) == 0.0);

  RoundDataset kitchen;
  std::vector<RolloutPair> kp{{ParamVector{0.5}, envs::kitchen_reward(0.9)},
                              {ParamVector{0.5}, envs::kitchen_reward(1.0)}};
  append_round(kitchen, kp, spec, 0);
  CHECK(select_r_star(kitchen) == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-12));

  // 95th percentile option
  RoundDataset many;
  std::vector<RolloutPair> mp;
  for (int i = 0; i < 100; ++i) mp.push_back({ParamVector{0.5}, static_cast<double>(i)});
  append_round(many, mp, spec, 0);
  CHECK(select_r_star(many, RStarMode::Percentile95) == 94.0);
  CHECK(select_r_star(many, RStarMode::Max) == 99.0);
}

TEST_CASE("dataset growth is exactly rho per round") {
  auto env = envs::make_env("gaussbench-d2");
  const PriorSpec& prior = env->spec().prior;
  const Proposal proposal = [&prior](Rng& rng) { return sample_uniform_prior(prior, rng); };
  RoundDataset d;
  for (int round = 0; round < 3; ++round) {
    const auto pairs = collect_round(*env, "default", proposal, 120, round);
    append_round(d, pairs, prior, round);
    CHECK(d.size() == static_cast<size_t>(120 * (round + 1)));
  }
  // z really is the transform of the bounded point
  for (const auto& e : d.entries) {
    const ParamVector z = to_unbounded(e.param, prior);
    CHECK(z == e.z);
    CHECK(e.round_index >= 0);
  }
}

TEST_CASE("training beats the uninformed baseline on GaussianBench") {
  auto env = envs::make_env("gaussbench-d2");
  const PriorSpec& prior = env->spec().prior;
  const DiscoverConfig cfg = quick_config();
  const Proposal proposal = [&prior](Rng& rng) { return sample_uniform_prior(prior, rng); };
  RoundDataset d;
  append_round(d, collect_round(*env, "default", proposal, cfg.rollouts_per_round, 7), prior, 0);

  Rng init(11);
  flow::FlowModel model = flow::init_model(2, cfg.flow, init);
  model.reward_norm = {d.reward_mean(), d.reward_std()};

  TrainDiagnostics diag;
  model = train_round(model, d, prior, cfg, 13, &diag);
  CHECK(diag.best_val < std::log(static_cast<double>(cfg.atoms)));
  CHECK(diag.best_epoch >= 0);
}

TEST_CASE("identical rewards keep the posterior near the prior pushforward") {
  const PriorSpec prior = unit_spec(2);
  DiscoverConfig cfg = quick_config();
  cfg.max_epochs = 40;
  RoundDataset d;
  std::vector<RolloutPair> pairs;
  Rng rng(21);
  for (int i = 0; i < 400; ++i)
    pairs.push_back({ParamVector{rng.uniform(), rng.uniform()}, 0.75});
  append_round(d, pairs, prior, 0);

  Rng init(22);
  flow::FlowModel model = flow::init_model(2, cfg.flow, init);
  model.reward_norm = {d.reward_mean(), d.reward_std()};
  model = train_round(model, d, prior, cfg, 23, nullptr);

  Rng sample_rng(24);
  const Matrix z = flow::sample(model, 0.75, 2000, sample_rng);
  const auto lp = flow::log_prob(model, z, std::vector<double>(2000, 0.75));
  double gap = 0.0;
  ParamVector zi(2);
  for (int i = 0; i < 2000; ++i) {
    for (int j = 0; j < 2; ++j) zi[j] = z(i, j);
    gap += log_prior_unbounded(zi, prior) - lp[i];
  }
  gap /= 2000.0;
  CHECK(std::abs(gap) <= 0.5);
}

TEST_CASE("train_round is deterministic for a fixed seed") {
  auto env = envs::make_env("gaussbench-d2");
  const PriorSpec& prior = env->spec().prior;
  DiscoverConfig cfg = quick_config();
  cfg.max_epochs = 15;
  const Proposal proposal = [&prior](Rng& rng) { return sample_uniform_prior(prior, rng); };
  RoundDataset d;
  append_round(d, collect_round(*env, "default", proposal, 200, 31), prior, 0);

  auto run = [&]() {
    Rng init(32);
    flow::FlowModel model = flow::init_model(2, cfg.flow, init);
    model.reward_norm = {d.reward_mean(), d.reward_std()};
    TrainDiagnostics diag;
    train_round(model, d, prior, cfg, 33, &diag);
    return diag;
  };
  const TrainDiagnostics a = run();
  const TrainDiagnostics b = run();
  CHECK(a.val_loss_per_epoch == b.val_loss_per_epoch);
  CHECK(a.train_loss_per_epoch == b.train_loss_per_epoch);
}

TEST_CASE("a single-round run produces a valid certificate") {
  auto env = envs::make_env("gaussbench-d2");
  DiscoverConfig cfg = quick_config();
  cfg.rollouts_per_round = 120;
  cfg.max_epochs = 20;
  const PosteriorCertificate cert = run_discover(*env, "default", cfg, 44);
  CHECK(cert.complete);
  CHECK(cert.rounds_completed == 1);
  CHECK(cert.r_star_history.size() == 1);
  CHECK(cert.r_star == cert.r_star_history.back());
  CHECK(std::isfinite(cert.val_loss_history[0]));
  // proposal samples and the flow agree with the stored prior
  Rng rng(45);
  const Matrix z = flow::sample(cert.model, cert.r_star, 100, rng);
  const Matrix x = to_bounded_rows(z, cert.prior);
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      CHECK(x(i, j) > cert.prior.lo[j]);
      CHECK(x(i, j) < cert.prior.hi[j]);
    }
}

TEST_CASE("non-finite rewards abort the round and flag the certificate") {
  const BrokenEnv env;
  DiscoverConfig cfg = quick_config();
  cfg.rollouts_per_round = 200;
  cfg.max_epochs = 5;
  const PosteriorCertificate cert = run_discover(env, "default", cfg, 50);
  CHECK_FALSE(cert.complete);
  CHECK(cert.rounds_completed == 0);
}

TEST_CASE("unknown policies are rejected up front") {
  auto env = envs::make_env("gaussbench-d2");
  CHECK_THROWS_AS(run_discover(*env, "nope", quick_config(), 1), std::invalid_argument);
}

TEST_CASE("the prior baseline recovers the closed-form region volume") {
  auto env = envs::make_env("puckworld");
  const PosteriorMetrics m = evaluate_prior_baseline(*env, "push", 5000, 61);
  CHECK(std::abs(m.oracle_success_fraction - envs::puckworld_region_volume("push")) <= 0.05);
  CHECK(m.n == 5000);
  CHECK_THROWS_AS(evaluate_prior_baseline(*env, "push", 0, 61), std::invalid_argument);
}

TEST_CASE("evaluate_posterior scores flow samples against the oracle") {
  auto env = envs::make_env("puckworld");
  PosteriorCertificate cert;
  cert.prior = env->spec().prior;
  Rng init(60);
  cert.model = flow::init_model(cert.prior.dim(), flow::FlowConfig{}, init);
  cert.r_star = 1.0;
  cert.env_id = "puckworld";
  cert.policy_id = "push";
  const PosteriorMetrics m = evaluate_posterior(cert, *env, 2000, 61);
  CHECK(m.oracle_success_fraction >= 0.0);
  CHECK(m.oracle_success_fraction <= 1.0);
  CHECK(std::isfinite(m.self_entropy_estimate));
  CHECK(m.n == 2000);
  CHECK_THROWS_AS(evaluate_posterior(cert, *env, 0, 61), std::invalid_argument);
}

TEST_CASE("config invariants are enforced") {
  DiscoverConfig cfg;
  cfg.atoms = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = DiscoverConfig{};
  cfg.rollouts_per_round = 5;
  cfg.atoms = 10;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = DiscoverConfig{};
  cfg.validation_fraction = 0.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = DiscoverConfig{};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("maximum-likelihood training mode fits the data distribution") {
  const PriorSpec prior = unit_spec(2);
  DiscoverConfig cfg = quick_config();
  cfg.loss_mode = LossMode::MaxLikelihood;
  cfg.max_epochs = 50;
  RoundDataset d;
  std::vector<RolloutPair> pairs;
  Rng rng(61);
  // data clustered near the (0.7, 0.3) corner of the unit box
  for (int i = 0; i < 400; ++i)
    pairs.push_back({ParamVector{0.7 + 0.05 * rng.normal(), 0.3 + 0.05 * rng.normal()}, 1.0});
  for (auto& p : pairs)
    for (double& v : p.param) v = std::min(0.999, std::max(0.001, v));
  append_round(d, pairs, prior, 0);

  Rng init(62);
  flow::FlowModel model = flow::init_model(2, cfg.flow, init);
  model.reward_norm = {d.reward_mean(), d.reward_std()};
  TrainDiagnostics diag;
  model = train_round(model, d, prior, cfg, 63, &diag);
  CHECK(diag.best_epoch >= 0);

  Rng sample_rng(64);
  const Matrix z = flow::sample(model, 1.0, 1000, sample_rng);
  const Matrix x = to_bounded_rows(z, prior);
  double mean0 = 0.0, mean1 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    mean0 += x(i, 0);
    mean1 += x(i, 1);
  }
  CHECK(mean0 / 1000.0 == doctest::Approx(0.7).epsilon(0.1));
  CHECK(mean1 / 1000.0 == doctest::Approx(0.3).epsilon(0.1));
}

TEST_CASE("prior mixing keeps proposals exploring") {
  auto env = envs::make_env("gaussbench-d2");
  DiscoverConfig cfg = quick_config();
  cfg.n_rounds = 2;
  cfg.rollouts_per_round = 100;
  cfg.max_epochs = 15;
  cfg.prior_mix = 0.5;
  const PosteriorCertificate cert = run_discover(*env, "default", cfg, 71);
  CHECK(cert.complete);
  CHECK(cert.rounds_completed == 2);
}
