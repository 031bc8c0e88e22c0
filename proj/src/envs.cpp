#include "policyscope/envs.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace policyscope::envs {

namespace {

void check_in_range(const ParamVector& x, const PriorSpec& prior) {
  if (static_cast<int>(x.size()) != prior.dim())
    throw std::invalid_argument("rollout: expected " + std::to_string(prior.dim()) +
                                " dims, got " + std::to_string(x.size()));
  for (int i = 0; i < prior.dim(); ++i)
    if (x[i] < prior.lo[i] - 1e-12 || x[i] > prior.hi[i] + 1e-12)
      throw std::invalid_argument("rollout: dimension '" + prior.names[i] + "' value " +
                                  std::to_string(x[i]) + " outside prior range");
}

[[noreturn]] void unknown_policy(const std::string& env_id, const std::string& policy_id) {
  throw std::invalid_argument("env '" + env_id + "': unknown policy '" + policy_id + "'");
}

// --- PuckWorld: FetchBox surrogate, scripted push / pickplace rules -------

// dims: mass, w, h, fr0, fr1, fr2, x, y
constexpr int kMass = 0, kW = 1, kH = 2, kFr0 = 3, kX = 6, kY = 7;

bool pickplace_rule(const ParamVector& x) {
  return x[kMass] <= 8.0 && x[kW] <= 0.040 && x[kX] <= 0.7;
}

bool push_rule(const ParamVector& x) {
  return x[kH] <= 0.026 && x[kFr0] >= 0.3 && x[kY] >= 0.2 && x[kY] <= 0.8;
}

class PuckWorld final : public Env {
 public:
  PuckWorld() {
    spec_.env_id = "puckworld";
    spec_.policy_ids = {"pickplace", "push"};
    spec_.prior.names = {"mass", "w", "h", "fr0", "fr1", "fr2", "x", "y"};
    spec_.prior.lo = {1.0, 0.02, 0.02, 0.1, 0.1, 0.1, 0.0, 0.0};
    spec_.prior.hi = {20.0, 0.045, 0.03, 1.0, 1.0, 1.0, 1.0, 1.0};
    spec_.reward_kind = RewardKind::Binary;
    spec_.oracle_available = true;
    spec_.success_threshold = 0.5;
  }
  const EnvSpec& spec() const override { return spec_; }

  double rollout(const std::string& policy_id, const ParamVector& x, Rng& rng) const override {
    const double clean = oracle(policy_id, x);
    // 5% outcome flip
    const bool flip = rng.uniform() < 0.05;
    return flip ? 1.0 - clean : clean;
  }

  double oracle(const std::string& policy_id, const ParamVector& x) const override {
    check_in_range(x, spec_.prior);
    if (policy_id == "pickplace") return pickplace_rule(x) ? 1.0 : 0.0;
    if (policy_id == "push") return push_rule(x) ? 1.0 : 0.0;
    unknown_policy(spec_.env_id, policy_id);
  }

 private:
  EnvSpec spec_;
};

// --- PourSim: Kitchen2D surrogate with the dense pouring reward -----------

constexpr int kGrasp = 0, kRelX = 1, kRelY = 2;

class PourSim final : public Env {
 public:
  PourSim() {
    spec_.env_id = "poursim";
    spec_.policy_ids = {"pour"};
    spec_.prior.names = {"grasp", "rel_x", "rel_y", "dangle"};
    spec_.prior.lo = {0.0, -10.0, 1.0, 0.5 * std::numbers::pi};
    spec_.prior.hi = {1.0, 10.0, 10.0, std::numbers::pi};
    spec_.reward_kind = RewardKind::Dense;
    spec_.oracle_available = true;
    spec_.success_threshold = 0.0;  // x_transfer >= 0.95
  }
  const EnvSpec& spec() const override { return spec_; }

  double rollout(const std::string& policy_id, const ParamVector& x, Rng& rng) const override {
    return oracle(policy_id, x) + rng.normal(0.0, 0.01);
  }

  double oracle(const std::string& policy_id, const ParamVector& x) const override {
    check_in_range(x, spec_.prior);
    if (policy_id != "pour") unknown_policy(spec_.env_id, policy_id);
    return kitchen_reward(poursim_transfer(x));
  }

 private:
  EnvSpec spec_;
};

// --- GaussianBench: known ground truth at the range midpoints -------------

class GaussianBench final : public Env {
 public:
  explicit GaussianBench(int dim) {
    spec_.env_id = dim == 2 ? "gaussbench-d2" : "gaussbench-d" + std::to_string(dim);
    spec_.policy_ids = {"default"};
    for (int i = 0; i < dim; ++i) {
      spec_.prior.names.push_back("x" + std::to_string(i));
      spec_.prior.lo.push_back(0.0);
      spec_.prior.hi.push_back(1.0);
    }
    spec_.reward_kind = RewardKind::Dense;
    spec_.oracle_available = true;
    spec_.success_threshold = -0.05;
  }
  const EnvSpec& spec() const override { return spec_; }

  double rollout(const std::string& policy_id, const ParamVector& x, Rng& rng) const override {
    return oracle(policy_id, x) + rng.normal(0.0, 0.05);
  }

  double oracle(const std::string& policy_id, const ParamVector& x) const override {
    check_in_range(x, spec_.prior);
    if (policy_id != "default") unknown_policy(spec_.env_id, policy_id);
    double acc = 0.0;
    for (double xi : x) {
      const double d = xi - 0.5;
      acc -= d * d;
    }
    return acc;
  }

 private:
  EnvSpec spec_;
};

// --- NoiseBench: rewards carry no information about the input -------------
//
// rollout is a fair coin regardless of x. The oracle keeps a fixed reference
// region (x0 <= 0.5) so spurious posterior concentration shows up as a shift
// of the measured success fraction away from the prior's.

class NoiseBench final : public Env {
 public:
  NoiseBench() {
    spec_.env_id = "noisebench";
    spec_.policy_ids = {"default"};
    spec_.prior.names = {"x0", "x1"};
    spec_.prior.lo = {0.0, 0.0};
    spec_.prior.hi = {1.0, 1.0};
    spec_.reward_kind = RewardKind::Binary;
    spec_.oracle_available = true;
    spec_.success_threshold = 0.5;
  }
  const EnvSpec& spec() const override { return spec_; }

  double rollout(const std::string& policy_id, const ParamVector& x, Rng& rng) const override {
    check_in_range(x, spec_.prior);
    if (policy_id != "default") unknown_policy(spec_.env_id, policy_id);
    return rng.uniform() < 0.5 ? 1.0 : 0.0;
  }

  double oracle(const std::string& policy_id, const ParamVector& x) const override {
    check_in_range(x, spec_.prior);
    if (policy_id != "default") unknown_policy(spec_.env_id, policy_id);
    return x[0] <= 0.5 ? 1.0 : 0.0;
  }

 private:
  EnvSpec spec_;
};

}  // namespace

double kitchen_reward(double x_transfer) {
  if (!(x_transfer >= 0.0 && x_transfer <= 1.0))
    throw std::invalid_argument("kitchen_reward: x_transfer " + std::to_string(x_transfer) +
                                " outside [0, 1]");
  return std::exp(2.0 * (x_transfer * 10.0 - 9.5)) - 1.0;
}

double poursim_transfer(const ParamVector& x) {
  if (x.size() != 4) throw std::invalid_argument("poursim_transfer: expected 4 dims");
  const double grasp = x[kGrasp], rel_x = x[kRelX], rel_y = x[kRelY];
  auto bump = [](double a, double b) { return std::exp(-0.5 * (a * a + b * b)); };
  const double g = std::exp(-(grasp - 0.5) * (grasp - 0.5) / (2.0 * 0.2 * 0.2));
  const double modes = bump((rel_x - 4.0) / 1.5, (rel_y - 3.0) / 2.0) +
                       bump((rel_x + 4.0) / 1.5, (rel_y - 3.0) / 2.0);
  const double t = g * modes;
  return std::min(1.0, std::max(0.0, t));
}

double puckworld_region_volume(const std::string& policy_id) {
  // product of per-gate fractions of each gated dimension's range
  if (policy_id == "pickplace") {
    const double mass = (8.0 - 1.0) / (20.0 - 1.0);
    const double w = (0.040 - 0.02) / (0.045 - 0.02);
    const double x0 = 0.7;
    return mass * w * x0;
  }
  if (policy_id == "push") {
    const double h = (0.026 - 0.02) / (0.03 - 0.02);
    const double fr0 = (1.0 - 0.3) / (1.0 - 0.1);
    const double y0 = 0.8 - 0.2;
    return h * fr0 * y0;
  }
  throw std::invalid_argument("puckworld_region_volume: unknown policy '" + policy_id + "'");
}

std::unique_ptr<Env> make_env(const std::string& env_id) {
  if (env_id == "puckworld") return std::make_unique<PuckWorld>();
  if (env_id == "poursim") return std::make_unique<PourSim>();
  if (env_id == "noisebench") return std::make_unique<NoiseBench>();
  if (env_id == "gaussbench") return std::make_unique<GaussianBench>(2);
  const std::string prefix = "gaussbench-d";
  if (env_id.rfind(prefix, 0) == 0) {
    const std::string tail = env_id.substr(prefix.size());
    if (!tail.empty() && tail.find_first_not_of("0123456789") == std::string::npos) {
      const int d = std::stoi(tail);
      if (d >= 1) return std::make_unique<GaussianBench>(d);
    }
  }
  throw std::invalid_argument("unknown environment '" + env_id + "'");
}

std::vector<std::string> known_env_ids() {
  return {"puckworld", "poursim", "gaussbench-d<k>", "noisebench"};
}

}  // namespace policyscope::envs
