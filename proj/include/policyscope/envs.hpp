#pragma once

#include <memory>
#include <string>
#include <vector>

#include "policyscope/priors.hpp"
#include "policyscope/rng.hpp"

namespace policyscope::envs {

enum class RewardKind { Binary, Dense };

struct EnvSpec {
  std::string env_id;
  std::vector<std::string> policy_ids;
  PriorSpec prior;
  RewardKind reward_kind = RewardKind::Dense;
  bool oracle_available = false;
  double success_threshold = 0.5;  // oracle reward >= threshold counts as success
};

// Stateless evaluator mapping (policy, parameter vector) to a terminal
// reward. Concurrent rollouts are safe with independent rng streams.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;

  // Noisy episode reward.
  virtual double rollout(const std::string& policy_id, const ParamVector& x, Rng& rng) const = 0;

  // Deterministic rule/surrogate with all noise disabled.
  virtual double oracle(const std::string& policy_id, const ParamVector& x) const = 0;

  // Simulator-side rejection of invalid inputs; the analytic environments
  // accept everything, mock environments in tests may not.
  virtual bool validate(const ParamVector& x) const {
    (void)x;
    return true;
  }
};

// Registry ids: "puckworld", "poursim", "gaussbench-d<k>" (and "gaussbench"
// for d=2), "noisebench". Unknown id throws.
std::unique_ptr<Env> make_env(const std::string& env_id);
std::vector<std::string> known_env_ids();

// Dense pouring reward: exp(2*(x_transfer*10 - 9.5)) - 1 for x_transfer in [0,1].
double kitchen_reward(double x_transfer);

// Noise-free transferred proportion for the pour surrogate. Two mirror modes
// in rel_x, a grasp gate, and no dependence on the final angle.
double poursim_transfer(const ParamVector& x);

// Prior-mass of a scripted policy's viable region, in closed form from its
// gates. Used as the baseline in posterior-quality checks.
double puckworld_region_volume(const std::string& policy_id);

}  // namespace policyscope::envs
