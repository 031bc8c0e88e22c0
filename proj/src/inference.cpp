#include "policyscope/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "policyscope/adam.hpp"
#include "policyscope/fastmath.hpp"
#include "policyscope/tape.hpp"

namespace policyscope::inference {

namespace {
constexpr double kStdFloor = 1e-8;
}

double RoundDataset::reward_mean() const {
  if (entries.empty()) return 0.0;
  double acc = 0.0;
  for (const DatasetEntry& e : entries) acc += e.reward;
  return acc / static_cast<double>(entries.size());
}

double RoundDataset::reward_std() const {
  if (entries.empty()) return 1.0;
  const double mean = reward_mean();
  double acc = 0.0;
  for (const DatasetEntry& e : entries) acc += (e.reward - mean) * (e.reward - mean);
  return std::max(std::sqrt(acc / static_cast<double>(entries.size())), kStdFloor);
}

double RoundDataset::reward_max() const {
  if (entries.empty()) throw std::invalid_argument("reward_max: empty dataset");
  double best = entries.front().reward;
  for (const DatasetEntry& e : entries) best = std::max(best, e.reward);
  return best;
}

void DiscoverConfig::validate() const {
  if (n_rounds < 1) throw std::invalid_argument("config: n_rounds must be >= 1");
  if (atoms < 2) throw std::invalid_argument("config: atoms must be >= 2");
  if (rollouts_per_round < atoms)
    throw std::invalid_argument("config: rollouts_per_round must be >= atoms");
  if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2");
  if (!(learning_rate > 0)) throw std::invalid_argument("config: learning_rate must be > 0");
  if (max_epochs < 1) throw std::invalid_argument("config: max_epochs must be >= 1");
  if (patience < 1) throw std::invalid_argument("config: patience must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 0.5))
    throw std::invalid_argument("config: validation_fraction must be in (0, 0.5)");
  if (prior_mix < 0.0 || prior_mix > 1.0)
    throw std::invalid_argument("config: prior_mix must be in [0, 1]");
}

std::vector<RolloutPair> collect_round(const envs::Env& env, const std::string& policy_id,
                                       const Proposal& proposal, int rollouts,
                                       uint64_t round_seed) {
  if (rollouts < 1) throw std::invalid_argument("collect_round: rollouts must be >= 1");
  std::vector<RolloutPair> out(rollouts);
  bool failed = false;
  std::string failure;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < rollouts; ++i) {
    try {
      Rng rng(derive_seed(round_seed, static_cast<uint64_t>(i)));
      ParamVector x;
      int attempts = 0;
      for (;;) {
        x = proposal(rng);
        if (env.validate(x)) break;
        if (++attempts >= 100)
          throw std::runtime_error("collect_round: simulator rejected 100 proposals at rollout " +
                                   std::to_string(i));
      }
      out[i].param = std::move(x);
      out[i].reward = env.rollout(policy_id, out[i].param, rng);
    } catch (const std::exception& e) {
      // exceptions may not cross the parallel region
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
  return out;
}

void append_round(RoundDataset& dataset, const std::vector<RolloutPair>& pairs,
                  const PriorSpec& spec, int round_index) {
  dataset.entries.reserve(dataset.entries.size() + pairs.size());
  for (const RolloutPair& p : pairs) {
    DatasetEntry e;
    e.param = p.param;
    e.z = to_unbounded(p.param, spec);
    e.reward = p.reward;
    e.round_index = round_index;
    dataset.entries.push_back(std::move(e));
  }
}

std::vector<int> draw_atoms(int n, int k, Rng& rng) {
  if (k < 2) throw std::invalid_argument("atoms: K must be >= 2");
  if (k > n) throw std::invalid_argument("atoms: K=" + std::to_string(k) +
                                         " exceeds batch size " + std::to_string(n));
  std::vector<int> table(static_cast<size_t>(n) * k);
  std::vector<char> used(n, 0);
  for (int j = 0; j < n; ++j) {
    table[static_cast<size_t>(j) * k] = j;
    used[j] = 1;
    int filled = 1;
    while (filled < k) {
      const int c = rng.uniform_int(n);
      if (used[c]) continue;
      used[c] = 1;
      table[static_cast<size_t>(j) * k + filled] = c;
      ++filled;
    }
    used[j] = 0;
    for (int t = 1; t < k; ++t) used[table[static_cast<size_t>(j) * k + t]] = 0;
  }
  return table;
}

namespace {

// Flattened atom inputs: row j*k+t of z holds atom t of element j, all
// conditioned on element j's reward.
struct AtomInputs {
  Matrix z;                      // (n*k, d)
  std::vector<double> cond_raw;  // length n*k
  Matrix neg_log_prior;          // (n*k, 1)
  Matrix selector;               // (n*k, 1), 1 at true-atom rows
};

AtomInputs assemble_atoms(const Matrix& z_batch, const std::vector<double>& rewards, int k,
                          const PriorSpec& spec, const std::vector<int>& atom_table) {
  const int n = z_batch.rows();
  const int d = z_batch.cols();
  AtomInputs in;
  in.z = Matrix(n * k, d);
  in.cond_raw.resize(static_cast<size_t>(n) * k);
  in.neg_log_prior = Matrix(n * k, 1);
  in.selector = Matrix(n * k, 1);
  ParamVector zrow(d);
  for (int j = 0; j < n; ++j) {
    for (int t = 0; t < k; ++t) {
      const int src = atom_table[static_cast<size_t>(j) * k + t];
      const int row = j * k + t;
      for (int c = 0; c < d; ++c) {
        in.z(row, c) = z_batch(src, c);
        zrow[c] = z_batch(src, c);
      }
      in.cond_raw[static_cast<size_t>(row)] = rewards[j];
      in.neg_log_prior(row, 0) = -log_prior_unbounded(zrow, spec);
      in.selector(row, 0) = t == 0 ? 1.0 : 0.0;
    }
  }
  return in;
}

void check_batch(const Matrix& z_batch, const std::vector<double>& rewards, int k) {
  if (z_batch.rows() < 1) throw std::invalid_argument("atomic loss: empty batch");
  if (static_cast<int>(rewards.size()) != z_batch.rows())
    throw std::invalid_argument("atomic loss: rewards length != batch rows");
  if (k < 2) throw std::invalid_argument("atomic loss: K must be >= 2");
  if (k > z_batch.rows())
    throw std::invalid_argument("atomic loss: K=" + std::to_string(k) + " exceeds batch size " +
                                std::to_string(z_batch.rows()));
}

}  // namespace

double atomic_apt_loss(const flow::FlowModel& model, const Matrix& z_batch,
                       const std::vector<double>& rewards, int k, const PriorSpec& spec,
                       const std::vector<int>& atom_table) {
  check_batch(z_batch, rewards, k);
  const int n = z_batch.rows();
  const AtomInputs in = assemble_atoms(z_batch, rewards, k, spec, atom_table);
  const std::vector<double> logq = flow::log_prob(model, in.z, in.cond_raw);
  double total = 0.0;
  for (int j = 0; j < n; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < k; ++t)
      mx = std::max(mx, logq[static_cast<size_t>(j) * k + t] +
                            in.neg_log_prior(j * k + t, 0));
    double acc = 0.0;
    for (int t = 0; t < k; ++t)
      acc += fastmath::exp(logq[static_cast<size_t>(j) * k + t] + in.neg_log_prior(j * k + t, 0) - mx);
    const double lse = mx + std::log(acc);
    const double s_true = logq[static_cast<size_t>(j) * k] + in.neg_log_prior(j * k, 0);
    total += lse - s_true;
  }
  return total / static_cast<double>(n);
}

double atomic_apt_loss(const flow::FlowModel& model, const Matrix& z_batch,
                       const std::vector<double>& rewards, int k, const PriorSpec& spec,
                       Rng& rng) {
  check_batch(z_batch, rewards, k);
  return atomic_apt_loss(model, z_batch, rewards, k, spec, draw_atoms(z_batch.rows(), k, rng));
}

double select_r_star(const RoundDataset& dataset, RStarMode mode) {
  if (dataset.entries.empty()) throw std::invalid_argument("select_r_star: empty dataset");
  if (mode == RStarMode::Max) return dataset.reward_max();
  std::vector<double> rewards;
  rewards.reserve(dataset.entries.size());
  for (const DatasetEntry& e : dataset.entries) rewards.push_back(e.reward);
  std::sort(rewards.begin(), rewards.end());
  // nearest-rank 95th percentile
  const size_t idx =
      std::min(rewards.size() - 1,
               static_cast<size_t>(std::ceil(0.95 * static_cast<double>(rewards.size()))) - 1);
  return rewards[idx];
}

namespace {

// Loss graph with rebindable inputs. Built once per (mode, batch size) and
// reused across minibatches and epochs; rebinding leaves avoids reallocating
// the whole node arena every step.
struct LossTape {
  ad::Tape tape;
  std::vector<int> param_leaves;  // canonical parameter order
  int z_leaf = -1;
  int cond_leaf = -1;
  int prior_leaf = -1;
  int selector_leaf = -1;
  LossMode mode = LossMode::AtomicApt;
  int n = 0;
  int k = 1;
};

LossTape build_loss_tape(const flow::FlowModel& model, LossMode mode, int n, int k) {
  LossTape lt;
  lt.mode = mode;
  lt.n = n;
  lt.k = mode == LossMode::AtomicApt ? k : 1;
  const int rows = n * lt.k;
  ad::Tape& tape = lt.tape;
  lt.z_leaf = tape.leaf(Matrix(rows, model.dim));
  lt.cond_leaf = tape.leaf(Matrix(rows, 1));
  const int logq =
      flow::build_log_prob_graph(tape, model, lt.z_leaf, lt.cond_leaf, &lt.param_leaves);
  if (mode == LossMode::AtomicApt) {
    lt.prior_leaf = tape.leaf(Matrix(rows, 1));
    lt.selector_leaf = tape.leaf(Matrix(rows, 1));
    const int scores = tape.add(logq, lt.prior_leaf);
    const int lse = tape.logsumexp(scores, ad::Reduce::GroupRows, k);
    const int true_sum = tape.sum(tape.mul(scores, lt.selector_leaf), ad::Reduce::All);
    const int neg_one = tape.leaf(Matrix(1, 1, -1.0));
    const int gap = tape.add(tape.sum(lse, ad::Reduce::All), tape.mul(true_sum, neg_one));
    tape.set_loss(tape.mul(gap, tape.leaf(Matrix(1, 1, 1.0 / n))));
  } else {
    tape.set_loss(tape.mul(tape.sum(logq, ad::Reduce::All), tape.leaf(Matrix(1, 1, -1.0 / n))));
  }
  return lt;
}

// Copies the current batch and model parameters into the tape's leaves.
void bind_batch(LossTape& lt, const flow::FlowModel& model, const Matrix& z_batch,
                const std::vector<double>& rewards, const PriorSpec& spec,
                const std::vector<int>& atom_table) {
  if (lt.mode == LossMode::AtomicApt) {
    const AtomInputs in = assemble_atoms(z_batch, rewards, lt.k, spec, atom_table);
    Matrix cond_std(lt.n * lt.k, 1);
    for (int r = 0; r < lt.n * lt.k; ++r)
      cond_std(r, 0) = model.standardize_reward(in.cond_raw[static_cast<size_t>(r)]);
    lt.tape.set_leaf(lt.z_leaf, in.z);
    lt.tape.set_leaf(lt.cond_leaf, cond_std);
    lt.tape.set_leaf(lt.prior_leaf, in.neg_log_prior);
    lt.tape.set_leaf(lt.selector_leaf, in.selector);
  } else {
    Matrix cond_std(lt.n, 1);
    for (int r = 0; r < lt.n; ++r)
      cond_std(r, 0) = model.standardize_reward(rewards[static_cast<size_t>(r)]);
    lt.tape.set_leaf(lt.z_leaf, z_batch);
    lt.tape.set_leaf(lt.cond_leaf, cond_std);
  }
  const std::vector<const Matrix*> params = std::as_const(model).parameters();
  for (size_t i = 0; i < params.size(); ++i) lt.tape.set_leaf(lt.param_leaves[i], *params[i]);
}

// One minibatch on a bound tape: forward, backward, Adam step. Returns the
// loss; leaves the model untouched if it is not finite.
double train_batch(flow::FlowModel& model, ad::AdamState& adam, LossTape& lt) {
  const double loss = lt.tape.forward();
  if (!std::isfinite(loss)) return loss;
  lt.tape.backward();

  std::vector<Matrix*> params = model.parameters();
  std::vector<const Matrix*> grads;
  grads.reserve(lt.param_leaves.size());
  for (int id : lt.param_leaves) grads.push_back(&lt.tape.grad(id));
  adam.step(params, grads);
  return loss;
}

Matrix gather_z(const RoundDataset& dataset, const std::vector<int>& idx, int d) {
  Matrix z(static_cast<int>(idx.size()), d);
  for (size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < d; ++c) z(static_cast<int>(r), c) = dataset.entries[idx[r]].z[c];
  return z;
}

std::vector<double> gather_rewards(const RoundDataset& dataset, const std::vector<int>& idx) {
  std::vector<double> r(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) r[i] = dataset.entries[idx[i]].reward;
  return r;
}

double validation_loss(const flow::FlowModel& model, const Matrix& z_val,
                       const std::vector<double>& r_val, int k, const PriorSpec& spec,
                       LossMode mode, const std::vector<int>& val_atoms) {
  if (mode == LossMode::AtomicApt)
    return atomic_apt_loss(model, z_val, r_val, k, spec, val_atoms);
  const std::vector<double> logq = flow::log_prob(model, z_val, r_val);
  double acc = 0.0;
  for (double v : logq) acc += v;
  return -acc / static_cast<double>(logq.size());
}

}  // namespace

double atomic_apt_loss_tape(const flow::FlowModel& model, const Matrix& z_batch,
                            const std::vector<double>& rewards, int k, const PriorSpec& spec,
                            const std::vector<int>& atom_table) {
  check_batch(z_batch, rewards, k);
  LossTape lt = build_loss_tape(model, LossMode::AtomicApt, z_batch.rows(), k);
  bind_batch(lt, model, z_batch, rewards, spec, atom_table);
  return lt.tape.forward();
}

double atomic_apt_loss_grad(const flow::FlowModel& model, const Matrix& z_batch,
                            const std::vector<double>& rewards, int k, const PriorSpec& spec,
                            const std::vector<int>& atom_table, std::vector<Matrix>* grads) {
  check_batch(z_batch, rewards, k);
  LossTape lt = build_loss_tape(model, LossMode::AtomicApt, z_batch.rows(), k);
  bind_batch(lt, model, z_batch, rewards, spec, atom_table);
  const double loss = lt.tape.forward();
  lt.tape.backward();
  grads->clear();
  grads->reserve(lt.param_leaves.size());
  for (int id : lt.param_leaves) grads->push_back(lt.tape.grad(id));
  return loss;
}

flow::FlowModel train_round(flow::FlowModel model, const RoundDataset& dataset,
                            const PriorSpec& spec, const DiscoverConfig& cfg, uint64_t seed,
                            TrainDiagnostics* diag) {
  cfg.validate();
  if (dataset.entries.empty()) throw std::invalid_argument("train_round: empty dataset");
  const int n_total = static_cast<int>(dataset.size());
  const int d = model.dim;

  // held-out split
  std::vector<int> order(n_total);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(seed, 71));
  split_rng.shuffle(order);
  const int n_val = std::max(1, static_cast<int>(std::lround(cfg.validation_fraction * n_total)));
  const int n_train = n_total - n_val;
  if (cfg.loss_mode == LossMode::AtomicApt && (n_train < cfg.atoms || n_val < cfg.atoms))
    throw std::invalid_argument("train_round: dataset too small for K=" +
                                std::to_string(cfg.atoms) + " atoms after the validation split");
  std::vector<int> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int> train_idx(order.begin() + n_val, order.end());

  const Matrix z_val = gather_z(dataset, val_idx, d);
  const std::vector<double> r_val = gather_rewards(dataset, val_idx);
  Rng val_atom_rng(derive_seed(seed, 72));
  const std::vector<int> val_atoms =
      cfg.loss_mode == LossMode::AtomicApt ? draw_atoms(n_val, cfg.atoms, val_atom_rng)
                                           : std::vector<int>();

  ad::AdamState adam(std::as_const(model).parameters(),
                     ad::AdamHyper{cfg.learning_rate, 0.9, 0.999, 1e-8});

  TrainDiagnostics local;
  TrainDiagnostics& dg = diag ? *diag : local;
  dg = TrainDiagnostics{};
  dg.best_val = std::numeric_limits<double>::infinity();

  flow::FlowModel best_model = model;
  int since_best = 0;
  int halvings = 0;
  std::map<int, LossTape> tapes;  // keyed by batch row count

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const flow::FlowModel epoch_start_model = model;
    const ad::AdamState epoch_start_adam = adam;

    double epoch_loss = 0.0;
    bool epoch_ok = false;
    for (;;) {
      Rng epoch_rng(derive_seed(seed, 100, static_cast<uint64_t>(epoch)));
      std::vector<int> idx = train_idx;
      epoch_rng.shuffle(idx);

      // batch boundaries; a tail smaller than K merges into the previous batch
      std::vector<std::pair<int, int>> batches;
      int start = 0;
      while (start < n_train) {
        int end = std::min(start + cfg.batch_size, n_train);
        if (n_train - end > 0 && n_train - end < cfg.atoms) end = n_train;
        batches.emplace_back(start, end);
        start = end;
      }

      epoch_loss = 0.0;
      bool failed = false;
      for (const auto& [b0, b1] : batches) {
        const std::vector<int> bidx(idx.begin() + b0, idx.begin() + b1);
        const Matrix z_b = gather_z(dataset, bidx, d);
        const std::vector<double> r_b = gather_rewards(dataset, bidx);
        const int bn = static_cast<int>(bidx.size());
        const std::vector<int> atoms = cfg.loss_mode == LossMode::AtomicApt
                                           ? draw_atoms(bn, cfg.atoms, epoch_rng)
                                           : std::vector<int>();
        auto it = tapes.find(bn);
        if (it == tapes.end())
          it = tapes.emplace(bn, build_loss_tape(model, cfg.loss_mode, bn, cfg.atoms)).first;
        double loss;
        try {
          bind_batch(it->second, model, z_b, r_b, spec, atoms);
          loss = train_batch(model, adam, it->second);
        } catch (const std::runtime_error&) {
          loss = std::numeric_limits<double>::quiet_NaN();  // non-finite gradients
        }
        if (!std::isfinite(loss)) {
          failed = true;
          break;
        }
        epoch_loss += loss * static_cast<double>(bidx.size());
      }

      if (!failed) {
        epoch_ok = true;
        epoch_loss /= static_cast<double>(n_train);
        break;
      }
      // restart the epoch at half the learning rate
      model = epoch_start_model;
      adam = epoch_start_adam;
      if (++halvings > 3) break;
      adam.hyper().learning_rate /= 2.0;
      dg.lr_halvings = halvings;
    }
    if (!epoch_ok) {
      dg.epochs_run = epoch;
      throw TrainAbortError("train_round: loss stayed non-finite after 3 learning-rate halvings");
    }

    const double val =
        validation_loss(model, z_val, r_val, cfg.atoms, spec, cfg.loss_mode, val_atoms);
    dg.train_loss_per_epoch.push_back(epoch_loss);
    dg.val_loss_per_epoch.push_back(val);
    dg.epochs_run = epoch + 1;

    if (val < dg.best_val) {
      dg.best_val = val;
      dg.best_epoch = epoch;
      best_model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return best_model;
}

PosteriorCertificate run_discover(const envs::Env& env, const std::string& policy_id,
                                  const DiscoverConfig& cfg, uint64_t seed,
                                  const RoundSink& sink) {
  cfg.validate();
  const envs::EnvSpec& espec = env.spec();
  espec.prior.validate();
  if (std::find(espec.policy_ids.begin(), espec.policy_ids.end(), policy_id) ==
      espec.policy_ids.end())
    throw std::invalid_argument("run_discover: env '" + espec.env_id +
                                "' has no policy '" + policy_id + "'");

  const PriorSpec& prior = espec.prior;
  const int d = prior.dim();

  Rng init_rng(derive_seed(seed, 1));
  flow::FlowModel model = flow::init_model(d, cfg.flow, init_rng);

  PosteriorCertificate cert;
  cert.prior = prior;
  cert.env_id = espec.env_id;
  cert.policy_id = policy_id;
  cert.config = cfg;
  cert.seed = seed;
  cert.complete = true;
  cert.rounds_completed = 0;

  RoundDataset dataset;
  Proposal proposal = [&prior](Rng& rng) { return sample_uniform_prior(prior, rng); };

  for (int round = 0; round < cfg.n_rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<RolloutPair> pairs = collect_round(
        env, policy_id, proposal, cfg.rollouts_per_round,
        derive_seed(seed, 10'000, static_cast<uint64_t>(round)));
    append_round(dataset, pairs, prior, round);

    model.reward_norm = flow::RewardNorm{dataset.reward_mean(), dataset.reward_std()};

    TrainDiagnostics diag;
    flow::FlowModel trained;
    try {
      trained = train_round(model, dataset, prior, cfg,
                            derive_seed(seed, 20'000, static_cast<uint64_t>(round)), &diag);
    } catch (const TrainAbortError&) {
      cert.complete = false;
      break;
    }
    model = std::move(trained);

    const double r_star = select_r_star(dataset, cfg.r_star_mode);

    // self-likelihood of the round posterior over its own draws
    Rng self_rng(derive_seed(seed, 30'000, static_cast<uint64_t>(round)));
    const Matrix self_z = flow::sample(model, r_star, 512, self_rng);
    const std::vector<double> self_lp =
        flow::log_prob(model, self_z, std::vector<double>(512, r_star));
    double self_loglik = 0.0;
    for (double v : self_lp) self_loglik += v;
    self_loglik /= static_cast<double>(self_lp.size());

    cert.r_star = r_star;
    cert.rounds_completed = round + 1;
    cert.r_star_history.push_back(r_star);
    cert.train_loss_history.push_back(
        diag.train_loss_per_epoch.empty() ? 0.0 : diag.train_loss_per_epoch.back());
    cert.val_loss_history.push_back(diag.best_val);
    cert.self_loglik_history.push_back(self_loglik);

    // next round's proposal: the fresh posterior conditioned on r*, with an
    // optional prior-mixing fraction
    const flow::FlowModel snapshot = model;
    const double mix = cfg.prior_mix;
    proposal = [snapshot, r_star, &prior, mix](Rng& rng) {
      if (mix > 0.0 && rng.uniform() < mix) return sample_uniform_prior(prior, rng);
      const Matrix z = flow::sample(snapshot, r_star, 1, rng);
      ParamVector zv(z.cols());
      for (int j = 0; j < z.cols(); ++j) zv[static_cast<size_t>(j)] = z(0, j);
      return to_bounded(zv, prior);
    };

    if (sink) {
      RoundRecord rec;
      rec.round = round;
      rec.train_loss = cert.train_loss_history.back();
      rec.val_loss = diag.best_val;
      rec.r_star = r_star;
      rec.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      sink(rec);
    }
  }

  cert.model = std::move(model);
  if (cert.rounds_completed > 0) {
    cert.r_star = cert.r_star_history.back();
  } else if (!dataset.entries.empty()) {
    cert.r_star = dataset.reward_max();
  }
  return cert;
}

PosteriorMetrics evaluate_posterior(const PosteriorCertificate& cert, const envs::Env& env,
                                    int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("evaluate_posterior: n must be >= 1");
  if (!env.spec().oracle_available)
    throw std::invalid_argument("evaluate_posterior: env '" + env.spec().env_id +
                                "' provides no oracle");
  Rng rng(derive_seed(seed, 40'000));
  const Matrix z = flow::sample(cert.model, cert.r_star, n, rng);
  const Matrix x = to_bounded_rows(z, cert.prior);

  PosteriorMetrics m;
  m.n = n;
  ParamVector xi(x.cols());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < x.cols(); ++j) xi[static_cast<size_t>(j)] = x(i, j);
    const double r = env.oracle(cert.policy_id, xi);
    m.mean_true_reward += r;
    if (r >= env.spec().success_threshold) m.oracle_success_fraction += 1.0;
  }
  m.mean_true_reward /= static_cast<double>(n);
  m.oracle_success_fraction /= static_cast<double>(n);

  const std::vector<double> lp =
      flow::log_prob(cert.model, z, std::vector<double>(static_cast<size_t>(n), cert.r_star));
  double acc = 0.0;
  for (double v : lp) acc += v;
  m.self_entropy_estimate = -acc / static_cast<double>(n);
  return m;
}

PosteriorMetrics evaluate_prior_baseline(const envs::Env& env, const std::string& policy_id,
                                         int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("evaluate_prior_baseline: n must be >= 1");
  if (!env.spec().oracle_available)
    throw std::invalid_argument("evaluate_prior_baseline: env '" + env.spec().env_id +
                                "' provides no oracle");
  const PriorSpec& prior = env.spec().prior;
  Rng rng(derive_seed(seed, 41'000));
  PosteriorMetrics m;
  m.n = n;
  double entropy = 0.0;
  for (int i = 0; i < n; ++i) {
    const ParamVector x = sample_uniform_prior(prior, rng);
    const double r = env.oracle(policy_id, x);
    m.mean_true_reward += r;
    if (r >= env.spec().success_threshold) m.oracle_success_fraction += 1.0;
    entropy -= log_prior_unbounded(to_unbounded(x, prior), prior);
  }
  m.mean_true_reward /= static_cast<double>(n);
  m.oracle_success_fraction /= static_cast<double>(n);
  m.self_entropy_estimate = entropy / static_cast<double>(n);
  return m;
}

}  // namespace policyscope::inference
