#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "policyscope/envs.hpp"
#include "policyscope/inference.hpp"
#include "policyscope/io.hpp"
#include "policyscope/selection.hpp"

namespace {

using namespace policyscope;

// command-line / input mistakes exit with 2 and usage text; everything else
// that fails at runtime exits with 3
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

uint64_t resolve_seed(bool given, uint64_t value) {
  if (given) return value;
  if (const char* e = std::getenv("POLICYSCOPE_SEED")) {
    try {
      return std::stoull(e);
    } catch (const std::exception&) {
      throw UsageError("POLICYSCOPE_SEED is not an unsigned integer: " + std::string(e));
    }
  }
  return 0;
}

std::unique_ptr<envs::Env> open_env(const std::string& env_id) {
  try {
    return envs::make_env(env_id);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int run_fit(const std::string& env_id, const std::string& policy_id,
            const std::string& config_path, uint64_t seed, const std::string& out_path) {
  auto env = open_env(env_id);
  inference::DiscoverConfig cfg;
  if (!config_path.empty()) cfg = io::parse_config_file(config_path);
  const auto& ids = env->spec().policy_ids;
  if (std::find(ids.begin(), ids.end(), policy_id) == ids.end())
    throw UsageError("env '" + env_id + "' has no policy '" + policy_id + "'");

  const inference::RoundSink sink = [](const inference::RoundRecord& r) {
    nlohmann::json j;
    j["round"] = r.round;
    j["train_loss"] = r.train_loss;
    j["val_loss"] = r.val_loss;
    j["r_star"] = r.r_star;
    j["wall_time_s"] = r.wall_time_s;
    std::cerr << j.dump() << "\n";
  };
  const inference::PosteriorCertificate cert =
      inference::run_discover(*env, policy_id, cfg, seed, sink);
  io::save_certificate(cert, out_path);
  return 0;
}

int run_sample(const std::string& cert_path, int n, uint64_t seed, const std::string& out_path) {
  if (n < 1) throw UsageError("sample: -n must be >= 1");
  const inference::PosteriorCertificate cert = io::load_certificate(cert_path);
  Rng rng(derive_seed(seed, 0xA5));
  const Matrix z = flow::sample(cert.model, cert.r_star, n, rng);
  const Matrix x = to_bounded_rows(z, cert.prior);

  std::ofstream out = open_out(out_path);
  for (size_t j = 0; j < cert.prior.names.size(); ++j)
    out << (j ? "," : "") << cert.prior.names[j];
  out << "\n";
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) out << (j ? "," : "") << io::fmt_double(x(i, j));
    out << "\n";
  }
  return 0;
}

int run_eval(const std::string& cert_path, int n, uint64_t seed) {
  if (n < 1) throw UsageError("eval: -n must be >= 1");
  const inference::PosteriorCertificate cert = io::load_certificate(cert_path);
  auto env = open_env(cert.env_id);
  const inference::PosteriorMetrics m = inference::evaluate_posterior(cert, *env, n, seed);
  nlohmann::json j;
  j["oracle_success_fraction"] = m.oracle_success_fraction;
  j["mean_true_reward"] = m.mean_true_reward;
  j["self_entropy_estimate"] = m.self_entropy_estimate;
  j["n"] = m.n;
  std::cout << j.dump() << "\n";
  return 0;
}

int run_select(const std::string& certs_arg, const std::string& env_id, int beliefs,
               uint64_t seed, const std::string& out_path) {
  const std::vector<std::string> paths = split_commas(certs_arg);
  if (paths.empty()) throw UsageError("select: --certs needs at least one file");
  std::vector<inference::PosteriorCertificate> certs;
  certs.reserve(paths.size());
  for (const std::string& p : paths) certs.push_back(io::load_certificate(p));
  std::vector<const inference::PosteriorCertificate*> cps;
  for (const auto& c : certs) cps.push_back(&c);

  auto env = open_env(env_id);
  selection::SelectionConfig cfg;
  cfg.n_beliefs = beliefs;
  const selection::SelectionResult res = selection::run_selection_experiment(cps, *env, cfg, seed);

  std::ofstream out = open_out(out_path);
  out << "method,mean_reward,std_err,n\n";
  for (const selection::MethodStats& m : res.methods)
    out << m.method << "," << io::fmt_double(m.mean_reward) << "," << io::fmt_double(m.std_err)
        << "," << m.n << "\n";
  return 0;
}

int run_pairgrid(const std::string& cert_path, int n, int bins, uint64_t seed,
                 const std::string& out_path) {
  if (n < 1) throw UsageError("pairgrid: -n must be >= 1");
  if (bins < 1) throw UsageError("pairgrid: --bins must be >= 1");
  const inference::PosteriorCertificate cert = io::load_certificate(cert_path);
  Rng rng(derive_seed(seed, 0xB6));
  const Matrix z = flow::sample(cert.model, cert.r_star, n, rng);
  const Matrix x = to_bounded_rows(z, cert.prior);
  const PriorSpec& prior = cert.prior;
  const int d = prior.dim();

  auto bin_of = [&](int dim, double v) {
    const double w = (prior.hi[dim] - prior.lo[dim]) / bins;
    int b = static_cast<int>((v - prior.lo[dim]) / w);
    return std::min(std::max(b, 0), bins - 1);
  };

  std::ofstream out = open_out(out_path);
  out << "kind,dim_i,dim_j,bin_i,bin_j,x_lo,x_hi,y_lo,y_hi,count,density\n";
  for (int i = 0; i < d; ++i) {
    std::vector<long> counts(bins, 0);
    for (int r = 0; r < n; ++r) counts[bin_of(i, x(r, i))]++;
    const double w = (prior.hi[i] - prior.lo[i]) / bins;
    for (int b = 0; b < bins; ++b) {
      const double lo = prior.lo[i] + b * w;
      out << "hist1d," << prior.names[i] << ",," << b << ",," << io::fmt_double(lo) << ","
          << io::fmt_double(lo + w) << ",,," << counts[b] << ","
          << io::fmt_double(counts[b] / (n * w)) << "\n";
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      std::vector<long> counts(static_cast<size_t>(bins) * bins, 0);
      for (int r = 0; r < n; ++r)
        counts[static_cast<size_t>(bin_of(i, x(r, i))) * bins + bin_of(j, x(r, j))]++;
      const double wi = (prior.hi[i] - prior.lo[i]) / bins;
      const double wj = (prior.hi[j] - prior.lo[j]) / bins;
      for (int bi = 0; bi < bins; ++bi) {
        for (int bj = 0; bj < bins; ++bj) {
          const double li = prior.lo[i] + bi * wi;
          const double lj = prior.lo[j] + bj * wj;
          const long c = counts[static_cast<size_t>(bi) * bins + bj];
          out << "hist2d," << prior.names[i] << "," << prior.names[j] << "," << bi << "," << bj
              << "," << io::fmt_double(li) << "," << io::fmt_double(li + wi) << ","
              << io::fmt_double(lj) << "," << io::fmt_double(lj + wj) << "," << c << ","
              << io::fmt_double(c / (static_cast<double>(n) * wi * wj)) << "\n";
        }
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"policyscope: fit, inspect and apply policy certificates"};
  app.require_subcommand(1);
  app.fallthrough();

  int threads = 1;
  app.add_option("--threads", threads, "worker threads for parallel kernels")
      ->capture_default_str();

  std::string fit_env, fit_policy, fit_config, fit_out;
  uint64_t fit_seed = 0;
  CLI::App* fit = app.add_subcommand("fit", "run the sequential posterior refinement loop");
  fit->add_option("--env", fit_env, "environment id")->required();
  fit->add_option("--policy", fit_policy, "policy id")->required();
  fit->add_option("--config", fit_config, "key = value run configuration file");
  CLI::Option* fit_seed_opt = fit->add_option("--seed", fit_seed, "run seed");
  fit->add_option("--out", fit_out, "certificate output path")->required();

  std::string sample_cert, sample_out;
  int sample_n = 0;
  uint64_t sample_seed = 0;
  CLI::App* sample = app.add_subcommand("sample", "draw posterior samples in bounded units");
  sample->add_option("--cert", sample_cert, "certificate file")->required();
  sample->add_option("-n", sample_n, "number of samples")->required();
  CLI::Option* sample_seed_opt = sample->add_option("--seed", sample_seed, "sampling seed");
  sample->add_option("--out", sample_out, "CSV output path")->required();

  std::string eval_cert;
  int eval_n = 0;
  uint64_t eval_seed = 0;
  CLI::App* eval = app.add_subcommand("eval", "score a certificate against its env oracle");
  eval->add_option("--cert", eval_cert, "certificate file")->required();
  eval->add_option("-n", eval_n, "number of posterior samples")->required();
  CLI::Option* eval_seed_opt = eval->add_option("--seed", eval_seed, "sampling seed");

  std::string sel_certs, sel_env, sel_out;
  int sel_beliefs = 1000;
  uint64_t sel_seed = 0;
  CLI::App* sel = app.add_subcommand("select", "run the task-selection experiment");
  sel->add_option("--certs", sel_certs, "comma-separated certificate files")->required();
  sel->add_option("--env", sel_env, "environment id")->required();
  sel->add_option("--beliefs", sel_beliefs, "number of belief draws")->capture_default_str();
  CLI::Option* sel_seed_opt = sel->add_option("--seed", sel_seed, "experiment seed");
  sel->add_option("--out", sel_out, "CSV output path")->required();

  std::string pg_cert, pg_out;
  int pg_n = 0, pg_bins = 30;
  uint64_t pg_seed = 0;
  CLI::App* pg = app.add_subcommand("pairgrid", "export marginal and pairwise density grids");
  pg->add_option("--cert", pg_cert, "certificate file")->required();
  pg->add_option("-n", pg_n, "number of samples")->required();
  pg->add_option("--bins", pg_bins, "bins per axis")->capture_default_str();
  CLI::Option* pg_seed_opt = pg->add_option("--seed", pg_seed, "sampling seed");
  pg->add_option("--out", pg_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    policyscope::set_threads(threads);
    if (app.got_subcommand(fit))
      return run_fit(fit_env, fit_policy, fit_config,
                     resolve_seed(fit_seed_opt->count() > 0, fit_seed), fit_out);
    if (app.got_subcommand(sample))
      return run_sample(sample_cert, sample_n,
                        resolve_seed(sample_seed_opt->count() > 0, sample_seed), sample_out);
    if (app.got_subcommand(eval))
      return run_eval(eval_cert, eval_n, resolve_seed(eval_seed_opt->count() > 0, eval_seed));
    if (app.got_subcommand(sel))
      return run_select(sel_certs, sel_env, sel_beliefs,
                        resolve_seed(sel_seed_opt->count() > 0, sel_seed), sel_out);
    if (app.got_subcommand(pg))
      return run_pairgrid(pg_cert, pg_n, pg_bins,
                          resolve_seed(pg_seed_opt->count() > 0, pg_seed), pg_out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
