#include "policyscope/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace policyscope::io {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

const json& require(const json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key))
    throw std::runtime_error("certificate: missing field " + path + "." + key);
  return j.at(key);
}

Matrix matrix_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw std::runtime_error("certificate: field " + path + " is not a 2-D array");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j.front().size());
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const json& row = j.at(i);
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      throw std::runtime_error("certificate: ragged array at " + path + "[" +
                               std::to_string(i) + "]");
    for (int c = 0; c < cols; ++c) m(i, c) = row.at(c).get<double>();
  }
  return m;
}

template <typename T>
std::vector<T> vector_from_json(const json& j, const std::string& path) {
  if (!j.is_array()) throw std::runtime_error("certificate: field " + path + " is not an array");
  std::vector<T> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(v.get<T>());
  return out;
}

const char* r_star_mode_name(inference::RStarMode m) {
  return m == inference::RStarMode::Max ? "max" : "p95";
}
const char* loss_mode_name(inference::LossMode m) {
  return m == inference::LossMode::AtomicApt ? "apt" : "mle";
}

inference::RStarMode r_star_mode_from(const std::string& s) {
  if (s == "max") return inference::RStarMode::Max;
  if (s == "p95") return inference::RStarMode::Percentile95;
  throw std::runtime_error("unknown r_star_mode '" + s + "' (expected max or p95)");
}
inference::LossMode loss_mode_from(const std::string& s) {
  if (s == "apt") return inference::LossMode::AtomicApt;
  if (s == "mle") return inference::LossMode::MaxLikelihood;
  throw std::runtime_error("unknown loss_mode '" + s + "' (expected apt or mle)");
}

json config_to_json(const inference::DiscoverConfig& c) {
  json j;
  j["n_rounds"] = c.n_rounds;
  j["rollouts_per_round"] = c.rollouts_per_round;
  j["atoms"] = c.atoms;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["validation_fraction"] = c.validation_fraction;
  j["r_star_mode"] = r_star_mode_name(c.r_star_mode);
  j["loss_mode"] = loss_mode_name(c.loss_mode);
  j["prior_mix"] = c.prior_mix;
  j["flow_layers"] = c.flow.n_layers;
  j["flow_hidden"] = c.flow.hidden;
  j["flow_log_scale_bound"] = c.flow.log_scale_bound;
  return j;
}

inference::DiscoverConfig config_from_json(const json& j, const std::string& path) {
  inference::DiscoverConfig c;
  c.n_rounds = require(j, "n_rounds", path).get<int>();
  c.rollouts_per_round = require(j, "rollouts_per_round", path).get<int>();
  c.atoms = require(j, "atoms", path).get<int>();
  c.batch_size = require(j, "batch_size", path).get<int>();
  c.learning_rate = require(j, "learning_rate", path).get<double>();
  c.max_epochs = require(j, "max_epochs", path).get<int>();
  c.patience = require(j, "patience", path).get<int>();
  c.validation_fraction = require(j, "validation_fraction", path).get<double>();
  c.r_star_mode = r_star_mode_from(require(j, "r_star_mode", path).get<std::string>());
  c.loss_mode = loss_mode_from(require(j, "loss_mode", path).get<std::string>());
  c.prior_mix = require(j, "prior_mix", path).get<double>();
  c.flow.n_layers = require(j, "flow_layers", path).get<int>();
  c.flow.hidden = vector_from_json<int>(require(j, "flow_hidden", path), path + ".flow_hidden");
  c.flow.log_scale_bound = require(j, "flow_log_scale_bound", path).get<double>();
  return c;
}

}  // namespace

std::string certificate_to_string(const inference::PosteriorCertificate& cert) {
  json j;
  j["format_version"] = kCertificateFormatVersion;
  j["env_id"] = cert.env_id;
  j["policy_id"] = cert.policy_id;
  j["seed"] = cert.seed;
  j["complete"] = cert.complete;
  j["rounds_completed"] = cert.rounds_completed;
  j["r_star"] = cert.r_star;

  json prior;
  prior["names"] = cert.prior.names;
  prior["lo"] = cert.prior.lo;
  prior["hi"] = cert.prior.hi;
  prior["epsilon_clip"] = cert.prior.epsilon_clip;
  j["prior"] = std::move(prior);

  j["config"] = config_to_json(cert.config);

  json fl;
  fl["dim"] = cert.model.dim;
  fl["cond_dim"] = cert.model.cond_dim;
  fl["log_scale_bound"] = cert.model.log_scale_bound;
  fl["hidden"] = cert.model.hidden;
  fl["reward_norm"] = {{"mean", cert.model.reward_norm.mean},
                       {"stddev", cert.model.reward_norm.stddev}};
  json layers = json::array();
  for (const flow::MadeLayer& l : cert.model.layers) {
    json lj;
    lj["w1"] = matrix_to_json(l.w1);
    lj["b1"] = matrix_to_json(l.b1);
    lj["v1"] = matrix_to_json(l.v1);
    lj["w2"] = matrix_to_json(l.w2);
    lj["b2"] = matrix_to_json(l.b2);
    lj["v2"] = matrix_to_json(l.v2);
    lj["w_mu"] = matrix_to_json(l.w_mu);
    lj["b_mu"] = matrix_to_json(l.b_mu);
    lj["v_mu"] = matrix_to_json(l.v_mu);
    lj["w_alpha"] = matrix_to_json(l.w_alpha);
    lj["b_alpha"] = matrix_to_json(l.b_alpha);
    lj["v_alpha"] = matrix_to_json(l.v_alpha);
    lj["m1"] = matrix_to_json(l.m1);
    lj["m2"] = matrix_to_json(l.m2);
    lj["m_out"] = matrix_to_json(l.m_out);
    lj["deg_h1"] = l.deg_h1;
    lj["deg_h2"] = l.deg_h2;
    layers.push_back(std::move(lj));
  }
  fl["layers"] = std::move(layers);
  j["flow"] = std::move(fl);

  json diag;
  diag["r_star_history"] = cert.r_star_history;
  diag["train_loss_history"] = cert.train_loss_history;
  diag["val_loss_history"] = cert.val_loss_history;
  diag["self_loglik_history"] = cert.self_loglik_history;
  j["diagnostics"] = std::move(diag);

  return j.dump(2) + "\n";
}

void save_certificate(const inference::PosteriorCertificate& cert, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_certificate: cannot open '" + path + "' for writing");
  out << certificate_to_string(cert);
  if (!out) throw std::runtime_error("save_certificate: write to '" + path + "' failed");
}

inference::PosteriorCertificate certificate_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("certificate: parse error at byte " + std::to_string(e.byte) +
                             ": " + e.what());
  }
  const json& ver = require(j, "format_version", "$");
  if (!ver.is_number_integer() || ver.get<int>() != kCertificateFormatVersion)
    throw std::runtime_error("certificate: unsupported format_version " + ver.dump() +
                             " (this build reads version " +
                             std::to_string(kCertificateFormatVersion) + ")");

  inference::PosteriorCertificate cert;
  cert.env_id = require(j, "env_id", "$").get<std::string>();
  cert.policy_id = require(j, "policy_id", "$").get<std::string>();
  cert.seed = require(j, "seed", "$").get<uint64_t>();
  cert.complete = require(j, "complete", "$").get<bool>();
  cert.rounds_completed = require(j, "rounds_completed", "$").get<int>();
  cert.r_star = require(j, "r_star", "$").get<double>();

  const json& prior = require(j, "prior", "$");
  cert.prior.names = vector_from_json<std::string>(require(prior, "names", "$.prior"),
                                                   "$.prior.names");
  cert.prior.lo = vector_from_json<double>(require(prior, "lo", "$.prior"), "$.prior.lo");
  cert.prior.hi = vector_from_json<double>(require(prior, "hi", "$.prior"), "$.prior.hi");
  cert.prior.epsilon_clip = require(prior, "epsilon_clip", "$.prior").get<double>();
  cert.prior.validate();

  cert.config = config_from_json(require(j, "config", "$"), "$.config");

  const json& fl = require(j, "flow", "$");
  cert.model.dim = require(fl, "dim", "$.flow").get<int>();
  cert.model.cond_dim = require(fl, "cond_dim", "$.flow").get<int>();
  cert.model.log_scale_bound = require(fl, "log_scale_bound", "$.flow").get<double>();
  cert.model.hidden = vector_from_json<int>(require(fl, "hidden", "$.flow"), "$.flow.hidden");
  const json& rn = require(fl, "reward_norm", "$.flow");
  cert.model.reward_norm.mean = require(rn, "mean", "$.flow.reward_norm").get<double>();
  cert.model.reward_norm.stddev = require(rn, "stddev", "$.flow.reward_norm").get<double>();

  const json& layers = require(fl, "layers", "$.flow");
  if (!layers.is_array() || layers.empty())
    throw std::runtime_error("certificate: $.flow.layers must be a non-empty array");
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "$.flow.layers[" + std::to_string(i) + "]";
    const json& lj = layers.at(i);
    flow::MadeLayer l;
    l.w1 = matrix_from_json(require(lj, "w1", p), p + ".w1");
    l.b1 = matrix_from_json(require(lj, "b1", p), p + ".b1");
    l.v1 = matrix_from_json(require(lj, "v1", p), p + ".v1");
    l.w2 = matrix_from_json(require(lj, "w2", p), p + ".w2");
    l.b2 = matrix_from_json(require(lj, "b2", p), p + ".b2");
    l.v2 = matrix_from_json(require(lj, "v2", p), p + ".v2");
    l.w_mu = matrix_from_json(require(lj, "w_mu", p), p + ".w_mu");
    l.b_mu = matrix_from_json(require(lj, "b_mu", p), p + ".b_mu");
    l.v_mu = matrix_from_json(require(lj, "v_mu", p), p + ".v_mu");
    l.w_alpha = matrix_from_json(require(lj, "w_alpha", p), p + ".w_alpha");
    l.b_alpha = matrix_from_json(require(lj, "b_alpha", p), p + ".b_alpha");
    l.v_alpha = matrix_from_json(require(lj, "v_alpha", p), p + ".v_alpha");
    l.m1 = matrix_from_json(require(lj, "m1", p), p + ".m1");
    l.m2 = matrix_from_json(require(lj, "m2", p), p + ".m2");
    l.m_out = matrix_from_json(require(lj, "m_out", p), p + ".m_out");
    l.deg_h1 = vector_from_json<int>(require(lj, "deg_h1", p), p + ".deg_h1");
    l.deg_h2 = vector_from_json<int>(require(lj, "deg_h2", p), p + ".deg_h2");
    if (l.w1.rows() != cert.model.dim || l.w_mu.cols() != cert.model.dim ||
        !l.m1.same_shape(l.w1) || !l.m2.same_shape(l.w2) || !l.m_out.same_shape(l.w_mu))
      throw std::runtime_error("certificate: inconsistent array shapes at " + p);
    cert.model.layers.push_back(std::move(l));
  }

  const json& diag = require(j, "diagnostics", "$");
  cert.r_star_history = vector_from_json<double>(require(diag, "r_star_history", "$.diagnostics"),
                                                 "$.diagnostics.r_star_history");
  cert.train_loss_history = vector_from_json<double>(
      require(diag, "train_loss_history", "$.diagnostics"), "$.diagnostics.train_loss_history");
  cert.val_loss_history = vector_from_json<double>(
      require(diag, "val_loss_history", "$.diagnostics"), "$.diagnostics.val_loss_history");
  cert.self_loglik_history = vector_from_json<double>(
      require(diag, "self_loglik_history", "$.diagnostics"),
      "$.diagnostics.self_loglik_history");
  return cert;
}

inference::PosteriorCertificate load_certificate(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_certificate: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return certificate_from_string(buf.str());
}

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad integer for '" + key + "': " + v);
  }
}

double parse_num(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad number for '" + key + "': " + v);
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw std::runtime_error("config: empty list for '" + key + "'");
  return out;
}

}  // namespace

inference::DiscoverConfig parse_config_text(const std::string& text) {
  inference::DiscoverConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "n_rounds")
      cfg.n_rounds = parse_int(key, val);
    else if (key == "rollouts_per_round")
      cfg.rollouts_per_round = parse_int(key, val);
    else if (key == "atoms")
      cfg.atoms = parse_int(key, val);
    else if (key == "batch_size")
      cfg.batch_size = parse_int(key, val);
    else if (key == "learning_rate")
      cfg.learning_rate = parse_num(key, val);
    else if (key == "max_epochs")
      cfg.max_epochs = parse_int(key, val);
    else if (key == "patience")
      cfg.patience = parse_int(key, val);
    else if (key == "validation_fraction")
      cfg.validation_fraction = parse_num(key, val);
    else if (key == "r_star_mode")
      cfg.r_star_mode = r_star_mode_from(val);
    else if (key == "loss_mode")
      cfg.loss_mode = loss_mode_from(val);
    else if (key == "prior_mix")
      cfg.prior_mix = parse_num(key, val);
    else if (key == "flow_layers")
      cfg.flow.n_layers = parse_int(key, val);
    else if (key == "flow_hidden")
      cfg.flow.hidden = parse_int_list(key, val);
    else if (key == "flow_log_scale_bound")
      cfg.flow.log_scale_bound = parse_num(key, val);
    else
      throw std::runtime_error("config: unknown key '" + key + "' at line " +
                               std::to_string(lineno));
  }
  cfg.validate();
  return cfg;
}

inference::DiscoverConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace policyscope::io
