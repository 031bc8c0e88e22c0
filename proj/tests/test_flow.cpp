#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "policyscope/flow.hpp"
#include "policyscope/rng.hpp"
#include "policyscope/tape.hpp"

using namespace policyscope;
using flow::FlowConfig;
using flow::FlowModel;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

FlowConfig small_config(int layers = 3, int width = 12) {
  FlowConfig cfg;
  cfg.n_layers = layers;
  cfg.hidden = {width, width};
  return cfg;
}

FlowModel random_model(int dim, uint64_t seed, int layers = 3, int width = 12,
                       double jitter = 0.3) {
  Rng rng(seed);
  FlowModel m = flow::init_model(dim, small_config(layers, width), rng);
  for (Matrix* p : m.parameters())
    for (size_t k = 0; k < p->size(); ++k) p->at_flat(k) += jitter * rng.normal();
  return m;
}

Matrix random_points(int n, int d, uint64_t seed, double scale = 1.5) {
  Rng rng(seed);
  Matrix z(n, d);
  for (size_t k = 0; k < z.size(); ++k) z.at_flat(k) = scale * rng.normal();
  return z;
}

}  // namespace

TEST_CASE("identity-initialized flow is the standard normal") {
  Rng rng(1);
  FlowModel m = flow::init_model(2, FlowConfig{}, rng);
  const double lp = flow::log_prob_point(m, {0.0, 0.0}, 0.37);
  CHECK(lp == doctest::Approx(-kLog2Pi).epsilon(1e-12));

  Rng rng1(2);
  FlowModel m1 = flow::init_model(1, FlowConfig{}, rng1);
  CHECK(flow::log_prob_point(m1, {0.0}, 0.0) ==
        doctest::Approx(-0.5 * kLog2Pi).epsilon(1e-12));
}

TEST_CASE("identity-initialized log_prob ignores the conditioning value") {
  Rng rng(3);
  FlowModel m = flow::init_model(3, FlowConfig{}, rng);
  const Matrix z = random_points(20, 3, 4);
  const auto a = flow::log_prob(m, z, std::vector<double>(20, -5.0));
  const auto b = flow::log_prob(m, z, std::vector<double>(20, 12.0));
  CHECK(a == b);
}

TEST_CASE("same seed gives bit-identical models") {
  Rng r1(77), r2(77);
  FlowModel a = flow::init_model(4, FlowConfig{}, r1);
  FlowModel b = flow::init_model(4, FlowConfig{}, r2);
  const auto pa = std::as_const(a).parameters();
  const auto pb = std::as_const(b).parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i)
    for (size_t k = 0; k < pa[i]->size(); ++k)
      CHECK(pa[i]->at_flat(k) == pb[i]->at_flat(k));
}

TEST_CASE("zero-dimensional models are rejected") {
  Rng rng(5);
  CHECK_THROWS_AS(flow::init_model(0, FlowConfig{}, rng), std::invalid_argument);
}

TEST_CASE("non-finite inputs are rejected") {
  Rng rng(6);
  FlowModel m = flow::init_model(2, FlowConfig{}, rng);
  Matrix z(1, 2, 0.0);
  z(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(flow::log_prob(m, z, std::vector<double>{0.0}), std::invalid_argument);
  CHECK_THROWS_AS(flow::log_prob(m, Matrix(1, 2, 0.0),
                                 std::vector<double>{std::nan("")}),
                  std::invalid_argument);
}

TEST_CASE("identity-model samples are exactly the base normal draws") {
  Rng rng(8);
  FlowModel m = flow::init_model(3, FlowConfig{}, rng);
  Rng sample_rng(123), direct_rng(123);
  const Matrix s = flow::sample(m, 0.9, 50, sample_rng);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 3; ++j) CHECK(s(i, j) == direct_rng.normal());
}

TEST_CASE("sampling then transforming forward recovers the base draws") {
  for (uint64_t seed : {11ull, 12ull, 13ull}) {
    FlowModel m = random_model(4, seed);
    m.reward_norm = {0.2, 2.0};
    Rng base_rng(900 + seed), sample_rng(900 + seed);
    const int n = 200;
    Matrix expected(n, 4);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 4; ++j) expected(i, j) = base_rng.normal();
    const Matrix z = flow::sample(m, 1.5, n, sample_rng);
    const auto res = flow::forward_transform(m, z, std::vector<double>(n, 1.5));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(std::abs(res.base(i, j) - expected(i, j)) <= 1e-9);
  }
}

TEST_CASE("autoregressive masking: output slot i never depends on inputs j >= i") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    FlowModel m = random_model(5, 100 + seed, 2, 16, 0.5);
    Rng rng(200 + seed);
    Matrix x = random_points(1, 5, 300 + seed);
    const Matrix cond(1, 1, 0.7);
    for (const flow::MadeLayer& layer : m.layers) {
      Matrix mu0, a0;
      flow::made_forward(layer, m.log_scale_bound, x, cond, &mu0, &a0);
      for (int j = 0; j < 5; ++j) {
        Matrix xp = x;
        xp(0, j) += 1.0 + rng.uniform();
        Matrix mu1, a1;
        flow::made_forward(layer, m.log_scale_bound, xp, cond, &mu1, &a1);
        for (int i = 0; i <= j; ++i) {
          CHECK(mu1(0, i) == mu0(0, i));
          CHECK(a1(0, i) == a0(0, i));
        }
      }
    }
  }
}

TEST_CASE("the conditioner is unmasked: perturbing it can move every output") {
  FlowModel m = random_model(3, 55, 2, 16, 0.5);
  const Matrix x = random_points(1, 3, 56);
  Matrix mu0, a0, mu1, a1;
  flow::made_forward(m.layers[0], m.log_scale_bound, x, Matrix(1, 1, 0.0), &mu0, &a0);
  flow::made_forward(m.layers[0], m.log_scale_bound, x, Matrix(1, 1, 3.0), &mu1, &a1);
  for (int i = 0; i < 3; ++i) CHECK(mu1(0, i) != mu0(0, i));
}

TEST_CASE("log-scale outputs respect the invertibility bound") {
  FlowModel m = random_model(4, 66, 3, 12, 5.0);  // large jitter to push alpha hard
  const Matrix x = random_points(200, 4, 67, 4.0);
  const Matrix cond(200, 1, 2.0);
  for (const flow::MadeLayer& layer : m.layers) {
    Matrix mu, a;
    flow::made_forward(layer, m.log_scale_bound, x, cond, &mu, &a);
    for (size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a.at_flat(k)) <= m.log_scale_bound);
  }
}

TEST_CASE("log|det J| matches the numerically differentiated Jacobian") {
  for (int d : {2, 3}) {
    FlowModel m = random_model(d, 400 + d);
    m.reward_norm = {0.0, 1.0};
    Rng rng(500 + d);
    for (int rep = 0; rep < 5; ++rep) {
      Matrix z(1, d);
      for (int j = 0; j < d; ++j) z(0, j) = rng.normal();
      const std::vector<double> cond{0.3};
      const auto res = flow::forward_transform(m, z, cond);

      // numerical Jacobian of the base image w.r.t. z
      const double h = 1e-6;
      std::vector<std::vector<double>> jac(d, std::vector<double>(d));
      for (int j = 0; j < d; ++j) {
        Matrix zp = z, zm = z;
        zp(0, j) += h;
        zm(0, j) -= h;
        const auto up = flow::forward_transform(m, zp, cond);
        const auto dn = flow::forward_transform(m, zm, cond);
        for (int i = 0; i < d; ++i)
          jac[i][j] = (up.base(0, i) - dn.base(0, i)) / (2.0 * h);
      }
      // |det| by Gaussian elimination with partial pivoting
      double log_det = 0.0;
      for (int c = 0; c < d; ++c) {
        int piv = c;
        for (int r = c + 1; r < d; ++r)
          if (std::abs(jac[r][c]) > std::abs(jac[piv][c])) piv = r;
        std::swap(jac[c], jac[piv]);
        log_det += std::log(std::abs(jac[c][c]));
        for (int r = c + 1; r < d; ++r) {
          const double f = jac[r][c] / jac[c][c];
          for (int cc = c; cc < d; ++cc) jac[r][cc] -= f * jac[c][cc];
        }
      }
      CHECK(res.log_det[0] == doctest::Approx(log_det).epsilon(1e-5));
    }
  }
}

TEST_CASE("identity flow integrates to one on a 1-D grid") {
  Rng rng(70);
  FlowModel m = flow::init_model(1, FlowConfig{}, rng);
  const int n = 4001;
  const double lo = -10.0, hi = 10.0, step = (hi - lo) / (n - 1);
  double integral = 0.0;
  for (int i = 0; i < n; ++i) {
    Matrix z(1, 1, lo + i * step);
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    integral += w * std::exp(flow::log_prob(m, z, std::vector<double>{0.0})[0]) * step;
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("empirical mean of identity-model samples is near zero") {
  Rng rng(80);
  FlowModel m = flow::init_model(2, FlowConfig{}, rng);
  Rng sample_rng(81);
  const Matrix s = flow::sample(m, 0.0, 100000, sample_rng);
  for (int j = 0; j < 2; ++j) {
    double mean = 0.0;
    for (int i = 0; i < s.rows(); ++i) mean += s(i, j);
    mean /= s.rows();
    CHECK(std::abs(mean) < 0.02);
  }
}

TEST_CASE("serial and parallel density paths are bit-identical") {
  set_threads(2);
  FlowModel m = random_model(6, 91);
  const Matrix z = random_points(513, 6, 92);
  const std::vector<double> cond(513, 0.4);
  const auto a = flow::log_prob(m, z, cond, flow::ExecPath::Serial);
  const auto b = flow::log_prob(m, z, cond, flow::ExecPath::Parallel);
  CHECK(a == b);
  set_threads(1);
}

TEST_CASE("the training graph reproduces the plain density path") {
  FlowModel m = random_model(4, 95);
  m.reward_norm = {1.0, 3.0};
  const int n = 17;
  const Matrix z = random_points(n, 4, 96);
  std::vector<double> cond_raw(n);
  Rng rng(97);
  for (double& c : cond_raw) c = rng.uniform(-2.0, 5.0);

  Matrix cond_std(n, 1);
  for (int i = 0; i < n; ++i) cond_std(i, 0) = m.standardize_reward(cond_raw[i]);

  ad::Tape tape;
  std::vector<int> params;
  const int z_leaf = tape.leaf(z);
  const int cond_leaf = tape.leaf(cond_std);
  const int logq = flow::build_log_prob_graph(tape, m, z_leaf, cond_leaf, &params);
  tape.set_loss(tape.sum(logq, ad::Reduce::All));
  tape.forward();

  const auto plain = flow::log_prob(m, z, cond_raw);
  for (int i = 0; i < n; ++i)
    CHECK(tape.value(logq)(i, 0) == doctest::Approx(plain[i]).epsilon(1e-12));
  CHECK(params.size() == std::as_const(m).parameters().size());
}
