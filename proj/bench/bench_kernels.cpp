// Timing comparison of the OpenMP kernels against their serial references.
// The parallel paths are bit-identical to the serial ones by construction;
// this binary checks that while measuring the speedup.

#include <chrono>
#include <cstdio>
#include <cstring>

#include "policyscope/envs.hpp"
#include "policyscope/flow.hpp"
#include "policyscope/inference.hpp"
#include "policyscope/matrix.hpp"
#include "policyscope/rng.hpp"

using namespace policyscope;

namespace {

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Matrix random_matrix(int r, int c, Rng& rng) {
  Matrix m(r, c);
  for (size_t k = 0; k < m.size(); ++k) m.at_flat(k) = rng.normal();
  return m;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_s();
    f();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  int threads = max_threads();
  if (argc > 1) threads = std::atoi(argv[1]);
  std::printf("threads for parallel path: %d\n\n", threads);

  Rng rng(12345);

  {
    const Matrix a = random_matrix(2560, 50, rng);
    const Matrix b = random_matrix(50, 50, rng);
    Matrix c_ser(2560, 50), c_par(2560, 50);
    set_threads(1);
    const double ts = time_best_of(5, [&] { kernels::gemm_serial(a, b, c_ser); });
    set_threads(threads);
    const double tp = time_best_of(5, [&] { kernels::gemm(a, b, c_par); });
    std::printf("gemm 2560x50 * 50x50       serial %8.3f ms   parallel %8.3f ms   x%.2f  %s\n",
                ts * 1e3, tp * 1e3, ts / tp, bit_equal(c_ser, c_par) ? "bit-equal" : "MISMATCH");
  }

  {
    flow::FlowConfig fc;
    Rng init(7);
    flow::FlowModel model = flow::init_model(8, fc, init);
    for (Matrix* p : model.parameters())
      for (size_t k = 0; k < p->size(); ++k) p->at_flat(k) += 0.01 * rng.normal();
    const Matrix z = random_matrix(4096, 8, rng);
    const std::vector<double> cond(4096, 0.5);
    std::vector<double> lp_ser, lp_par;
    set_threads(1);
    const double ts =
        time_best_of(3, [&] { lp_ser = flow::log_prob(model, z, cond, flow::ExecPath::Serial); });
    set_threads(threads);
    const double tp =
        time_best_of(3, [&] { lp_par = flow::log_prob(model, z, cond, flow::ExecPath::Parallel); });
    const bool eq = lp_ser == lp_par;
    std::printf("flow log_prob 4096x8       serial %8.3f ms   parallel %8.3f ms   x%.2f  %s\n",
                ts * 1e3, tp * 1e3, ts / tp, eq ? "bit-equal" : "MISMATCH");
  }

  {
    auto env = envs::make_env("puckworld");
    const PriorSpec& prior = env->spec().prior;
    const inference::Proposal proposal = [&prior](Rng& r) {
      return sample_uniform_prior(prior, r);
    };
    std::vector<inference::RolloutPair> ser, par;
    set_threads(1);
    const double ts = time_best_of(
        3, [&] { ser = inference::collect_round(*env, "push", proposal, 20000, 99); });
    set_threads(threads);
    const double tp = time_best_of(
        3, [&] { par = inference::collect_round(*env, "push", proposal, 20000, 99); });
    bool eq = ser.size() == par.size();
    for (size_t i = 0; eq && i < ser.size(); ++i)
      eq = ser[i].reward == par[i].reward && ser[i].param == par[i].param;
    std::printf("collect_round 20000 rolls  serial %8.3f ms   parallel %8.3f ms   x%.2f  %s\n",
                ts * 1e3, tp * 1e3, ts / tp, eq ? "bit-equal" : "MISMATCH");
  }

  set_threads(1);
  return 0;
}
