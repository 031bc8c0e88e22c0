#include "policyscope/priors.hpp"

#include <cmath>
#include <stdexcept>

#include "policyscope/rng.hpp"

namespace policyscope {

namespace {

inline double softplus(double t) {
  // log(1 + e^t) without overflow.
  return std::log1p(std::exp(-std::abs(t))) + std::max(t, 0.0);
}

inline double stable_sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

void PriorSpec::validate() const {
  if (names.empty()) throw std::invalid_argument("PriorSpec: no dimensions");
  if (lo.size() != names.size() || hi.size() != names.size())
    throw std::invalid_argument("PriorSpec: names/lo/hi length mismatch");
  if (!(epsilon_clip > 0.0) || epsilon_clip >= 0.5)
    throw std::invalid_argument("PriorSpec: epsilon_clip must be in (0, 0.5)");
  for (size_t i = 0; i < names.size(); ++i)
    if (!(lo[i] < hi[i]))
      throw std::invalid_argument("PriorSpec: dimension '" + names[i] + "' needs lo < hi");
}

bool PriorSpec::same_ranges(const PriorSpec& other) const {
  if (names != other.names) return false;
  return lo == other.lo && hi == other.hi;
}

ParamVector to_unbounded(const ParamVector& x, const PriorSpec& spec) {
  if (static_cast<int>(x.size()) != spec.dim())
    throw std::invalid_argument("to_unbounded: expected " + std::to_string(spec.dim()) +
                                " dims, got " + std::to_string(x.size()));
  ParamVector z(x.size());
  const double eps = spec.epsilon_clip;
  for (size_t i = 0; i < x.size(); ++i) {
    const double width = spec.hi[i] - spec.lo[i];
    double u = (x[i] - spec.lo[i]) / width;
    if (u < -eps || u > 1.0 + eps)
      throw std::invalid_argument("to_unbounded: dimension '" + spec.names[i] + "' value " +
                                  std::to_string(x[i]) + " outside [" +
                                  std::to_string(spec.lo[i]) + ", " + std::to_string(spec.hi[i]) +
                                  "]");
    u = std::min(std::max(u, eps), 1.0 - eps);
    z[i] = std::log(u) - std::log1p(-u);
  }
  return z;
}

ParamVector to_bounded(const ParamVector& z, const PriorSpec& spec) {
  if (static_cast<int>(z.size()) != spec.dim())
    throw std::invalid_argument("to_bounded: expected " + std::to_string(spec.dim()) +
                                " dims, got " + std::to_string(z.size()));
  ParamVector x(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    double s = stable_sigmoid(z[i]);
    // keep the image strictly interior even when sigmoid saturates in fp
    s = std::min(std::max(s, 1e-15), 1.0 - 1e-15);
    x[i] = spec.lo[i] + (spec.hi[i] - spec.lo[i]) * s;
  }
  return x;
}

double log_prior_unbounded(const ParamVector& z, const PriorSpec& spec) {
  if (static_cast<int>(z.size()) != spec.dim())
    throw std::invalid_argument("log_prior_unbounded: expected " + std::to_string(spec.dim()) +
                                " dims, got " + std::to_string(z.size()));
  double total = 0.0;
  for (double zi : z) total -= softplus(zi) + softplus(-zi);
  return total;
}

double log_jacobian_to_unbounded(const ParamVector& z, const PriorSpec& spec) {
  if (static_cast<int>(z.size()) != spec.dim())
    throw std::invalid_argument("log_jacobian_to_unbounded: expected " +
                                std::to_string(spec.dim()) + " dims, got " +
                                std::to_string(z.size()));
  double total = 0.0;
  for (size_t i = 0; i < z.size(); ++i)
    total += softplus(z[i]) + softplus(-z[i]) - std::log(spec.hi[i] - spec.lo[i]);
  return total;
}

Matrix to_unbounded_rows(const Matrix& x, const PriorSpec& spec) {
  Matrix z(x.rows(), x.cols());
  ParamVector row(x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) row[j] = x(i, j);
    const ParamVector zi = to_unbounded(row, spec);
    for (int j = 0; j < x.cols(); ++j) z(i, j) = zi[j];
  }
  return z;
}

Matrix to_bounded_rows(const Matrix& z, const PriorSpec& spec) {
  Matrix x(z.rows(), z.cols());
  ParamVector row(z.cols());
  for (int i = 0; i < z.rows(); ++i) {
    for (int j = 0; j < z.cols(); ++j) row[j] = z(i, j);
    const ParamVector xi = to_bounded(row, spec);
    for (int j = 0; j < z.cols(); ++j) x(i, j) = xi[j];
  }
  return x;
}

ParamVector sample_uniform_prior(const PriorSpec& spec, Rng& rng) {
  ParamVector x(spec.dim());
  for (int i = 0; i < spec.dim(); ++i) x[i] = rng.uniform(spec.lo[i], spec.hi[i]);
  return x;
}

}  // namespace policyscope
