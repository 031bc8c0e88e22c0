#pragma once

#include <string>
#include <vector>

#include "policyscope/matrix.hpp"

namespace policyscope {

// A point (s0, theta) in the joint space of initial conditions and
// environment parameters, in original bounded simulator units.
using ParamVector = std::vector<double>;

// Per-dimension bounded ranges plus the bounded<->unbounded transform. The
// density model lives in the unconstrained space; every emitted sample is
// mapped back through to_bounded and therefore respects the ranges by
// construction.
struct PriorSpec {
  std::vector<std::string> names;
  std::vector<double> lo;
  std::vector<double> hi;
  double epsilon_clip = 1e-6;  // fraction of the range; guards the logit at the bounds

  int dim() const { return static_cast<int>(names.size()); }
  void validate() const;
  bool same_ranges(const PriorSpec& other) const;
};

// z_i = logit((x_i - lo_i) / (hi_i - lo_i)). Values within epsilon_clip of a
// bound (or just past it) are pulled inward before the logit; values further
// outside are an error naming the offending dimension.
ParamVector to_unbounded(const ParamVector& x, const PriorSpec& spec);

// x_i = lo_i + (hi_i - lo_i) * sigmoid(z_i); strictly inside [lo_i, hi_i].
ParamVector to_bounded(const ParamVector& z, const PriorSpec& spec);

// Pushforward density of the uniform prior through to_unbounded:
// sum_i [log sigmoid(z_i) + log(1 - sigmoid(z_i))]. Range-independent.
double log_prior_unbounded(const ParamVector& z, const PriorSpec& spec);

// log |dz/dx| evaluated at z = to_unbounded(x). Added to unbounded-space flow
// densities to express them per unit of bounded volume.
double log_jacobian_to_unbounded(const ParamVector& z, const PriorSpec& spec);

// Row-wise batch versions.
Matrix to_unbounded_rows(const Matrix& x, const PriorSpec& spec);
Matrix to_bounded_rows(const Matrix& z, const PriorSpec& spec);

// Uniform draw over [lo, hi] per dimension.
class Rng;
ParamVector sample_uniform_prior(const PriorSpec& spec, Rng& rng);

}  // namespace policyscope
