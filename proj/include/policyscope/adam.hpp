#pragma once

#include <vector>

#include "policyscope/matrix.hpp"

namespace policyscope::ad {

struct AdamHyper {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed list of parameter arrays.
class AdamState {
 public:
  AdamState(const std::vector<const Matrix*>& params, AdamHyper hyper);

  // In-place update. Throws on shape mismatch or non-finite gradients; the
  // caller's retry policy decides what to do with an aborted step.
  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);

  long step_count() const { return t_; }
  AdamHyper& hyper() { return hyper_; }
  const AdamHyper& hyper() const { return hyper_; }

  const Matrix& first_moment(size_t i) const { return m_[i]; }
  const Matrix& second_moment(size_t i) const { return v_[i]; }

 private:
  std::vector<Matrix> m_, v_;
  long t_ = 0;
  AdamHyper hyper_;
};

}  // namespace policyscope::ad
