#include "policyscope/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace policyscope::ad {

AdamState::AdamState(const std::vector<const Matrix*>& params, AdamHyper hyper)
    : hyper_(hyper) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Matrix* p : params) {
    m_.emplace_back(p->rows(), p->cols());
    v_.emplace_back(p->rows(), p->cols());
  }
}

void AdamState::step(const std::vector<Matrix*>& params,
                     const std::vector<const Matrix*>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw std::invalid_argument("adam: parameter list size changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    if (!p.same_shape(m) || !g.same_shape(m))
      throw std::invalid_argument("adam: shape mismatch at parameter " + std::to_string(i) +
                                  ": " + p.shape_str() + " / " + g.shape_str() + " vs state " +
                                  m.shape_str());
    for (size_t k = 0; k < p.size(); ++k) {
      const double gk = g.at_flat(k);
      if (!std::isfinite(gk))
        throw std::runtime_error("adam: non-finite gradient at parameter " +
                                 std::to_string(i) + ", element " + std::to_string(k));
      m.at_flat(k) = hyper_.beta1 * m.at_flat(k) + (1.0 - hyper_.beta1) * gk;
      v.at_flat(k) = hyper_.beta2 * v.at_flat(k) + (1.0 - hyper_.beta2) * gk * gk;
      const double m_hat = m.at_flat(k) / bc1;
      const double v_hat = v.at_flat(k) / bc2;
      p.at_flat(k) -= hyper_.learning_rate * m_hat / (std::sqrt(v_hat) + hyper_.epsilon);
    }
  }
}

}  // namespace policyscope::ad
