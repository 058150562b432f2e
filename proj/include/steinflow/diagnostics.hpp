#pragma once

#include "steinflow/common.hpp"
#include "steinflow/stein.hpp"
#include "steinflow/targets.hpp"

#include <optional>

namespace steinflow {

//! Particle ensemble at homotopy time t. scores holds the co-evolved
//! grad log pi_t values of the gradient-free variant and is empty otherwise.
struct Ensemble
{
  Matrix positions;
  std::optional<Matrix> scores;
  Vector weights;
  double t = 0.0;

  Eigen::Index size() const { return positions.rows(); }
  Eigen::Index dim() const { return positions.cols(); }

  static Ensemble uniform(Matrix positions, double t = 0.0)
  {
    Ensemble ens;
    ens.weights = detail::uniform_weights(positions.rows());
    ens.positions = std::move(positions);
    ens.t = t;
    return ens;
  }
};

struct MomentSummary
{
  Vector mean;
  Matrix covariance;
  double trace_over_d = 0.0;
};

namespace diagnostics {

//! Weighted mean and population covariance (no Bessel correction).
inline MomentSummary
moments(const Matrix& positions, const Vector& weights)
{
  if (positions.rows() < 2)
    throw InvalidArgument("moments: need at least 2 particles");
  detail::check_same_dim(weights.size(), positions.rows(), "moments");
  MomentSummary out;
  out.mean = positions.transpose() * weights;
  const Matrix centred = positions.rowwise() - out.mean.transpose();
  const Matrix cov = centred.transpose() * weights.asDiagonal() * centred;
  out.covariance = 0.5 * (cov + cov.transpose());
  out.trace_over_d =
    out.covariance.trace() / static_cast<double>(positions.cols());
  return out;
}

inline MomentSummary
moments(const Ensemble& ens)
{
  return moments(ens.positions, ens.weights);
}

inline double
ess(const Vector& weights)
{
  return 1.0 / weights.squaredNorm();
}

//! Posterior-predictive accuracy: p(+1 | z) = sum_i w_i sigmoid(<x_i, z>),
//! predicting +1 when p >= 1/2.
inline double
test_accuracy(const Ensemble& ens, const Matrix& features, const Vector& labels)
{
  if (features.rows() == 0)
    throw InvalidArgument("test_accuracy: empty test set");
  detail::check_same_dim(features.rows(), labels.size(), "test_accuracy");
  detail::check_same_dim(features.cols(), ens.dim(), "test_accuracy");
  const Matrix logits = features * ens.positions.transpose();
  Eigen::Index correct = 0;
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    double p = 0.0;
    for (Eigen::Index i = 0; i < ens.size(); ++i)
      p += ens.weights(i) * targets::detail::sigmoid(logits(r, i));
    const double predicted = p >= 0.5 ? 1.0 : -1.0;
    if (predicted == labels(r))
      ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(features.rows());
}

//! grad log pi_1 = -grad h + grad log pi_0
inline ScoreField
posterior_score(const TargetProblem& target)
{
  return [&target](const Vector& x) -> Vector {
    return target.prior_score(x) - target.grad_h(x);
  };
}

//! IMQ-kernel KSD of the weighted ensemble against the posterior.
inline double
ksd_to_posterior(const Ensemble& ens, const TargetProblem& target)
{
  return stein::ksd(ens.positions, ens.weights, posterior_score(target));
}

} // namespace diagnostics
} // namespace steinflow
