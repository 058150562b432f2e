#pragma once

#include "steinflow/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>

namespace steinflow {

using Rng = std::mt19937_64;

//! Closed-form quantities of pi_t, used as test oracles.
struct ReferenceMoments
{
  std::function<Vector(double)> mean_at;
  std::function<Matrix(double)> cov_at;
  std::optional<double> log_z1;
};

//! Prior pi_0 and likelihood exp(-h) defining pi_t ~ exp(-t h) pi_0.
struct TargetProblem
{
  std::string name;
  Eigen::Index dim = 0;
  std::function<Matrix(Rng&, Eigen::Index)> prior_sample;
  ScoreField prior_score;
  //! log prior up to an additive constant
  std::function<double(const Vector&)> log_prior;
  std::function<double(const Vector&)> h;
  ScoreField grad_h;
  std::optional<ReferenceMoments> reference;
};

namespace targets {

inline Matrix
standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols)
{
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      out(i, j) = normal(rng);
  return out;
}

namespace detail {

inline void
attach_standard_normal_prior(TargetProblem& target)
{
  const Eigen::Index d = target.dim;
  target.prior_sample = [d](Rng& rng, Eigen::Index n) {
    return standard_normal(rng, n, d);
  };
  target.prior_score = [](const Vector& x) -> Vector { return -x; };
  target.log_prior = [](const Vector& x) { return -0.5 * x.squaredNorm(); };
}

inline double
softplus(double a)
{
  return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a)));
}

inline double
sigmoid(double a)
{
  if (a >= 0.0)
    return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

} // namespace detail

//! Prior N(1, I), Gaussian observation y_obs = -1 with unit covariance.
//! h is the full negative log observation density, so Z_1 = p(y_obs).
inline TargetProblem
gaussian_conjugate(Eigen::Index d)
{
  if (d < 1)
    throw InvalidArgument("gaussian_conjugate: d must be >= 1");
  TargetProblem target;
  target.name = "gaussian";
  target.dim = d;
  target.prior_sample = [d](Rng& rng, Eigen::Index n) -> Matrix {
    return standard_normal(rng, n, d).array() + 1.0;
  };
  target.prior_score = [](const Vector& x) -> Vector {
    return 1.0 - x.array();
  };
  target.log_prior = [](const Vector& x) {
    return -0.5 * (x.array() - 1.0).matrix().squaredNorm();
  };
  const double log_norm =
    0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  target.h = [log_norm](const Vector& x) {
    return 0.5 * (x.array() + 1.0).matrix().squaredNorm() + log_norm;
  };
  target.grad_h = [](const Vector& x) -> Vector { return x.array() + 1.0; };

  ReferenceMoments ref;
  ref.mean_at = [d](double t) -> Vector {
    return Vector::Constant(d, (1.0 - t) / (1.0 + t));
  };
  ref.cov_at = [d](double t) -> Matrix {
    return Matrix::Identity(d, d) / (1.0 + t);
  };
  ref.log_z1 =
    static_cast<double>(d) * (-1.0 - 0.5 * std::log(4.0 * std::numbers::pi));
  target.reference = ref;
  return target;
}

//! Logarithmic Rosenbrock forward map.
inline double
joker_forward(const Vector& x)
{
  const double a = 1.0 - x(0);
  const double b = x(1) - x(0) * x(0);
  return std::log(a * a + 100.0 * b * b);
}

inline constexpr double joker_h_sentinel = 1e12;
inline constexpr double joker_grad_cap = 1e8;
inline constexpr double joker_default_sigma = 0.3;

//! Posterior of a single noisy observation of the log-Rosenbrock map under a
//! standard normal prior. The noise is drawn from rng.
inline TargetProblem
joker(double noise_sigma, const Vector& x_true, Rng& rng)
{
  if (!(noise_sigma > 0.0))
    throw InvalidArgument("joker: noise sigma must be positive");
  steinflow::detail::check_same_dim(x_true.size(), 2, "joker");
  std::normal_distribution<double> normal(0.0, noise_sigma);
  const double y_obs = joker_forward(x_true) + normal(rng);
  const double s2 = noise_sigma * noise_sigma;

  TargetProblem target;
  target.name = "joker";
  target.dim = 2;
  detail::attach_standard_normal_prior(target);
  target.h = [y_obs, s2](const Vector& x) {
    const double a = 1.0 - x(0);
    const double b = x(1) - x(0) * x(0);
    const double g = a * a + 100.0 * b * b;
    if (g < 1e-300)
      return joker_h_sentinel;
    const double r = std::log(g) - y_obs;
    return r * r / (2.0 * s2);
  };
  target.grad_h = [y_obs, s2](const Vector& x) -> Vector {
    const double a = 1.0 - x(0);
    const double b = x(1) - x(0) * x(0);
    const double g = std::max(a * a + 100.0 * b * b, 1e-300);
    const double r = std::log(g) - y_obs;
    Vector dg(2);
    dg << -2.0 * a - 400.0 * x(0) * b, 200.0 * b;
    Vector grad = (r / (s2 * g)) * dg;
    const double norm = grad.norm();
    if (!std::isfinite(norm))
      return Vector::Zero(2);
    if (norm > joker_grad_cap)
      grad *= joker_grad_cap / norm;
    return grad;
  };
  return target;
}

//! x_true drawn from the prior with a dedicated seed; the observation noise
//! comes from the same stream.
inline TargetProblem
joker_from_seed(double noise_sigma, std::uint64_t seed_truth)
{
  Rng rng(seed_truth);
  const Vector x_true = standard_normal(rng, 1, 2).row(0).transpose();
  return joker(noise_sigma, x_true, rng);
}

//! Means of the four-component mixture, one per row. With literal_cos the
//! second coordinate repeats the cosine instead of using the sine.
inline Matrix
mixture_means(Eigen::Index d, bool literal_cos = false)
{
  Matrix means = Matrix::Zero(4, d);
  const double r = std::sqrt(5.0);
  for (int j = 1; j <= 4; ++j) {
    const double theta = 2.0 * j * std::numbers::pi / 4.0 + std::numbers::pi / 4.0;
    means(j - 1, 0) = r * std::cos(theta);
    means(j - 1, 1) = r * (literal_cos ? std::cos(theta) : std::sin(theta));
  }
  return means;
}

//! Density of 1/4 sum_j N(x; mu_j, I).
inline double
mixture_density(const Matrix& means, const Vector& x)
{
  const double d = static_cast<double>(x.size());
  double total = 0.0;
  for (Eigen::Index j = 0; j < means.rows(); ++j)
    total += std::exp(-0.5 * (x - means.row(j).transpose()).squaredNorm());
  return total / static_cast<double>(means.rows()) *
         std::pow(2.0 * std::numbers::pi, -0.5 * d);
}

//! Equal-weight Gaussian mixture with means on a circle in the first two
//! coordinates, reached from a N(0, I) prior via h = -log(pi / pi_0).
inline TargetProblem
low_rank_mixture(Eigen::Index d, bool literal_cos = false)
{
  if (d < 2)
    throw InvalidArgument("low_rank_mixture: d must be >= 2");
  const Matrix means = mixture_means(d, literal_cos);
  const Vector half_sq = 0.5 * means.rowwise().squaredNorm();

  TargetProblem target;
  target.name = "low_rank_mixture";
  target.dim = d;
  detail::attach_standard_normal_prior(target);
  // pi / pi_0 = 1/4 sum_j exp(x . mu_j - |mu_j|^2 / 2)
  target.h = [means, half_sq](const Vector& x) {
    const Vector logits = means * x - half_sq;
    const double top = logits.maxCoeff();
    const double lse = top + std::log((logits.array() - top).exp().sum());
    return -(lse - std::log(4.0));
  };
  target.grad_h = [means, half_sq](const Vector& x) -> Vector {
    const Vector logits = means * x - half_sq;
    const Vector p = (logits.array() - logits.maxCoeff()).exp();
    return -(means.transpose() * p) / p.sum();
  };
  return target;
}

//! Bayesian logistic regression with N(0, I) prior. features is the design
//! matrix as used (bias column included if wanted); labels in {-1, +1}.
inline TargetProblem
logistic_regression(const Matrix& features, const Vector& labels)
{
  steinflow::detail::check_same_dim(
    features.rows(), labels.size(), "logistic_regression");
  if (features.rows() == 0 || features.cols() == 0)
    throw InvalidArgument("logistic_regression: empty design matrix");
  if (!features.allFinite())
    throw InvalidArgument("logistic_regression: non-finite features");
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels(i) != 1.0 && labels(i) != -1.0)
      throw InvalidArgument("logistic_regression: labels must be -1 or +1");

  // rows pre-multiplied by the label: margin_i = <x, y_i z_i>
  const Matrix signed_features = labels.asDiagonal() * features;
  TargetProblem target;
  target.name = "logistic";
  target.dim = features.cols();
  detail::attach_standard_normal_prior(target);
  target.h = [signed_features](const Vector& x) {
    const Vector margin = signed_features * x;
    double total = 0.0;
    for (Eigen::Index i = 0; i < margin.size(); ++i)
      total += detail::softplus(-margin(i));
    return total;
  };
  target.grad_h = [signed_features](const Vector& x) -> Vector {
    const Vector margin = signed_features * x;
    Vector coef(margin.size());
    for (Eigen::Index i = 0; i < margin.size(); ++i)
      coef(i) = -detail::sigmoid(-margin(i));
    return signed_features.transpose() * coef;
  };
  return target;
}

} // namespace targets
} // namespace steinflow
