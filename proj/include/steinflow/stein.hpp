#pragma once

#include "steinflow/common.hpp"
#include "steinflow/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace steinflow {

struct SolveOutput
{
  Vector phi;
  double residual_norm = 0.0;
  //! reciprocal condition estimate of the factorized system, inverted
  std::optional<double> condition_hint;
  bool used_cholesky = false;
};

namespace stein {

//! (S_pi v)(x) = grad log pi(x) . v(x) + div v(x)
inline double
stein_apply(const ScoreField& score,
            const ScoreField& v,
            const std::function<double(const Vector&)>& div_v,
            const Vector& x)
{
  const Vector s = score(x);
  const Vector vx = v(x);
  steinflow::detail::check_same_dim(s.size(), x.size(), "stein_apply");
  steinflow::detail::check_same_dim(vx.size(), x.size(), "stein_apply");
  return s.dot(vx) + div_v(x);
}

inline Matrix
evaluate_scores(const ScoreField& score, const Matrix& positions)
{
  Matrix out(positions.rows(), positions.cols());
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    const Vector s = score(positions.row(i).transpose());
    steinflow::detail::check_same_dim(s.size(), positions.cols(), "score");
    out.row(i) = s.transpose();
  }
  return out;
}

//! Gram matrix of the KSD-kernel
//!   xi(x, y) = s(x).grad_y k + s(y).grad_x k + div_x grad_y k + k s(x).s(y)
//! at the particle positions, symmetrized as (Xi + Xi^T) / 2.
inline Matrix
ksd_gram(const Matrix& positions,
         const Matrix& scores,
         const KernelConfig& cfg,
         double sigma2)
{
  if (positions.rows() != scores.rows() || positions.cols() != scores.cols())
    throw DimensionError("ksd_gram: positions and scores differ in shape");
  const auto pm = kernel::pair_matrices(cfg, sigma2, positions, positions);
  // a(i, j) = s_i . x_j
  const Matrix a = scores * positions.transpose();
  const Vector a_diag = a.diagonal();
  const Eigen::Index n = positions.rows();

  Matrix gram(n, n);
  const Matrix ss = scores * scores.transpose();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double drift = a_diag(i) - a(i, j) - a(j, i) + a_diag(j);
      gram(i, j) =
        pm.radial(i, j) * drift + pm.cross(i, j) + pm.value(i, j) * ss(i, j);
    }
  }
  return 0.5 * (gram + gram.transpose());
}

namespace detail {

inline void
check_weights(const Vector& weights, Eigen::Index n, const char* what)
{
  steinflow::detail::check_same_dim(weights.size(), n, what);
  if ((weights.array() < 0.0).any() || !weights.allFinite())
    throw InvalidArgument(std::string(what) + ": weights must be nonnegative");
  if (std::abs(weights.sum() - 1.0) > 1e-9)
    throw InvalidArgument(std::string(what) + ": weights must sum to one");
}

inline bool
is_uniform(const Vector& w)
{
  return (w.array() == w(0)).all();
}

} // namespace detail

//! Solves (Xi diag(w) + lambda I) phi = h - <w, h>. Uniform weights give the
//! symmetric system (Xi / N + lambda I) and go through Cholesky; otherwise, or
//! if Cholesky fails, partial-pivot LU.
inline SolveOutput
solve_phi(const Matrix& gram,
          const Vector& h_values,
          const Vector& weights,
          double lambda)
{
  const Eigen::Index n = gram.rows();
  if (gram.cols() != n)
    throw DimensionError("solve_phi: Gram matrix must be square");
  if (n == 0)
    throw InvalidArgument("solve_phi: empty system");
  steinflow::detail::check_same_dim(h_values.size(), n, "solve_phi");
  detail::check_weights(weights, n, "solve_phi");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw InvalidArgument("solve_phi: lambda must be positive");
  if (!gram.allFinite() || !h_values.allFinite())
    throw NumericalError("solve_phi: non-finite Gram matrix or h values");

  // shifting by h_values(0) first keeps constant inputs exactly zero
  const Vector shifted = h_values.array() - h_values(0);
  const Vector h0 = shifted.array() - weights.dot(shifted);

  Matrix system = gram * weights.asDiagonal();
  system.diagonal().array() += lambda;

  SolveOutput out;
  const double tol = 1e-8 * (1.0 + h0.norm());

  auto refine = [&](const auto& solver) {
    out.phi = solver.solve(h0);
    Vector r = h0 - system * out.phi;
    for (int it = 0; it < 3 && r.norm() > tol; ++it) {
      out.phi += solver.solve(r);
      r = h0 - system * out.phi;
    }
    out.residual_norm = r.norm();
    const double rc = solver.rcond();
    if (rc > 0.0)
      out.condition_hint = 1.0 / rc;
  };

  bool solved = false;
  if (detail::is_uniform(weights)) {
    Eigen::LLT<Matrix> llt(system);
    if (llt.info() == Eigen::Success) {
      refine(llt);
      out.used_cholesky = true;
      solved = out.phi.allFinite() && out.residual_norm <= tol;
    }
  }
  if (!solved) {
    Eigen::PartialPivLU<Matrix> lu(system);
    refine(lu);
    out.used_cholesky = false;
  }
  if (!out.phi.allFinite() || !(out.residual_norm <= tol))
    throw NumericalError("solve_phi: residual " +
                         std::to_string(out.residual_norm) +
                         " exceeds tolerance");
  return out;
}

//! v(x_m) = sum_j w_j phi_j (k(x_m, X_j) s_j + grad_y k(x_m, X_j))
inline Matrix
velocity(const Matrix& eval_points,
         const Matrix& positions,
         const Matrix& scores,
         const Vector& phi,
         const Vector& weights,
         const KernelConfig& cfg,
         double sigma2)
{
  const Eigen::Index n = positions.rows();
  if (scores.rows() != n || scores.cols() != positions.cols())
    throw DimensionError("velocity: positions and scores differ in shape");
  steinflow::detail::check_same_dim(phi.size(), n, "velocity");
  steinflow::detail::check_same_dim(weights.size(), n, "velocity");
  steinflow::detail::check_same_dim(
    eval_points.cols(), positions.cols(), "velocity");

  const auto pm =
    kernel::pair_matrices(cfg, sigma2, eval_points, positions, false);
  const Vector c = weights.cwiseProduct(phi);
  Matrix v = pm.value * (c.asDiagonal() * scores);
  v += (pm.radial * c).asDiagonal() * eval_points;
  v -= pm.radial * (c.asDiagonal() * positions);
  return v;
}

//! V-statistic sum_ij w_i w_j xi(x_i, x_j) for precomputed target scores.
inline double
ksd_from_scores(const Matrix& positions,
                const Matrix& scores,
                const Vector& weights,
                const KernelConfig& cfg = KernelConfig::inverse_multiquadric())
{
  detail::check_weights(weights, positions.rows(), "ksd");
  const double sigma2 = kernel::resolve_bandwidth(cfg, positions);
  const Matrix gram = ksd_gram(positions, scores, cfg, sigma2);
  return std::max(0.0, weights.dot(gram * weights));
}

inline double
ksd(const Matrix& positions,
    const Vector& weights,
    const ScoreField& target_score,
    const KernelConfig& cfg = KernelConfig::inverse_multiquadric())
{
  return ksd_from_scores(
    positions, evaluate_scores(target_score, positions), weights, cfg);
}

} // namespace stein
} // namespace steinflow
