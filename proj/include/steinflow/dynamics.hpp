#pragma once

#include "steinflow/common.hpp"
#include "steinflow/diagnostics.hpp"
#include "steinflow/kernel.hpp"
#include "steinflow/stein.hpp"
#include "steinflow/targets.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace steinflow {

enum class Variant
{
  stein_transport,
  adjusted,
  svgd,
  gradient_free,
  weighted,
};

enum class AdjustOptimizer
{
  plain,
  adagrad,
};

struct AdagradParams
{
  //! falls back to the schedule's dt_adjust when unset
  std::optional<double> learning_rate;
  double decay = 0.9;
  double eps = 1e-6;
};

struct Schedule
{
  int n_steps = 50;
  double lambda = 1e-2;
  Variant variant = Variant::stein_transport;
  int n_adjust = 0;
  double dt_adjust = 0.01;
  AdjustOptimizer adjust_optimizer = AdjustOptimizer::plain;
  int svgd_steps = 100;
  AdagradParams adagrad;

  double dt() const { return 1.0 / static_cast<double>(n_steps); }

  double svgd_learning_rate() const
  {
    return adagrad.learning_rate.value_or(dt_adjust);
  }

  void validate() const
  {
    if (n_steps < 1)
      throw InvalidArgument("schedule: n_steps must be >= 1");
    if (!(lambda > 0.0))
      throw InvalidArgument("schedule: lambda must be positive");
    if (n_adjust < 0)
      throw InvalidArgument("schedule: n_adjust must be >= 0");
    if (!(dt_adjust > 0.0))
      throw InvalidArgument("schedule: dt_adjust must be positive");
    if (svgd_steps < 1)
      throw InvalidArgument("schedule: svgd_steps must be >= 1");
    if (!(adagrad.decay >= 0.0 && adagrad.decay < 1.0))
      throw InvalidArgument("schedule: adagrad decay must lie in [0, 1)");
    if (!(adagrad.eps > 0.0))
      throw InvalidArgument("schedule: adagrad eps must be positive");
    if (adagrad.learning_rate && !(*adagrad.learning_rate > 0.0))
      throw InvalidArgument("schedule: adagrad learning_rate must be positive");
  }
};

struct AdagradState
{
  Matrix accumulator;
  long step_count = 0;
};

struct PlainStep
{};

struct Adagrad
{
  AdagradParams params;
  double learning_rate = 0.1;
  AdagradState state;
};

//! Update rule applied to an SVGD direction.
using SvgdOptimizer = std::variant<PlainStep, Adagrad>;

inline SvgdOptimizer
make_optimizer(const Schedule& schedule)
{
  if (schedule.adjust_optimizer == AdjustOptimizer::adagrad)
    return Adagrad{ schedule.adagrad, schedule.svgd_learning_rate(), {} };
  return PlainStep{};
}

struct DiagnosticsRecord
{
  long step = 0;
  double t = 0.0;
  long grad_evals = 0;
  double ksd = std::numeric_limits<double>::quiet_NaN();
  Vector mean;
  double cov_trace_over_d = 0.0;
  double logz_partial = std::numeric_limits<double>::quiet_NaN();
  double ess = 0.0;
  double h_mean = std::numeric_limits<double>::quiet_NaN();
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  bool ess_warning = false;
};

struct RunOptions
{
  //! record every k-th step (plus the initial state)
  int diagnostics_every = 1;
  //! evaluate KSD every k-th step; 0 disables it
  int ksd_every = 1;
  //! optional extra metric, e.g. test accuracy
  std::function<double(const Ensemble&)> accuracy;
  //! called after every step with the 1-based step index
  std::function<void(long, const Ensemble&)> on_step;
};

struct RunResult
{
  Ensemble ensemble;
  std::vector<DiagnosticsRecord> records;
  long grad_evals = 0;
  double log_z = std::numeric_limits<double>::quiet_NaN();
};

namespace dynamics {

//! grad log pi_t = -t grad h + grad log pi_0
inline Vector
interp_score(const TargetProblem& target, double t, const Vector& x)
{
  return target.prior_score(x) - t * target.grad_h(x);
}

inline ScoreField
interp_score_field(const TargetProblem& target, double t)
{
  return [&target, t](const Vector& x) { return interp_score(target, t, x); };
}

inline Vector
evaluate_h(const TargetProblem& target, const Matrix& positions)
{
  Vector out(positions.rows());
  for (Eigen::Index i = 0; i < positions.rows(); ++i)
    out(i) = target.h(positions.row(i).transpose());
  return out;
}

//! -int_0^1 E_{pi_t}[h] dt by the trapezoid rule over (t, mean h) pairs.
inline double
logz_accumulate(std::span<const double> t, std::span<const double> h_mean)
{
  if (t.size() != h_mean.size())
    throw DimensionError("logz_accumulate: grid and values differ in length");
  if (t.size() < 2)
    throw InvalidArgument("logz_accumulate: need at least 2 grid points");
  double integral = 0.0;
  for (std::size_t k = 1; k < t.size(); ++k)
    integral += 0.5 * (t[k] - t[k - 1]) * (h_mean[k] + h_mean[k - 1]);
  return -integral;
}

inline double
logz_accumulate(const std::vector<DiagnosticsRecord>& records)
{
  std::vector<double> t, h;
  for (const auto& r : records) {
    t.push_back(r.t);
    h.push_back(r.h_mean);
  }
  return logz_accumulate(t, h);
}

namespace detail {

inline double
bandwidth_for(const KernelConfig& cfg, const Matrix& positions)
{
  // a single particle has no pairwise scale; any bandwidth gives the same
  // (vanishing) interaction
  if (positions.rows() < 2 && cfg.uses_median())
    return 1.0;
  return kernel::resolve_bandwidth(cfg, positions);
}

} // namespace detail

//! SVGD direction u_i = 1/N sum_j (k(x_i, x_j) s_j + grad_{x_j} k(x_i, x_j)).
inline Matrix
svgd_direction(const Matrix& positions,
               const Matrix& scores,
               const KernelConfig& cfg,
               double sigma2)
{
  const Eigen::Index n = positions.rows();
  return stein::velocity(positions, positions, scores, Vector::Ones(n),
                         steinflow::detail::uniform_weights(n), cfg, sigma2);
}

//! Moves positions along direction under the optimizer's rule and returns
//! the displacement actually applied.
inline Matrix
apply_update(const Matrix& direction, double dt, SvgdOptimizer& opt)
{
  if (std::holds_alternative<PlainStep>(opt))
    return dt * direction;
  auto& ada = std::get<Adagrad>(opt);
  auto& st = ada.state;
  const Matrix sq = direction.array().square().matrix();
  if (st.step_count == 0 || st.accumulator.rows() != direction.rows() ||
      st.accumulator.cols() != direction.cols()) {
    st.accumulator = sq;
  } else {
    st.accumulator =
      ada.params.decay * st.accumulator + (1.0 - ada.params.decay) * sq;
  }
  ++st.step_count;
  return ada.learning_rate *
         (direction.array() / (ada.params.eps + st.accumulator.array().sqrt()))
           .matrix();
}

//! One SVGD move towards the density whose score is given. Plain uses dt as
//! step size; Adagrad uses its own learning rate.
inline Ensemble
svgd_step(const Ensemble& ens,
          const ScoreField& score,
          const KernelConfig& cfg,
          double dt,
          SvgdOptimizer& opt)
{
  const Matrix scores = stein::evaluate_scores(score, ens.positions);
  const double sigma2 = detail::bandwidth_for(cfg, ens.positions);
  Ensemble out = ens;
  out.positions +=
    apply_update(svgd_direction(ens.positions, scores, cfg, sigma2), dt, opt);
  return out;
}

struct TransportStep
{
  Ensemble ensemble;
  SolveOutput solve;
  double sigma2 = 1.0;
};

namespace detail {

inline double
advance_time(double t, double dt)
{
  const double next = t + dt;
  if (next > 1.0 + 1e-12)
    throw InvalidArgument("transport step would pass t = 1");
  return std::abs(next - 1.0) <= 1e-12 ? 1.0 : next;
}

//! Solve + Euler move shared by all transport variants; scores are the
//! grad log pi_t values the Gram matrix and the velocity use.
inline TransportStep
transport_with_scores(const Ensemble& ens,
                      const Matrix& scores,
                      const Vector& h_values,
                      const KernelConfig& cfg,
                      double lambda,
                      double dt)
{
  TransportStep out;
  out.sigma2 = bandwidth_for(cfg, ens.positions);
  const Matrix gram = stein::ksd_gram(ens.positions, scores, cfg, out.sigma2);
  out.solve = stein::solve_phi(gram, h_values, ens.weights, lambda);
  const Matrix v = stein::velocity(ens.positions, ens.positions, scores,
                                   out.solve.phi, ens.weights, cfg, out.sigma2);
  out.ensemble = ens;
  out.ensemble.positions += dt * v;
  out.ensemble.t = advance_time(ens.t, dt);
  return out;
}

} // namespace detail

//! One Euler step of Stein transport at the ensemble's own weights (uniform
//! weights give the plain particle system). Evaluates grad h once per
//! particle.
inline TransportStep
stein_transport_step_full(const Ensemble& ens,
                          const TargetProblem& target,
                          const KernelConfig& cfg,
                          double lambda,
                          double dt)
{
  detail::advance_time(ens.t, dt);
  const Matrix scores =
    stein::evaluate_scores(interp_score_field(target, ens.t), ens.positions);
  const Vector h_values = evaluate_h(target, ens.positions);
  return detail::transport_with_scores(ens, scores, h_values, cfg, lambda, dt);
}

inline Ensemble
stein_transport_step(const Ensemble& ens,
                     const TargetProblem& target,
                     const KernelConfig& cfg,
                     double lambda,
                     double dt)
{
  return stein_transport_step_full(ens, target, cfg, lambda, dt).ensemble;
}

//! Time derivative of the co-evolved scores,
//!   dP_i/dt = -grad(div v)(X_i) - (Dv(X_i))^T P_i,
//! with v the weighted representer field. Without the Jacobian term this is
//! the shortened form that drops -(Dv)^T P.
inline Matrix
score_derivative(const Matrix& positions,
                 const Matrix& scores,
                 const Vector& coef,
                 const KernelConfig& cfg,
                 double sigma2,
                 bool include_jacobian_term = true)
{
  const Eigen::Index n = positions.rows();
  const Eigen::Index d = positions.cols();
  Matrix out = Matrix::Zero(n, d);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector xi = positions.row(i).transpose();
    const Vector pi = scores.row(i).transpose();
    Vector acc = Vector::Zero(d);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vector xj = positions.row(j).transpose();
      const Vector pj = scores.row(j).transpose();
      const Matrix hess = kernel::hess_x(cfg, sigma2, xi, xj);
      // grad(div v): hess_x k P_j + grad_x (div_x grad_y k)
      Vector term = hess * pj + kernel::grad_x_cross_div(cfg, sigma2, xi, xj);
      if (include_jacobian_term) {
        // (Dv)^T P_i = grad_x k (P_j . P_i) + (d/dx d/dy k)^T P_i, and the
        // mixed derivative of a translation-invariant kernel is -hess_x k
        term += kernel::grad_x(cfg, sigma2, xi, xj) * pj.dot(pi) - hess * pi;
      }
      acc += coef(j) * term;
    }
    out.row(i) = -acc.transpose();
  }
  return out;
}

//! Gradient-free step: the Gram matrix and velocity use the evolved scores,
//! which are advanced alongside the positions. Only h is evaluated.
inline TransportStep
gradient_free_step(const Ensemble& ens,
                   const TargetProblem& target,
                   const KernelConfig& cfg,
                   double lambda,
                   double dt,
                   bool include_jacobian_term = true)
{
  if (cfg.family != KernelFamily::squared_exponential)
    throw UnsupportedKernelError(
      "gradient-free transport requires the squared-exponential kernel");
  if (!ens.scores)
    throw InvalidArgument("gradient-free step needs evolved scores");
  const Matrix& scores = *ens.scores;
  const Vector h_values = evaluate_h(target, ens.positions);
  TransportStep out =
    detail::transport_with_scores(ens, scores, h_values, cfg, lambda, dt);
  const Vector coef = ens.weights.cwiseProduct(out.solve.phi);
  out.ensemble.scores =
    scores + dt * score_derivative(ens.positions, scores, coef, cfg,
                                   out.sigma2, include_jacobian_term);
  return out;
}

namespace detail {

inline void
require_finite(const Ensemble& ens, long step)
{
  if (!ens.positions.allFinite() ||
      (ens.scores && !ens.scores->allFinite()) || !ens.weights.allFinite())
    throw NumericalError("non-finite particle state", step);
}

class Recorder
{
public:
  Recorder(const TargetProblem& target,
           const RunOptions& options,
           long final_step,
           bool homotopy)
    : target_(target)
    , options_(options)
    , final_step_(final_step)
    , homotopy_(homotopy)
  {
    if (options_.diagnostics_every < 1)
      throw InvalidArgument("diagnostics_every must be >= 1");
    if (options_.ksd_every < 0)
      throw InvalidArgument("ksd_every must be >= 0");
  }

  //! Tracks mean h for the log-evidence integral at every step, and emits a
  //! record on the diagnostics cadence.
  void observe(long step, const Ensemble& ens, long grad_evals)
  {
    double h_mean = std::numeric_limits<double>::quiet_NaN();
    if (homotopy_) {
      h_mean = ens.weights.dot(evaluate_h(target_, ens.positions));
      grid_t_.push_back(ens.t);
      grid_h_.push_back(h_mean);
    }
    const bool is_final = step == final_step_;
    if (step % options_.diagnostics_every != 0 && !is_final)
      return;

    DiagnosticsRecord rec;
    rec.step = step;
    rec.t = ens.t;
    rec.grad_evals = grad_evals;
    rec.h_mean = h_mean;
    if (homotopy_ && grid_t_.size() >= 2)
      rec.logz_partial = logz_accumulate(grid_t_, grid_h_);
    else if (homotopy_)
      rec.logz_partial = 0.0;
    if (ens.size() >= 2) {
      const MomentSummary m = diagnostics::moments(ens);
      rec.mean = m.mean;
      rec.cov_trace_over_d = m.trace_over_d;
    } else {
      rec.mean = ens.positions.row(0).transpose();
      rec.cov_trace_over_d = 0.0;
    }
    rec.ess = diagnostics::ess(ens.weights);
    rec.ess_warning = rec.ess < 0.1 * static_cast<double>(ens.size());
    if (options_.ksd_every > 0 && (step % options_.ksd_every == 0 || is_final))
      rec.ksd = diagnostics::ksd_to_posterior(ens, target_);
    if (options_.accuracy)
      rec.test_accuracy = options_.accuracy(ens);
    records_.push_back(std::move(rec));
  }

  double log_z() const
  {
    if (!homotopy_ || grid_t_.size() < 2)
      return std::numeric_limits<double>::quiet_NaN();
    return logz_accumulate(grid_t_, grid_h_);
  }

  std::vector<DiagnosticsRecord> take() { return std::move(records_); }

private:
  const TargetProblem& target_;
  const RunOptions& options_;
  long final_step_;
  bool homotopy_;
  std::vector<double> grid_t_;
  std::vector<double> grid_h_;
  std::vector<DiagnosticsRecord> records_;
};

inline Ensemble
initial_ensemble(const TargetProblem& target, Eigen::Index n, Rng& rng)
{
  if (n < 1)
    throw InvalidArgument("need at least one particle");
  Matrix x0 = target.prior_sample(rng, n);
  steinflow::detail::check_same_dim(x0.cols(), target.dim, "prior_sample");
  return Ensemble::uniform(std::move(x0), 0.0);
}

//! Outer loop shared by the homotopy variants.
inline RunResult
homotopy_run(const TargetProblem& target,
             const KernelConfig& cfg,
             const Schedule& schedule,
             Eigen::Index n_particles,
             Rng& rng,
             const RunOptions& options,
             Variant mode)
{
  schedule.validate();
  validate(cfg);
  const Eigen::Index n = n_particles;
  Ensemble ens = initial_ensemble(target, n, rng);
  if (mode == Variant::gradient_free)
    ens.scores = stein::evaluate_scores(target.prior_score, ens.positions);

  const double dt = schedule.dt();
  SvgdOptimizer opt = make_optimizer(schedule);
  long grad_evals = 0;
  Recorder recorder(target, options, schedule.n_steps, true);
  recorder.observe(0, ens, grad_evals);

  for (int step = 0; step < schedule.n_steps; ++step) {
    try {
      const double t_n = ens.t;
      if (mode == Variant::adjusted) {
        const ScoreField score = interp_score_field(target, t_n);
        for (int k = 0; k < schedule.n_adjust; ++k) {
          ens = svgd_step(ens, score, cfg, schedule.dt_adjust, opt);
          grad_evals += n;
        }
      }
      TransportStep next;
      if (mode == Variant::gradient_free) {
        next = gradient_free_step(ens, target, cfg, schedule.lambda, dt);
      } else {
        next = stein_transport_step_full(ens, target, cfg, schedule.lambda, dt);
        grad_evals += n;
      }
      if (mode == Variant::weighted) {
        const Vector factor =
          (-schedule.lambda * dt * next.solve.phi.array()).exp();
        // equal factors cancel under renormalization; skipping keeps the
        // weights bit-stable
        if (factor.maxCoeff() != factor.minCoeff()) {
          const Vector w = next.ensemble.weights.cwiseProduct(factor);
          next.ensemble.weights = w / w.sum();
        }
      }
      ens = std::move(next.ensemble);
      ens.t = static_cast<double>(step + 1) / schedule.n_steps;
      require_finite(ens, step + 1);
    } catch (const NumericalError& e) {
      if (e.step() >= 0)
        throw;
      throw NumericalError(e.what(), step + 1);
    }
    recorder.observe(step + 1, ens, grad_evals);
    if (options.on_step)
      options.on_step(step + 1, ens);
  }

  RunResult result;
  result.log_z = recorder.log_z();
  result.records = recorder.take();
  result.grad_evals = grad_evals;
  result.ensemble = std::move(ens);
  return result;
}

inline void
require_variant(const Schedule& schedule, Variant expected, const char* what)
{
  if (schedule.variant != expected)
    throw InvalidArgument(std::string(what) + ": schedule variant mismatch");
}

} // namespace detail

//! Algorithm: Euler-discretized Stein transport from prior to posterior.
inline RunResult
stein_transport_run(const TargetProblem& target,
                    const KernelConfig& cfg,
                    const Schedule& schedule,
                    Eigen::Index n_particles,
                    Rng& rng,
                    const RunOptions& options = {})
{
  detail::require_variant(schedule, Variant::stein_transport,
                          "stein_transport_run");
  return detail::homotopy_run(target, cfg, schedule, n_particles, rng, options,
                              Variant::stein_transport);
}

//! Stein transport with n_adjust SVGD moves towards pi_{t_n} before every
//! transport step.
inline RunResult
adjusted_run(const TargetProblem& target,
             const KernelConfig& cfg,
             const Schedule& schedule,
             Eigen::Index n_particles,
             Rng& rng,
             const RunOptions& options = {})
{
  detail::require_variant(schedule, Variant::adjusted, "adjusted_run");
  return detail::homotopy_run(target, cfg, schedule, n_particles, rng, options,
                              Variant::adjusted);
}

inline RunResult
gradient_free_run(const TargetProblem& target,
                  const KernelConfig& cfg,
                  const Schedule& schedule,
                  Eigen::Index n_particles,
                  Rng& rng,
                  const RunOptions& options = {})
{
  detail::require_variant(schedule, Variant::gradient_free,
                          "gradient_free_run");
  if (cfg.family != KernelFamily::squared_exponential)
    throw UnsupportedKernelError(
      "gradient-free transport requires the squared-exponential kernel");
  return detail::homotopy_run(target, cfg, schedule, n_particles, rng, options,
                              Variant::gradient_free);
}

//! Weighted transport: weighted regression for phi and v, and weights
//! w <- w exp(-lambda phi dt), renormalized each step.
inline RunResult
weighted_run(const TargetProblem& target,
             const KernelConfig& cfg,
             const Schedule& schedule,
             Eigen::Index n_particles,
             Rng& rng,
             const RunOptions& options = {})
{
  detail::require_variant(schedule, Variant::weighted, "weighted_run");
  return detail::homotopy_run(target, cfg, schedule, n_particles, rng, options,
                              Variant::weighted);
}

//! Plain SVGD on the posterior for schedule.svgd_steps iterations.
inline RunResult
svgd_run(const TargetProblem& target,
         const KernelConfig& cfg,
         const Schedule& schedule,
         Eigen::Index n_particles,
         Rng& rng,
         const RunOptions& options = {})
{
  detail::require_variant(schedule, Variant::svgd, "svgd_run");
  schedule.validate();
  validate(cfg);
  const Eigen::Index n = n_particles;
  Ensemble ens = detail::initial_ensemble(target, n, rng);
  ens.t = 1.0;
  SvgdOptimizer opt = make_optimizer(schedule);
  const ScoreField score = interp_score_field(target, 1.0);
  long grad_evals = 0;
  detail::Recorder recorder(target, options, schedule.svgd_steps, false);
  recorder.observe(0, ens, grad_evals);
  for (int step = 0; step < schedule.svgd_steps; ++step) {
    ens = svgd_step(ens, score, cfg, schedule.dt_adjust, opt);
    grad_evals += n;
    detail::require_finite(ens, step + 1);
    recorder.observe(step + 1, ens, grad_evals);
    if (options.on_step)
      options.on_step(step + 1, ens);
  }
  RunResult result;
  result.records = recorder.take();
  result.grad_evals = grad_evals;
  result.ensemble = std::move(ens);
  return result;
}

inline RunResult
run(const TargetProblem& target,
    const KernelConfig& cfg,
    const Schedule& schedule,
    Eigen::Index n_particles,
    Rng& rng,
    const RunOptions& options = {})
{
  switch (schedule.variant) {
    case Variant::stein_transport:
      return stein_transport_run(target, cfg, schedule, n_particles, rng, options);
    case Variant::adjusted:
      return adjusted_run(target, cfg, schedule, n_particles, rng, options);
    case Variant::svgd:
      return svgd_run(target, cfg, schedule, n_particles, rng, options);
    case Variant::gradient_free:
      return gradient_free_run(target, cfg, schedule, n_particles, rng, options);
    case Variant::weighted:
      return weighted_run(target, cfg, schedule, n_particles, rng, options);
  }
  throw InvalidArgument("unknown variant");
}

} // namespace dynamics
} // namespace steinflow
