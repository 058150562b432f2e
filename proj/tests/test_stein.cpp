#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace steinflow;

namespace {

const KernelConfig se = KernelConfig::squared_exponential_median();
const KernelConfig imq = KernelConfig::inverse_multiquadric();

ScoreField
standard_normal_score()
{
  return [](const Vector& x) -> Vector { return -x; };
}

//! Score of N(m, diag(var)), used to give random ensembles smooth scores.
ScoreField
gaussian_score(double mean, double var)
{
  return [mean, var](const Vector& x) -> Vector {
    return (mean - x.array()) / var;
  };
}

struct Problem
{
  Matrix x;
  Matrix s;
  double sigma2;
};

Problem
random_problem(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d)
{
  Problem p;
  p.x = oracle::random_matrix(rng, n, d);
  p.s = stein::evaluate_scores(gaussian_score(0.3, 0.8), p.x);
  p.sigma2 = n >= 2 ? kernel::median_bandwidth(p.x) : 1.0;
  return p;
}

//! Objective of the regularized Stein regression over representer fields
//! with coefficients phi: mean squared Stein residual plus lambda times the
//! RKHS norm phi^T Xi phi / N^2.
double
tikhonov_objective(const Matrix& gram,
                   const Vector& h0,
                   const Vector& phi,
                   double lambda)
{
  const double n = static_cast<double>(gram.rows());
  const Vector fitted = gram * phi / n;
  return (fitted - h0).squaredNorm() / n + lambda * phi.dot(gram * phi) / (n * n);
}

} // namespace

TEST(SteinApply, Examples)
{
  const auto score = standard_normal_score();
  Vector x(1);
  x << 0.0;
  auto identity = [](const Vector& y) -> Vector { return y; };
  auto one = [](const Vector&) { return 1.0; };
  EXPECT_DOUBLE_EQ(stein::stein_apply(score, identity, one, x), 1.0);

  auto zero_field = [](const Vector& y) -> Vector {
    return Vector::Zero(y.size());
  };
  auto zero = [](const Vector&) { return 0.0; };
  x << 1.7;
  EXPECT_EQ(stein::stein_apply(score, zero_field, zero, x), 0.0);

  auto constant = [](const Vector&) -> Vector { return Vector::Ones(1); };
  x << 2.0;
  EXPECT_DOUBLE_EQ(stein::stein_apply(score, constant, zero, x), -2.0);
}

TEST(SteinApply, DimensionMismatchThrows)
{
  auto bad = [](const Vector&) -> Vector { return Vector::Ones(3); };
  auto zero = [](const Vector&) { return 0.0; };
  EXPECT_THROW(stein::stein_apply(standard_normal_score(), bad, zero,
                                  Vector::Zero(2)),
               DimensionError);
}

TEST(KsdGram, DiagonalExample)
{
  Matrix x(1, 2), s(1, 2);
  x << 0.4, -2.0;
  s << 1.0, -1.0;
  EXPECT_DOUBLE_EQ(stein::ksd_gram(x, s, se, 1.0)(0, 0), 4.0);
  EXPECT_NEAR(oracle::fd_stein_kernel(se, 1.0, x.row(0).transpose(),
                                      x.row(0).transpose(),
                                      s.row(0).transpose(),
                                      s.row(0).transpose()),
              4.0, 1e-6);
}

TEST(KsdGram, SingleParticleZeroScore)
{
  const Matrix gram = stein::ksd_gram(Matrix::Constant(1, 1, 0.3),
                                      Matrix::Zero(1, 1), se, 1.0);
  EXPECT_EQ(gram.rows(), 1);
  EXPECT_DOUBLE_EQ(gram(0, 0), 1.0);
}

TEST(KsdGram, ShapeMismatchThrows)
{
  EXPECT_THROW(stein::ksd_gram(Matrix::Zero(3, 2), Matrix::Zero(3, 1), se, 1.0),
               DimensionError);
}

TEST(KsdGram, MatchesDefinitionEntrywise)
{
  std::mt19937_64 rng(3);
  for (const auto& cfg : { se, imq }) {
    const Problem p = random_problem(rng, 7, 3);
    const double s2 = kernel::resolve_bandwidth(cfg, p.x);
    const Matrix gram = stein::ksd_gram(p.x, p.s, cfg, s2);
    EXPECT_EQ(gram, gram.transpose());
    for (Eigen::Index i = 0; i < p.x.rows(); ++i)
      for (Eigen::Index j = 0; j < p.x.rows(); ++j)
        EXPECT_NEAR(gram(i, j),
                    oracle::fd_stein_kernel(
                      cfg, s2, p.x.row(i).transpose(), p.x.row(j).transpose(),
                      p.s.row(i).transpose(), p.s.row(j).transpose()),
                    1e-5 * std::max(1.0, std::abs(gram(i, j))));
  }
}

// Property: the KSD Gram matrix is positive semi-definite.
TEST(SteinProperty, GramIsPositiveSemidefinite)
{
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> size(2, 50), dim(1, 4);
  for (int trial = 0; trial < 40; ++trial) {
    const Problem p = random_problem(rng, size(rng), dim(rng));
    for (const auto& cfg : { se, imq }) {
      const Matrix gram = stein::ksd_gram(
        p.x, p.s, cfg, kernel::resolve_bandwidth(cfg, p.x));
      const double min_eig =
        Eigen::SelfAdjointEigenSolver<Matrix>(gram).eigenvalues().minCoeff();
      EXPECT_GE(min_eig, -1e-8 * gram.trace());
    }
  }
}

TEST(SolvePhi, ConstantValuesGiveZero)
{
  std::mt19937_64 rng(1);
  const Problem p = random_problem(rng, 5, 2);
  const Matrix gram = stein::ksd_gram(p.x, p.s, se, p.sigma2);
  const auto out =
    stein::solve_phi(gram, Vector::Constant(5, 3.2), detail::uniform_weights(5),
                     1e-2);
  EXPECT_EQ(out.phi.norm(), 0.0);
}

TEST(SolvePhi, SingleParticleGivesZero)
{
  const auto out = stein::solve_phi(Matrix::Constant(1, 1, 2.0),
                                    Vector::Constant(1, 7.0),
                                    Vector::Ones(1), 1e-3);
  EXPECT_EQ(out.phi(0), 0.0);
}

TEST(SolvePhi, TwoByTwoExample)
{
  Matrix gram(2, 2);
  gram << 2, 0, 0, 2;
  Vector h(2), w(2);
  h << 1, -1;
  w << 0.5, 0.5;
  const auto out = stein::solve_phi(gram, h, w, 1.0);
  EXPECT_NEAR(out.phi(0), 0.5, 1e-15);
  EXPECT_NEAR(out.phi(1), -0.5, 1e-15);
  EXPECT_TRUE(out.used_cholesky);
  const Vector generic = (gram / 2.0 + Matrix::Identity(2, 2)).lu().solve(h);
  EXPECT_LT((out.phi - generic).norm(), 1e-15);
}

TEST(SolvePhi, RejectsBadInputs)
{
  const Matrix gram = Matrix::Identity(2, 2);
  const Vector h = Vector::Ones(2);
  const Vector w = detail::uniform_weights(2);
  EXPECT_THROW(stein::solve_phi(gram, h, w, 0.0), InvalidArgument);
  EXPECT_THROW(stein::solve_phi(gram, h, w, -1.0), InvalidArgument);
  Vector bad = h;
  bad(1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(stein::solve_phi(gram, bad, w, 1e-2), NumericalError);
  EXPECT_THROW(stein::solve_phi(gram, h, Vector::Ones(2), 1e-2),
               InvalidArgument);
}

TEST(SolvePhi, UniformWeightsMatchUnweightedSystem)
{
  std::mt19937_64 rng(8);
  const Problem p = random_problem(rng, 12, 2);
  const Matrix gram = stein::ksd_gram(p.x, p.s, se, p.sigma2);
  const Vector h = oracle::random_vector(rng, 12);
  const auto out = stein::solve_phi(gram, h, detail::uniform_weights(12), 1e-2);
  EXPECT_TRUE(out.used_cholesky);
  Matrix system = gram / 12.0;
  system.diagonal().array() += 1e-2;
  const Vector h0 = h.array() - h.mean();
  EXPECT_LT((out.phi - system.llt().solve(h0)).norm(), 1e-10 * h0.norm());
}

TEST(SolvePhi, WeightedSystemSolvedByLu)
{
  std::mt19937_64 rng(8);
  const Problem p = random_problem(rng, 10, 2);
  const Matrix gram = stein::ksd_gram(p.x, p.s, se, p.sigma2);
  const Vector h = oracle::random_vector(rng, 10);
  Vector w = oracle::random_vector(rng, 10).cwiseAbs();
  w /= w.sum();
  const auto out = stein::solve_phi(gram, h, w, 1e-2);
  EXPECT_FALSE(out.used_cholesky);
  const Vector h0 = h.array() - w.dot(h);
  const Vector lhs = gram * w.asDiagonal() * out.phi + 1e-2 * out.phi;
  EXPECT_LT((lhs - h0).norm(), 1e-8 * (1.0 + h0.norm()));
}

// Property: residual contract holds across random ensembles and weights.
TEST(SteinProperty, SolveResidualWithinTolerance)
{
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(2, 60), dim(1, 5);
  std::uniform_real_distribution<double> log_lambda(-6.0, 0.0);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = size(rng);
    const Problem p = random_problem(rng, n, dim(rng));
    const Matrix gram = stein::ksd_gram(p.x, p.s, se, p.sigma2);
    const Vector h = oracle::random_vector(rng, n, 3.0);
    Vector w = detail::uniform_weights(n);
    if (trial % 2) {
      w = oracle::random_vector(rng, n).cwiseAbs();
      w /= w.sum();
    }
    const double lambda = std::pow(10.0, log_lambda(rng));
    const auto out = stein::solve_phi(gram, h, w, lambda);
    const Vector h0 = h.array() - w.dot(h);
    Matrix system = gram * w.asDiagonal();
    system.diagonal().array() += lambda;
    const double residual = (system * out.phi - h0).norm();
    EXPECT_LE(residual, 1e-8 * (1.0 + h0.norm()));
    EXPECT_NEAR(residual, out.residual_norm, 1e-12 * (1.0 + h0.norm()));
  }
}

// Property: the solved coefficients minimize the regularized regression
// objective over the representer span.
TEST(SteinProperty, TikhonovOptimality)
{
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<int> size(2, 5), dim(1, 2);
  std::uniform_real_distribution<double> log_scale(-4.0, 0.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = size(rng);
    const Problem p = random_problem(rng, n, dim(rng));
    const Matrix gram = stein::ksd_gram(p.x, p.s, se, p.sigma2);
    const Vector h = oracle::random_vector(rng, n);
    const double lambda = 1e-2;
    const auto out =
      stein::solve_phi(gram, h, detail::uniform_weights(n), lambda);
    const Vector h0 = h.array() - h.mean();
    const double best = tikhonov_objective(gram, h0, out.phi, lambda);
    for (int k = 0; k < 1000; ++k) {
      const Vector candidate =
        out.phi +
        std::pow(10.0, log_scale(rng)) * oracle::random_vector(rng, n);
      EXPECT_LE(best, tikhonov_objective(gram, h0, candidate, lambda) *
                        (1.0 + 1e-9));
    }
  }
}

TEST(Velocity, Examples)
{
  std::mt19937_64 rng(2);
  const Problem p = random_problem(rng, 6, 2);
  const Vector w = detail::uniform_weights(6);
  EXPECT_EQ(
    stein::velocity(p.x, p.x, p.s, Vector::Zero(6), w, se, p.sigma2).norm(),
    0.0);

  const Matrix x1 = p.x.topRows(1), s1 = p.s.topRows(1);
  const Matrix v1 =
    stein::velocity(x1, x1, s1, Vector::Constant(1, 2.5), Vector::Ones(1), se,
                    0.7);
  EXPECT_LT((v1 - 2.5 * s1).norm(), 1e-15);

  const Vector phi = oracle::random_vector(rng, 6);
  const Matrix eval = oracle::random_matrix(rng, 4, 2);
  const Matrix once = stein::velocity(eval, p.x, p.s, phi, w, se, p.sigma2);
  const Matrix twice =
    stein::velocity(eval, p.x, p.s, 2.0 * phi, w, se, p.sigma2);
  EXPECT_LT((twice - 2.0 * once).norm(), 1e-14 * (1.0 + once.norm()));
}

TEST(Velocity, MatchesPointwiseDefinition)
{
  std::mt19937_64 rng(21);
  const Problem p = random_problem(rng, 5, 3);
  const Vector phi = oracle::random_vector(rng, 5);
  Vector w = oracle::random_vector(rng, 5).cwiseAbs();
  w /= w.sum();
  const Matrix eval = oracle::random_matrix(rng, 3, 3);
  const Matrix v = stein::velocity(eval, p.x, p.s, phi, w, se, p.sigma2);
  for (Eigen::Index m = 0; m < eval.rows(); ++m) {
    Vector expected = Vector::Zero(3);
    const Vector x = eval.row(m).transpose();
    for (Eigen::Index j = 0; j < 5; ++j) {
      const Vector xj = p.x.row(j).transpose();
      expected += w(j) * phi(j) *
                  (kernel::eval(se, p.sigma2, x, xj) * p.s.row(j).transpose() +
                   kernel::grad_y(se, p.sigma2, x, xj));
    }
    EXPECT_LT((v.row(m).transpose() - expected).norm(), 1e-13);
  }
}

// The velocity solves the discretized Stein equation: applying the Stein
// operator (finite-difference divergence) at each particle reproduces
// Xi diag(w) phi, which the solve matched to h0 - lambda phi.
TEST(Velocity, SatisfiesRegularizedSteinEquation)
{
  std::mt19937_64 rng(31);
  for (const auto& cfg : { se, imq }) {
    const Problem p = random_problem(rng, 8, 2);
    const double s2 = kernel::resolve_bandwidth(cfg, p.x);
    const Matrix gram = stein::ksd_gram(p.x, p.s, cfg, s2);
    const Vector h = oracle::random_vector(rng, 8);
    const Vector w = detail::uniform_weights(8);
    const double lambda = 1e-2;
    const auto out = stein::solve_phi(gram, h, w, lambda);

    const ScoreField field = [&](const Vector& x) -> Vector {
      return stein::velocity(x.transpose(), p.x, p.s, out.phi, w, cfg, s2)
        .row(0)
        .transpose();
    };
    const auto divergence = [&](const Vector& x) {
      return oracle::fd_jacobian(field, x, 1e-5).trace();
    };
    const Vector h0 = h.array() - h.mean();
    for (Eigen::Index i = 0; i < 8; ++i) {
      const Vector xi = p.x.row(i).transpose();
      const Vector si = p.s.row(i).transpose();
      const double applied = stein::stein_apply(
        [&](const Vector&) { return si; }, field, divergence, xi);
      EXPECT_NEAR(applied, h0(i) - lambda * out.phi(i), 1e-6);
    }
  }
}

TEST(Ksd, SingleAtomEqualsDiagonalKernel)
{
  Matrix x(1, 2);
  x << 0.5, -1.0;
  const double value = stein::ksd(x, Vector::Ones(1), standard_normal_score());
  // IMQ at coincidence: div term d, plus |s|^2
  EXPECT_DOUBLE_EQ(value, 2.0 + 1.25);
}

TEST(Ksd, ExactSamplesScoreLowerThanShiftedOnes)
{
  std::mt19937_64 rng(123);
  const Matrix exact = oracle::random_matrix(rng, 500, 2);
  const Matrix shifted = oracle::random_matrix(rng, 500, 2).array() + 2.0;
  const Vector w = detail::uniform_weights(500);
  const double good = stein::ksd(exact, w, standard_normal_score());
  const double bad = stein::ksd(shifted, w, standard_normal_score());
  EXPECT_GE(good, 0.0);
  EXPECT_LT(good, bad);
}

TEST(Ksd, NonNegativeOnRandomEnsembles)
{
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = oracle::random_matrix(rng, 15, 3);
    Vector w = oracle::random_vector(rng, 15).cwiseAbs();
    w /= w.sum();
    EXPECT_GE(stein::ksd(x, w, gaussian_score(1.0, 0.5)), 0.0);
  }
}
