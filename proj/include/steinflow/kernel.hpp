#pragma once

#include "steinflow/common.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

namespace steinflow {

enum class KernelFamily
{
  squared_exponential,
  inverse_multiquadric,
};

struct FixedBandwidth
{
  double sigma2 = 1.0;
};

struct MedianHeuristic
{};

using BandwidthPolicy = std::variant<MedianHeuristic, FixedBandwidth>;

//! Kernel family plus bandwidth policy. The inverse multiquadric kernel is
//! (1 + |x - y|^2)^(-1/2) and ignores the bandwidth.
struct KernelConfig
{
  KernelFamily family = KernelFamily::squared_exponential;
  BandwidthPolicy bandwidth = MedianHeuristic{};

  static KernelConfig squared_exponential(double sigma2)
  {
    return { KernelFamily::squared_exponential, FixedBandwidth{ sigma2 } };
  }
  static KernelConfig squared_exponential_median()
  {
    return { KernelFamily::squared_exponential, MedianHeuristic{} };
  }
  static KernelConfig inverse_multiquadric()
  {
    return { KernelFamily::inverse_multiquadric, FixedBandwidth{ 1.0 } };
  }

  bool uses_median() const
  {
    return family == KernelFamily::squared_exponential &&
           std::holds_alternative<MedianHeuristic>(bandwidth);
  }
};

inline void
validate(const KernelConfig& cfg)
{
  if (const auto* fixed = std::get_if<FixedBandwidth>(&cfg.bandwidth)) {
    if (!(fixed->sigma2 > 0.0) || !std::isfinite(fixed->sigma2))
      throw InvalidArgument("kernel bandwidth sigma2 must be positive");
  }
}

namespace kernel {

namespace detail {

inline void
check_sigma2(const KernelConfig& cfg, double sigma2)
{
  if (cfg.family == KernelFamily::squared_exponential &&
      !(sigma2 > 0.0 && std::isfinite(sigma2)))
    throw InvalidArgument("kernel: sigma2 must be positive and finite");
}

inline void
require_se(const KernelConfig& cfg, const char* what)
{
  if (cfg.family != KernelFamily::squared_exponential)
    throw UnsupportedKernelError(std::string(what) +
                                 " is only available for the "
                                 "squared-exponential kernel");
}

} // namespace detail

//! Radial profile of the kernel as a function of r2 = |x - y|^2.
//! value = k, radial = G with grad_y k = G (x - y), and cross = div_x grad_y k.
struct RadialTerms
{
  double value;
  double radial;
  double cross;
};

inline RadialTerms
radial_terms(const KernelConfig& cfg, double sigma2, double r2, Eigen::Index dim)
{
  const double d = static_cast<double>(dim);
  if (cfg.family == KernelFamily::squared_exponential) {
    const double k = std::exp(-r2 / (2.0 * sigma2));
    return { k, k / sigma2, k * (d / sigma2 - r2 / (sigma2 * sigma2)) };
  }
  const double k = 1.0 / std::sqrt(1.0 + r2);
  const double k3 = k * k * k;
  return { k, k3, d * k3 - 3.0 * r2 * k3 * k * k };
}

template<class DX, class DY>
double
eval(const KernelConfig& cfg,
     double sigma2,
     const Eigen::MatrixBase<DX>& x,
     const Eigen::MatrixBase<DY>& y)
{
  steinflow::detail::check_same_dim(x.size(), y.size(), "kernel::eval");
  detail::check_sigma2(cfg, sigma2);
  return radial_terms(cfg, sigma2, (x - y).squaredNorm(), x.size()).value;
}

//! Gradient of k(x, y) with respect to its second argument.
template<class DX, class DY>
Vector
grad_y(const KernelConfig& cfg,
       double sigma2,
       const Eigen::MatrixBase<DX>& x,
       const Eigen::MatrixBase<DY>& y)
{
  steinflow::detail::check_same_dim(x.size(), y.size(), "kernel::grad_y");
  detail::check_sigma2(cfg, sigma2);
  const Vector diff = x - y;
  return radial_terms(cfg, sigma2, diff.squaredNorm(), x.size()).radial * diff;
}

template<class DX, class DY>
Vector
grad_x(const KernelConfig& cfg,
       double sigma2,
       const Eigen::MatrixBase<DX>& x,
       const Eigen::MatrixBase<DY>& y)
{
  return -grad_y(cfg, sigma2, x, y);
}

//! sum_i d/dx_i d/dy_i k(x, y)
template<class DX, class DY>
double
cross_div(const KernelConfig& cfg,
          double sigma2,
          const Eigen::MatrixBase<DX>& x,
          const Eigen::MatrixBase<DY>& y)
{
  steinflow::detail::check_same_dim(x.size(), y.size(), "kernel::cross_div");
  detail::check_sigma2(cfg, sigma2);
  return radial_terms(cfg, sigma2, (x - y).squaredNorm(), x.size()).cross;
}

//! Hessian of k(x, y) in x. Squared-exponential only.
template<class DX, class DY>
Matrix
hess_x(const KernelConfig& cfg,
       double sigma2,
       const Eigen::MatrixBase<DX>& x,
       const Eigen::MatrixBase<DY>& y)
{
  detail::require_se(cfg, "kernel::hess_x");
  steinflow::detail::check_same_dim(x.size(), y.size(), "kernel::hess_x");
  detail::check_sigma2(cfg, sigma2);
  const Vector diff = x - y;
  const double k = std::exp(-diff.squaredNorm() / (2.0 * sigma2));
  Matrix h = (k / (sigma2 * sigma2)) * (diff * diff.transpose());
  h.diagonal().array() -= k / sigma2;
  return h;
}

//! grad_x of cross_div(x, y). Squared-exponential only.
template<class DX, class DY>
Vector
grad_x_cross_div(const KernelConfig& cfg,
                 double sigma2,
                 const Eigen::MatrixBase<DX>& x,
                 const Eigen::MatrixBase<DY>& y)
{
  detail::require_se(cfg, "kernel::grad_x_cross_div");
  steinflow::detail::check_same_dim(
    x.size(), y.size(), "kernel::grad_x_cross_div");
  detail::check_sigma2(cfg, sigma2);
  const Vector diff = x - y;
  const double r2 = diff.squaredNorm();
  const double k = std::exp(-r2 / (2.0 * sigma2));
  const double d = static_cast<double>(x.size());
  return (-k / (sigma2 * sigma2) * (d + 2.0 - r2 / sigma2)) * diff;
}

//! sigma^2 = med^2 / (2 ln N), med the median distance over distinct pairs.
inline double
median_bandwidth(const Matrix& positions)
{
  const Eigen::Index n = positions.rows();
  if (n < 2)
    throw DegenerateEnsembleError("median_bandwidth: need at least 2 particles");
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      dist.push_back((positions.row(i) - positions.row(j)).norm());

  const std::size_t m = dist.size();
  const auto upper = dist.begin() + static_cast<std::ptrdiff_t>(m / 2);
  std::nth_element(dist.begin(), upper, dist.end());
  double med = *upper;
  if (m % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), upper);
    med = 0.5 * (lower + med);
  }
  if (!(med > 0.0)) {
    const double largest = *std::max_element(dist.begin(), dist.end());
    if (!(largest > 0.0))
      throw DegenerateEnsembleError(
        "median_bandwidth: all particles coincide");
    // more than half the pairs coincide; fall back to the positive distances
    std::vector<double> positive;
    for (double v : dist)
      if (v > 0.0)
        positive.push_back(v);
    std::sort(positive.begin(), positive.end());
    const std::size_t p = positive.size();
    med = p % 2 ? positive[p / 2]
                : 0.5 * (positive[p / 2 - 1] + positive[p / 2]);
  }
  return med * med / (2.0 * std::log(static_cast<double>(n)));
}

//! Bandwidth actually used for an ensemble under the configured policy.
inline double
resolve_bandwidth(const KernelConfig& cfg, const Matrix& positions)
{
  if (cfg.family == KernelFamily::inverse_multiquadric)
    return 1.0;
  if (const auto* fixed = std::get_if<FixedBandwidth>(&cfg.bandwidth))
    return fixed->sigma2;
  return median_bandwidth(positions);
}

//! Pairwise kernel quantities between the rows of a (M x d) and b (N x d).
struct PairMatrices
{
  Matrix sqdist;
  Matrix value;
  Matrix radial;
  Matrix cross;
};

inline PairMatrices
pair_matrices(const KernelConfig& cfg,
              double sigma2,
              const Matrix& a,
              const Matrix& b,
              bool with_cross = true)
{
  steinflow::detail::check_same_dim(a.cols(), b.cols(), "kernel::pair_matrices");
  detail::check_sigma2(cfg, sigma2);
  const Eigen::Index m = a.rows();
  const Eigen::Index n = b.rows();
  PairMatrices out{ Matrix(m, n), Matrix(m, n), Matrix(m, n),
                    with_cross ? Matrix(m, n) : Matrix() };
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double r2 = (a.row(i) - b.row(j)).squaredNorm();
      const RadialTerms t = radial_terms(cfg, sigma2, r2, a.cols());
      out.sqdist(i, j) = r2;
      out.value(i, j) = t.value;
      out.radial(i, j) = t.radial;
      if (with_cross)
        out.cross(i, j) = t.cross;
    }
  }
  return out;
}

} // namespace kernel
} // namespace steinflow
