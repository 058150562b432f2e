#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace steinflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

//! Vector field R^d -> R^d, typically a score function grad log pi.
using ScoreField = std::function<Vector(const Vector&)>;

class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error
{
public:
  using Error::Error;
};

class UnsupportedKernelError : public Error
{
public:
  using Error::Error;
};

class DegenerateEnsembleError : public Error
{
public:
  using Error::Error;
};

class InvalidArgument : public Error
{
public:
  using Error::Error;
};

//! Failure of the linear solve or a non-finite state. Carries the outer step
//! index when raised from inside a run (-1 otherwise).
class NumericalError : public Error
{
public:
  explicit NumericalError(const std::string& what, long step = -1)
    : Error(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what)
    , step_(step)
  {}

  long step() const { return step_; }

private:
  long step_;
};

namespace detail {

inline void
check_same_dim(Eigen::Index a, Eigen::Index b, const char* what)
{
  if (a != b) {
    throw DimensionError(std::string(what) + ": dimension mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

inline Vector
uniform_weights(Eigen::Index n)
{
  return Vector::Constant(n, 1.0 / static_cast<double>(n));
}

} // namespace detail

//! Upper bound on threads used by the pairwise assembly loops. Zero means the
//! OpenMP runtime default.
inline void
set_num_threads(int threads)
{
#ifdef _OPENMP
  if (threads > 0)
    omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

} // namespace steinflow
