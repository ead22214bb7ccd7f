#pragma once

#include <functional>

#include "abcd/core.hpp"
#include "abcd/sim/models.hpp"

namespace abcd::sim {

/// Exact Gaussian log-likelihood of an MA(2) series. The covariance is
/// banded Toeplitz, so a bandwidth-2 Cholesky costs O(p).
double ma2_log_likelihood(const VectorXd& x, const Ma2Params& theta);

struct Ma2Posterior {
  Eigen::Vector2d mean;
  VectorXd theta1_axis;  // cell centres
  VectorXd theta2_axis;
  MatrixXd mass;  // mass(i, j) at (theta1_axis(i), theta2_axis(j)); zero outside the triangle
};

using Ma2LogLikelihood = std::function<double(const Ma2Params&)>;

/// Grid posterior under the uniform triangle prior. Cells are the
/// resolution x resolution centres of [-2, 2] x [-1, 1] that fall inside.
Ma2Posterior ma2_exact_posterior(const VectorXd& x, Index resolution = 400);
Ma2Posterior ma2_exact_posterior(const Ma2LogLikelihood& log_likelihood, Index resolution = 400);

}  // namespace abcd::sim
