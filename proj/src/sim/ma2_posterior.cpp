#include "abcd/sim/ma2_posterior.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "abcd/parallel.hpp"

namespace abcd::sim {

double ma2_log_likelihood(const VectorXd& x, const Ma2Params& theta) {
  const Index p = x.size();
  if (p < 1) throw Error("simulators", "MA(2) series is empty");
  const double g0 = ma2_autocovariance(theta, 0);
  const double g1 = ma2_autocovariance(theta, 1);
  const double g2 = ma2_autocovariance(theta, 2);

  // Rows of L carry (l2, l1, l0) = L(i, i-2), L(i, i-1), L(i, i).
  double prev_l0 = 0.0, prev_l1 = 0.0;  // row i-1
  double prev2_l0 = 0.0;                // row i-2
  double y1 = 0.0, y2 = 0.0;            // solved values at i-1, i-2
  double log_det = 0.0, quad = 0.0;
  for (Index i = 0; i < p; ++i) {
    const double l2 = i >= 2 ? g2 / prev2_l0 : 0.0;
    const double l1 = i >= 1 ? (g1 - l2 * prev_l1) / prev_l0 : 0.0;
    const double d = g0 - l2 * l2 - l1 * l1;
    if (!(d > 0.0)) return -std::numeric_limits<double>::infinity();
    const double l0 = std::sqrt(d);
    const double y = (x(i) - l1 * y1 - l2 * y2) / l0;
    log_det += std::log(l0);
    quad += y * y;
    y2 = y1;
    y1 = y;
    prev2_l0 = prev_l0;
    prev_l0 = l0;
    prev_l1 = l1;
  }
  return -log_det - 0.5 * quad - 0.5 * static_cast<double>(p) * std::log(2.0 * std::numbers::pi);
}

Ma2Posterior ma2_exact_posterior(const VectorXd& x, Index resolution) {
  return ma2_exact_posterior([&x](const Ma2Params& t) { return ma2_log_likelihood(x, t); }, resolution);
}

Ma2Posterior ma2_exact_posterior(const Ma2LogLikelihood& log_likelihood, Index resolution) {
  if (resolution < 2) throw Error("simulators", "posterior grid resolution must be >= 2");
  Ma2Posterior post;
  post.theta1_axis.resize(resolution);
  post.theta2_axis.resize(resolution);
  for (Index i = 0; i < resolution; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(resolution);
    post.theta1_axis(i) = -2.0 + 4.0 * u;
    post.theta2_axis(i) = -1.0 + 2.0 * u;
  }
  const double neg_inf = -std::numeric_limits<double>::infinity();
  MatrixXd ll = MatrixXd::Constant(resolution, resolution, neg_inf);
  parallel_for(static_cast<std::size_t>(resolution), [&](std::size_t ii) {
    const auto i = static_cast<Index>(ii);
    for (Index j = 0; j < resolution; ++j) {
      const Ma2Params t{post.theta1_axis(i), post.theta2_axis(j)};
      if (t.in_support()) ll(i, j) = log_likelihood(t);
    }
  });
  const double top = ll.maxCoeff();
  if (!std::isfinite(top)) throw Error("simulators", "posterior grid has no finite likelihood");
  // Eigen's vectorized exp clamps its argument, so -inf would map to a denormal.
  post.mass = (ll.array() == neg_inf).select(0.0, (ll.array() - top).exp()).matrix();
  post.mass /= post.mass.sum();
  post.mean(0) = post.mass.rowwise().sum().dot(post.theta1_axis);
  post.mean(1) = post.mass.colwise().sum().transpose().dot(post.theta2_axis);
  return post;
}

}  // namespace abcd::sim
