#include "abcd/sim/models.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Cholesky>

namespace abcd::sim {

namespace {
const char* kModule = "simulators";
[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }
}  // namespace

std::string to_string(ModelTag model) {
  switch (model) {
    case ModelTag::Ma2: return "ma2";
    case ModelTag::Grf: return "grf";
    case ModelTag::LotkaVolterra: return "lv";
  }
  return "?";
}

ModelTag model_from_string(const std::string& s) {
  if (s == "ma2") return ModelTag::Ma2;
  if (s == "grf") return ModelTag::Grf;
  if (s == "lv") return ModelTag::LotkaVolterra;
  fail("unknown model '" + s + "' (expected ma2, grf or lv)");
}

// --- MA(2) -----------------------------------------------------------------

Ma2Params sample_ma2_prior(Rng& rng) {
  std::uniform_real_distribution<double> t1(-2.0, 2.0), t2(-1.0, 1.0);
  for (;;) {
    Ma2Params p{t1(rng), t2(rng)};
    if (p.in_support()) return p;
  }
}

VectorXd simulate_ma2(const Ma2Params& theta, Index p, std::uint64_t seed) {
  if (!theta.in_support()) fail("MA(2) parameters outside the identifiability triangle");
  if (p < 3) fail("MA(2) series length must be >= 3");
  Rng rng(seed);
  VectorXd z(p + 2);
  for (Index i = 0; i < p + 2; ++i) z(i) = standard_normal(rng);
  VectorXd x(p);
  for (Index j = 0; j < p; ++j) x(j) = z(j + 2) + theta.theta1 * z(j + 1) + theta.theta2 * z(j);
  return x;
}

double ma2_autocovariance(const Ma2Params& t, Index lag) {
  switch (lag) {
    case 0: return 1.0 + t.theta1 * t.theta1 + t.theta2 * t.theta2;
    case 1: return t.theta1 + t.theta1 * t.theta2;
    case 2: return t.theta2;
    default: return 0.0;
  }
}

// --- Gaussian random field -------------------------------------------------

double grf_coordinate(const GrfConfig& cfg, Index i) {
  return cfg.extent * static_cast<double>(i) / static_cast<double>(cfg.grid - 1);
}

double grf_covariance(const GrfConfig& cfg, double theta, Index i1, Index j1, Index i2, Index j2) {
  const double dx = (grf_coordinate(cfg, i1) - grf_coordinate(cfg, i2)) / theta;
  const double dy = (grf_coordinate(cfg, j1) - grf_coordinate(cfg, j2)) / theta;
  return std::exp(-(dx * dx + dy * dy));
}

MatrixXd grf_covariance_matrix(const GrfConfig& cfg, double theta) {
  const Index g = cfg.grid, n = g * g;
  MatrixXd k(n, n);
  for (Index a = 0; a < n; ++a)
    for (Index b = 0; b < n; ++b) k(a, b) = grf_covariance(cfg, theta, a / g, a % g, b / g, b % g);
  return k;
}

MatrixXd jittered_cholesky(const MatrixXd& cov, const std::string& context) {
  for (double jitter = 1e-12; jitter <= 1.01e-6; jitter *= 10.0) {
    MatrixXd shifted = cov;
    shifted.diagonal().array() += jitter;
    Eigen::LLT<MatrixXd> llt(shifted);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  fail("covariance factorization failed after maximum jitter (" + context + ")");
}

MatrixXd simulate_grf(double theta, const GrfConfig& cfg, std::uint64_t seed) {
  if (!(theta > 0.0)) fail("GRF range parameter must be positive");
  if (cfg.grid < 2) fail("GRF grid size must be >= 2");
  const Index g = cfg.grid;
  const std::string context = "theta=" + std::to_string(theta) + ", G=" + std::to_string(g);
  Rng rng(seed);
  MatrixXd z(g, g);
  // Row-major fill so both methods consume the stream in pixel order.
  for (Index i = 0; i < g; ++i)
    for (Index j = 0; j < g; ++j) z(i, j) = standard_normal(rng);
  if (cfg.method == GrfMethod::Separable) {
    MatrixXd k1(g, g);
    for (Index a = 0; a < g; ++a) {
      for (Index b = 0; b < g; ++b) {
        const double d = (grf_coordinate(cfg, a) - grf_coordinate(cfg, b)) / theta;
        k1(a, b) = std::exp(-d * d);
      }
    }
    const MatrixXd l = jittered_cholesky(k1, context);
    return l * z * l.transpose();
  }
  const MatrixXd l = jittered_cholesky(grf_covariance_matrix(cfg, theta), context);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> zr = z;
  const VectorXd flat = l * Eigen::Map<const VectorXd>(zr.data(), g * g);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> field =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), g, g);
  return field;
}

// --- Lotka-Volterra --------------------------------------------------------

bool lv_in_support(const LvParams& c) {
  for (double v : {c.c1, c.c2, c.c3}) {
    if (!(v > 0.0)) return false;
    const double l = std::log(v);
    if (l < kLvLogLower - 1e-12 || l > kLvLogUpper + 1e-12) return false;
  }
  return true;
}

LvParams sample_lv_prior(Rng& rng) {
  std::uniform_real_distribution<double> u(kLvLogLower, kLvLogUpper);
  const double a = u(rng), b = u(rng), c = u(rng);
  return {std::exp(a), std::exp(b), std::exp(c)};
}

VectorXd LvTrajectory::to_vector() const {
  VectorXd v(2 * size());
  for (Index t = 0; t < size(); ++t) {
    v(2 * t) = static_cast<double>(prey[static_cast<std::size_t>(t)]);
    v(2 * t + 1) = static_cast<double>(predator[static_cast<std::size_t>(t)]);
  }
  return v;
}

LvTrajectory LvTrajectory::from_vector(const VectorXd& v) {
  if (v.size() % 2 != 0) fail("trajectory vector must hold (prey, predator) pairs");
  LvTrajectory tr;
  for (Index t = 0; t < v.size() / 2; ++t) {
    tr.prey.push_back(static_cast<std::int64_t>(std::llround(v(2 * t))));
    tr.predator.push_back(static_cast<std::int64_t>(std::llround(v(2 * t + 1))));
  }
  return tr;
}

std::array<double, 3> lv_hazards(const LvParams& c, std::int64_t prey, std::int64_t predator) {
  const double x1 = static_cast<double>(prey), x2 = static_cast<double>(predator);
  return {c.c1 * x1, c.c2 * x1 * x2, c.c3 * x2};
}

namespace {

std::optional<LvTrajectory> simulate_exact(const LvParams& c, std::uint64_t seed, const LvOptions& opts) {
  Rng rng(seed);
  LvTrajectory tr;
  std::int64_t x1 = opts.prey0, x2 = opts.predator0;
  tr.prey.push_back(x1);
  tr.predator.push_back(x2);
  double t = 0.0;
  std::int64_t events = 0;
  Index next = 1;
  std::exponential_distribution<double> expo(1.0);
  while (next < opts.n_obs) {
    const auto h = lv_hazards(c, x1, x2);
    const double total = h[0] + h[1] + h[2];
    const double dt = total > 0.0 ? expo(rng) / total : std::numeric_limits<double>::infinity();
    while (next < opts.n_obs && t + dt > opts.obs_interval * static_cast<double>(next)) {
      tr.prey.push_back(x1);
      tr.predator.push_back(x2);
      ++next;
    }
    if (next >= opts.n_obs) break;
    t += dt;
    if (++events > opts.max_events) {
      throw EventBudgetExceeded(kModule, "LV trajectory exceeded " + std::to_string(opts.max_events) + " events");
    }
    const double u = open_uniform(rng) * total;
    if (u < h[0]) {
      ++x1;
    } else if (u < h[0] + h[1]) {
      --x1;
      ++x2;
    } else {
      --x2;
    }
    if (x1 == 0 || x2 == 0) return std::nullopt;
  }
  return tr;
}

std::optional<LvTrajectory> simulate_tau_leap(const LvParams& c, std::uint64_t seed, const LvOptions& opts) {
  if (!(opts.tau > 0.0)) fail("tau-leap step must be positive");
  const auto steps_per_obs = static_cast<std::int64_t>(std::llround(opts.obs_interval / opts.tau));
  if (steps_per_obs < 1) fail("tau-leap step larger than the observation interval");
  Rng rng(seed);
  LvTrajectory tr;
  std::int64_t x1 = opts.prey0, x2 = opts.predator0;
  tr.prey.push_back(x1);
  tr.predator.push_back(x2);
  std::int64_t events = 0;
  auto poisson = [&rng](double mean) -> std::int64_t {
    if (mean <= 0.0) return 0;
    std::poisson_distribution<std::int64_t> dist(mean);
    return dist(rng);
  };
  for (Index obs = 1; obs < opts.n_obs; ++obs) {
    for (std::int64_t s = 0; s < steps_per_obs; ++s) {
      const auto h = lv_hazards(c, x1, x2);
      if (h[0] + h[1] + h[2] > static_cast<double>(opts.max_events)) {
        throw EventBudgetExceeded(kModule, "LV trajectory exceeded " + std::to_string(opts.max_events) + " events");
      }
      const std::int64_t births = poisson(h[0] * opts.tau);
      const std::int64_t predations = poisson(h[1] * opts.tau);
      const std::int64_t deaths = poisson(h[2] * opts.tau);
      events += births + predations + deaths;
      if (events > opts.max_events) {
        throw EventBudgetExceeded(kModule, "LV trajectory exceeded " + std::to_string(opts.max_events) + " events");
      }
      x1 = std::max<std::int64_t>(0, x1 + births - predations);
      x2 = std::max<std::int64_t>(0, x2 + predations - deaths);
      if (x1 == 0 || x2 == 0) return std::nullopt;
    }
    tr.prey.push_back(x1);
    tr.predator.push_back(x2);
  }
  return tr;
}

}  // namespace

std::optional<LvTrajectory> simulate_lv(const LvParams& c, LvMethod method, std::uint64_t seed,
                                        const LvOptions& opts) {
  if (!(c.c1 >= 0.0 && c.c2 >= 0.0 && c.c3 >= 0.0)) fail("LV rates must be non-negative");
  if (opts.max_events <= 0) fail("max_events must be positive");
  if (opts.n_obs < 1) fail("need at least one observation");
  return method == LvMethod::ExactGillespie ? simulate_exact(c, seed, opts) : simulate_tau_leap(c, seed, opts);
}

// --- generic ---------------------------------------------------------------

Index parameter_dim(ModelTag model) {
  switch (model) {
    case ModelTag::Ma2: return 2;
    case ModelTag::Grf: return 1;
    case ModelTag::LotkaVolterra: return 3;
  }
  return 0;
}

bool in_prior_support(ModelTag model, const VectorXd& theta) {
  if (theta.size() != parameter_dim(model)) return false;
  switch (model) {
    case ModelTag::Ma2: return Ma2Params{theta(0), theta(1)}.in_support();
    case ModelTag::Grf: return grf_in_support(theta(0));
    case ModelTag::LotkaVolterra: return lv_in_support({theta(0), theta(1), theta(2)});
  }
  return false;
}

VectorXd sample_prior(ModelTag model, std::uint64_t seed) {
  Rng rng(seed);
  switch (model) {
    case ModelTag::Ma2: {
      const auto p = sample_ma2_prior(rng);
      return (VectorXd(2) << p.theta1, p.theta2).finished();
    }
    case ModelTag::Grf: {
      // Open interval (0, 1).
      return VectorXd::Constant(1, open_uniform(rng));
    }
    case ModelTag::LotkaVolterra: {
      const auto c = sample_lv_prior(rng);
      return (VectorXd(3) << c.c1, c.c2, c.c3).finished();
    }
  }
  fail("unknown model");
}

}  // namespace abcd::sim
