#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "abcd/core.hpp"

namespace abcd::sim {

enum class ModelTag { Ma2, Grf, LotkaVolterra };

std::string to_string(ModelTag model);
ModelTag model_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// MA(2):  X_j = Z_j + theta1 Z_{j-1} + theta2 Z_{j-2}, Z i.i.d. N(0, 1)
// ---------------------------------------------------------------------------

struct Ma2Params {
  double theta1 = 0.0;
  double theta2 = 0.0;

  /// Identifiability triangle: -2 < t1 < 2, t1 + t2 > -1, t1 - t2 < 1.
  bool in_support() const {
    return -2.0 < theta1 && theta1 < 2.0 && theta1 + theta2 > -1.0 && theta1 - theta2 < 1.0;
  }
};

/// Uniform on the triangle by rejection from [-2, 2] x [-1, 1].
Ma2Params sample_ma2_prior(Rng& rng);

/// p observations driven by p + 2 innovations Z_{-1}, Z_0, ..., Z_p.
VectorXd simulate_ma2(const Ma2Params& theta, Index p, std::uint64_t seed);

/// Autocovariance gamma_k of the MA(2) process.
double ma2_autocovariance(const Ma2Params& theta, Index lag);

// ---------------------------------------------------------------------------
// Gaussian random field with covariance exp(-|z1 - z2|^2 / theta^2)
// ---------------------------------------------------------------------------

enum class GrfMethod {
  Separable,  // Cholesky of the 1-D factor; the 2-D covariance is its Kronecker square
  Dense,      // Cholesky of the full G^2 x G^2 covariance
};

struct GrfConfig {
  Index grid = 32;
  double extent = 5.0;  // domain [0, extent]^2
  GrfMethod method = GrfMethod::Separable;
};

inline bool grf_in_support(double theta) { return theta > 0.0 && theta < 1.0; }

/// Grid coordinate of index i along one axis.
double grf_coordinate(const GrfConfig& cfg, Index i);

/// Covariance between grid points (i1, j1) and (i2, j2).
double grf_covariance(const GrfConfig& cfg, double theta, Index i1, Index j1, Index i2, Index j2);

/// Full covariance over pixels in row-major order.
MatrixXd grf_covariance_matrix(const GrfConfig& cfg, double theta);

/// Zero-mean field on a G x G grid, row-major (pixel (i, j) at i * G + j).
MatrixXd simulate_grf(double theta, const GrfConfig& cfg, std::uint64_t seed);

/// Lower Cholesky factor with the smallest diagonal jitter in {1e-12, ..., 1e-6}
/// that makes the matrix factorizable; throws otherwise.
MatrixXd jittered_cholesky(const MatrixXd& cov, const std::string& context);

// ---------------------------------------------------------------------------
// Lotka-Volterra Markov jump process
//   prey growth     (X1, X2) -> (X1 + 1, X2)      rate c1 X1
//   predation       (X1, X2) -> (X1 - 1, X2 + 1)  rate c2 X1 X2
//   predator death  (X1, X2) -> (X1, X2 - 1)      rate c3 X2
// ---------------------------------------------------------------------------

struct LvParams {
  double c1 = 1.0;
  double c2 = 0.005;
  double c3 = 0.6;
};

inline constexpr double kLvLogLower = -6.0;
inline constexpr double kLvLogUpper = 2.0;

bool lv_in_support(const LvParams& c);

/// Independent U[-6, 2] on log c_i.
LvParams sample_lv_prior(Rng& rng);

enum class LvMethod { ExactGillespie, TauLeap };

struct LvOptions {
  std::int64_t prey0 = 50;
  std::int64_t predator0 = 100;
  double obs_interval = 2.0;
  Index n_obs = 19;  // times 0, 2, ..., 36
  double tau = 0.01;
  std::int64_t max_events = 10'000'000;
};

struct LvTrajectory {
  std::vector<std::int64_t> prey;
  std::vector<std::int64_t> predator;

  Index size() const { return static_cast<Index>(prey.size()); }
  /// Channels-last layout {time, species}.
  VectorXd to_vector() const;
  static LvTrajectory from_vector(const VectorXd& v);
};

/// Thrown when a trajectory needs more than max_events transitions.
class EventBudgetExceeded : public Error {
 public:
  using Error::Error;
};

std::array<double, 3> lv_hazards(const LvParams& c, std::int64_t prey, std::int64_t predator);

/// Returns nullopt when either species dies out before the last observation.
std::optional<LvTrajectory> simulate_lv(const LvParams& c, LvMethod method, std::uint64_t seed,
                                        const LvOptions& opts = {});

// ---------------------------------------------------------------------------
// Model-generic helpers
// ---------------------------------------------------------------------------

Index parameter_dim(ModelTag model);
bool in_prior_support(ModelTag model, const VectorXd& theta);
VectorXd sample_prior(ModelTag model, std::uint64_t seed);

}  // namespace abcd::sim
