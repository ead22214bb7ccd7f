#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "abcd/core.hpp"
#include "abcd/mc_dropout.hpp"

namespace abcd {

/// Mahalanobis residual sqrt((theta - center)^T V^-1 (theta - center)),
/// computed through the Cholesky factor of V.
template <typename Scalar>
Scalar mahalanobis_score(const Eigen::LLT<Mat<Scalar>>& factor, const Vec<Scalar>& theta, const Vec<Scalar>& center) {
  const Vec<Scalar> w = factor.matrixL().solve(theta - center);
  return std::sqrt(w.squaredNorm());
}

template <typename Scalar>
Scalar mahalanobis_score(const Vec<Scalar>& theta, const Vec<Scalar>& center, const Mat<Scalar>& shape) {
  if (theta.size() != center.size() || shape.rows() != center.size() || shape.cols() != center.size()) {
    throw Error("conformal", "score dimension mismatch");
  }
  const Eigen::LLT<Mat<Scalar>> factor(shape);
  if (factor.info() != Eigen::Success) throw Error("conformal", "score shape matrix is not positive definite");
  return mahalanobis_score<Scalar>(factor, theta, center);
}

inline double score(const VectorXd& theta, const VectorXd& center, const MatrixXd& shape) {
  return mahalanobis_score<double>(theta, center, shape);
}

/// One-dimensional score |theta - center| / sqrt(variance).
inline double interval_score(double theta, double center, double variance) {
  if (!(variance > 0.0)) throw Error("conformal", "variance must be positive");
  return std::abs(theta - center) / std::sqrt(variance);
}

/// Rank ceil((N + 1)(1 - delta)), 1-based.
Index conformal_rank(Index n_cal, double delta);

/// Smallest N whose conformal rank does not exceed N.
Index minimal_calibration_size(double delta);

struct ConformalCalibrator {
  double delta = 0.05;
  Index n_cal = 0;
  std::vector<double> scores;  // ascending
  Index rank = 0;
  double q_hat = 0.0;
  UncertaintyKind kind = UncertaintyKind::Overall;
};

ConformalCalibrator calibrate(std::vector<double> scores, double delta, UncertaintyKind kind = UncertaintyKind::Overall);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double x) const { return lower <= x && x <= upper; }
  double length() const { return upper - lower; }
};

/// Closed ellipsoid {theta : score(theta) <= radius}.
class ConfidenceSet {
 public:
  ConfidenceSet(VectorXd center, MatrixXd shape, double radius);

  const VectorXd& center() const { return center_; }
  const MatrixXd& shape() const { return shape_; }
  double radius() const { return radius_; }
  Index dim() const { return center_.size(); }

  double score(const VectorXd& theta) const;
  bool contains(const VectorXd& theta) const { return score(theta) <= radius_; }
  /// Extent of the set along component j: center_j +- radius * sqrt(V_jj).
  Interval projection(Index j) const;
  /// The set itself when D == 1.
  Interval interval() const;

 private:
  VectorXd center_;
  MatrixXd shape_;
  double radius_;
  Eigen::LLT<MatrixXd> factor_;
};

ConfidenceSet confidence_set(const DropoutPrediction& pred, UncertaintyKind kind, const ConformalCalibrator& cal);

/// Component j of a prediction as a one-dimensional prediction.
DropoutPrediction marginal_prediction(const DropoutPrediction& pred, Index j);

/// Per-component intervals theta_j +- q_j * sqrt(V_jj) from one 1-D calibrator per component.
std::vector<Interval> marginal_intervals(const DropoutPrediction& pred, UncertaintyKind kind,
                                         std::span<const ConformalCalibrator> per_component);

/// Marginal coverage band [1 - delta, 1 - delta + 1 / (N + 1)].
std::pair<double, double> coverage_bounds(Index n_cal, double delta);

/// Scores of a calibration set for the joint ellipsoid.
std::vector<double> joint_scores(std::span<const DropoutPrediction> preds, const MatrixXd& thetas, UncertaintyKind kind);
/// Scores of a calibration set for component j alone, using the variance of
/// the marginal prediction.
std::vector<double> component_scores(std::span<const DropoutPrediction> preds, const MatrixXd& thetas, Index j,
                                     UncertaintyKind kind);

nlohmann::json calibrator_to_json(const ConformalCalibrator& cal, int histogram_bins = 20);
ConformalCalibrator calibrator_from_json(const nlohmann::json& j);

}  // namespace abcd
