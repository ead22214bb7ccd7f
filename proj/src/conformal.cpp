#include "abcd/conformal.hpp"

#include <algorithm>
#include <cmath>

namespace abcd {

namespace {
const char* kModule = "conformal";

// Variance of component j as the one-dimensional pipeline would see it.
double marginal_variance(const DropoutPrediction& pred, Index j, UncertaintyKind kind) {
  return uncertainty_matrix(marginal_prediction(pred, j), kind).matrix(0, 0);
}

void check_delta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw Error(kModule, "miscoverage delta must lie in (0, 1)");
}
}  // namespace

DropoutPrediction marginal_prediction(const DropoutPrediction& pred, Index j) {
  if (j < 0 || j >= pred.dim()) throw Error(kModule, "component index out of range");
  DropoutPrediction m;
  m.mean = pred.mean.segment(j, 1);
  m.epistemic_cov = pred.epistemic_cov.block(j, j, 1, 1);
  m.aleatoric = pred.aleatoric.segment(j, 1);
  m.overall_cov = pred.overall_cov.block(j, j, 1, 1);
  m.passes = pred.passes;
  return m;
}

Index conformal_rank(Index n_cal, double delta) {
  check_delta(delta);
  if (n_cal < 1) throw Error(kModule, "calibration set is empty");
  const double x = static_cast<double>(n_cal + 1) * (1.0 - delta);
  return static_cast<Index>(std::ceil(x - 1e-9));
}

Index minimal_calibration_size(double delta) {
  check_delta(delta);
  Index n = static_cast<Index>(std::ceil(1.0 / delta)) - 1;
  n = std::max<Index>(n, 1);
  while (n > 1 && conformal_rank(n - 1, delta) <= n - 1) --n;
  while (conformal_rank(n, delta) > n) ++n;
  return n;
}

ConformalCalibrator calibrate(std::vector<double> scores, double delta, UncertaintyKind kind) {
  check_delta(delta);
  const Index n = static_cast<Index>(scores.size());
  if (n < 1) throw Error(kModule, "calibration set is empty");
  for (double s : scores) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw Error(kModule, "calibration scores must be finite and >= 0");
  }
  const Index rank = conformal_rank(n, delta);
  if (rank > n) {
    throw Error(kModule, "delta " + std::to_string(delta) + " too small for N_cal = " + std::to_string(n) +
                             " (rank " + std::to_string(rank) + " exceeds N_cal; minimal feasible N_cal is " +
                             std::to_string(minimal_calibration_size(delta)) + ")");
  }
  std::sort(scores.begin(), scores.end());
  ConformalCalibrator cal;
  cal.delta = delta;
  cal.n_cal = n;
  cal.rank = rank;
  cal.q_hat = scores[static_cast<std::size_t>(rank - 1)];
  cal.scores = std::move(scores);
  cal.kind = kind;
  return cal;
}

ConfidenceSet::ConfidenceSet(VectorXd center, MatrixXd shape, double radius)
    : center_(std::move(center)), shape_(std::move(shape)), radius_(radius), factor_(shape_) {
  if (shape_.rows() != center_.size() || shape_.cols() != center_.size()) {
    throw Error(kModule, "confidence set shape does not match its center");
  }
  if (factor_.info() != Eigen::Success) throw Error(kModule, "confidence set shape is not positive definite");
  if (!(radius_ >= 0.0)) throw Error(kModule, "confidence set radius must be >= 0");
}

double ConfidenceSet::score(const VectorXd& theta) const {
  if (theta.size() != center_.size()) throw Error(kModule, "dimension mismatch in set membership");
  return mahalanobis_score<double>(factor_, theta, center_);
}

Interval ConfidenceSet::projection(Index j) const {
  const double half = radius_ * std::sqrt(shape_(j, j));
  return {center_(j) - half, center_(j) + half};
}

Interval ConfidenceSet::interval() const {
  if (dim() != 1) throw Error(kModule, "interval form only exists in one dimension");
  return projection(0);
}

ConfidenceSet confidence_set(const DropoutPrediction& pred, UncertaintyKind kind, const ConformalCalibrator& cal) {
  if (kind != cal.kind) throw Error(kModule, "calibrator was built with a different uncertainty kind");
  return {pred.mean, uncertainty_matrix(pred, kind).matrix, cal.q_hat};
}

std::vector<Interval> marginal_intervals(const DropoutPrediction& pred, UncertaintyKind kind,
                                         std::span<const ConformalCalibrator> per_component) {
  if (static_cast<Index>(per_component.size()) != pred.dim()) {
    throw Error(kModule, "need one calibrator per component");
  }
  std::vector<Interval> out;
  for (Index j = 0; j < pred.dim(); ++j) {
    const auto& cal = per_component[static_cast<std::size_t>(j)];
    if (cal.kind != kind) throw Error(kModule, "calibrator was built with a different uncertainty kind");
    const double half = cal.q_hat * std::sqrt(marginal_variance(pred, j, kind));
    out.push_back({pred.mean(j) - half, pred.mean(j) + half});
  }
  return out;
}

std::pair<double, double> coverage_bounds(Index n_cal, double delta) {
  if (n_cal < 1) throw Error(kModule, "N_cal must be >= 1");
  return {1.0 - delta, 1.0 - delta + 1.0 / static_cast<double>(n_cal + 1)};
}

std::vector<double> joint_scores(std::span<const DropoutPrediction> preds, const MatrixXd& thetas,
                                 UncertaintyKind kind) {
  if (static_cast<Index>(preds.size()) != thetas.cols()) throw Error(kModule, "one prediction per calibration record");
  std::vector<double> s(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    s[i] = score(thetas.col(static_cast<Index>(i)), preds[i].mean, uncertainty_matrix(preds[i], kind).matrix);
  }
  return s;
}

std::vector<double> component_scores(std::span<const DropoutPrediction> preds, const MatrixXd& thetas, Index j,
                                     UncertaintyKind kind) {
  if (static_cast<Index>(preds.size()) != thetas.cols()) throw Error(kModule, "one prediction per calibration record");
  std::vector<double> s(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    s[i] = interval_score(thetas(j, static_cast<Index>(i)), preds[i].mean(j), marginal_variance(preds[i], j, kind));
  }
  return s;
}

nlohmann::json calibrator_to_json(const ConformalCalibrator& cal, int histogram_bins) {
  nlohmann::json hist = nlohmann::json::array();
  const double top = cal.scores.empty() ? 0.0 : cal.scores.back();
  if (histogram_bins > 0 && top > 0.0) {
    std::vector<Index> counts(static_cast<std::size_t>(histogram_bins), 0);
    for (double s : cal.scores) {
      auto b = static_cast<std::size_t>(s / top * histogram_bins);
      counts[std::min(b, counts.size() - 1)]++;
    }
    for (int b = 0; b < histogram_bins; ++b) {
      hist.push_back({{"lower", top * b / histogram_bins},
                      {"upper", top * (b + 1) / histogram_bins},
                      {"count", counts[static_cast<std::size_t>(b)]}});
    }
  }
  return {{"delta", cal.delta}, {"n_cal", cal.n_cal},     {"rank", cal.rank},  {"q_hat", cal.q_hat},
          {"kind", to_string(cal.kind)}, {"scores", cal.scores}, {"histogram", hist}};
}

ConformalCalibrator calibrator_from_json(const nlohmann::json& j) {
  try {
    return calibrate(j.at("scores").get<std::vector<double>>(), j.at("delta").get<double>(),
                     uncertainty_kind_from_string(j.at("kind").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("malformed calibrator: ") + e.what());
  }
}

}  // namespace abcd
