#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "abcd/conformal.hpp"
#include "abcd/core.hpp"

namespace abcd::eval {

/// sum_i |theta_ij - est_ij| / sum_i |theta_ij|. Columns are test records.
double nmae(const MatrixXd& truths, const MatrixXd& estimates, Index j);

/// sqrt(mean_i (theta_ij - est_ij)^2).
double sd_abs_err(const MatrixXd& truths, const MatrixXd& estimates, Index j);

double empirical_coverage(const MatrixXd& truths, std::span<const ConfidenceSet> sets);
double empirical_coverage(const VectorXd& truths, std::span<const Interval> intervals);

struct Region {
  std::string label;
  std::function<bool(double)> contains;
};

/// Regions (-inf, t0), [t0, t1), ..., [t_last, inf) on one component.
std::vector<Region> threshold_regions(const std::string& name, const std::vector<double>& thresholds);

struct RegionMetrics {
  std::string label;
  Index count = 0;
  double coverage = 0.0;
  double mean_length = 0.0;
};

/// Metrics of intervals within each region of the truth values. The regions
/// must partition the test set.
std::vector<RegionMetrics> regional_breakdown(const VectorXd& truths, std::span<const Interval> intervals,
                                              std::span<const Region> regions);

/// Everything a method produces on a test set.
struct MethodResult {
  std::string method;
  MatrixXd truths;     // D x N
  MatrixXd estimates;  // D x N
  MatrixXd lower;      // per-component interval bounds, D x N
  MatrixXd upper;
  std::vector<ConfidenceSet> sets;  // joint sets, empty for the ABC methods

  Index dim() const { return truths.rows(); }
  Index size() const { return truths.cols(); }
  std::vector<Interval> intervals(Index j) const;
};

struct EvalReport {
  std::string method;
  double delta = 0.05;
  Index n_test = 0;
  std::vector<double> nmae;
  std::vector<double> sd;
  std::vector<double> coverage;
  std::vector<double> mean_length;
  std::optional<double> joint_coverage;
  std::vector<double> projection_length;  // mean 2 q sqrt(V_jj) of the joint sets
  Index region_component = -1;
  std::vector<RegionMetrics> regions;
};

EvalReport evaluate(const MethodResult& result, double delta);
void add_regional_breakdown(EvalReport& report, const MethodResult& result, Index component,
                            std::span<const Region> regions);

/// Count-weighted mean of regional coverages.
double weighted_regional_coverage(const EvalReport& report);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

/// Rows are metrics, columns are methods; NA where a metric does not apply.
std::string reports_to_csv(std::span<const EvalReport> reports);
/// Regional table, one block of rows per region.
std::string regional_csv(std::span<const EvalReport> reports);

}  // namespace abcd::eval
