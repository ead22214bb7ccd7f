#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "abcd/abc/summaries.hpp"
#include "abcd/core.hpp"
#include "abcd/nn/network.hpp"
#include "abcd/sim/reference_table.hpp"

namespace abcd::abc {

struct AcceptedSet {
  MatrixXd thetas;               // D x k, closest first
  std::vector<double> distances;  // ascending
  std::vector<Index> indices;     // table indices of the accepted records
  double alpha = 1.0;

  Index size() const { return thetas.cols(); }
};

/// Number kept for a table of n records: floor(n * alpha), with a small
/// tolerance so that alpha = k / n keeps k.
Index accepted_count(Index n, double alpha);

/// Keeps the floor(N alpha) smallest distances; ties go to the lower index.
AcceptedSet accept_nearest(const MatrixXd& thetas, std::span<const double> distances, double alpha);

AcceptedSet rejection_abc(const sim::ReferenceTable& table, const VectorXd& observed, SummaryKind summary, double alpha);

/// Same, with the table summaries computed once and reused.
MatrixXd table_summaries(const sim::ReferenceTable& table, SummaryKind summary);
AcceptedSet rejection_abc(const sim::ReferenceTable& table, const MatrixXd& summaries, const VectorXd& observed,
                          SummaryKind summary, double alpha);

enum class CnnDistance {
  TrueTheta,   // prediction for the observation vs the record's generating theta
  Prediction,  // prediction for the observation vs prediction for the record
};

std::string to_string(CnnDistance mode);
CnnDistance cnn_distance_from_string(const std::string& s);

/// ABC with network point predictions as summaries. table_predictions is only
/// read in Prediction mode.
AcceptedSet abc_cnn(const MatrixXd& table_thetas, const MatrixXd& table_predictions,
                    const VectorXd& observed_prediction, double alpha, CnnDistance mode = CnnDistance::Prediction);

/// Deterministic-mode predictions of a model for samples (columns) of a table.
MatrixXd point_predictions(const nn::TrainedModel& model, sim::ModelTag tag, const MatrixXd& data);

AcceptedSet abc_cnn(const sim::ReferenceTable& table, const VectorXd& observed, const nn::TrainedModel& model,
                    double alpha, CnnDistance mode = CnnDistance::Prediction);

struct PosteriorSummary {
  VectorXd mean;
  VectorXd lower;  // delta / 2 quantile per component
  VectorXd upper;  // 1 - delta / 2 quantile
};

/// Quantile by linear interpolation between order statistics (position q (n - 1)).
double empirical_quantile(std::vector<double> values, double q);

PosteriorSummary posterior_summaries_from_accepted(const AcceptedSet& set, double delta);

nlohmann::json accepted_to_json(const AcceptedSet& set);

}  // namespace abcd::abc
