#include "abcd/abc/rejection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "abcd/parallel.hpp"

namespace abcd::abc {

namespace {
const char* kModule = "abc-baselines";
constexpr Index kPredictionChunk = 512;
}  // namespace

Index accepted_count(Index n, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(kModule, "tolerance alpha must lie in (0, 1]");
  const auto k = static_cast<Index>(std::floor(static_cast<double>(n) * alpha + 1e-9));
  if (k < 1) {
    throw Error(kModule, "floor(N * alpha) is 0 for N = " + std::to_string(n) + ", alpha = " + std::to_string(alpha));
  }
  return std::min(k, n);
}

AcceptedSet accept_nearest(const MatrixXd& thetas, std::span<const double> distances, double alpha) {
  const auto n = static_cast<Index>(distances.size());
  if (thetas.cols() != n) throw Error(kModule, "one distance per reference record");
  for (Index j = 0; j < n; ++j) {
    if (std::isnan(distances[static_cast<std::size_t>(j)])) {
      throw Error(kModule, "distance of record " + std::to_string(j) + " is NaN");
    }
  }
  const Index k = accepted_count(n, alpha);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
    const double da = distances[static_cast<std::size_t>(a)], db = distances[static_cast<std::size_t>(b)];
    return da < db || (da == db && a < b);
  });
  AcceptedSet out;
  out.alpha = alpha;
  out.thetas.resize(thetas.rows(), k);
  for (Index i = 0; i < k; ++i) {
    const Index j = order[static_cast<std::size_t>(i)];
    out.thetas.col(i) = thetas.col(j);
    out.distances.push_back(distances[static_cast<std::size_t>(j)]);
    out.indices.push_back(j);
  }
  return out;
}

MatrixXd table_summaries(const sim::ReferenceTable& table, SummaryKind summary) {
  if (table.size() == 0) throw Error(kModule, "reference table is empty");
  const Index dim = summary_statistics(summary, table.records.front().x, table.data_shape).size();
  MatrixXd out(dim, table.size());
  parallel_for(static_cast<std::size_t>(table.size()), [&](std::size_t j) {
    try {
      out.col(static_cast<Index>(j)) = summary_statistics(summary, table.records[j].x, table.data_shape);
    } catch (const Error& e) {
      throw Error(kModule, "summary of record " + std::to_string(j) + " failed: " + e.what());
    }
  });
  return out;
}

AcceptedSet rejection_abc(const sim::ReferenceTable& table, const MatrixXd& summaries, const VectorXd& observed,
                          SummaryKind summary, double alpha) {
  if (summaries.cols() != table.size()) throw Error(kModule, "one summary column per reference record");
  const VectorXd s_obs = summary_statistics(summary, observed, table.data_shape);
  std::vector<double> d(static_cast<std::size_t>(table.size()));
  for (Index j = 0; j < table.size(); ++j) d[static_cast<std::size_t>(j)] = summary_distance(summary, s_obs, summaries.col(j));
  return accept_nearest(table.thetas(), d, alpha);
}

AcceptedSet rejection_abc(const sim::ReferenceTable& table, const VectorXd& observed, SummaryKind summary,
                          double alpha) {
  return rejection_abc(table, table_summaries(table, summary), observed, summary, alpha);
}

std::string to_string(CnnDistance mode) { return mode == CnnDistance::TrueTheta ? "true_theta" : "prediction"; }

CnnDistance cnn_distance_from_string(const std::string& s) {
  if (s == "true_theta") return CnnDistance::TrueTheta;
  if (s == "prediction") return CnnDistance::Prediction;
  throw Error(kModule, "unknown ABC-CNN distance mode '" + s + "'");
}

AcceptedSet abc_cnn(const MatrixXd& table_thetas, const MatrixXd& table_predictions,
                    const VectorXd& observed_prediction, double alpha, CnnDistance mode) {
  const MatrixXd& ref = mode == CnnDistance::TrueTheta ? table_thetas : table_predictions;
  if (ref.rows() != observed_prediction.size()) throw Error(kModule, "prediction dimension mismatch");
  if (ref.cols() != table_thetas.cols()) throw Error(kModule, "one prediction per reference record");
  std::vector<double> d(static_cast<std::size_t>(ref.cols()));
  for (Index j = 0; j < ref.cols(); ++j) d[static_cast<std::size_t>(j)] = (ref.col(j) - observed_prediction).norm();
  return accept_nearest(table_thetas, d, alpha);
}

MatrixXd point_predictions(const nn::TrainedModel& model, sim::ModelTag tag, const MatrixXd& data) {
  const Index n = data.cols();
  MatrixXd out(model.spec.output_dim, n);
  const Index chunks = (n + kPredictionChunk - 1) / kPredictionChunk;
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
    const Index start = static_cast<Index>(c) * kPredictionChunk;
    const Index len = std::min(kPredictionChunk, n - start);
    const MatrixXd inputs = sim::network_inputs(tag, data.middleCols(start, len));
    out.middleCols(start, len) = nn::forward_batch(model, inputs, nn::Mode::Deterministic).mean;
  });
  return out;
}

AcceptedSet abc_cnn(const sim::ReferenceTable& table, const VectorXd& observed, const nn::TrainedModel& model,
                    double alpha, CnnDistance mode) {
  const VectorXd obs = point_predictions(model, table.model, observed).col(0);
  const MatrixXd thetas = table.thetas();
  const MatrixXd preds = mode == CnnDistance::Prediction ? point_predictions(model, table.model, table.data()) : MatrixXd{};
  return abc_cnn(thetas, preds, obs, alpha, mode);
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(kModule, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

PosteriorSummary posterior_summaries_from_accepted(const AcceptedSet& set, double delta) {
  if (set.size() == 0) throw Error(kModule, "accepted set is empty");
  PosteriorSummary out;
  out.mean = set.thetas.rowwise().mean();
  out.lower.resize(set.thetas.rows());
  out.upper.resize(set.thetas.rows());
  for (Index i = 0; i < set.thetas.rows(); ++i) {
    std::vector<double> v(set.thetas.row(i).begin(), set.thetas.row(i).end());
    out.lower(i) = empirical_quantile(v, delta / 2.0);
    out.upper(i) = empirical_quantile(std::move(v), 1.0 - delta / 2.0);
  }
  return out;
}

nlohmann::json accepted_to_json(const AcceptedSet& set) {
  nlohmann::json thetas = nlohmann::json::array();
  for (Index i = 0; i < set.size(); ++i) {
    thetas.push_back(std::vector<double>(set.thetas.col(i).data(), set.thetas.col(i).data() + set.thetas.rows()));
  }
  return {{"alpha", set.alpha}, {"indices", set.indices}, {"distances", set.distances}, {"thetas", thetas}};
}

}  // namespace abcd::abc
