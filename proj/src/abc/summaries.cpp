#include "abcd/abc/summaries.hpp"

#include <cmath>

namespace abcd::abc {

namespace {
const char* kModule = "abc-baselines";
constexpr Index kMoranLags = 5;
}  // namespace

std::string to_string(SummaryKind kind) {
  switch (kind) {
    case SummaryKind::Ma2Autocov: return "ma2_autocov";
    case SummaryKind::GrfMoranVariogram: return "grf_moran_variogram";
    case SummaryKind::LvRaw: return "lv_raw";
  }
  return "unknown";
}

SummaryKind summary_kind_from_string(const std::string& s) {
  if (s == "ma2_autocov") return SummaryKind::Ma2Autocov;
  if (s == "grf_moran_variogram") return SummaryKind::GrfMoranVariogram;
  if (s == "lv_raw") return SummaryKind::LvRaw;
  throw Error(kModule, "unknown summary kind '" + s + "'");
}

SummaryKind default_summary(sim::ModelTag model) {
  switch (model) {
    case sim::ModelTag::Ma2: return SummaryKind::Ma2Autocov;
    case sim::ModelTag::Grf: return SummaryKind::GrfMoranVariogram;
    case sim::ModelTag::LotkaVolterra: return SummaryKind::LvRaw;
  }
  return SummaryKind::LvRaw;
}

Eigen::Vector2d ma2_summaries(const VectorXd& x) {
  const Index p = x.size();
  if (p < 3) throw Error(kModule, "MA(2) summaries need at least 3 observations, got " + std::to_string(p));
  const double t1 = x.tail(p - 1).dot(x.head(p - 1));
  const double t2 = x.tail(p - 2).dot(x.head(p - 2));
  return {t1, t2};
}

double morans_i(const MatrixXd& field, Index lag) {
  const Index rows = field.rows(), cols = field.cols();
  if (lag < 1) throw Error(kModule, "Moran's I lag must be >= 1");
  if (rows <= lag || cols <= lag) throw Error(kModule, "grid too small for Moran's I at lag " + std::to_string(lag));
  if (field.maxCoeff() == field.minCoeff()) throw Error(kModule, "Moran's I is undefined for a constant field");
  const MatrixXd z = field.array() - field.mean();
  double num = 0.0;
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      double s = 0.0;
      int n = 0;
      if (i >= lag) { s += z(i - lag, j); ++n; }
      if (i + lag < rows) { s += z(i + lag, j); ++n; }
      if (j >= lag) { s += z(i, j - lag); ++n; }
      if (j + lag < cols) { s += z(i, j + lag); ++n; }
      num += z(i, j) * s / n;
    }
  }
  // Row-standardized weights sum to N, so the N / W factor is 1.
  return num / z.squaredNorm();
}

VectorXd semivariogram(const MatrixXd& field, const VariogramBins& binning) {
  if (binning.bins < 1 || !(binning.max_distance > 0.0)) throw Error(kModule, "invalid semivariogram binning");
  const Index rows = field.rows(), cols = field.cols();
  const double width = binning.max_distance / static_cast<double>(binning.bins);
  VectorXd sum = VectorXd::Zero(binning.bins);
  std::vector<double> count(static_cast<std::size_t>(binning.bins), 0.0);
  const auto reach = static_cast<Index>(std::floor(binning.max_distance));
  // Each unordered pair once: offsets with di > 0, or di == 0 and dj > 0.
  for (Index di = 0; di <= std::min(reach, rows - 1); ++di) {
    for (Index dj = -std::min(reach, cols - 1); dj <= std::min(reach, cols - 1); ++dj) {
      if (di == 0 && dj <= 0) continue;
      const double d = std::sqrt(static_cast<double>(di * di + dj * dj));
      if (d > binning.max_distance) continue;
      const Index b = std::min<Index>(static_cast<Index>(std::ceil(d / width - 1e-12)) - 1, binning.bins - 1);
      const Index j0 = std::max<Index>(0, -dj), j1 = std::min(cols, cols - dj);
      const Index i1 = rows - di;
      if (i1 <= 0 || j1 <= j0) continue;
      const auto a = field.block(0, j0, i1, j1 - j0);
      const auto c = field.block(di, j0 + dj, i1, j1 - j0);
      sum(b) += (a - c).squaredNorm();
      count[static_cast<std::size_t>(b)] += static_cast<double>(i1 * (j1 - j0));
    }
  }
  VectorXd out(binning.bins);
  for (Index b = 0; b < binning.bins; ++b) {
    const double n = count[static_cast<std::size_t>(b)];
    if (n == 0.0) throw Error(kModule, "semivariogram bin " + std::to_string(b) + " has no pixel pairs");
    out(b) = 0.5 * sum(b) / n;
  }
  return out;
}

VectorXd grf_summaries(const MatrixXd& field, const VariogramBins& binning) {
  VectorXd out(kMoranLags + binning.bins);
  for (Index k = 1; k <= kMoranLags; ++k) out(k - 1) = morans_i(field, k);
  out.tail(binning.bins) = semivariogram(field, binning);
  return out;
}

double lv_raw_distance(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) throw Error(kModule, "trajectory lengths differ");
  return (a - b).squaredNorm();
}

MatrixXd field_from_vector(const VectorXd& x, Index grid) {
  if (x.size() != grid * grid) throw Error(kModule, "field size does not match the grid");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(x.data(), grid, grid);
}

VectorXd summary_statistics(SummaryKind kind, const VectorXd& x, const std::vector<Index>& data_shape) {
  switch (kind) {
    case SummaryKind::Ma2Autocov: return ma2_summaries(x);
    case SummaryKind::GrfMoranVariogram:
      if (data_shape.empty()) throw Error(kModule, "GRF summaries need the grid shape");
      return grf_summaries(field_from_vector(x, data_shape.front()));
    case SummaryKind::LvRaw: return x;
  }
  return x;
}

double summary_distance(SummaryKind kind, const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) throw Error(kModule, "summary dimensions differ");
  if (kind == SummaryKind::LvRaw) return lv_raw_distance(a, b);
  return (a - b).norm();
}

}  // namespace abcd::abc
