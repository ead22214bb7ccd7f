#pragma once

#include <string>
#include <vector>

#include "abcd/core.hpp"
#include "abcd/sim/models.hpp"

namespace abcd::abc {

enum class SummaryKind {
  Ma2Autocov,         // (tau1, tau2)
  GrfMoranVariogram,  // Moran's I at lags 1..5, then 15 semivariogram bins
  LvRaw,              // the trajectory itself, compared by squared distance
};

std::string to_string(SummaryKind kind);
SummaryKind summary_kind_from_string(const std::string& s);
SummaryKind default_summary(sim::ModelTag model);

/// tau1 = sum_j x_j x_{j-1}, tau2 = sum_j x_j x_{j-2}; not normalized.
Eigen::Vector2d ma2_summaries(const VectorXd& x);

/// Moran's I with row-standardized weights over the axis-aligned pixels at
/// distance exactly `lag` (up to four, clipped at the border).
double morans_i(const MatrixXd& field, Index lag);

struct VariogramBins {
  Index bins = 15;
  double max_distance = 20.0;  // pixels
};

/// Half the mean squared increment over pixel pairs in each of the equal
/// width distance bins covering (0, max_distance].
VectorXd semivariogram(const MatrixXd& field, const VariogramBins& binning = {});

/// Moran's I at lags 1..5 followed by the semivariogram.
VectorXd grf_summaries(const MatrixXd& field, const VariogramBins& binning = {});

/// Sum of squared differences over both species (no square root).
double lv_raw_distance(const VectorXd& a, const VectorXd& b);

/// Summary vector of one flattened sample.
VectorXd summary_statistics(SummaryKind kind, const VectorXd& x, const std::vector<Index>& data_shape);

/// Distance between two summary vectors: Euclidean, or squared for LvRaw.
double summary_distance(SummaryKind kind, const VectorXd& a, const VectorXd& b);

/// Reshape a row-major flattened G x G field.
MatrixXd field_from_vector(const VectorXd& x, Index grid);

}  // namespace abcd::abc
