#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "abcd/evaluation.hpp"

namespace abcd::plot {

enum class PlotKind { Scatter, IntervalStrip, EllipseOutline };

std::string to_string(PlotKind k);
PlotKind plot_kind_from_string(const std::string& s);

/// Boundary of the set projected onto components (a, b), as a 2 x n matrix of
/// points center + radius * L u_k with L L^T = V_ab and u_k on the unit circle.
/// A one-dimensional set gives its two interval endpoints as a 1 x 2 matrix.
MatrixXd ellipse_outline(const ConfidenceSet& set, Index a = 0, Index b = 1, Index n_points = 256);

/// record,component,truth,estimate
std::string scatter_csv(const eval::MethodResult& r);
/// record,component,truth,estimate,lower,upper,covered
std::string interval_strip_csv(const eval::MethodResult& r);
/// record,point,<comp_a>,<comp_b> for the first `max_records` records; every
/// component pair of a D > 2 set is emitted with pair columns a,b.
std::string ellipse_csv(const eval::MethodResult& r, Index max_records, Index n_points = 256);

/// Writes <method>_<kind>.csv under `dir` and returns the path. Ellipse
/// outlines need a method that produced confidence sets.
std::filesystem::path emit_plot_data(const eval::MethodResult& r, PlotKind kind, const std::filesystem::path& dir,
                                     Index max_records = 20);

}  // namespace abcd::plot
