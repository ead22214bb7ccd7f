#include "abcd/plot_data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace abcd::plot {

namespace {

const char* kModule = "plot";

void check_result(const eval::MethodResult& r) {
  const Index d = r.truths.rows(), n = r.truths.cols();
  if (r.estimates.rows() != d || r.estimates.cols() != n) throw Error(kModule, "estimates do not match truths");
}

std::ostringstream csv_stream() {
  std::ostringstream out;
  out.precision(17);
  return out;
}

}  // namespace

std::string to_string(PlotKind k) {
  switch (k) {
    case PlotKind::Scatter: return "scatter";
    case PlotKind::IntervalStrip: return "intervals";
    case PlotKind::EllipseOutline: return "ellipses";
  }
  return "?";
}

PlotKind plot_kind_from_string(const std::string& s) {
  for (PlotKind k : {PlotKind::Scatter, PlotKind::IntervalStrip, PlotKind::EllipseOutline}) {
    if (to_string(k) == s) return k;
  }
  throw Error(kModule, "unknown plot kind '" + s + "' (expected scatter, intervals or ellipses)");
}

MatrixXd ellipse_outline(const ConfidenceSet& set, Index a, Index b, Index n_points) {
  const Index d = set.dim();
  if (d == 1) {
    const Interval iv = set.interval();
    MatrixXd ends(1, 2);
    ends << iv.lower, iv.upper;
    return ends;
  }
  if (a < 0 || b < 0 || a >= d || b >= d || a == b) throw Error(kModule, "ellipse components out of range");
  if (n_points < 3) throw Error(kModule, "an outline needs at least 3 points");
  Eigen::Matrix2d v;
  v << set.shape()(a, a), set.shape()(a, b), set.shape()(b, a), set.shape()(b, b);
  const Eigen::Matrix2d l = Eigen::LLT<Eigen::Matrix2d>(v).matrixL();
  const Eigen::Vector2d c(set.center()(a), set.center()(b));
  MatrixXd pts(2, n_points);
  for (Index k = 0; k < n_points; ++k) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_points);
    pts.col(k) = c + set.radius() * l * Eigen::Vector2d(std::cos(t), std::sin(t));
  }
  return pts;
}

std::string scatter_csv(const eval::MethodResult& r) {
  check_result(r);
  auto out = csv_stream();
  out << "# " << r.method << ": true parameter against point estimate, one row per record and component\n"
      << "record,component,truth,estimate\n";
  for (Index i = 0; i < r.truths.cols(); ++i)
    for (Index j = 0; j < r.truths.rows(); ++j)
      out << i << ',' << j + 1 << ',' << r.truths(j, i) << ',' << r.estimates(j, i) << '\n';
  return out.str();
}

std::string interval_strip_csv(const eval::MethodResult& r) {
  check_result(r);
  if (r.lower.rows() != r.truths.rows() || r.lower.cols() != r.truths.cols() || r.upper.rows() != r.truths.rows() ||
      r.upper.cols() != r.truths.cols()) {
    throw Error(kModule, "method " + r.method + " has no per-component intervals");
  }
  auto out = csv_stream();
  out << "# " << r.method << ": per-component interval [lower, upper]; covered is 1 when it holds the truth\n"
      << "record,component,truth,estimate,lower,upper,covered\n";
  for (Index i = 0; i < r.truths.cols(); ++i)
    for (Index j = 0; j < r.truths.rows(); ++j) {
      const double t = r.truths(j, i);
      out << i << ',' << j + 1 << ',' << t << ',' << r.estimates(j, i) << ',' << r.lower(j, i) << ','
          << r.upper(j, i) << ',' << (r.lower(j, i) <= t && t <= r.upper(j, i) ? 1 : 0) << '\n';
    }
  return out.str();
}

std::string ellipse_csv(const eval::MethodResult& r, Index max_records, Index n_points) {
  check_result(r);
  if (r.sets.empty()) throw Error(kModule, "method " + r.method + " produced no confidence sets");
  const Index n = std::min<Index>(max_records, static_cast<Index>(r.sets.size()));
  auto out = csv_stream();
  if (r.truths.rows() == 1) {
    out << "# " << r.method << ": one-dimensional sets, two outline points per record (interval endpoints)\n"
        << "record,point,theta\n";
    for (Index i = 0; i < n; ++i) {
      const MatrixXd e = ellipse_outline(r.sets[static_cast<std::size_t>(i)]);
      out << i << ",0," << e(0, 0) << '\n' << i << ",1," << e(0, 1) << '\n';
    }
    return out.str();
  }
  out << "# " << r.method << ": projection of each confidence set onto components (a, b), " << n_points
      << " boundary points\n"
      << "record,a,b,point,x,y\n";
  const Index d = r.truths.rows();
  for (Index i = 0; i < n; ++i)
    for (Index a = 0; a < d; ++a)
      for (Index b = a + 1; b < d; ++b) {
        const MatrixXd e = ellipse_outline(r.sets[static_cast<std::size_t>(i)], a, b, n_points);
        for (Index k = 0; k < e.cols(); ++k)
          out << i << ',' << a + 1 << ',' << b + 1 << ',' << k << ',' << e(0, k) << ',' << e(1, k) << '\n';
      }
  return out.str();
}

std::filesystem::path emit_plot_data(const eval::MethodResult& r, PlotKind kind, const std::filesystem::path& dir,
                                     Index max_records) {
  std::string body;
  switch (kind) {
    case PlotKind::Scatter: body = scatter_csv(r); break;
    case PlotKind::IntervalStrip: body = interval_strip_csv(r); break;
    case PlotKind::EllipseOutline: body = ellipse_csv(r, max_records); break;
  }
  std::filesystem::create_directories(dir);
  const auto file = dir / (r.method + "_" + to_string(kind) + ".csv");
  std::ofstream out(file);
  out << body;
  if (!out) throw Error(kModule, "cannot write " + file.string());
  return file;
}

}  // namespace abcd::plot
