#include "abcd/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace abcd::eval {

namespace {

const char* kModule = "evaluation";

void check_pair(const MatrixXd& truths, const MatrixXd& estimates, Index j) {
  if (truths.rows() != estimates.rows() || truths.cols() != estimates.cols()) {
    throw Error(kModule, "truths and estimates differ in shape");
  }
  if (truths.cols() == 0) throw Error(kModule, "empty test set");
  if (j < 0 || j >= truths.rows()) throw Error(kModule, "component index out of range");
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? number(*v) : "NA"; }

template <typename T>
std::optional<double> at(const std::vector<T>& v, std::size_t i) {
  if (i < v.size()) return static_cast<double>(v[i]);
  return std::nullopt;
}

}  // namespace

double nmae(const MatrixXd& truths, const MatrixXd& estimates, Index j) {
  check_pair(truths, estimates, j);
  const double den = truths.row(j).cwiseAbs().sum();
  if (!(den > 0.0)) throw Error(kModule, "NMAE denominator is zero for component " + std::to_string(j));
  return (truths.row(j) - estimates.row(j)).cwiseAbs().sum() / den;
}

double sd_abs_err(const MatrixXd& truths, const MatrixXd& estimates, Index j) {
  check_pair(truths, estimates, j);
  return std::sqrt((truths.row(j) - estimates.row(j)).squaredNorm() / static_cast<double>(truths.cols()));
}

double empirical_coverage(const MatrixXd& truths, std::span<const ConfidenceSet> sets) {
  if (static_cast<Index>(sets.size()) != truths.cols()) throw Error(kModule, "one set per test record");
  if (sets.empty()) throw Error(kModule, "empty test set");
  Index hit = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].dim() != truths.rows()) throw Error(kModule, "set dimension does not match the truths");
    hit += sets[i].contains(truths.col(static_cast<Index>(i))) ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(sets.size());
}

double empirical_coverage(const VectorXd& truths, std::span<const Interval> intervals) {
  if (static_cast<Index>(intervals.size()) != truths.size()) throw Error(kModule, "one interval per test record");
  if (intervals.empty()) throw Error(kModule, "empty test set");
  Index hit = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i) hit += intervals[i].contains(truths(static_cast<Index>(i))) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(intervals.size());
}

std::vector<Region> threshold_regions(const std::string& name, const std::vector<double>& thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i - 1] < thresholds[i])) throw Error(kModule, "region thresholds must increase");
  }
  std::vector<Region> out;
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i <= thresholds.size(); ++i) {
    const double lo = i == 0 ? -inf : thresholds[i - 1];
    const double hi = i == thresholds.size() ? inf : thresholds[i];
    std::string label;
    if (i == 0) label = name + " < " + number(hi);
    else if (i == thresholds.size()) label = number(lo) + " <= " + name;
    else label = number(lo) + " <= " + name + " < " + number(hi);
    out.push_back({label, [lo, hi](double v) { return lo <= v && v < hi; }});
  }
  return out;
}

std::vector<RegionMetrics> regional_breakdown(const VectorXd& truths, std::span<const Interval> intervals,
                                              std::span<const Region> regions) {
  if (static_cast<Index>(intervals.size()) != truths.size()) throw Error(kModule, "one interval per test record");
  std::vector<RegionMetrics> out(regions.size());
  std::vector<Index> hits(regions.size(), 0);
  std::vector<double> length(regions.size(), 0.0);
  for (std::size_t r = 0; r < regions.size(); ++r) out[r].label = regions[r].label;
  for (Index i = 0; i < truths.size(); ++i) {
    std::size_t owner = regions.size();
    for (std::size_t r = 0; r < regions.size(); ++r) {
      if (!regions[r].contains(truths(i))) continue;
      if (owner != regions.size()) throw Error(kModule, "regions overlap at test record " + std::to_string(i));
      owner = r;
    }
    if (owner == regions.size()) throw Error(kModule, "no region contains test record " + std::to_string(i));
    const Interval& iv = intervals[static_cast<std::size_t>(i)];
    out[owner].count++;
    hits[owner] += iv.contains(truths(i)) ? 1 : 0;
    length[owner] += iv.length();
  }
  for (std::size_t r = 0; r < regions.size(); ++r) {
    if (out[r].count == 0) continue;
    out[r].coverage = static_cast<double>(hits[r]) / static_cast<double>(out[r].count);
    out[r].mean_length = length[r] / static_cast<double>(out[r].count);
  }
  return out;
}

std::vector<Interval> MethodResult::intervals(Index j) const {
  std::vector<Interval> out(static_cast<std::size_t>(size()));
  for (Index i = 0; i < size(); ++i) out[static_cast<std::size_t>(i)] = {lower(j, i), upper(j, i)};
  return out;
}

EvalReport evaluate(const MethodResult& result, double delta) {
  const Index d = result.dim(), n = result.size();
  if (result.lower.rows() != d || result.lower.cols() != n || result.upper.rows() != d || result.upper.cols() != n) {
    throw Error(kModule, "interval bounds do not match the truths");
  }
  EvalReport r;
  r.method = result.method;
  r.delta = delta;
  r.n_test = n;
  for (Index j = 0; j < d; ++j) {
    r.nmae.push_back(nmae(result.truths, result.estimates, j));
    r.sd.push_back(sd_abs_err(result.truths, result.estimates, j));
    const auto iv = result.intervals(j);
    r.coverage.push_back(empirical_coverage(result.truths.row(j).transpose(), iv));
    double len = 0.0;
    for (const auto& x : iv) len += x.length();
    r.mean_length.push_back(len / static_cast<double>(n));
  }
  if (!result.sets.empty()) {
    r.joint_coverage = empirical_coverage(result.truths, result.sets);
    for (Index j = 0; j < d; ++j) {
      double len = 0.0;
      for (const auto& s : result.sets) len += s.projection(j).length();
      r.projection_length.push_back(len / static_cast<double>(n));
    }
  }
  return r;
}

void add_regional_breakdown(EvalReport& report, const MethodResult& result, Index component,
                            std::span<const Region> regions) {
  if (component < 0 || component >= result.dim()) throw Error(kModule, "region component out of range");
  const auto iv = result.intervals(component);
  report.region_component = component;
  report.regions = regional_breakdown(result.truths.row(component).transpose(), iv, regions);
}

double weighted_regional_coverage(const EvalReport& report) {
  Index total = 0;
  double hits = 0.0;
  for (const auto& r : report.regions) {
    total += r.count;
    hits += r.coverage * static_cast<double>(r.count);
  }
  if (total == 0) throw Error(kModule, "report has no regional breakdown");
  return hits / static_cast<double>(total);
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j{{"method", r.method},
                   {"delta", r.delta},
                   {"n_test", r.n_test},
                   {"nmae", r.nmae},
                   {"sd", r.sd},
                   {"coverage", r.coverage},
                   {"mean_length", r.mean_length},
                   {"joint_coverage", r.joint_coverage ? nlohmann::json(*r.joint_coverage) : nlohmann::json(nullptr)},
                   {"projection_length", r.projection_length}};
  if (!r.regions.empty()) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& g : r.regions) {
      regions.push_back({{"label", g.label}, {"count", g.count}, {"coverage", g.coverage}, {"mean_length", g.mean_length}});
    }
    j["region_component"] = r.region_component;
    j["regions"] = regions;
  }
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.delta = j.at("delta").get<double>();
    r.n_test = j.at("n_test").get<Index>();
    r.nmae = j.at("nmae").get<std::vector<double>>();
    r.sd = j.at("sd").get<std::vector<double>>();
    r.coverage = j.at("coverage").get<std::vector<double>>();
    r.mean_length = j.at("mean_length").get<std::vector<double>>();
    if (!j.at("joint_coverage").is_null()) r.joint_coverage = j.at("joint_coverage").get<double>();
    r.projection_length = j.at("projection_length").get<std::vector<double>>();
    if (j.contains("regions")) {
      r.region_component = j.at("region_component").get<Index>();
      for (const auto& g : j.at("regions")) {
        r.regions.push_back({g.at("label").get<std::string>(), g.at("count").get<Index>(), g.at("coverage").get<double>(),
                             g.at("mean_length").get<double>()});
      }
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("malformed report: ") + e.what());
  }
}

std::string reports_to_csv(std::span<const EvalReport> reports) {
  std::size_t dim = 0;
  for (const auto& r : reports) dim = std::max(dim, r.nmae.size());
  std::ostringstream out;
  out << "metric";
  for (const auto& r : reports) out << ',' << r.method;
  out << '\n';
  auto row = [&](const std::string& name, auto get) {
    out << name;
    for (const auto& r : reports) out << ',' << cell(get(r));
    out << '\n';
  };
  for (std::size_t j = 0; j < dim; ++j) {
    row("NMAE_" + std::to_string(j + 1), [&](const EvalReport& r) { return at(r.nmae, j); });
  }
  for (std::size_t j = 0; j < dim; ++j) {
    row("sd_" + std::to_string(j + 1), [&](const EvalReport& r) { return at(r.sd, j); });
  }
  for (std::size_t j = 0; j < dim; ++j) {
    row("mean_length_" + std::to_string(j + 1), [&](const EvalReport& r) { return at(r.mean_length, j); });
  }
  for (std::size_t j = 0; j < dim; ++j) {
    row("coverage_" + std::to_string(j + 1), [&](const EvalReport& r) { return at(r.coverage, j); });
  }
  row("coverage_joint", [](const EvalReport& r) { return r.joint_coverage; });
  for (std::size_t j = 0; j < dim; ++j) {
    row("projection_length_" + std::to_string(j + 1), [&](const EvalReport& r) { return at(r.projection_length, j); });
  }
  return out.str();
}

std::string regional_csv(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << "region,metric";
  for (const auto& r : reports) out << ',' << r.method;
  out << '\n';
  if (reports.empty()) return out.str();
  const auto& labels = reports.front().regions;
  for (std::size_t g = 0; g < labels.size(); ++g) {
    for (const char* metric : {"count", "mean_length", "coverage"}) {
      out << labels[g].label << ',' << metric;
      for (const auto& r : reports) {
        std::optional<double> v;
        if (g < r.regions.size()) {
          const auto& m = r.regions[g];
          v = std::string(metric) == "count" ? static_cast<double>(m.count)
              : std::string(metric) == "coverage" ? m.coverage : m.mean_length;
        }
        out << ',' << cell(v);
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace abcd::eval
