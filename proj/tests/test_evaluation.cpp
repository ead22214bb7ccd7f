#include <doctest.h>

#include <sstream>

#include "abcd/evaluation.hpp"

using namespace abcd;
using namespace abcd::eval;

namespace {

MatrixXd row(std::initializer_list<double> v) {
  MatrixXd m(1, static_cast<Index>(v.size()));
  Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

// Random 1-D result with intervals est +- half_width.
MethodResult random_result(Index n, double half_width, std::uint64_t seed) {
  Rng rng(seed);
  MethodResult r;
  r.method = "m";
  r.truths.resize(1, n);
  r.estimates.resize(1, n);
  for (Index i = 0; i < n; ++i) {
    r.truths(0, i) = 4.0 * standard_normal(rng);
    r.estimates(0, i) = r.truths(0, i) + standard_normal(rng);
  }
  r.lower = r.estimates.array() - half_width;
  r.upper = r.estimates.array() + half_width;
  return r;
}

}  // namespace

TEST_CASE("point metrics") {
  CHECK(nmae(row({1, 1}), row({0, 2}), 0) == 1.0);
  CHECK(sd_abs_err(row({0, 0}), row({3, 4}), 0) == doctest::Approx(3.5355339));
  CHECK(nmae(row({2, -2}), row({2, -2}), 0) == 0.0);
  CHECK_THROWS_AS(nmae(row({0, 0}), row({1, 1}), 0), Error);
  CHECK_THROWS_AS(nmae(row({1}), row({1, 1}), 0), Error);
}

TEST_CASE("coverage extremes") {
  const VectorXd t = VectorXd::LinSpaced(10, 0.0, 9.0);
  std::vector<Interval> wide(10, {-1.0, 10.0}), none(10, {20.0, 21.0});
  CHECK(empirical_coverage(t, wide) == 1.0);
  CHECK(empirical_coverage(t, none) == 0.0);
  std::vector<Interval> edge;
  for (Index i = 0; i < 10; ++i) edge.push_back({t(i), t(i) + 1.0});
  CHECK(empirical_coverage(t, edge) == 1.0);

  const MatrixXd truths = MatrixXd::Zero(2, 3);
  std::vector<ConfidenceSet> sets;
  sets.emplace_back(VectorXd::Zero(2), MatrixXd::Identity(2, 2), 1.0);
  sets.emplace_back(VectorXd::Constant(2, 5.0), MatrixXd::Identity(2, 2), 1.0);
  sets.emplace_back((VectorXd(2) << 1.0, 0.0).finished(), MatrixXd::Identity(2, 2), 1.0);
  CHECK(empirical_coverage(truths, sets) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("scale invariance of NMAE and coverage") {
  auto r = random_result(200, 1.5, 3);
  const auto a = evaluate(r, 0.05);
  r.truths *= 7.0;
  r.estimates *= 7.0;
  r.lower *= 7.0;
  r.upper *= 7.0;
  const auto b = evaluate(r, 0.05);
  CHECK(b.nmae[0] == doctest::Approx(a.nmae[0]));
  CHECK(b.coverage[0] == a.coverage[0]);
  CHECK(b.mean_length[0] == doctest::Approx(7.0 * a.mean_length[0]));
  CHECK(b.sd[0] == doctest::Approx(7.0 * a.sd[0]));
}

TEST_CASE("nested intervals have monotone coverage") {
  double prev = -1.0;
  for (double w : {0.1, 0.5, 1.0, 2.0, 4.0}) {
    const double c = evaluate(random_result(300, w, 5), 0.05).coverage[0];
    CHECK(c >= prev);
    prev = c;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("regional breakdown") {
  const auto r = random_result(500, 1.0, 7);
  auto report = evaluate(r, 0.05);

  const std::vector<Region> single{{"all", [](double) { return true; }}};
  add_regional_breakdown(report, r, 0, single);
  REQUIRE(report.regions.size() == 1);
  CHECK(report.regions[0].count == 500);
  CHECK(report.regions[0].coverage == report.coverage[0]);
  CHECK(report.regions[0].mean_length == doctest::Approx(report.mean_length[0]));

  const auto regions = threshold_regions("theta", {-2.0, 0.0, 3.0});
  REQUIRE(regions.size() == 4);
  CHECK(regions[0].contains(-2.5));
  CHECK_FALSE(regions[0].contains(-2.0));
  CHECK(regions[1].contains(-2.0));
  CHECK(regions[3].contains(3.0));
  add_regional_breakdown(report, r, 0, regions);
  Index total = 0;
  for (const auto& g : report.regions) total += g.count;
  CHECK(total == 500);
  CHECK(weighted_regional_coverage(report) == doctest::Approx(report.coverage[0]).epsilon(1e-12));

  const std::vector<Region> overlap{{"a", [](double) { return true; }}, {"b", [](double x) { return x > 0; }}};
  CHECK_THROWS_AS(add_regional_breakdown(report, r, 0, overlap), Error);
  const std::vector<Region> gap{{"a", [](double x) { return x > 0; }}};
  CHECK_THROWS_AS(add_regional_breakdown(report, r, 0, gap), Error);
  CHECK_THROWS_AS(add_regional_breakdown(report, r, 1, regions), Error);
  CHECK_THROWS_AS(threshold_regions("t", {1.0, 0.0}), Error);
}

TEST_CASE("joint sets report coverage and projections") {
  MethodResult r;
  r.method = "joint";
  r.truths = MatrixXd::Zero(2, 2);
  r.estimates = MatrixXd::Constant(2, 2, 0.5);
  r.truths(0, 0) = 1.0;
  r.truths(1, 1) = 1.0;
  r.lower = MatrixXd::Constant(2, 2, -1.0);
  r.upper = MatrixXd::Constant(2, 2, 1.0);
  MatrixXd shape(2, 2);
  shape << 4.0, 0.0, 0.0, 1.0;
  r.sets.emplace_back(VectorXd::Zero(2), shape, 2.0);
  r.sets.emplace_back(VectorXd::Constant(2, 10.0), shape, 2.0);
  const auto rep = evaluate(r, 0.05);
  REQUIRE(rep.joint_coverage.has_value());
  CHECK(*rep.joint_coverage == 0.5);
  CHECK(rep.projection_length[0] == doctest::Approx(8.0));
  CHECK(rep.projection_length[1] == doctest::Approx(4.0));
}

TEST_CASE("report serialization and CSV layout") {
  auto r = random_result(50, 1.0, 9);
  auto a = evaluate(r, 0.05);
  a.method = "alpha";
  add_regional_breakdown(a, r, 0, threshold_regions("t", {0.0}));
  const auto back = report_from_json(report_to_json(a));
  CHECK(back.method == "alpha");
  CHECK(back.nmae == a.nmae);
  CHECK(back.coverage == a.coverage);
  CHECK(back.regions.size() == 2);
  CHECK_FALSE(back.joint_coverage.has_value());

  MethodResult two;
  two.method = "beta";
  two.truths = MatrixXd::Ones(2, 1);
  two.estimates = MatrixXd::Ones(2, 1);
  two.lower = MatrixXd::Zero(2, 1);
  two.upper = MatrixXd::Constant(2, 1, 2.0);
  two.sets.emplace_back(VectorXd::Ones(2), MatrixXd::Identity(2, 2), 1.0);
  const std::vector<EvalReport> reports{a, evaluate(two, 0.05)};
  const std::string csv = reports_to_csv(reports);
  std::istringstream in(csv);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 12);
  CHECK(lines[0] == "metric,alpha,beta");
  CHECK(lines[1].rfind("NMAE_1,", 0) == 0);
  CHECK(lines[2] == "NMAE_2,NA,0");
  CHECK(lines[9].rfind("coverage_joint,NA,1", 0) == 0);
  CHECK(lines[11] == "projection_length_2,NA,2");

  const std::string reg = regional_csv(std::vector<EvalReport>{a});
  CHECK(reg.rfind("region,metric,alpha\n", 0) == 0);
  CHECK(reg.find(",count,") != std::string::npos);
}
