#include <doctest.h>

#include <fstream>
#include <sstream>

#include "abcd/pipeline.hpp"
#include "abcd/plot_data.hpp"

using namespace abcd;
using namespace abcd::pipeline;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  auto cfg = ExperimentConfig::defaults(sim::ModelTag::Ma2);
  cfg.n_train = 300;
  cfg.n_val = 60;
  cfg.n_cal = 60;
  cfg.n_test = 20;
  cfg.alpha = 0.05;
  cfg.passes = 20;
  cfg.table.ma2_length = 30;
  cfg.train.epochs = 2;
  cfg.seed = 11;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("abcd_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

MatrixXd random_spd(Index d, Rng& rng) {
  MatrixXd a(d, d);
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = standard_normal(rng);
  return a * a.transpose() + 0.1 * MatrixXd::Identity(d, d);
}

}  // namespace

TEST_CASE("config values are parsed and type-checked") {
  auto cfg = ExperimentConfig::defaults(sim::ModelTag::Ma2);
  cfg.set("n_train", std::string("1e4"));
  CHECK(cfg.n_train == 10000);
  cfg.set("alpha", std::string("0.02"));
  CHECK(cfg.alpha == 0.02);
  cfg.set("methods", std::string("abcd_overall,standard_abc"));
  CHECK(cfg.methods == std::vector<Method>{Method::AbcdOverall, Method::StandardAbc});
  cfg.set("region_thresholds", std::string("0.5,2"));
  CHECK(cfg.region_thresholds == std::vector<double>{0.5, 2.0});
  cfg.set("lv_method", std::string("exact"));
  CHECK(cfg.table.lv_method == sim::LvMethod::ExactGillespie);
  cfg.set("seed", std::string("18446744073709551615"));
  CHECK(cfg.seed == 18446744073709551615ULL);

  CHECK_THROWS_AS(cfg.set("n_train", std::string("1.5")), ConfigError);
  CHECK_THROWS_AS(cfg.set("n_train", std::string("12abc")), ConfigError);
  CHECK_THROWS_AS(cfg.set("alpha", std::string("")), ConfigError);
  CHECK_THROWS_AS(cfg.set("no_such_key", std::string("1")), ConfigError);
  CHECK_THROWS_AS(cfg.set("methods", std::string("abcd")), ConfigError);
  CHECK_THROWS_AS(cfg.set("model", std::string("ar1")), ConfigError);
  CHECK_THROWS_AS(cfg.set("passes", nlohmann::json("many")), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"bogus", 1}}), ConfigError);
}

TEST_CASE("config JSON round-trips and the hash tracks content") {
  for (auto m : {sim::ModelTag::Ma2, sim::ModelTag::Grf, sim::ModelTag::LotkaVolterra}) {
    const auto cfg = ExperimentConfig::defaults(m);
    const auto back = ExperimentConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.hash() == cfg.hash());
    CHECK(cfg.hash().size() == 16);
    CHECK_NOTHROW(cfg.validate());
  }
  auto a = ExperimentConfig::defaults(sim::ModelTag::Ma2), b = a;
  b.seed = 2;
  CHECK(a.hash() != b.hash());

  const auto lv = ExperimentConfig::from_json({{"model", "lv"}, {"n_test", 50}});
  CHECK(lv.alpha == 0.005);
  CHECK(lv.region_component == 2);
  CHECK(lv.region_thresholds == std::vector<double>{1.0, 3.0});
  CHECK(lv.n_test == 50);
  const auto grf = ExperimentConfig::defaults(sim::ModelTag::Grf);
  CHECK(grf.n_train == 2000);
  CHECK(grf.n_cal == 500);
  CHECK(grf.n_test == 100);
  CHECK(grf.table.grf.grid == 32);
}

TEST_CASE("validation rejects infeasible settings") {
  auto cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.n_cal = minimal_calibration_size(cfg.delta) - 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.alpha = 0.001;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.region_component = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.train.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("help text lists every key") {
  const std::string help = config_help();
  for (const auto& k : config_keys()) CHECK(help.find("  " + k.name + " ") != std::string::npos);
  CHECK(help.find("10000") != std::string::npos);
}

TEST_CASE("default networks match the model shapes") {
  for (auto m : {sim::ModelTag::Ma2, sim::ModelTag::Grf, sim::ModelTag::LotkaVolterra}) {
    const auto cfg = ExperimentConfig::defaults(m);
    const auto spec = default_network(cfg);
    CHECK(spec.output_dim == sim::parameter_dim(m));
    CHECK_NOTHROW(nn::make_model(spec, 1));
  }
}

TEST_CASE("prediction and result JSON round-trip exactly") {
  Rng rng(5);
  DropoutPrediction p;
  p.mean = VectorXd::Random(3);
  p.epistemic_cov = random_spd(3, rng);
  p.aleatoric = VectorXd::Constant(3, 0.1 / 3.0);
  p.overall_cov = p.epistemic_cov;
  p.overall_cov.diagonal() += p.aleatoric;
  p.passes = 7;
  const auto q = prediction_from_json(nlohmann::json::parse(prediction_to_json(p).dump()));
  CHECK(q.mean == p.mean);
  CHECK(q.epistemic_cov == p.epistemic_cov);
  CHECK(q.overall_cov == p.overall_cov);
  CHECK(q.passes == 7);

  eval::MethodResult r;
  r.method = "m";
  r.truths = MatrixXd::Random(3, 2);
  r.estimates = MatrixXd::Random(3, 2);
  r.lower = r.estimates.array() - 1.0;
  r.upper = r.estimates.array() + 1.0;
  r.sets.emplace_back(p.mean, p.overall_cov, 1.7);
  const auto s = result_from_json(nlohmann::json::parse(result_to_json(r).dump()));
  CHECK(s.truths == r.truths);
  CHECK(s.upper == r.upper);
  REQUIRE(s.sets.size() == 1);
  CHECK(s.sets[0].shape() == r.sets[0].shape());
  CHECK(s.sets[0].radius() == 1.7);
}

TEST_CASE("a small run is deterministic and resumes from its artifacts") {
  const auto cfg = tiny_config();
  const fs::path a = scratch("a"), b = scratch("b");
  {
    Experiment ex(cfg, a);
    const auto reports = ex.compare();
    CHECK(reports.size() == 4);
    const auto& rep = ex.report(Method::AbcdOverall);
    REQUIRE(rep.joint_coverage.has_value());
    CHECK(rep.coverage.size() == 2);
  }
  {
    Experiment ex(cfg, b);
    ex.compare();
  }
  for (const char* f : {"compare.csv", "reports/abcd_overall.json", "reports/standard_abc.json",
                        "reports/abc_cnn.json", "results/abcd_epistemic.json", "model.ckpt", "tables/test.bin"}) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const std::string csv = slurp(a / "compare.csv");
  CHECK(csv.rfind("# config_hash=" + cfg.hash() + " seed=11\n", 0) == 0);

  // A fresh object on the same directory loads every stage instead of recomputing.
  const auto before = fs::last_write_time(a / "model.ckpt");
  {
    Experiment ex(cfg, a);
    ex.compare();
    CHECK(ex.result(Method::AbcdOverall).sets.size() == 20);
  }
  CHECK(fs::last_write_time(a / "model.ckpt") == before);
  CHECK(slurp(a / "compare.csv") == csv);

  // Stage-by-stage on a third directory matches the one-shot run.
  const fs::path c = scratch("c");
  {
    Experiment ex(cfg, c);
    ex.tables();
  }
  {
    Experiment ex(cfg, c);
    ex.model();
    ex.calibration(UncertaintyKind::Overall);
  }
  {
    Experiment ex(cfg, c);
    ex.compare();
  }
  CHECK(slurp(c / "compare.csv") == csv);

  auto other = cfg;
  other.seed = 12;
  CHECK_THROWS_AS(Experiment(other, a), Error);
  {
    Experiment ex(other, a, true);
    ex.compare();
  }
  CHECK(slurp(a / "compare.csv") != csv);
  CHECK(slurp(a / "compare.csv").find("seed=12") != std::string::npos);
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("LV runs report on standardized parameters with a regional breakdown") {
  auto cfg = ExperimentConfig::defaults(sim::ModelTag::LotkaVolterra);
  cfg.n_train = 200;
  cfg.n_val = 40;
  cfg.n_cal = 40;
  cfg.n_test = 20;
  cfg.alpha = 0.05;
  cfg.passes = 10;
  cfg.train.epochs = 1;
  cfg.methods = {Method::StandardAbc, Method::AbcdOverall};
  const fs::path dir = scratch("lv");
  Experiment ex(cfg, dir);
  const MatrixXd z = ex.thetas(ex.tables().train);
  CHECK(z.rowwise().mean().cwiseAbs().maxCoeff() < 1e-12);
  ex.compare();
  const auto& rep = ex.report(Method::AbcdOverall);
  CHECK(rep.regions.size() == 3);
  CHECK(eval::weighted_regional_coverage(rep) == rep.coverage[2]);
  CHECK(fs::exists(dir / "regional.csv"));
  fs::remove_all(dir);
}

TEST_CASE("ellipse outlines lie on the set boundary") {
  const ConfidenceSet circle(VectorXd::Zero(2), MatrixXd::Identity(2, 2), 1.0);
  const MatrixXd pts = plot::ellipse_outline(circle);
  REQUIRE(pts.cols() == 256);
  CHECK((pts.colwise().norm().array() - 1.0).abs().maxCoeff() < 1e-9);

  Rng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const VectorXd c = VectorXd::Random(2) * 3.0;
    const ConfidenceSet set(c, random_spd(2, rng), 0.5 + open_uniform(rng) * 3.0);
    const MatrixXd e = plot::ellipse_outline(set);
    for (Index k = 0; k < e.cols(); ++k) CHECK(std::abs(set.score(e.col(k)) - set.radius()) < 1e-9);
  }

  // Projections of a 3-D set: boundary of the (a, b) marginal ellipse.
  const MatrixXd v = random_spd(3, rng);
  const ConfidenceSet set3(VectorXd::Ones(3), v, 2.0);
  Eigen::Matrix2d vab;
  vab << v(0, 0), v(0, 2), v(2, 0), v(2, 2);
  const ConfidenceSet proj(VectorXd::Ones(2), vab, 2.0);
  const MatrixXd e3 = plot::ellipse_outline(set3, 0, 2);
  for (Index k = 0; k < e3.cols(); ++k) CHECK(std::abs(proj.score(e3.col(k)) - 2.0) < 1e-9);
  // Extreme abscissa equals the projection interval.
  CHECK(e3.row(0).maxCoeff() == doctest::Approx(set3.projection(0).upper));

  const ConfidenceSet line(VectorXd::Constant(1, 2.0), MatrixXd::Constant(1, 1, 4.0), 1.5);
  const MatrixXd ends = plot::ellipse_outline(line);
  REQUIRE(ends.size() == 2);
  CHECK(ends(0, 0) == -1.0);
  CHECK(ends(0, 1) == 5.0);
}

TEST_CASE("plot CSVs carry a header comment and need confidence sets for outlines") {
  eval::MethodResult r;
  r.method = "m";
  r.truths = MatrixXd::Zero(2, 3);
  r.estimates = MatrixXd::Ones(2, 3);
  r.lower = MatrixXd::Constant(2, 3, -1.0);
  r.upper = MatrixXd::Constant(2, 3, 0.5);
  const std::string scatter = plot::scatter_csv(r);
  CHECK(scatter.rfind("# ", 0) == 0);
  CHECK(scatter.find("record,component,truth,estimate\n") != std::string::npos);
  CHECK(std::count(scatter.begin(), scatter.end(), '\n') == 2 + 6);
  const std::string strip = plot::interval_strip_csv(r);
  CHECK(strip.find("\n0,1,0,1,-1,0.5,1\n") != std::string::npos);
  CHECK_THROWS_AS(plot::ellipse_csv(r, 10), Error);
  r.sets.assign(3, ConfidenceSet(VectorXd::Zero(2), MatrixXd::Identity(2, 2), 1.0));
  const std::string ell = plot::ellipse_csv(r, 2, 16);
  CHECK(std::count(ell.begin(), ell.end(), '\n') == 2 + 2 * 16);
  CHECK_THROWS_AS(plot::plot_kind_from_string("pie"), Error);
}
