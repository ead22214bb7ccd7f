// abcd: command-line front end for the experiment pipeline.
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "abcd/pipeline.hpp"
#include "abcd/plot_data.hpp"
#include "abcd/sim/ma2_posterior.hpp"

namespace {

using namespace abcd;
using pipeline::ConfigError;
using pipeline::Experiment;
using pipeline::ExperimentConfig;
using pipeline::Method;
namespace fs = std::filesystem;

struct Options {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string model;
  std::string out = "run";
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  bool force = false;
  bool quiet = false;
  // simulate
  Index n = 0;
  // oracle
  std::string input;
  Index resolution = 400;
};

ExperimentConfig build_config(const Options& o) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    if (!in) throw ConfigError("cannot open config file " + o.config_file);
    try {
      j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + o.config_file + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  }
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& s : o.overrides) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + s + "' is not of the form key=value");
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  // The model picks the defaults, so it is applied before anything else.
  if (!o.model.empty()) j["model"] = o.model;
  for (const auto& [k, v] : kv)
    if (k == "model") j["model"] = v;
  ExperimentConfig cfg = ExperimentConfig::from_json(j);
  for (const auto& [k, v] : kv)
    if (k != "model") cfg.set(k, v);
  if (const char* env = std::getenv("ABCD_SEED"); env && *env) cfg.set("seed", std::string(env));
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

Experiment open_experiment(const Options& o) {
  pipeline::Progress progress;
  if (!o.quiet) progress.log = [](const std::string& m) { std::cerr << "[abcd] " << m << '\n'; };
  return Experiment(build_config(o), o.out, o.force, progress);
}

void emit_plots(Experiment& ex) {
  const fs::path dir = ex.path("plots");
  for (Method m : ex.config().methods) {
    const auto& r = ex.result(m);
    plot::emit_plot_data(r, plot::PlotKind::Scatter, dir);
    plot::emit_plot_data(r, plot::PlotKind::IntervalStrip, dir);
    if (!r.sets.empty()) plot::emit_plot_data(r, plot::PlotKind::EllipseOutline, dir, ex.config().plot_records);
  }
}

std::vector<UncertaintyKind> configured_kinds(const ExperimentConfig& cfg) {
  std::vector<UncertaintyKind> kinds;
  if (cfg.has(Method::AbcdOverall)) kinds.push_back(UncertaintyKind::Overall);
  if (cfg.has(Method::AbcdEpistemic)) kinds.push_back(UncertaintyKind::Epistemic);
  return kinds;
}

int run_simulate(const Options& o) {
  if (o.n > 0) {
    if (o.model.empty()) throw ConfigError("simulate --n needs --model");
    ExperimentConfig cfg = build_config(o);
    const auto table = sim::generate_reference_table(cfg.model, o.n, cfg.seed, cfg.table);
    fs::create_directories(o.out);
    const fs::path file = fs::path(o.out) / "table.bin";
    const nlohmann::json opts = cfg.table.to_json();
    nlohmann::json prov{{"seed", cfg.seed}, {"options", opts}};
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : prov.dump()) h = (h ^ c) * 0x100000001b3ULL;
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    prov["config_hash"] = hex;
    sim::save_table(file, table, prov);
    std::cout << file.string() << '\n';
    return 0;
  }
  auto ex = open_experiment(o);
  ex.tables();
  std::cout << ex.path("tables").string() << '\n';
  return 0;
}

int run_oracle(const Options& o) {
  if (!o.model.empty() && o.model != "ma2") throw ConfigError("the exact posterior exists only for --model ma2");
  if (o.input.empty()) throw ConfigError("oracle needs --input");
  std::ifstream in(o.input);
  if (!in) throw ConfigError("cannot open input series " + o.input);
  std::vector<double> values;
  for (double v; in >> v;) values.push_back(v);
  if (!in.eof()) throw ConfigError("input series " + o.input + " holds a non-numeric token");
  const VectorXd x = Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
  const auto post = sim::ma2_exact_posterior(x, o.resolution);
  fs::create_directories(o.out);
  const fs::path grid = fs::path(o.out) / "oracle_grid.csv";
  std::ofstream g(grid);
  g.precision(17);
  g << "# exact MA(2) grid posterior: cell centre and probability mass (zero outside the prior triangle)\n"
    << "theta1,theta2,mass\n";
  for (Index i = 0; i < post.theta1_axis.size(); ++i)
    for (Index j = 0; j < post.theta2_axis.size(); ++j)
      if (post.mass(i, j) > 0.0) g << post.theta1_axis(i) << ',' << post.theta2_axis(j) << ',' << post.mass(i, j) << '\n';
  if (!g) throw Error("cli", "cannot write " + grid.string());
  std::cout.precision(10);
  std::cout << "posterior_mean " << post.mean(0) << ' ' << post.mean(1) << '\n' << grid.string() << '\n';
  return 0;
}

int dispatch(const std::string& sub, const Options& o) {
  if (o.threads > 0) set_thread_limit(o.threads);
  if (sub == "simulate") return run_simulate(o);
  if (sub == "oracle") return run_oracle(o);
  auto ex = open_experiment(o);
  const auto& cfg = ex.config();
  if (sub == "train") {
    ex.model();
    std::cout << ex.path("model.ckpt").string() << '\n';
  } else if (sub == "calibrate") {
    for (auto kind : configured_kinds(cfg)) {
      const auto& c = ex.calibration(kind);
      std::cout << to_string(kind) << " q_hat " << c.joint.q_hat << '\n';
    }
  } else if (sub == "infer") {
    for (Method m : cfg.methods) {
      ex.result(m);
      std::cout << ex.path("results/" + pipeline::to_string(m) + ".json").string() << '\n';
    }
  } else if (sub == "evaluate") {
    for (Method m : cfg.methods) {
      ex.report(m);
      std::cout << ex.path("reports/" + pipeline::to_string(m) + ".json").string() << '\n';
    }
    emit_plots(ex);
  } else if (sub == "compare") {
    ex.compare();
    emit_plots(ex);
    std::ifstream csv(ex.path("compare.csv"));
    std::cout << csv.rdbuf();
  }
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ABCD-Conformal: MC-dropout networks with conformal calibration, and ABC baselines"};
  app.require_subcommand(1, 1);
  app.footer("\n" + pipeline::config_help() +
             "\nABCD_SEED overrides the config seed; --seed overrides both.\n"
             "Exit status: 0 success, 1 stage failure, 2 configuration error.");
  Options o;
  auto common = [&o](CLI::App* s, bool experiment) {
    s->add_option("--config", o.config_file, "JSON config file")->check(CLI::ExistingFile);
    s->add_option("--model", o.model, "ma2, grf or lv (selects the per-model defaults)");
    s->add_option("--seed", o.seed, "master seed");
    s->add_option("--threads", o.threads, "worker thread cap (0: hardware concurrency)");
    s->add_option("--out", o.out, experiment ? "experiment directory" : "output directory")->capture_default_str();
    s->add_flag("--force", o.force, "recompute artifacts written under a different config");
    s->add_flag("-q,--quiet", o.quiet, "no progress on stderr");
    s->add_option("overrides", o.overrides, "key=value config overrides");
  };
  auto* simulate = app.add_subcommand("simulate", "simulate reference tables (or one table with --n)");
  common(simulate, true);
  simulate->add_option("--n", o.n, "standalone mode: write one table of n records to <out>/table.bin");
  for (auto [name, what] : std::vector<std::pair<const char*, const char*>>{
           {"train", "train the network"},
           {"calibrate", "MC-dropout predictions on the calibration set and conformal quantiles"},
           {"infer", "confidence sets and intervals for every configured method"},
           {"evaluate", "per-method reports and plot data"},
           {"compare", "compare.csv across methods (and regional.csv when configured)"}}) {
    common(app.add_subcommand(name, what), true);
  }
  auto* oracle = app.add_subcommand("oracle", "exact MA(2) grid posterior of one series");
  common(oracle, false);
  oracle->add_option("--input", o.input, "whitespace-separated series")->required();
  oracle->add_option("--resolution", o.resolution, "grid cells per axis")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: [cli] " << one_line(e.what()) << '\n';
    return 2;
  }
  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    return dispatch(sub, o);
  } catch (const ConfigError& e) {
    std::cerr << "error: [" << e.module() << "] " << one_line(e.what()) << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: [" << e.module() << "] " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: [cli] " << one_line(e.what()) << '\n';
    return 1;
  }
}
