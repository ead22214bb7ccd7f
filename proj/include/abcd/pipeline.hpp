#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "abcd/abc/rejection.hpp"
#include "abcd/conformal.hpp"
#include "abcd/evaluation.hpp"
#include "abcd/mc_dropout.hpp"
#include "abcd/nn/train.hpp"
#include "abcd/sim/reference_table.hpp"

namespace abcd::pipeline {

enum class Method { StandardAbc, AbcCnn, AbcdOverall, AbcdEpistemic };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
const std::vector<Method>& all_methods();

/// Bad configuration: unknown key, wrong type, or out-of-range value.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct ExperimentConfig {
  sim::ModelTag model = sim::ModelTag::Ma2;
  std::uint64_t seed = 1;
  Index n_train = 10000;
  Index n_val = 1000;
  Index n_cal = 1000;
  Index n_test = 1000;
  double alpha = 0.01;
  double delta = 0.05;
  Index passes = 1000;  // K
  std::vector<Method> methods = all_methods();
  abc::CnnDistance cnn_distance = abc::CnnDistance::Prediction;
  sim::TableOptions table;
  nn::TrainConfig train;
  Index region_component = -1;  // -1: no regional breakdown
  std::vector<double> region_thresholds;
  Index plot_records = 20;  // test records with emitted ellipse outlines

  /// Standard sizes for the model; GRF and LV use reduced desk-scale sizes.
  static ExperimentConfig defaults(sim::ModelTag model);

  /// Flat key/value form; every key is listed by config_keys().
  nlohmann::json to_json() const;
  /// Starts from defaults(model) and applies every other key with set().
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Type-checked assignment; the value is parsed from its text form.
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, const nlohmann::json& value);

  void validate() const;
  /// FNV-1a over the canonical JSON, as 16 hex digits.
  std::string hash() const;

  bool has(Method m) const;
};

struct ConfigKey {
  std::string name;
  std::string type;
  std::string description;
};
const std::vector<ConfigKey>& config_keys();
/// Key table with the default of every key for each model.
std::string config_help();

/// Network used for both ABC-CNN and ABCD-Conformal on a model.
nn::NetworkSpec default_network(const ExperimentConfig& cfg);

struct Tables {
  sim::ReferenceTable train, val, cal, test;
};

/// Per-component affine map applied to parameters before training and
/// evaluation (LV only; identity elsewhere).
struct ParameterScale {
  nn::Standardization map;
  bool identity = true;
};

struct Calibration {
  ConformalCalibrator joint;
  std::vector<ConformalCalibrator> components;
};

struct Progress {
  std::function<void(const std::string&)> log;
  void operator()(const std::string& msg) const {
    if (log) log(msg);
  }
};

nlohmann::json prediction_to_json(const DropoutPrediction& p);
DropoutPrediction prediction_from_json(const nlohmann::json& j);
nlohmann::json result_to_json(const eval::MethodResult& r);
eval::MethodResult result_from_json(const nlohmann::json& j);

/// One experiment rooted at a directory. Each stage loads its artifact when
/// one exists with the current config hash and otherwise computes and writes
/// it; an artifact with a different hash is an error unless `force` is set,
/// in which case it is recomputed.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, std::filesystem::path dir, bool force = false, Progress progress = {});

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::string config_hash() const { return hash_; }
  nlohmann::json provenance() const;

  // Train / val / cal / test reference tables.
  const Tables& tables();
  const ParameterScale& parameter_scale();
  /// Table parameters in evaluation units (D x N).
  MatrixXd thetas(const sim::ReferenceTable& t);
  const nn::TrainedModel& model();
  // MC dropout moments of the calibration and test sets.
  const std::vector<DropoutPrediction>& calibration_predictions();
  const std::vector<DropoutPrediction>& test_predictions();
  const Calibration& calibration(UncertaintyKind kind);
  const eval::MethodResult& result(Method m);
  const eval::EvalReport& report(Method m);

  /// Runs every configured method and writes compare.csv (and regional.csv
  /// when a regional breakdown is configured).
  std::vector<eval::EvalReport> compare();

  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

 private:
  std::vector<DropoutPrediction> predict(const sim::ReferenceTable& t, const char* tag);
  eval::MethodResult run_abcd(UncertaintyKind kind);
  eval::MethodResult run_standard_abc();
  eval::MethodResult run_abc_cnn();
  void check_provenance(const nlohmann::json& prov, const std::filesystem::path& file) const;
  std::optional<nlohmann::json> load_json(const std::string& name);
  void save_json(const std::string& name, nlohmann::json body) const;

  ExperimentConfig cfg_;
  std::filesystem::path dir_;
  bool force_;
  Progress progress_;
  std::string hash_;

  std::optional<Tables> tables_;
  std::optional<ParameterScale> scale_;
  std::optional<nn::TrainedModel> model_;
  std::optional<std::vector<DropoutPrediction>> cal_preds_, test_preds_;
  std::map<UncertaintyKind, Calibration> calibrations_;
  std::map<Method, eval::MethodResult> results_;
  std::map<Method, eval::EvalReport> reports_;
};

}  // namespace abcd::pipeline
