#include "abcd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "abcd/nn/checkpoint.hpp"
#include "abcd/parallel.hpp"

namespace abcd::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kModule = "pipeline";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

json matrix_to_json(const MatrixXd& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(data.size()) != rows * cols) fail("matrix payload size does not match its shape");
  return Eigen::Map<const MatrixXd>(data.data(), rows, cols);
}

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

std::string grf_method_name(sim::GrfMethod m) { return m == sim::GrfMethod::Separable ? "separable" : "dense"; }
std::string lv_method_name(sim::LvMethod m) { return m == sim::LvMethod::TauLeap ? "tau_leap" : "exact"; }

std::vector<std::string> component_names(sim::ModelTag model) {
  switch (model) {
    case sim::ModelTag::Ma2: return {"theta1", "theta2"};
    case sim::ModelTag::Grf: return {"theta"};
    case sim::ModelTag::LotkaVolterra: return {"c1", "c2", "c3"};
  }
  return {};
}

// --- config key table ------------------------------------------------------

struct KeyEntry {
  ConfigKey info;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> put;
  char kind;  // i: integer, u: unsigned 64-bit, f: float, s: string, F: float list, S: string list
};

[[noreturn]] void type_error(const std::string& key, const std::string& want, const json& got) {
  throw ConfigError("key '" + key + "' expects " + want + ", got " + got.dump());
}

Index as_index(const std::string& key, const json& v) {
  if (v.is_number_integer()) return v.get<Index>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9e15) return static_cast<Index>(d);
  }
  type_error(key, "an integer", v);
}

double as_double(const std::string& key, const json& v) {
  if (!v.is_number()) type_error(key, "a number", v);
  return v.get<double>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) type_error(key, "a string", v);
  return v.get<std::string>();
}

template <typename F>
auto wrap_enum(const std::string& key, F&& parse, const json& v) {
  const std::string s = as_string(key, v);
  try {
    return parse(s);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

const std::vector<KeyEntry>& key_table() {
  static const std::vector<KeyEntry> table = [] {
    std::vector<KeyEntry> t;
    auto add_index = [&t](std::string name, std::string desc, Index ExperimentConfig::*field) {
      t.push_back({{name, "int", std::move(desc)},
                   [field](const ExperimentConfig& c) { return json(c.*field); },
                   [field, name](ExperimentConfig& c, const json& v) { c.*field = as_index(name, v); }, 'i'});
    };
    auto add_double = [&t](std::string name, std::string desc, double ExperimentConfig::*field) {
      t.push_back({{name, "float", std::move(desc)},
                   [field](const ExperimentConfig& c) { return json(c.*field); },
                   [field, name](ExperimentConfig& c, const json& v) { c.*field = as_double(name, v); }, 'f'});
    };
    t.push_back({{"model", "ma2|grf|lv", "simulator"},
                 [](const ExperimentConfig& c) { return json(sim::to_string(c.model)); },
                 [](ExperimentConfig& c, const json& v) {
                   c.model = wrap_enum("model", [](const std::string& s) { return sim::model_from_string(s); }, v);
                 },
                 's'});
    t.push_back({{"seed", "uint64", "master seed (ABCD_SEED and --seed override it)"},
                 [](const ExperimentConfig& c) { return json(c.seed); },
                 [](ExperimentConfig& c, const json& v) {
                   if (v.is_number_unsigned()) {
                     c.seed = v.get<std::uint64_t>();
                   } else {
                     const Index s = as_index("seed", v);
                     if (s < 0) type_error("seed", "a non-negative integer", v);
                     c.seed = static_cast<std::uint64_t>(s);
                   }
                 },
                 'u'});
    add_index("n_train", "reference table size", &ExperimentConfig::n_train);
    add_index("n_val", "validation set size (early stopping)", &ExperimentConfig::n_val);
    add_index("n_cal", "calibration set size", &ExperimentConfig::n_cal);
    add_index("n_test", "test set size", &ExperimentConfig::n_test);
    add_double("alpha", "ABC acceptance proportion", &ExperimentConfig::alpha);
    add_double("delta", "miscoverage level", &ExperimentConfig::delta);
    add_index("passes", "MC dropout passes K", &ExperimentConfig::passes);
    t.push_back({{"methods", "list", "standard_abc,abc_cnn,abcd_overall,abcd_epistemic"},
                 [](const ExperimentConfig& c) {
                   json a = json::array();
                   for (Method m : c.methods) a.push_back(to_string(m));
                   return a;
                 },
                 [](ExperimentConfig& c, const json& v) {
                   if (!v.is_array()) type_error("methods", "a list of method names", v);
                   c.methods.clear();
                   for (const auto& e : v) {
                     c.methods.push_back(
                         wrap_enum("methods", [](const std::string& s) { return method_from_string(s); }, e));
                   }
                 },
                 'S'});
    t.push_back({{"cnn_distance", "prediction|true_theta", "ABC-CNN distance"},
                 [](const ExperimentConfig& c) { return json(abc::to_string(c.cnn_distance)); },
                 [](ExperimentConfig& c, const json& v) {
                   c.cnn_distance = wrap_enum(
                       "cnn_distance", [](const std::string& s) { return abc::cnn_distance_from_string(s); }, v);
                 },
                 's'});
    t.push_back({{"ma2_length", "int", "MA(2) series length p"},
                 [](const ExperimentConfig& c) { return json(c.table.ma2_length); },
                 [](ExperimentConfig& c, const json& v) { c.table.ma2_length = as_index("ma2_length", v); }, 'i'});
    t.push_back({{"grf_grid", "int", "GRF grid size G"},
                 [](const ExperimentConfig& c) { return json(c.table.grf.grid); },
                 [](ExperimentConfig& c, const json& v) { c.table.grf.grid = as_index("grf_grid", v); }, 'i'});
    t.push_back({{"grf_method", "separable|dense", "GRF factorization"},
                 [](const ExperimentConfig& c) { return json(grf_method_name(c.table.grf.method)); },
                 [](ExperimentConfig& c, const json& v) {
                   const std::string s = as_string("grf_method", v);
                   if (s == "separable") c.table.grf.method = sim::GrfMethod::Separable;
                   else if (s == "dense") c.table.grf.method = sim::GrfMethod::Dense;
                   else throw ConfigError("key 'grf_method' expects separable or dense, got '" + s + "'");
                 },
                 's'});
    t.push_back({{"lv_method", "tau_leap|exact", "LV simulation algorithm"},
                 [](const ExperimentConfig& c) { return json(lv_method_name(c.table.lv_method)); },
                 [](ExperimentConfig& c, const json& v) {
                   const std::string s = as_string("lv_method", v);
                   if (s == "tau_leap") c.table.lv_method = sim::LvMethod::TauLeap;
                   else if (s == "exact") c.table.lv_method = sim::LvMethod::ExactGillespie;
                   else throw ConfigError("key 'lv_method' expects tau_leap or exact, got '" + s + "'");
                 },
                 's'});
    t.push_back({{"lv_tau", "float", "tau-leap step"},
                 [](const ExperimentConfig& c) { return json(c.table.lv.tau); },
                 [](ExperimentConfig& c, const json& v) { c.table.lv.tau = as_double("lv_tau", v); }, 'f'});
    t.push_back({{"lv_max_events", "int", "event budget per LV trajectory"},
                 [](const ExperimentConfig& c) { return json(c.table.lv.max_events); },
                 [](ExperimentConfig& c, const json& v) { c.table.lv.max_events = as_index("lv_max_events", v); },
                 'i'});
    t.push_back({{"max_attempts", "int", "LV redraw budget per record"},
                 [](const ExperimentConfig& c) { return json(c.table.max_attempts); },
                 [](ExperimentConfig& c, const json& v) { c.table.max_attempts = as_index("max_attempts", v); },
                 'i'});
    t.push_back({{"epochs", "int", "maximum training epochs"},
                 [](const ExperimentConfig& c) { return json(c.train.epochs); },
                 [](ExperimentConfig& c, const json& v) { c.train.epochs = static_cast<int>(as_index("epochs", v)); },
                 'i'});
    t.push_back({{"batch_size", "int", "minibatch size"},
                 [](const ExperimentConfig& c) { return json(c.train.batch_size); },
                 [](ExperimentConfig& c, const json& v) { c.train.batch_size = as_index("batch_size", v); }, 'i'});
    t.push_back({{"learning_rate", "float", "Adam step size"},
                 [](const ExperimentConfig& c) { return json(c.train.learning_rate); },
                 [](ExperimentConfig& c, const json& v) { c.train.learning_rate = as_double("learning_rate", v); },
                 'f'});
    t.push_back({{"patience", "int", "early-stopping patience in epochs"},
                 [](const ExperimentConfig& c) { return json(c.train.patience); },
                 [](ExperimentConfig& c, const json& v) {
                   c.train.patience = static_cast<int>(as_index("patience", v));
                 },
                 'i'});
    t.push_back({{"weight_regularizer", "float", "concrete dropout weight term, divided by n_train"},
                 [](const ExperimentConfig& c) { return json(c.train.weight_regularizer); },
                 [](ExperimentConfig& c, const json& v) {
                   c.train.weight_regularizer = as_double("weight_regularizer", v);
                 },
                 'f'});
    t.push_back({{"dropout_regularizer", "float", "concrete dropout entropy term, divided by n_train"},
                 [](const ExperimentConfig& c) { return json(c.train.dropout_regularizer); },
                 [](ExperimentConfig& c, const json& v) {
                   c.train.dropout_regularizer = as_double("dropout_regularizer", v);
                 },
                 'f'});
    t.push_back({{"temperature", "float", "concrete dropout temperature"},
                 [](const ExperimentConfig& c) { return json(c.train.temperature); },
                 [](ExperimentConfig& c, const json& v) { c.train.temperature = as_double("temperature", v); }, 'f'});
    add_index("region_component", "component for the regional breakdown, -1 for none",
              &ExperimentConfig::region_component);
    t.push_back({{"region_thresholds", "list", "ascending region cut points"},
                 [](const ExperimentConfig& c) { return json(c.region_thresholds); },
                 [](ExperimentConfig& c, const json& v) {
                   if (!v.is_array()) type_error("region_thresholds", "a list of numbers", v);
                   c.region_thresholds.clear();
                   for (const auto& e : v) c.region_thresholds.push_back(as_double("region_thresholds", e));
                 },
                 'F'});
    add_index("plot_records", "test records with ellipse outlines in the plot data",
              &ExperimentConfig::plot_records);
    return t;
  }();
  return table;
}

const KeyEntry& find_key(const std::string& key) {
  for (const auto& e : key_table()) {
    if (e.info.name == key) return e;
  }
  throw ConfigError("unknown key '" + key + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) out.push_back(item);
  return out;
}

json parse_number(const std::string& key, const std::string& text, bool integer) {
  if (text.empty()) throw ConfigError("key '" + key + "' has an empty value");
  char* end = nullptr;
  if (integer && text.find_first_of(".eE") == std::string::npos) {
    errno = 0;
    if (text[0] == '-') {
      const long long v = std::strtoll(text.c_str(), &end, 10);
      if (*end == '\0' && errno == 0) return json(v);
    } else {
      const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
      if (*end == '\0' && errno == 0) return json(v);
    }
    throw ConfigError("key '" + key + "' expects an integer, got '" + text + "'");
  }
  const double v = std::strtod(text.c_str(), &end);
  if (*end != '\0') {
    throw ConfigError("key '" + key + "' expects " + std::string(integer ? "an integer" : "a number") + ", got '" +
                      text + "'");
  }
  return json(v);
}

}  // namespace

// --- methods ----------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::StandardAbc: return "standard_abc";
    case Method::AbcCnn: return "abc_cnn";
    case Method::AbcdOverall: return "abcd_overall";
    case Method::AbcdEpistemic: return "abcd_epistemic";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : all_methods()) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + s + "' (expected standard_abc, abc_cnn, abcd_overall or abcd_epistemic)");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> all{Method::StandardAbc, Method::AbcCnn, Method::AbcdOverall,
                                       Method::AbcdEpistemic};
  return all;
}

// --- config -----------------------------------------------------------------

ExperimentConfig ExperimentConfig::defaults(sim::ModelTag model) {
  ExperimentConfig c;
  c.model = model;
  c.train.epochs = 150;
  c.train.patience = 25;
  switch (model) {
    case sim::ModelTag::Ma2:
      c.n_train = 10000;
      c.n_val = 1000;
      c.n_cal = 1000;
      c.n_test = 1000;
      c.alpha = 0.01;
      break;
    case sim::ModelTag::Grf:
      c.n_train = 2000;  // 7000 at G = 100
      c.n_val = 500;     // 1900 at G = 100
      c.n_cal = 500;     // 1000 at G = 100
      c.n_test = 100;
      c.alpha = 0.01;
      c.table.grf.grid = 32;
      break;
    case sim::ModelTag::LotkaVolterra:
      c.n_train = 10000;  // 1e5 at full scale
      c.n_val = 1000;
      c.n_cal = 1000;
      c.n_test = 1000;
      c.alpha = 0.005;
      c.region_component = 2;
      c.region_thresholds = {1.0, 3.0};
      break;
  }
  return c;
}

json ExperimentConfig::to_json() const {
  json j = json::object();
  for (const auto& e : key_table()) j[e.info.name] = e.get(*this);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object of key/value pairs");
  ExperimentConfig c;
  if (j.contains("model")) find_key("model").put(c, j.at("model"));
  c = defaults(c.model);
  for (const auto& [key, value] : j.items()) {
    if (key == "model") continue;
    c.set(key, value);
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::set(const std::string& key, const json& value) { find_key(key).put(*this, value); }

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const KeyEntry& e = find_key(key);
  switch (e.kind) {
    case 'i':
    case 'u': e.put(*this, parse_number(key, value, true)); break;
    case 'f': e.put(*this, parse_number(key, value, false)); break;
    case 's': e.put(*this, json(value)); break;
    case 'F': {
      json a = json::array();
      for (const auto& item : split_list(value)) a.push_back(parse_number(key, item, false));
      e.put(*this, a);
      break;
    }
    case 'S': {
      json a = json::array();
      for (const auto& item : split_list(value)) a.push_back(item);
      e.put(*this, a);
      break;
    }
    default: throw ConfigError("key '" + key + "' has no text form");
  }
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(n_train >= 1 && n_val >= 1 && n_cal >= 1 && n_test >= 1, "dataset sizes must be >= 1");
  need(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
  need(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  need(std::floor(static_cast<double>(n_train) * alpha + 1e-9) >= 1.0, "n_train * alpha must keep at least one record");
  need(passes >= 2, "passes must be >= 2");
  need(n_cal >= minimal_calibration_size(delta),
       "n_cal is too small for delta; minimal feasible n_cal is " + std::to_string(minimal_calibration_size(delta)));
  need(!methods.empty(), "methods must name at least one method");
  need(table.ma2_length >= 3, "ma2_length must be >= 3");
  need(table.grf.grid >= 2, "grf_grid must be >= 2");
  need(table.lv.tau > 0.0, "lv_tau must be positive");
  need(table.lv.max_events > 0, "lv_max_events must be positive");
  need(table.max_attempts > 0, "max_attempts must be positive");
  need(plot_records >= 0, "plot_records must be >= 0");
  const Index d = sim::parameter_dim(model);
  need(region_component >= -1 && region_component < d,
       "region_component must be -1 or a component index below " + std::to_string(d));
  need(std::is_sorted(region_thresholds.begin(), region_thresholds.end()) &&
           std::adjacent_find(region_thresholds.begin(), region_thresholds.end()) == region_thresholds.end(),
       "region_thresholds must be strictly ascending");
  try {
    train.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool ExperimentConfig::has(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& e : key_table()) k.push_back(e.info);
    return k;
  }();
  return keys;
}

std::string config_help() {
  const auto ma2 = ExperimentConfig::defaults(sim::ModelTag::Ma2).to_json();
  const auto grf = ExperimentConfig::defaults(sim::ModelTag::Grf).to_json();
  const auto lv = ExperimentConfig::defaults(sim::ModelTag::LotkaVolterra).to_json();
  auto shown = [](const json& v) {
    if (v.is_array()) {
      std::string s;
      for (const auto& e : v) s += (s.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
      return s.empty() ? std::string("(none)") : s;
    }
    return v.is_string() ? v.get<std::string>() : v.dump();
  };
  std::ostringstream out;
  out << "Config keys (JSON object, or key=value overrides). Defaults per model:\n";
  char line[512];
  std::snprintf(line, sizeof line, "  %-20s %-22s %-22s %-22s %s\n", "key", "ma2", "grf", "lv", "meaning");
  out << line;
  for (const auto& e : key_table()) {
    const auto& n = e.info.name;
    if (n == "methods") {
      std::snprintf(line, sizeof line, "  %-20s %-68s %s\n", n.c_str(), shown(ma2.at(n)).c_str(),
                    ("[" + e.info.type + "]").c_str());
    } else {
      std::snprintf(line, sizeof line, "  %-20s %-22s %-22s %-22s %s [%s]\n", n.c_str(), shown(ma2.at(n)).c_str(),
                    shown(grf.at(n)).c_str(), shown(lv.at(n)).c_str(), e.info.description.c_str(),
                    e.info.type.c_str());
    }
    out << line;
  }
  return out.str();
}

nn::NetworkSpec default_network(const ExperimentConfig& cfg) {
  using nn::Activation;
  using nn::LayerSpec;
  nn::NetworkSpec spec;
  spec.output_dim = sim::parameter_dim(cfg.model);
  spec.dropout_temperature = cfg.train.temperature;
  spec.input_shape = sim::data_shape(cfg.model, cfg.table);
  auto dense_block = [&spec](Index units, Activation act, int count) {
    for (int i = 0; i < count; ++i) {
      spec.layers.push_back(LayerSpec::concrete_dropout());
      spec.layers.push_back(LayerSpec::dense(units, act));
    }
    spec.layers.push_back(LayerSpec::concrete_dropout());
  };
  switch (cfg.model) {
    case sim::ModelTag::Ma2:
      spec.layers = {LayerSpec::conv1d(64, 3, Activation::Relu), LayerSpec::max_pool(),
                     LayerSpec::conv1d(64, 3, Activation::Relu), LayerSpec::max_pool(),
                     LayerSpec::conv1d(64, 3, Activation::Relu), LayerSpec::flatten()};
      dense_block(100, Activation::Relu, 3);
      break;
    case sim::ModelTag::Grf:
      spec.layers = {LayerSpec::conv2d(32, 3, Activation::Relu), LayerSpec::max_pool(),
                     LayerSpec::conv2d(64, 3, Activation::Relu), LayerSpec::max_pool(),
                     LayerSpec::conv2d(64, 3, Activation::Relu), LayerSpec::flatten()};
      dense_block(64, Activation::Relu, 2);
      break;
    case sim::ModelTag::LotkaVolterra:
      spec.layers = {LayerSpec::conv1d(128, 2, Activation::Tanh), LayerSpec::max_pool(),
                     LayerSpec::conv1d(128, 2, Activation::Tanh), LayerSpec::max_pool(),
                     LayerSpec::conv1d(128, 2, Activation::Tanh), LayerSpec::flatten()};
      dense_block(100, Activation::Tanh, 3);
      break;
  }
  return spec;
}

// --- serialization ------------------------------------------------------------

json prediction_to_json(const DropoutPrediction& p) {
  return {{"mean", to_std(p.mean)},
          {"epistemic_cov", matrix_to_json(p.epistemic_cov)},
          {"aleatoric", to_std(p.aleatoric)},
          {"overall_cov", matrix_to_json(p.overall_cov)},
          {"passes", p.passes}};
}

DropoutPrediction prediction_from_json(const json& j) {
  DropoutPrediction p;
  p.mean = vector_from_json(j.at("mean"));
  p.epistemic_cov = matrix_from_json(j.at("epistemic_cov"));
  p.aleatoric = vector_from_json(j.at("aleatoric"));
  p.overall_cov = matrix_from_json(j.at("overall_cov"));
  p.passes = j.at("passes").get<Index>();
  return p;
}

json result_to_json(const eval::MethodResult& r) {
  json sets = json::array();
  for (const auto& s : r.sets) {
    sets.push_back({{"center", to_std(s.center())}, {"shape", matrix_to_json(s.shape())}, {"radius", s.radius()}});
  }
  return {{"method", r.method},
          {"truths", matrix_to_json(r.truths)},
          {"estimates", matrix_to_json(r.estimates)},
          {"lower", matrix_to_json(r.lower)},
          {"upper", matrix_to_json(r.upper)},
          {"sets", sets}};
}

eval::MethodResult result_from_json(const json& j) {
  eval::MethodResult r;
  r.method = j.at("method").get<std::string>();
  r.truths = matrix_from_json(j.at("truths"));
  r.estimates = matrix_from_json(j.at("estimates"));
  r.lower = matrix_from_json(j.at("lower"));
  r.upper = matrix_from_json(j.at("upper"));
  for (const auto& s : j.at("sets")) {
    r.sets.emplace_back(vector_from_json(s.at("center")), matrix_from_json(s.at("shape")),
                        s.at("radius").get<double>());
  }
  return r;
}

// --- experiment ---------------------------------------------------------------

Experiment::Experiment(ExperimentConfig cfg, fs::path dir, bool force, Progress progress)
    : cfg_(std::move(cfg)), dir_(std::move(dir)), force_(force), progress_(std::move(progress)) {
  cfg_.validate();
  hash_ = cfg_.hash();
  fs::create_directories(dir_);
  if (auto existing = load_json("config.json"); !existing) {
    json body = cfg_.to_json();
    save_json("config.json", {{"config", body}});
  }
}

json Experiment::provenance() const { return {{"config_hash", hash_}, {"seed", cfg_.seed}}; }

void Experiment::check_provenance(const json& prov, const fs::path& file) const {
  const std::string other = prov.is_object() && prov.contains("config_hash") ? prov.at("config_hash").get<std::string>()
                                                                             : std::string("(none)");
  if (other != hash_) {
    fail("artifact " + file.string() + " has config hash " + other + " but the current config hash is " + hash_ +
         " (rerun with --force to recompute)");
  }
}

std::optional<json> Experiment::load_json(const std::string& name) {
  const fs::path file = path(name);
  if (!fs::exists(file)) return std::nullopt;
  std::ifstream in(file);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    if (force_) return std::nullopt;
    fail("artifact " + file.string() + " is not valid JSON: " + e.what());
  }
  const json prov = j.contains("provenance") ? j.at("provenance") : json();
  if (force_ && (!prov.is_object() || prov.value("config_hash", "") != hash_)) return std::nullopt;
  check_provenance(prov, file);
  return j;
}

void Experiment::save_json(const std::string& name, json body) const {
  body["provenance"] = provenance();
  const fs::path file = path(name);
  fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) fail("cannot write " + file.string());
    out << body.dump(1) << '\n';
    if (!out) fail("write failed for " + file.string());
  }
  fs::rename(tmp, file);
}

const Tables& Experiment::tables() {
  if (tables_) return *tables_;
  const std::vector<std::pair<const char*, sim::ReferenceTable Tables::*>> parts{
      {"train", &Tables::train}, {"val", &Tables::val}, {"cal", &Tables::cal}, {"test", &Tables::test}};
  const std::vector<Index> sizes{cfg_.n_train, cfg_.n_val, cfg_.n_cal, cfg_.n_test};
  Tables t;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto [name, member] = parts[k];
    const fs::path file = path(std::string("tables/") + name + ".bin");
    bool loaded = false;
    if (fs::exists(file)) {
      json prov;
      sim::ReferenceTable table = sim::load_table(file, &prov);
      if (!(force_ && prov.value("config_hash", "") != hash_)) {
        check_provenance(prov, file);
        t.*member = std::move(table);
        loaded = true;
      }
    }
    if (!loaded) {
      progress_(std::string("simulating ") + name + " table (" + std::to_string(sizes[k]) + " records)");
      try {
        t.*member = sim::generate_reference_table(cfg_.model, sizes[k], derive_seed(cfg_.seed, name), cfg_.table);
      } catch (const Error& e) {
        throw Error(e.module(), std::string("stage simulate (") + name + "): " + e.what());
      }
      fs::create_directories(file.parent_path());
      const fs::path tmp = file.string() + ".tmp";
      sim::save_table(tmp, t.*member, provenance());
      fs::rename(tmp, file);
    }
  }
  tables_ = std::move(t);
  return *tables_;
}

const ParameterScale& Experiment::parameter_scale() {
  if (scale_) return *scale_;
  ParameterScale s;
  const Index d = sim::parameter_dim(cfg_.model);
  if (cfg_.model == sim::ModelTag::LotkaVolterra) {
    s.map = nn::Standardization::fit(tables().train.thetas());
    s.identity = false;
  } else {
    s.map = nn::Standardization::identity(d);
  }
  scale_ = s;
  return *scale_;
}

MatrixXd Experiment::thetas(const sim::ReferenceTable& t) {
  const auto& s = parameter_scale();
  return s.identity ? t.thetas() : s.map.apply_columns(t.thetas());
}

const nn::TrainedModel& Experiment::model() {
  if (model_) return *model_;
  const fs::path file = path("model.ckpt");
  if (fs::exists(file)) {
    json prov;
    nn::TrainedModel m = nn::load_checkpoint(file, &prov);
    if (!(force_ && prov.value("config_hash", "") != hash_)) {
      check_provenance(prov, file);
      model_ = std::move(m);
      return *model_;
    }
  }
  const Tables& t = tables();
  const nn::Dataset train_set{sim::network_inputs(cfg_.model, t.train.data()), thetas(t.train)};
  const nn::Dataset val_set{sim::network_inputs(cfg_.model, t.val.data()), thetas(t.val)};
  nn::TrainConfig tc = cfg_.train;
  tc.seed = derive_seed(cfg_.seed, "network");
  progress_("training network (" + std::to_string(tc.epochs) + " epochs max)");
  try {
    model_ = nn::train(default_network(cfg_), train_set, val_set, tc, [this](int epoch, double tl, double vl) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %d train_loss %.6f val_loss %.6f", epoch, tl, vl);
      progress_(buf);
    });
  } catch (const Error& e) {
    throw Error(e.module(), std::string("stage train: ") + e.what());
  }
  const fs::path tmp = file.string() + ".tmp";
  nn::save_checkpoint(tmp, *model_, provenance());
  fs::rename(tmp, file);
  return *model_;
}

std::vector<DropoutPrediction> Experiment::predict(const sim::ReferenceTable& t, const char* tag) {
  const std::string name = std::string("predictions_") + tag + ".json";
  if (auto j = load_json(name)) {
    std::vector<DropoutPrediction> out;
    for (const auto& p : j->at("predictions")) out.push_back(prediction_from_json(p));
    if (static_cast<Index>(out.size()) != t.size()) fail(name + " does not match its table size");
    return out;
  }
  const nn::TrainedModel& m = model();
  progress_(std::string("MC dropout on ") + tag + " set (" + std::to_string(t.size()) + " records, K=" +
            std::to_string(cfg_.passes) + ")");
  const std::uint64_t base = derive_seed(cfg_.seed, std::string("mc-") + tag);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(t.size()));
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(base, i);
  std::vector<DropoutPrediction> out;
  try {
    out = predict_mc_batch(m, sim::network_inputs(cfg_.model, t.data()), cfg_.passes, seeds);
  } catch (const Error& e) {
    throw Error(e.module(), std::string("stage predict (") + tag + "): " + e.what());
  }
  json arr = json::array();
  for (const auto& p : out) arr.push_back(prediction_to_json(p));
  save_json(name, {{"set", tag}, {"passes", cfg_.passes}, {"predictions", arr}});
  return out;
}

const std::vector<DropoutPrediction>& Experiment::calibration_predictions() {
  if (!cal_preds_) cal_preds_ = predict(tables().cal, "cal");
  return *cal_preds_;
}

const std::vector<DropoutPrediction>& Experiment::test_predictions() {
  if (!test_preds_) test_preds_ = predict(tables().test, "test");
  return *test_preds_;
}

const Calibration& Experiment::calibration(UncertaintyKind kind) {
  if (auto it = calibrations_.find(kind); it != calibrations_.end()) return it->second;
  const std::string name = "calibrator_" + to_string(kind) + ".json";
  Calibration c;
  if (auto j = load_json(name)) {
    c.joint = calibrator_from_json(j->at("joint"));
    for (const auto& e : j->at("components")) c.components.push_back(calibrator_from_json(e));
  } else {
    const auto& preds = calibration_predictions();
    const MatrixXd truth = thetas(tables().cal);
    progress_("calibrating (" + to_string(kind) + ")");
    try {
      c.joint = calibrate(joint_scores(preds, truth, kind), cfg_.delta, kind);
      for (Index d = 0; d < truth.rows(); ++d) {
        c.components.push_back(calibrate(component_scores(preds, truth, d, kind), cfg_.delta, kind));
      }
    } catch (const Error& e) {
      throw Error(e.module(), "stage calibrate: " + std::string(e.what()));
    }
    json comps = json::array();
    for (const auto& e : c.components) comps.push_back(calibrator_to_json(e));
    save_json(name, {{"joint", calibrator_to_json(c.joint)}, {"components", comps}});
  }
  return calibrations_.emplace(kind, std::move(c)).first->second;
}

eval::MethodResult Experiment::run_abcd(UncertaintyKind kind) {
  const Calibration& cal = calibration(kind);
  const auto& preds = test_predictions();
  const Index n = static_cast<Index>(preds.size()), d = sim::parameter_dim(cfg_.model);
  eval::MethodResult r;
  r.method = to_string(kind == UncertaintyKind::Overall ? Method::AbcdOverall : Method::AbcdEpistemic);
  r.truths = thetas(tables().test);
  r.estimates.resize(d, n);
  r.lower.resize(d, n);
  r.upper.resize(d, n);
  for (Index i = 0; i < n; ++i) {
    const auto& p = preds[static_cast<std::size_t>(i)];
    r.estimates.col(i) = p.mean;
    r.sets.push_back(confidence_set(p, kind, cal.joint));
    const auto iv = marginal_intervals(p, kind, cal.components);
    for (Index j = 0; j < d; ++j) {
      r.lower(j, i) = iv[static_cast<std::size_t>(j)].lower;
      r.upper(j, i) = iv[static_cast<std::size_t>(j)].upper;
    }
  }
  return r;
}

eval::MethodResult Experiment::run_standard_abc() {
  const Tables& t = tables();
  const auto kind = abc::default_summary(cfg_.model);
  progress_("standard ABC (" + abc::to_string(kind) + ", alpha=" + json(cfg_.alpha).dump() + ")");
  const MatrixXd summaries = abc::table_summaries(t.train, kind);
  const auto& scale = parameter_scale();
  eval::MethodResult r;
  r.method = to_string(Method::StandardAbc);
  r.truths = thetas(t.test);
  const Index n = t.test.size(), d = r.truths.rows();
  r.estimates.resize(d, n);
  r.lower.resize(d, n);
  r.upper.resize(d, n);
  for (Index i = 0; i < n; ++i) {
    auto set = abc::rejection_abc(t.train, summaries, t.test.records[static_cast<std::size_t>(i)].x, kind, cfg_.alpha);
    if (!scale.identity) set.thetas = scale.map.apply_columns(set.thetas);
    const auto s = abc::posterior_summaries_from_accepted(set, cfg_.delta);
    r.estimates.col(i) = s.mean;
    r.lower.col(i) = s.lower;
    r.upper.col(i) = s.upper;
  }
  return r;
}

eval::MethodResult Experiment::run_abc_cnn() {
  const Tables& t = tables();
  const nn::TrainedModel& m = model();
  progress_("ABC-CNN (" + abc::to_string(cfg_.cnn_distance) + ")");
  const MatrixXd table_thetas = thetas(t.train);
  const MatrixXd table_pred = abc::point_predictions(m, cfg_.model, t.train.data());
  const MatrixXd test_pred = abc::point_predictions(m, cfg_.model, t.test.data());
  eval::MethodResult r;
  r.method = to_string(Method::AbcCnn);
  r.truths = thetas(t.test);
  const Index n = t.test.size(), d = r.truths.rows();
  r.estimates.resize(d, n);
  r.lower.resize(d, n);
  r.upper.resize(d, n);
  for (Index i = 0; i < n; ++i) {
    const auto set = abc::abc_cnn(table_thetas, table_pred, test_pred.col(i), cfg_.alpha, cfg_.cnn_distance);
    const auto s = abc::posterior_summaries_from_accepted(set, cfg_.delta);
    r.estimates.col(i) = s.mean;
    r.lower.col(i) = s.lower;
    r.upper.col(i) = s.upper;
  }
  return r;
}

const eval::MethodResult& Experiment::result(Method m) {
  if (auto it = results_.find(m); it != results_.end()) return it->second;
  const std::string name = "results/" + to_string(m) + ".json";
  eval::MethodResult r;
  if (auto j = load_json(name)) {
    r = result_from_json(*j);
  } else {
    try {
      switch (m) {
        case Method::StandardAbc: r = run_standard_abc(); break;
        case Method::AbcCnn: r = run_abc_cnn(); break;
        case Method::AbcdOverall: r = run_abcd(UncertaintyKind::Overall); break;
        case Method::AbcdEpistemic: r = run_abcd(UncertaintyKind::Epistemic); break;
      }
    } catch (const Error& e) {
      const std::string what = e.what();
      if (what.rfind("stage ", 0) == 0) throw;
      throw Error(e.module(), "stage infer (" + to_string(m) + "): " + what);
    }
    save_json(name, result_to_json(r));
  }
  return results_.emplace(m, std::move(r)).first->second;
}

const eval::EvalReport& Experiment::report(Method m) {
  if (auto it = reports_.find(m); it != reports_.end()) return it->second;
  const std::string name = "reports/" + to_string(m) + ".json";
  eval::EvalReport rep;
  if (auto j = load_json(name)) {
    rep = eval::report_from_json(*j);
  } else {
    const auto& r = result(m);
    rep = eval::evaluate(r, cfg_.delta);
    if (cfg_.region_component >= 0) {
      const auto names = component_names(cfg_.model);
      const auto regions =
          eval::threshold_regions(names[static_cast<std::size_t>(cfg_.region_component)], cfg_.region_thresholds);
      eval::add_regional_breakdown(rep, r, cfg_.region_component, regions);
    }
    save_json(name, eval::report_to_json(rep));
  }
  return reports_.emplace(m, std::move(rep)).first->second;
}

std::vector<eval::EvalReport> Experiment::compare() {
  std::vector<eval::EvalReport> reports;
  const eval::MethodResult* first = nullptr;
  for (Method m : cfg_.methods) {
    const auto& r = result(m);
    if (first && (first->truths.rows() != r.truths.rows() || first->truths.cols() != r.truths.cols() ||
                  first->truths != r.truths)) {
      fail("methods " + first->method + " and " + r.method + " were evaluated on different test sets");
    }
    if (!first) first = &r;
    reports.push_back(report(m));
  }
  const std::string header = "# config_hash=" + hash_ + " seed=" + std::to_string(cfg_.seed) + "\n";
  auto write = [&](const std::string& name, const std::string& body) {
    const fs::path file = path(name);
    std::ofstream out(file);
    out << header << body;
    if (!out) fail("cannot write " + file.string());
  };
  write("compare.csv", eval::reports_to_csv(reports));
  if (cfg_.region_component >= 0) write("regional.csv", eval::regional_csv(reports));
  return reports;
}

}  // namespace abcd::pipeline
