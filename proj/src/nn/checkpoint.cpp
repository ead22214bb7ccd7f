#include "abcd/nn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "abcd/binary_io.hpp"

namespace abcd::nn {

namespace {

const char* kModule = "tensor-nn";
const char* kMagic = "ABCD-CHECKPOINT";

void write_matrix(std::ostream& out, const MatrixXd& m) { io::write_f64(out, {m.data(), static_cast<std::size_t>(m.size())}); }

}  // namespace

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json j{{"kind", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::Dense:
        j["units"] = l.units;
        j["activation"] = to_string(l.activation);
        break;
      case LayerKind::Conv1D:
      case LayerKind::Conv2D:
        j["channels"] = l.channels;
        j["kernel"] = l.kernel;
        j["activation"] = to_string(l.activation);
        break;
      case LayerKind::MaxPool: j["pool"] = l.pool; break;
      case LayerKind::ConcreteDropout: j["initial_dropout"] = l.initial_dropout; break;
      case LayerKind::Activation: j["activation"] = to_string(l.activation); break;
      case LayerKind::Flatten: break;
    }
    layers.push_back(std::move(j));
  }
  return {{"input_shape", spec.input_shape},
          {"layers", layers},
          {"output_dim", spec.output_dim},
          {"head", to_string(spec.head)},
          {"dropout_temperature", spec.dropout_temperature}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  try {
    NetworkSpec spec;
    spec.input_shape = j.at("input_shape").get<std::vector<Index>>();
    spec.output_dim = j.at("output_dim").get<Index>();
    spec.head = head_kind_from_string(j.at("head").get<std::string>());
    spec.dropout_temperature = j.value("dropout_temperature", 0.1);
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
      l.units = lj.value("units", Index{0});
      l.channels = lj.value("channels", Index{0});
      l.kernel = lj.value("kernel", Index{0});
      l.pool = lj.value("pool", Index{2});
      l.initial_dropout = lj.value("initial_dropout", 0.1);
      l.activation = activation_from_string(lj.value("activation", std::string("linear")));
      spec.layers.push_back(l);
    }
    plan_geometry(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("malformed network spec: ") + e.what());
  }
}

void write_checkpoint(std::ostream& out, const TrainedModel& model, const nlohmann::json& provenance) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& p : model.params) shapes.push_back({p.weight.rows(), p.weight.cols(), p.bias.size()});
  nlohmann::json header{{"spec", spec_to_json(model.spec)},
                        {"shapes", shapes},
                        {"training",
                         {{"seed", model.record.seed},
                          {"epochs_run", model.record.epochs_run},
                          {"best_epoch", model.record.best_epoch},
                          {"train_loss", model.record.train_loss},
                          {"val_loss", model.record.val_loss}}},
                        {"dropout_probabilities", model.dropout_probabilities()},
                        {"provenance", provenance.is_null() ? nlohmann::json::object() : provenance}};
  const std::string text = header.dump();
  out << kMagic << ' ' << kCheckpointVersion << '\n' << text.size() << '\n' << text << '\n';
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    write_matrix(out, model.params[i].weight);
    io::write_f64(out, {model.params[i].bias.data(), static_cast<std::size_t>(model.params[i].bias.size())});
    const bool dropout = i < model.spec.layers.size() && model.spec.layers[i].kind == LayerKind::ConcreteDropout;
    if (dropout) io::write_f64(out, {&model.params[i].dropout_logit, 1});
  }
  const auto& st = model.standardization;
  io::write_f64(out, {st.shift.data(), static_cast<std::size_t>(st.shift.size())});
  io::write_f64(out, {st.scale.data(), static_cast<std::size_t>(st.scale.size())});
  if (!out) throw Error(kModule, "failed writing checkpoint");
}

TrainedModel read_checkpoint(std::istream& in, nlohmann::json* provenance) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (!in || magic != kMagic) throw Error(kModule, "not a model checkpoint");
  if (version != kCheckpointVersion) throw Error(kModule, "unsupported checkpoint version " + std::to_string(version));
  std::size_t length = 0;
  in >> length;
  in.get();
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in || in.get() != '\n') throw Error(kModule, "truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("corrupt checkpoint header: ") + e.what());
  }
  TrainedModel model;
  model.spec = spec_from_json(header.at("spec"));
  const auto& tr = header.at("training");
  model.record.seed = tr.at("seed").get<std::uint64_t>();
  model.record.epochs_run = tr.at("epochs_run").get<int>();
  model.record.best_epoch = tr.at("best_epoch").get<int>();
  model.record.train_loss = tr.at("train_loss").get<double>();
  model.record.val_loss = tr.at("val_loss").get<double>();
  const ParamSet expected = initialize(model.spec, 0);
  const auto& shapes = header.at("shapes");
  if (shapes.size() != expected.size()) throw Error(kModule, "checkpoint layer count does not match spec");
  model.params.resize(expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const Index rows = shapes[i][0].get<Index>(), cols = shapes[i][1].get<Index>(), nb = shapes[i][2].get<Index>();
    if (rows != expected[i].weight.rows() || cols != expected[i].weight.cols() || nb != expected[i].bias.size()) {
      throw Error(kModule, "checkpoint weight shape mismatch at layer " + std::to_string(i));
    }
    auto& p = model.params[i];
    p.weight.resize(rows, cols);
    p.bias.resize(nb);
    io::read_f64(in, {p.weight.data(), static_cast<std::size_t>(p.weight.size())});
    io::read_f64(in, {p.bias.data(), static_cast<std::size_t>(p.bias.size())});
    if (i < model.spec.layers.size() && model.spec.layers[i].kind == LayerKind::ConcreteDropout) {
      io::read_f64(in, {&p.dropout_logit, 1});
    }
  }
  const Index dim = model.spec.output_dim;
  model.standardization.shift.resize(dim);
  model.standardization.scale.resize(dim);
  io::read_f64(in, {model.standardization.shift.data(), static_cast<std::size_t>(dim)});
  io::read_f64(in, {model.standardization.scale.data(), static_cast<std::size_t>(dim)});
  if ((model.standardization.scale.array() <= 0.0).any()) throw Error(kModule, "standardization scale must be > 0");
  if (provenance) *provenance = header.value("provenance", nlohmann::json::object());
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model, const nlohmann::json& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(kModule, "cannot open " + path.string() + " for writing");
  write_checkpoint(out, model, provenance);
}

TrainedModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* provenance) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(kModule, "cannot open " + path.string());
  return read_checkpoint(in, provenance);
}

}  // namespace abcd::nn
