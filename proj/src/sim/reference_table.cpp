#include "abcd/sim/reference_table.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "abcd/binary_io.hpp"
#include "abcd/parallel.hpp"

namespace abcd::sim {

namespace {

const char* kModule = "simulators";
const char* kBinaryMagic = "ABCD-TABLE";
constexpr int kBinaryVersion = 1;

nlohmann::json header_json(const ReferenceTable& t, const nlohmann::json& provenance) {
  return {{"model", to_string(t.model)},
          {"master_seed", t.master_seed},
          {"n", t.size()},
          {"data_shape", t.data_shape},
          {"theta_dim", t.theta_dim()},
          {"provenance", provenance.is_null() ? nlohmann::json::object() : provenance}};
}

ReferenceTable table_from_header(const nlohmann::json& h) {
  ReferenceTable t;
  t.model = model_from_string(h.at("model").get<std::string>());
  t.master_seed = h.at("master_seed").get<std::uint64_t>();
  t.data_shape = h.at("data_shape").get<std::vector<Index>>();
  return t;
}

VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

nlohmann::json TableOptions::to_json() const {
  return {{"ma2_length", ma2_length},
          {"grf_grid", grf.grid},
          {"grf_extent", grf.extent},
          {"grf_method", grf.method == GrfMethod::Separable ? "separable" : "dense"},
          {"lv_method", lv_method == LvMethod::TauLeap ? "tau_leap" : "exact"},
          {"lv_tau", lv.tau},
          {"lv_max_events", lv.max_events},
          {"max_attempts", max_attempts}};
}

MatrixXd ReferenceTable::thetas() const {
  MatrixXd m(theta_dim(), size());
  for (Index j = 0; j < size(); ++j) m.col(j) = records[static_cast<std::size_t>(j)].theta;
  return m;
}

MatrixXd ReferenceTable::data() const {
  MatrixXd m(x_size(), size());
  for (Index j = 0; j < size(); ++j) m.col(j) = records[static_cast<std::size_t>(j)].x;
  return m;
}

std::vector<Index> data_shape(ModelTag model, const TableOptions& opts) {
  switch (model) {
    case ModelTag::Ma2: return {opts.ma2_length, 1};
    case ModelTag::Grf: return {opts.grf.grid, opts.grf.grid, 1};
    case ModelTag::LotkaVolterra: return {opts.lv.n_obs, 2};
  }
  return {};
}

std::optional<VectorXd> simulate(ModelTag model, const VectorXd& theta, std::uint64_t seed, const TableOptions& opts) {
  switch (model) {
    case ModelTag::Ma2: return simulate_ma2({theta(0), theta(1)}, opts.ma2_length, seed);
    case ModelTag::Grf: {
      const MatrixXd f = simulate_grf(theta(0), opts.grf, seed);
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = f;
      return Eigen::Map<const VectorXd>(rm.data(), rm.size());
    }
    case ModelTag::LotkaVolterra: {
      auto tr = simulate_lv({theta(0), theta(1), theta(2)}, opts.lv_method, seed, opts.lv);
      if (!tr) return std::nullopt;
      return tr->to_vector();
    }
  }
  return std::nullopt;
}

MatrixXd network_inputs(ModelTag model, const MatrixXd& data) {
  if (model == ModelTag::LotkaVolterra) return data.array().log1p().matrix();
  return data;
}

ReferenceTable generate_reference_table(ModelTag model, Index n, std::uint64_t master_seed, const TableOptions& opts) {
  if (n < 1) throw Error(kModule, "reference table size must be >= 1");
  ReferenceTable table;
  table.model = model;
  table.master_seed = master_seed;
  table.data_shape = data_shape(model, opts);
  table.records.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t j) {
    Record& r = table.records[j];
    r.index = static_cast<Index>(j);
    r.seed = derive_seed(master_seed, j);
    if (model != ModelTag::LotkaVolterra) {
      r.theta = sample_prior(model, derive_seed(r.seed, "prior"));
      r.x = *simulate(model, r.theta, derive_seed(r.seed, "sim"), opts);
      return;
    }
    for (Index attempt = 0; attempt < opts.max_attempts; ++attempt) {
      const std::uint64_t s = derive_seed(r.seed, static_cast<std::uint64_t>(attempt));
      VectorXd theta = sample_prior(model, derive_seed(s, "prior"));
      try {
        auto x = simulate(model, theta, derive_seed(s, "sim"), opts);
        if (!x) continue;
        r.theta = std::move(theta);
        r.x = std::move(*x);
        return;
      } catch (const EventBudgetExceeded&) {
        continue;
      }
    }
    throw Error(kModule, "record " + std::to_string(j) + ": no surviving LV trajectory within " +
                             std::to_string(opts.max_attempts) + " attempts");
  });
  return table;
}

void write_ndjson(std::ostream& out, const ReferenceTable& table, const nlohmann::json& provenance) {
  out << header_json(table, provenance).dump() << '\n';
  for (const auto& r : table.records) {
    nlohmann::json j{{"index", r.index},
                     {"theta", std::vector<double>(r.theta.data(), r.theta.data() + r.theta.size())},
                     {"x", std::vector<double>(r.x.data(), r.x.data() + r.x.size())},
                     {"seed", r.seed}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error(kModule, "failed writing reference table");
}

ReferenceTable read_ndjson(std::istream& in, nlohmann::json* provenance) {
  std::string line;
  if (!std::getline(in, line)) throw Error(kModule, "empty reference table file");
  try {
    const auto header = nlohmann::json::parse(line);
    ReferenceTable t = table_from_header(header);
    const auto n = header.at("n").get<Index>();
    t.records.reserve(static_cast<std::size_t>(n));
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      Record r;
      r.index = j.at("index").get<Index>();
      r.theta = to_vector(j.at("theta").get<std::vector<double>>());
      r.x = to_vector(j.at("x").get<std::vector<double>>());
      r.seed = j.at("seed").get<std::uint64_t>();
      t.records.push_back(std::move(r));
    }
    if (t.size() != n) throw Error(kModule, "reference table record count does not match its header");
    if (provenance) *provenance = header.value("provenance", nlohmann::json::object());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("malformed reference table: ") + e.what());
  }
}

void write_binary(std::ostream& out, const ReferenceTable& table, const nlohmann::json& provenance) {
  auto header = header_json(table, provenance);
  header["x_size"] = table.x_size();
  const std::string text = header.dump();
  out << kBinaryMagic << ' ' << kBinaryVersion << '\n' << text.size() << '\n' << text << '\n';
  for (const auto& r : table.records) {
    io::write_u64(out, static_cast<std::uint64_t>(r.index));
    io::write_u64(out, r.seed);
    io::write_f64(out, {r.theta.data(), static_cast<std::size_t>(r.theta.size())});
    io::write_f64(out, {r.x.data(), static_cast<std::size_t>(r.x.size())});
  }
  if (!out) throw Error(kModule, "failed writing reference table");
}

ReferenceTable read_binary(std::istream& in, nlohmann::json* provenance) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (!in || magic != kBinaryMagic) throw Error(kModule, "not a binary reference table");
  if (version != kBinaryVersion) throw Error(kModule, "unsupported table version " + std::to_string(version));
  std::size_t length = 0;
  in >> length;
  in.get();
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in || in.get() != '\n') throw Error(kModule, "truncated table header");
  try {
    const auto header = nlohmann::json::parse(text);
    ReferenceTable t = table_from_header(header);
    const auto n = header.at("n").get<Index>();
    const auto dim = header.at("theta_dim").get<Index>();
    const auto xs = header.at("x_size").get<Index>();
    t.records.resize(static_cast<std::size_t>(n));
    for (auto& r : t.records) {
      r.index = static_cast<Index>(io::read_u64(in));
      r.seed = io::read_u64(in);
      r.theta.resize(dim);
      r.x.resize(xs);
      io::read_f64(in, {r.theta.data(), static_cast<std::size_t>(dim)});
      io::read_f64(in, {r.x.data(), static_cast<std::size_t>(xs)});
    }
    if (provenance) *provenance = header.value("provenance", nlohmann::json::object());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, std::string("malformed table header: ") + e.what());
  }
}

void save_table(const std::filesystem::path& path, const ReferenceTable& table, const nlohmann::json& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(kModule, "cannot open " + path.string() + " for writing");
  if (path.extension() == ".bin") {
    write_binary(out, table, provenance);
  } else {
    write_ndjson(out, table, provenance);
  }
}

ReferenceTable load_table(const std::filesystem::path& path, nlohmann::json* provenance) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(kModule, "cannot open " + path.string());
  if (in.peek() == 'A') return read_binary(in, provenance);
  return read_ndjson(in, provenance);
}

}  // namespace abcd::sim
