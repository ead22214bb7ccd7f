#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "abcd/core.hpp"
#include "abcd/nn/train.hpp"
#include "abcd/sim/models.hpp"

namespace abcd::sim {

struct Record {
  Index index = 0;
  VectorXd theta;
  VectorXd x;
  std::uint64_t seed = 0;  // derived from (master seed, index)

  bool operator==(const Record&) const = default;
};

struct TableOptions {
  Index ma2_length = 100;
  GrfConfig grf;
  LvOptions lv;
  LvMethod lv_method = LvMethod::TauLeap;
  Index max_attempts = 100'000;  // per record, LV rejection budget

  nlohmann::json to_json() const;
};

struct ReferenceTable {
  ModelTag model = ModelTag::Ma2;
  std::uint64_t master_seed = 0;
  std::vector<Index> data_shape;  // channels-last sample shape
  std::vector<Record> records;

  Index size() const { return static_cast<Index>(records.size()); }
  Index theta_dim() const { return records.empty() ? parameter_dim(model) : records.front().theta.size(); }
  Index x_size() const { return records.empty() ? 0 : records.front().x.size(); }

  MatrixXd thetas() const;  // D x N
  MatrixXd data() const;    // F x N

  bool operator==(const ReferenceTable&) const = default;
};

/// Channels-last sample shape produced by a model under the given options.
std::vector<Index> data_shape(ModelTag model, const TableOptions& opts);

/// Simulates one dataset; nullopt for a discarded (extinct) LV draw.
std::optional<VectorXd> simulate(ModelTag model, const VectorXd& theta, std::uint64_t seed, const TableOptions& opts);

/// Network-side view of simulated data: LV counts go through log1p, the
/// other models pass through unchanged. Columns are samples.
MatrixXd network_inputs(ModelTag model, const MatrixXd& data);

/// Record j uses seed derive_seed(master_seed, j). LV draws that go extinct
/// or exceed the event budget are redrawn (new theta and trajectory) from
/// derive_seed(record seed, attempt).
ReferenceTable generate_reference_table(ModelTag model, Index n, std::uint64_t master_seed,
                                        const TableOptions& opts = {});

/// Newline-delimited JSON: a header object, then one {index, theta, x, seed} per line.
void write_ndjson(std::ostream& out, const ReferenceTable& table, const nlohmann::json& provenance = {});
ReferenceTable read_ndjson(std::istream& in, nlohmann::json* provenance = nullptr);

/// Binary companion: "ABCD-TABLE <version>" line, header length line, JSON
/// header, then per record u64 index, u64 seed, float64 theta, float64 x
/// (all little-endian).
void write_binary(std::ostream& out, const ReferenceTable& table, const nlohmann::json& provenance = {});
ReferenceTable read_binary(std::istream& in, nlohmann::json* provenance = nullptr);

void save_table(const std::filesystem::path& path, const ReferenceTable& table, const nlohmann::json& provenance = {});
/// Format is chosen from the file content.
ReferenceTable load_table(const std::filesystem::path& path, nlohmann::json* provenance = nullptr);

}  // namespace abcd::sim
