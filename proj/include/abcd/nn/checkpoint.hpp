#pragma once

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "abcd/nn/network.hpp"

namespace abcd::nn {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

/// Checkpoint layout: a text line "ABCD-CHECKPOINT <version>", a line with the
/// byte length of the JSON header, the header (spec, shapes, training record,
/// caller-supplied provenance), then little-endian float64 arrays: per layer
/// weight (column-major), bias and dropout logit, followed by the target
/// standardization shift and scale.
void write_checkpoint(std::ostream& out, const TrainedModel& model, const nlohmann::json& provenance = {});
TrainedModel read_checkpoint(std::istream& in, nlohmann::json* provenance = nullptr);

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model,
                     const nlohmann::json& provenance = {});
TrainedModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* provenance = nullptr);

}  // namespace abcd::nn
