#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "debias/params.hpp"

namespace debias {

// On-disk layout: a JSON manifest (names, shapes, byte offsets, checksum,
// free-form metadata) next to a little-endian float64 blob named in it.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<CheckpointEntry> entries;
};

void save_checkpoint(const std::filesystem::path& manifest_path, const ParamStore& params,
                     const nlohmann::json& meta);

// Throws IntegrityError on a short or oversized blob, checksum mismatch, or
// entries that overrun the blob.
Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

// Copies checkpoint values into `params`; every registered parameter must be
// present with a matching shape.
void apply_checkpoint(const Checkpoint& ckpt, ParamStore& params);

}  // namespace debias
