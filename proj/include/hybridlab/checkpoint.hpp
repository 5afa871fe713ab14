#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "hybridlab/model.hpp"

namespace hybridlab {

inline constexpr char kCheckpointMagic[8] = {'H', 'Y', 'B', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Flat little-endian binary:
///   magic[8] "HYBLCKPT", u32 version,
///   u64 n, n bytes of JSON {"model": ..., "layout": ..., "routers": ..., "meta": ...},
///   where "routers" maps each MoE layer index to its balancing bias and load counts,
///   u64 tensor count, then per tensor:
///     u32 name length, name bytes, u32 rank, i64 dims[rank], f64 values[prod(dims)].
void save_checkpoint(std::ostream& os, HybridModel& model, const nlohmann::json& meta = nlohmann::json::object());
void save_checkpoint(const std::string& path, HybridModel& model, const nlohmann::json& meta = nlohmann::json::object());

struct LoadedCheckpoint {
  HybridModel model;
  nlohmann::json meta;
};

/// Rebuilds the model from the stored config and fills every named tensor.
LoadedCheckpoint load_checkpoint(std::istream& is);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace hybridlab
