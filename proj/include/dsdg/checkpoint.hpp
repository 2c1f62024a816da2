#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "dsdg/layers.hpp"

namespace dsdg {

// Binary container: magic "DSDGCKPT", u32 format version, u64 header length,
// JSON header (kind, metadata, tensor table), then raw little-endian doubles
// in table order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string kind;
    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const nlohmann::json& meta,
                     const ParamList& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint tensors into params by name; every param must be present
// with a matching shape.
void load_params(ParamList& params, const Checkpoint& ckpt);

}  // namespace dsdg
