#pragma once

#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "brainit/tensor.hpp"

namespace brainit::io {

using json = nlohmann::json;

/// Named-tensor checkpoint. Map order (lexicographic) is the canonical
/// iteration order everywhere, which keeps optimizer walks deterministic.
using NamedTensors = std::map<std::string, Tensor>;

/// Raw little-endian float32, row-major. Shape travels in the manifest.
void save_tensor_f32(const std::string& path, const Tensor& t);
Tensor load_tensor_f32(const std::string& path, const std::vector<std::int64_t>& shape);

void save_named_tensors(const std::string& dir, const NamedTensors& tensors,
                        const json& extra_manifest = json::object());
NamedTensors load_named_tensors(const std::string& dir, json* extra_manifest = nullptr);

void write_json(const std::string& path, const json& j);
json read_json(const std::string& path);

/// FNV-1a over the canonical (sorted-key) serialization; stable across runs.
std::uint64_t config_hash(const json& j);
std::string hash_hex(std::uint64_t h);

}  // namespace brainit::io
