#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rtdlab/tensor.hpp"

namespace rtdlab {

// Named-tensor container: fixed header (magic, format version), JSON manifest
// listing (name, shape, offset) per tensor plus a free-form meta object, then
// the float32 little-endian payloads in manifest order.
struct NamedTensors {
    std::vector<std::pair<std::string, Tensor>> items;
    nlohmann::json meta = nlohmann::json::object();
};

inline constexpr uint32_t kTensorStoreVersion = 1;

void save_tensors(const std::string& path, const NamedTensors& nt);
NamedTensors load_tensors(const std::string& path);

}  // namespace rtdlab
