#include "rtdlab/tensor_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace rtdlab {

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'R', 'T', 'L', 'B'};
}

void save_tensors(const std::string& path, const NamedTensors& nt) {
    nlohmann::json manifest;
    manifest["version"] = kTensorStoreVersion;
    manifest["meta"] = nt.meta;
    nlohmann::json tensors = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : nt.items) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = offset;
        tensors.push_back(std::move(e));
        offset += uint64_t(t.size()) * sizeof(float);
    }
    manifest["tensors"] = std::move(tensors);
    const std::string mjson = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_tensors: cannot open " + path + " for writing");
    f.write(kMagic, 4);
    const uint32_t ver = kTensorStoreVersion;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const uint64_t mlen = mjson.size();
    f.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    f.write(mjson.data(), std::streamsize(mjson.size()));
    for (const auto& [name, t] : nt.items) {
        f.write(reinterpret_cast<const char*>(t.data()),
                std::streamsize(size_t(t.size()) * sizeof(float)));
    }
    if (!f) throw IoError("save_tensors: write failed for " + path);
}

NamedTensors load_tensors(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_tensors: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("load_tensors: bad magic in " + path);
    }
    uint32_t ver = 0;
    f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    if (!f || ver != kTensorStoreVersion) {
        throw IoError("load_tensors: format version " + std::to_string(ver) + " in " + path +
                      ", expected " + std::to_string(kTensorStoreVersion));
    }
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!f) throw IoError("load_tensors: truncated header in " + path);
    std::string mjson(mlen, '\0');
    f.read(mjson.data(), std::streamsize(mlen));
    if (!f) throw IoError("load_tensors: truncated manifest in " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mjson);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_tensors: corrupt manifest in " + path + ": " + e.what());
    }
    if (!manifest.contains("tensors") || !manifest["tensors"].is_array()) {
        throw IoError("load_tensors: manifest missing tensors array in " + path);
    }

    NamedTensors nt;
    if (manifest.contains("meta")) nt.meta = manifest["meta"];
    const std::streampos payload_start = f.tellg();
    for (const auto& e : manifest["tensors"]) {
        const std::string name = e.at("name").get<std::string>();
        const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        const uint64_t offset = e.at("offset").get<uint64_t>();
        Tensor t = Tensor::zeros(shape);
        f.seekg(payload_start + std::streamoff(offset));
        f.read(reinterpret_cast<char*>(t.data()),
               std::streamsize(size_t(t.size()) * sizeof(float)));
        if (!f) throw IoError("load_tensors: truncated payload for tensor '" + name + "' in " + path);
        nt.items.emplace_back(name, std::move(t));
    }
    return nt;
}

}  // namespace rtdlab
