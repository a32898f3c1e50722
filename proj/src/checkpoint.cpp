#include "pearl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace pearl {

namespace {
constexpr char kMagic[] = "PEARLCKPT1";
constexpr size_t kMagicLen = 10;
}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const CheckpointMeta& meta) {
    json header;
    header["stage"] = meta.stage;
    header["step"] = meta.step;
    header["spec_hash"] = meta.spec_hash;
    header["spec"] = meta.spec_json;
    header["rng_state"] = meta.rng_state;
    header["provenance"] = meta.provenance;
    header["version"] = store.version;
    header["arrays"] = json::array();
    for (const auto& [name, t] : store.arrays) {  // map order: sorted, stable
        json ja;
        ja["name"] = name;
        ja["shape"] = t.shape();
        header["arrays"].push_back(std::move(ja));
    }
    std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write(kMagic, kMagicLen);
    uint32_t len = uint32_t(hs.size());
    uint8_t lb[4] = {uint8_t(len), uint8_t(len >> 8), uint8_t(len >> 16), uint8_t(len >> 24)};
    os.write(reinterpret_cast<const char*>(lb), 4);
    os.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& [name, t] : store.arrays) {
        std::vector<float> raw(t.size());
        for (size_t i = 0; i < t.size(); ++i) raw[i] = float(t[i]);
        os.write(reinterpret_cast<const char*>(raw.data()),
                 std::streamsize(raw.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

std::pair<ParameterStore, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[kMagicLen];
    is.read(magic, kMagicLen);
    if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    uint8_t lb[4];
    is.read(reinterpret_cast<char*>(lb), 4);
    uint32_t len = uint32_t(lb[0]) | uint32_t(lb[1]) << 8 | uint32_t(lb[2]) << 16 |
                   uint32_t(lb[3]) << 24;
    std::string hs(len, '\0');
    is.read(hs.data(), len);
    if (!is) throw std::runtime_error("truncated checkpoint header: " + path);
    json header = json::parse(hs);

    CheckpointMeta meta;
    meta.stage = header.at("stage").get<std::string>();
    meta.step = header.at("step").get<int64_t>();
    meta.spec_hash = header.at("spec_hash").get<std::string>();
    meta.spec_json = header.at("spec").get<std::string>();
    meta.rng_state = header.at("rng_state").get<std::string>();
    meta.provenance = header.at("provenance").get<std::map<std::string, std::string>>();

    ParameterStore store;
    store.version = header.at("version").get<std::string>();
    store.provenance = meta.provenance;
    for (const auto& ja : header.at("arrays")) {
        std::string name = ja.at("name").get<std::string>();
        std::vector<int> shape = ja.at("shape").get<std::vector<int>>();
        Tensor t(shape);
        std::vector<float> raw(t.size());
        is.read(reinterpret_cast<char*>(raw.data()),
                std::streamsize(raw.size() * sizeof(float)));
        if (!is) throw std::runtime_error("truncated checkpoint arrays: " + path);
        for (size_t i = 0; i < t.size(); ++i) t[i] = double(raw[i]);
        store.arrays.emplace(std::move(name), std::move(t));
    }
    return {std::move(store), std::move(meta)};
}

void require_spec_hash(const CheckpointMeta& meta, const NetworkSpec& spec) {
    std::string expected = spec.hash();
    if (meta.spec_hash != expected)
        throw std::runtime_error("checkpoint architecture mismatch: checkpoint spec hash " +
                                 meta.spec_hash + " vs expected " + expected);
}

}  // namespace pearl
