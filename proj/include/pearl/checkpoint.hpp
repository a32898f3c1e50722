#pragma once

#include <map>
#include <string>
#include <utility>

#include "pearl/net.hpp"

namespace pearl {

struct CheckpointMeta {
    std::string stage;  // fp | pp | psp | ipnet-baseline | ...
    int64_t step = 0;
    std::string spec_hash;
    std::string spec_json;  // full architecture, so checkpoints reload standalone
    std::string rng_state;
    std::map<std::string, std::string> provenance;
};

// Container: magic "PEARLCKPT1", u32 LE header length, JSON header, then raw
// little-endian float32 arrays in header-declared order.
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const CheckpointMeta& meta);

std::pair<ParameterStore, CheckpointMeta> load_checkpoint(const std::string& path);

// Architecture guard: throws naming both hashes on mismatch.
void require_spec_hash(const CheckpointMeta& meta, const NetworkSpec& spec);

}  // namespace pearl
