#pragma once

#include <string>
#include <vector>

#include "pearl/dataset.hpp"
#include "pearl/image.hpp"

namespace pearl {

// Desk-scale labeled-video corpus: rigid colored shapes translating at
// constant integer velocities over a textured background, with exact labels
// and exact integer-displacement flow between consecutive frames.
//
// When num_classes >= 4 and directional_pair is set, the last two classes
// share one appearance and differ only by horizontal motion direction, so a
// single-frame parser cannot separate them while a temporal model can.
struct SyntheticConfig {
    int num_clips = 20;
    int frames_per_clip = 10;
    int height = 32;
    int width = 64;
    int num_classes = 5;  // class 0 = background
    int min_shapes = 2;
    int max_shapes = 4;
    int min_shape_size = 7;
    int max_shape_size = 14;
    int speed_min = 0;  // per-component integer velocity magnitude bounds
    int speed_max = 2;
    bool directional_pair = true;
    // Scene-wide rigid translation with toroidal wrap; flow is globally
    // constant and warping is exact on every in-bounds pixel.
    bool global_motion = false;
    int annotate_stride = 0;  // 0 -> one annotation per clip at 2T/3
    uint64_t seed = 1;
};

struct RenderedClip {
    std::string clip_id;
    std::vector<Frame> frames;                      // raw domain
    std::vector<LabelMap> labels;                   // every frame
    std::vector<FlowField> flows;                   // flows[t]: t -> t+1
    std::vector<std::vector<int32_t>> instance_ids; // per frame, 0 = background
    std::vector<int> annotated_indices;
};

// Pure in-memory rendering; byte-deterministic given the config.
std::vector<RenderedClip> render_synthetic_clips(const SyntheticConfig& config);

// Renders and writes the on-disk corpus layout (clips/, labels/, flow/,
// manifest.json) under out_root, then returns the reloadable manifest.
DatasetManifest generate_synthetic_dataset(const SyntheticConfig& config,
                                           const std::string& out_root);

}  // namespace pearl
