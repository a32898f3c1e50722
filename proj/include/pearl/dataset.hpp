#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pearl/image.hpp"
#include "pearl/rng.hpp"

namespace pearl {

// One clip: temporally ordered frame paths plus optional sparse annotations.
struct ClipInfo {
    std::string clip_id;
    std::vector<std::string> frame_paths;            // strictly ordered
    std::vector<int> annotated_indices;              // 0-based frame indices
    std::vector<std::string> label_paths;            // parallel to annotated_indices
    std::vector<std::string> flow_paths;             // flow i -> i+1, may be empty

    int length() const { return int(frame_paths.size()); }
};

struct DatasetManifest {
    std::vector<ClipInfo> clips;
    int num_classes = 0;
    int height = 0;
    int width = 0;
    std::vector<double> channel_mean;  // optional per-channel raw mean

    const ClipInfo* find_clip(const std::string& id) const;
    int total_annotated() const;
};

DatasetManifest load_manifest(const std::string& dataset_root);
void save_manifest(const std::string& dataset_root, const DatasetManifest& m);

// The unit of all training: s past frames (nearest-first), a target frame,
// and an optional label for the target.
struct SequenceSample {
    std::vector<Frame> past;  // past[k] holds X_{i-1-k}
    Frame target;
    std::optional<LabelMap> label;
    std::string clip_id;
    int frame_index = 0;  // 0-based index of the target within its clip
};

// Preceding set with the clip-start boundary rule: indices before the first
// frame are replaced by the first frame. `i` is 1-based like the clip math
// it mirrors; file naming stays 0-based.
std::vector<Frame> build_preceding_set(const std::vector<Frame>& clip, int i, int s);

// Per-element RMS of the pixel difference (norm / sqrt(H*W*3)); with
// `normalized` false, the plain Euclidean norm.
double compute_motion_score(const Frame& a, const Frame& b, bool normalized = true);

// Unlabeled (s+1)-frame windows with motion strictly above threshold,
// deterministically subsampled to max_count.
std::vector<SequenceSample> sample_fp_sequences(const DatasetManifest& manifest, int s,
                                                double motion_threshold, int max_count,
                                                uint64_t rng_seed);

// One labeled sample per annotated frame whose window passes the motion check.
std::vector<SequenceSample> sample_pp_sequences(const DatasetManifest& manifest, int s,
                                                double motion_threshold);

struct AugmentOptions {
    int crop_h = 0;  // 0 = no crop
    int crop_w = 0;
    bool flip = false;
    bool temporal_reverse = false;
};

// One crop window and one flip decision applied identically to every frame
// and the label. Temporal reversal is only legal for unlabeled samples.
SequenceSample augment(const SequenceSample& sample, Rng& rng, const AugmentOptions& options);

Frame normalize_for_prediction(const Frame& raw);                       // x/127.5 - 1
Frame denormalize_prediction(const Frame& pred);                        // inverse map
Frame normalize_for_parsing(const Frame& raw, const std::vector<double>& mean);

// Class frequencies over non-ignored pixels; sums to 1.
std::vector<double> compute_class_frequencies(const std::vector<LabelMap>& labels);

// Frequency of the first class (descending order) at which cumulative
// frequency reaches 0.85 -- the frequent/rare boundary.
double derive_eta(const std::vector<double>& frequencies);

struct ClassWeightTable {
    std::vector<double> frequencies;
    double eta = 0.0;
    std::vector<double> weights;
};

// w_c = 2^ceil(log10(eta / f_c)); zero-frequency classes take the max
// observed weight so unseen classes never vanish from the loss.
ClassWeightTable compute_class_weights(const std::vector<double>& frequencies, double eta);

}  // namespace pearl
