#include "pearl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "pearl/io.hpp"
#include "pearl/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pearl {

const ClipInfo* DatasetManifest::find_clip(const std::string& id) const {
    for (const auto& c : clips)
        if (c.clip_id == id) return &c;
    return nullptr;
}

int DatasetManifest::total_annotated() const {
    int n = 0;
    for (const auto& c : clips) n += int(c.annotated_indices.size());
    return n;
}

DatasetManifest load_manifest(const std::string& dataset_root) {
    fs::path root(dataset_root);
    std::ifstream is(root / "manifest.json");
    if (!is) throw std::runtime_error("no manifest.json under " + dataset_root);
    json j = json::parse(is);

    DatasetManifest m;
    m.num_classes = j.at("num_classes").get<int>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    if (j.contains("channel_mean")) m.channel_mean = j["channel_mean"].get<std::vector<double>>();
    for (const auto& jc : j.at("clips")) {
        ClipInfo c;
        c.clip_id = jc.at("clip_id").get<std::string>();
        int num_frames = jc.at("num_frames").get<int>();
        char buf[64];
        for (int i = 0; i < num_frames; ++i) {
            std::snprintf(buf, sizeof buf, "frame_%06d.png", i);
            c.frame_paths.push_back((root / "clips" / c.clip_id / buf).string());
        }
        if (jc.contains("annotated_indices")) {
            for (int idx : jc["annotated_indices"].get<std::vector<int>>()) {
                if (idx < 0 || idx >= num_frames)
                    throw std::runtime_error("manifest: annotated index out of range in clip " +
                                             c.clip_id);
                std::snprintf(buf, sizeof buf, "frame_%06d.png", idx);
                c.annotated_indices.push_back(idx);
                c.label_paths.push_back((root / "labels" / c.clip_id / buf).string());
            }
        }
        if (jc.value("has_flow", false)) {
            for (int i = 0; i + 1 < num_frames; ++i) {
                std::snprintf(buf, sizeof buf, "frame_%06d.npyflt", i);
                c.flow_paths.push_back((root / "flow" / c.clip_id / buf).string());
            }
        }
        m.clips.push_back(std::move(c));
    }
    return m;
}

void save_manifest(const std::string& dataset_root, const DatasetManifest& m) {
    json j;
    j["num_classes"] = m.num_classes;
    j["height"] = m.height;
    j["width"] = m.width;
    if (!m.channel_mean.empty()) j["channel_mean"] = m.channel_mean;
    j["clips"] = json::array();
    for (const auto& c : m.clips) {
        json jc;
        jc["clip_id"] = c.clip_id;
        jc["num_frames"] = c.length();
        jc["annotated_indices"] = c.annotated_indices;
        jc["has_flow"] = !c.flow_paths.empty();
        j["clips"].push_back(std::move(jc));
    }
    std::ofstream os(fs::path(dataset_root) / "manifest.json");
    os << j.dump(2) << "\n";
}

std::vector<Frame> build_preceding_set(const std::vector<Frame>& clip, int i, int s) {
    if (clip.empty()) throw std::invalid_argument("build_preceding_set: empty clip");
    if (i < 1 || i > int(clip.size()))
        throw std::out_of_range("build_preceding_set: frame index " + std::to_string(i) +
                                " outside [1," + std::to_string(clip.size()) + "]");
    if (s < 1) throw std::invalid_argument("build_preceding_set: s must be >= 1");
    std::vector<Frame> past;
    past.reserve(s);
    for (int k = 1; k <= s; ++k) {
        int idx = i - k;            // 1-based
        if (idx < 1) idx = 1;       // X_{i-k} = X_1 when i <= k
        past.push_back(clip[size_t(idx) - 1]);
    }
    return past;
}

double compute_motion_score(const Frame& a, const Frame& b, bool normalized) {
    if (!a.same_size(b)) throw std::invalid_argument("compute_motion_score: size mismatch");
    if (a.tag != b.tag)
        throw std::invalid_argument("compute_motion_score: normalization tag mismatch");
    double ss = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        double d = a.pixels[i] - b.pixels[i];
        ss += d * d;
    }
    double norm = std::sqrt(ss);
    return normalized ? norm / std::sqrt(double(a.pixels.size())) : norm;
}

namespace {

Frame load_clip_frame(const ClipInfo& clip, int idx) {
    return read_frame_png(clip.frame_paths.at(size_t(idx)));
}

// Loads the preceding set for 0-based target index using the boundary rule,
// touching only the needed files.
std::vector<Frame> load_preceding(const ClipInfo& clip, int target_idx, int s) {
    std::vector<Frame> past;
    past.reserve(s);
    for (int k = 1; k <= s; ++k) {
        int idx = target_idx - k;
        if (idx < 0) idx = 0;
        past.push_back(load_clip_frame(clip, idx));
    }
    return past;
}

}  // namespace

std::vector<SequenceSample> sample_fp_sequences(const DatasetManifest& manifest, int s,
                                                double motion_threshold, int max_count,
                                                uint64_t rng_seed) {
    // Candidate windows: (clip, target index) with a full (s+1)-frame span.
    struct Cand { int clip; int target; };
    std::vector<Cand> cands;
    for (int ci = 0; ci < int(manifest.clips.size()); ++ci) {
        const auto& clip = manifest.clips[ci];
        for (int t = s; t < clip.length(); ++t) cands.push_back({ci, t});
    }
    Rng rng(rng_seed);
    rng.shuffle(cands);

    std::vector<SequenceSample> out;
    for (const Cand& c : cands) {
        if (max_count >= 0 && int(out.size()) >= max_count) break;
        const auto& clip = manifest.clips[size_t(c.clip)];
        Frame first = load_clip_frame(clip, c.target - s);
        Frame last = load_clip_frame(clip, c.target);
        if (compute_motion_score(first, last) <= motion_threshold) continue;
        SequenceSample sample;
        sample.clip_id = clip.clip_id;
        sample.frame_index = c.target;
        sample.target = std::move(last);
        sample.past = load_preceding(clip, c.target, s);
        out.push_back(std::move(sample));
    }
    return out;
}

std::vector<SequenceSample> sample_pp_sequences(const DatasetManifest& manifest, int s,
                                                double motion_threshold) {
    std::vector<SequenceSample> out;
    for (const auto& clip : manifest.clips) {
        for (size_t a = 0; a < clip.annotated_indices.size(); ++a) {
            int t = clip.annotated_indices[a];
            Frame target = load_clip_frame(clip, t);
            Frame first = load_clip_frame(clip, std::max(0, t - s));
            if (motion_threshold > 0.0 &&
                compute_motion_score(first, target) <= motion_threshold)
                continue;
            SequenceSample sample;
            sample.clip_id = clip.clip_id;
            sample.frame_index = t;
            sample.target = std::move(target);
            sample.past = load_preceding(clip, t, s);
            sample.label = read_label_png(clip.label_paths[a], manifest.num_classes);
            out.push_back(std::move(sample));
        }
    }
    if (out.empty() && manifest.total_annotated() > 0)
        log_info("sample_pp_sequences: motion threshold excluded every annotated frame");
    return out;
}

namespace {

Frame crop_flip_frame(const Frame& f, int y0, int x0, int ch, int cw, bool flip) {
    Frame out(ch, cw, f.tag);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < ch; ++y)
            for (int x = 0; x < cw; ++x) {
                int sx = flip ? (x0 + cw - 1 - x) : (x0 + x);
                out.pixels.at(c, y, x) = f.pixels.at(c, y0 + y, sx);
            }
    return out;
}

LabelMap crop_flip_label(const LabelMap& m, int y0, int x0, int ch, int cw, bool flip) {
    LabelMap out(ch, cw, m.num_classes);
    out.ignore_index = m.ignore_index;
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
            int sx = flip ? (x0 + cw - 1 - x) : (x0 + x);
            out.at(y, x) = m.at(y0 + y, sx);
        }
    return out;
}

}  // namespace

SequenceSample augment(const SequenceSample& sample, Rng& rng, const AugmentOptions& options) {
    if (options.temporal_reverse && sample.label.has_value())
        throw std::invalid_argument("augment: temporal reversal is frame-prediction only");

    int h = sample.target.height(), w = sample.target.width();
    int ch = options.crop_h > 0 ? options.crop_h : h;
    int cw = options.crop_w > 0 ? options.crop_w : w;
    if (ch > h || cw > w) throw std::invalid_argument("augment: crop larger than frame");

    int y0 = ch < h ? int(rng.uniform_int(0, h - ch)) : 0;
    int x0 = cw < w ? int(rng.uniform_int(0, w - cw)) : 0;
    bool flip = options.flip && rng.bernoulli(0.5);
    bool reverse = options.temporal_reverse && rng.bernoulli(0.5);

    // Window in time order, oldest first: [X_{i-s}, ..., X_{i-1}, X_i].
    std::vector<const Frame*> window;
    for (auto it = sample.past.rbegin(); it != sample.past.rend(); ++it) window.push_back(&*it);
    window.push_back(&sample.target);
    if (reverse) std::reverse(window.begin(), window.end());

    SequenceSample out;
    out.clip_id = sample.clip_id;
    out.frame_index = sample.frame_index;
    int s = int(sample.past.size());
    for (int k = s - 1; k >= 0; --k)
        out.past.push_back(crop_flip_frame(*window[size_t(k)], y0, x0, ch, cw, flip));
    out.target = crop_flip_frame(*window[size_t(s)], y0, x0, ch, cw, flip);
    if (sample.label)
        out.label = crop_flip_label(*sample.label, y0, x0, ch, cw, flip);
    return out;
}

Frame normalize_for_prediction(const Frame& raw) {
    if (raw.tag != NormTag::Raw)
        throw std::invalid_argument("normalize_for_prediction: expects raw frame");
    Frame out = raw;
    out.tag = NormTag::PredictionRange;
    for (auto& v : out.pixels.vec()) v = v / 127.5 - 1.0;
    return out;
}

Frame denormalize_prediction(const Frame& pred) {
    if (pred.tag != NormTag::PredictionRange)
        throw std::invalid_argument("denormalize_prediction: expects [-1,1] frame");
    Frame out = pred;
    out.tag = NormTag::Raw;
    for (auto& v : out.pixels.vec()) v = (v + 1.0) * 127.5;
    return out;
}

Frame normalize_for_parsing(const Frame& raw, const std::vector<double>& mean) {
    if (raw.tag != NormTag::Raw)
        throw std::invalid_argument("normalize_for_parsing: expects raw frame");
    if (mean.size() != 3) throw std::invalid_argument("normalize_for_parsing: need 3 means");
    Frame out = raw;
    out.tag = NormTag::MeanSubtracted;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < out.height(); ++y)
            for (int x = 0; x < out.width(); ++x) out.pixels.at(c, y, x) -= mean[size_t(c)];
    return out;
}

std::vector<double> compute_class_frequencies(const std::vector<LabelMap>& labels) {
    if (labels.empty()) throw std::invalid_argument("compute_class_frequencies: no labels");
    int C = labels.front().num_classes;
    std::vector<int64_t> counts(size_t(C), 0);
    int64_t total = 0;
    for (const auto& m : labels) {
        for (int32_t v : m.labels) {
            if (v == m.ignore_index) continue;
            counts[size_t(v)]++;
            total++;
        }
    }
    if (total == 0) throw std::runtime_error("compute_class_frequencies: all pixels ignored");
    std::vector<double> f(size_t(C));
    for (int c = 0; c < C; ++c) f[size_t(c)] = double(counts[size_t(c)]) / double(total);
    return f;
}

double derive_eta(const std::vector<double>& frequencies) {
    std::vector<double> sorted = frequencies;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cum = 0.0;
    for (double f : sorted) {
        cum += f;
        if (cum >= 0.85) return f;
    }
    return sorted.empty() ? 0.0 : sorted.back();
}

ClassWeightTable compute_class_weights(const std::vector<double>& frequencies, double eta) {
    if (eta <= 0.0) throw std::invalid_argument("compute_class_weights: eta must be positive");
    ClassWeightTable t;
    t.frequencies = frequencies;
    t.eta = eta;
    t.weights.assign(frequencies.size(), 0.0);
    double max_w = 0.0;
    for (size_t c = 0; c < frequencies.size(); ++c) {
        if (frequencies[c] > 0.0) {
            t.weights[c] = std::exp2(std::ceil(std::log10(eta / frequencies[c])));
            max_w = std::max(max_w, t.weights[c]);
        }
    }
    if (max_w == 0.0) max_w = 1.0;
    for (size_t c = 0; c < frequencies.size(); ++c)
        if (frequencies[c] == 0.0) t.weights[c] = max_w;
    return t;
}

}  // namespace pearl
