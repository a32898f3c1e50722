#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pearl/tensor.hpp"

namespace pearl {

// Value domain of a frame's pixels. Operations check tags so that a frame
// normalized for one pipeline cannot leak into another.
enum class NormTag { Raw, PredictionRange, MeanSubtracted };

inline const char* to_string(NormTag t) {
    switch (t) {
        case NormTag::Raw: return "raw";
        case NormTag::PredictionRange: return "pred[-1,1]";
        case NormTag::MeanSubtracted: return "mean-subtracted";
    }
    return "?";
}

// RGB frame stored as (3,H,W) doubles plus its normalization tag.
struct Frame {
    Tensor pixels;  // (3,H,W)
    NormTag tag = NormTag::Raw;

    Frame() = default;
    Frame(int h, int w, NormTag t = NormTag::Raw) : pixels({3, h, w}, 0.0), tag(t) {}

    int height() const { return pixels.dim(1); }
    int width() const { return pixels.dim(2); }
    bool same_size(const Frame& o) const {
        return height() == o.height() && width() == o.width();
    }
};

constexpr int kIgnoreIndex = 255;

// Per-pixel class indices in {0..C-1} plus the ignore sentinel.
struct LabelMap {
    std::vector<int32_t> labels;  // H*W, row-major
    int height = 0;
    int width = 0;
    int num_classes = 0;
    int ignore_index = kIgnoreIndex;

    LabelMap() = default;
    LabelMap(int h, int w, int c, int32_t fill = 0)
        : labels(size_t(h) * w, fill), height(h), width(w), num_classes(c) {}

    int32_t& at(int y, int x) { return labels[size_t(y) * width + x]; }
    int32_t at(int y, int x) const { return labels[size_t(y) * width + x]; }

    bool same_size(const LabelMap& o) const { return height == o.height && width == o.width; }

    void validate() const {
        for (int32_t v : labels)
            if ((v < 0 || v >= num_classes) && v != ignore_index)
                throw std::runtime_error("LabelMap: entry " + std::to_string(v) +
                                         " outside {0.." + std::to_string(num_classes - 1) +
                                         "} u {ignore}");
    }
};

// Per-pixel (dx,dy) displacements, source->target convention: the content at
// pixel p of the target frame came from p - flow(p) in the source frame.
struct FlowField {
    Tensor flow;  // (2,H,W), channel 0 = dx, channel 1 = dy

    FlowField() = default;
    FlowField(int h, int w) : flow({2, h, w}, 0.0) {}

    int height() const { return flow.dim(1); }
    int width() const { return flow.dim(2); }
    double dx(int y, int x) const { return flow.at(0, y, x); }
    double dy(int y, int x) const { return flow.at(1, y, x); }
    void set(int y, int x, double fx, double fy) {
        flow.at(0, y, x) = fx;
        flow.at(1, y, x) = fy;
    }
};

}  // namespace pearl
