#pragma once

#include <string>

#include "pearl/image.hpp"

namespace pearl {

// 8-bit RGB PNG <-> raw Frame (values 0..255 as doubles).
Frame read_frame_png(const std::string& path);
void write_frame_png(const std::string& path, const Frame& frame);

// 8-bit single-channel PNG; pixel value = class index, 255 = ignore.
LabelMap read_label_png(const std::string& path, int num_classes);
void write_label_png(const std::string& path, const LabelMap& map);

// Interleaved 8-bit RGB buffer -> PNG (figure output).
void write_rgb8_png(const std::string& path, const std::vector<uint8_t>& rgb, int h, int w);

// "FLO1" raster: magic, H, W as 32-bit LE integers, then float32 LE H*W*2
// (dx, dy) in pixels.
FlowField read_flow_file(const std::string& path);
void write_flow_file(const std::string& path, const FlowField& flow);

}  // namespace pearl
