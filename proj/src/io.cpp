#include "pearl/io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace pearl {

namespace {

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, &info);
        if (fp) std::fclose(fp);
    }
};

// Decodes any PNG to 8-bit, `channels` = 1 (gray) or 3 (rgb).
std::vector<uint8_t> read_png8(const std::string& path, int channels, int& h, int& w) {
    PngReader r;
    r.fp = std::fopen(path.c_str(), "rb");
    if (!r.fp) throw std::runtime_error("cannot open PNG: " + path);
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("PNG decode failed: " + path);
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    png_set_strip_16(r.png);
    png_set_packing(r.png);
    png_set_strip_alpha(r.png);
    int color = png_get_color_type(r.png, r.info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA))
        png_set_gray_to_rgb(r.png);
    if (channels == 1 && (color & PNG_COLOR_MASK_COLOR))
        png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
    png_read_update_info(r.png, r.info);

    h = int(png_get_image_height(r.png, r.info));
    w = int(png_get_image_width(r.png, r.info));
    size_t rowbytes = png_get_rowbytes(r.png, r.info);
    if (rowbytes != size_t(w) * channels)
        throw std::runtime_error("unexpected PNG row size in " + path);

    std::vector<uint8_t> buf(size_t(h) * rowbytes);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = buf.data() + size_t(y) * rowbytes;
    png_read_image(r.png, rows.data());
    return buf;
}

void write_png8(const std::string& path, const uint8_t* data, int h, int w, int channels) {
    PngWriter wtr;
    wtr.fp = std::fopen(path.c_str(), "wb");
    if (!wtr.fp) throw std::runtime_error("cannot write PNG: " + path);
    wtr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    wtr.info = png_create_info_struct(wtr.png);
    if (setjmp(png_jmpbuf(wtr.png))) throw std::runtime_error("PNG encode failed: " + path);
    png_init_io(wtr.png, wtr.fp);
    png_set_IHDR(wtr.png, wtr.info, w, h, 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wtr.png, wtr.info);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y)
        rows[y] = const_cast<png_bytep>(data + size_t(y) * w * channels);
    png_write_image(wtr.png, rows.data());
    png_write_end(wtr.png, nullptr);
}

void put_u32le(std::ostream& os, uint32_t v) {
    uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32le(std::istream& is) {
    uint8_t b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

Frame read_frame_png(const std::string& path) {
    int h = 0, w = 0;
    std::vector<uint8_t> buf = read_png8(path, 3, h, w);
    Frame f(h, w, NormTag::Raw);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                f.pixels.at(c, y, x) = double(buf[(size_t(y) * w + x) * 3 + c]);
    return f;
}

void write_frame_png(const std::string& path, const Frame& frame) {
    if (frame.tag != NormTag::Raw)
        throw std::runtime_error("write_frame_png expects a raw-domain frame");
    int h = frame.height(), w = frame.width();
    std::vector<uint8_t> buf(size_t(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = frame.pixels.at(c, y, x);
                v = v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v);
                buf[(size_t(y) * w + x) * 3 + c] = uint8_t(v + 0.5);
            }
    write_png8(path, buf.data(), h, w, 3);
}

LabelMap read_label_png(const std::string& path, int num_classes) {
    int h = 0, w = 0;
    std::vector<uint8_t> buf = read_png8(path, 1, h, w);
    LabelMap m(h, w, num_classes);
    for (size_t i = 0; i < buf.size(); ++i) m.labels[i] = buf[i];
    m.validate();
    return m;
}

void write_label_png(const std::string& path, const LabelMap& map) {
    std::vector<uint8_t> buf(map.labels.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = uint8_t(map.labels[i]);
    write_png8(path, buf.data(), map.height, map.width, 1);
}

void write_rgb8_png(const std::string& path, const std::vector<uint8_t>& rgb, int h, int w) {
    if (rgb.size() != size_t(h) * w * 3)
        throw std::runtime_error("write_rgb8_png: buffer size mismatch");
    write_png8(path, rgb.data(), h, w, 3);
}

FlowField read_flow_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open flow file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, "FLO1", 4) != 0)
        throw std::runtime_error("bad flow magic in " + path);
    uint32_t h = get_u32le(is), w = get_u32le(is);
    FlowField f(int(h), int(w));
    std::vector<float> raw(size_t(h) * w * 2);
    is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * sizeof(float)));
    if (!is) throw std::runtime_error("truncated flow file: " + path);
    // File rows are pixel-interleaved (dx,dy); tensor is planar.
    for (uint32_t y = 0; y < h; ++y)
        for (uint32_t x = 0; x < w; ++x) {
            f.flow.at(0, y, x) = raw[(size_t(y) * w + x) * 2 + 0];
            f.flow.at(1, y, x) = raw[(size_t(y) * w + x) * 2 + 1];
        }
    return f;
}

void write_flow_file(const std::string& path, const FlowField& flow) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write flow file: " + path);
    os.write("FLO1", 4);
    put_u32le(os, uint32_t(flow.height()));
    put_u32le(os, uint32_t(flow.width()));
    std::vector<float> raw(size_t(flow.height()) * flow.width() * 2);
    for (int y = 0; y < flow.height(); ++y)
        for (int x = 0; x < flow.width(); ++x) {
            raw[(size_t(y) * flow.width() + x) * 2 + 0] = float(flow.flow.at(0, y, x));
            raw[(size_t(y) * flow.width() + x) * 2 + 1] = float(flow.flow.at(1, y, x));
        }
    os.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size() * sizeof(float)));
}

}  // namespace pearl
