#include "pearl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "pearl/io.hpp"

namespace fs = std::filesystem;

namespace pearl {

namespace {

struct Shape {
    enum Kind { Rect, Ellipse } kind;
    int cls;
    int instance;  // 1-based; 0 is background
    int w, h;      // bounding box
    int x0, y0;    // top-left at t = 0
    int vx, vy;    // px per frame
    double color[3];
};

// Wrap-around value noise on a coarse grid; toroidal so a translated lookup
// stays seamless.
struct NoiseTexture {
    int gh, gw, cell;
    std::vector<double> grid;  // gh*gw*3

    NoiseTexture(int h, int w, int cell_px, Rng& rng) : cell(cell_px) {
        gh = (h + cell - 1) / cell;
        gw = (w + cell - 1) / cell;
        grid.resize(size_t(gh) * gw * 3);
        for (auto& v : grid) v = rng.uniform();
    }

    double sample(int c, double y, double x, int h, int w) const {
        double gy = y / cell, gx = x / cell;
        int iy = int(std::floor(gy)), ix = int(std::floor(gx));
        double fy = gy - iy, fx = gx - ix;
        auto g = [&](int yy, int xx) {
            yy = ((yy % gh) + gh) % gh;
            xx = ((xx % gw) + gw) % gw;
            return grid[(size_t(yy) * gw + xx) * 3 + c];
        };
        (void)h;
        (void)w;
        double v0 = g(iy, ix) * (1 - fx) + g(iy, ix + 1) * fx;
        double v1 = g(iy + 1, ix) * (1 - fx) + g(iy + 1, ix + 1) * fx;
        return v0 * (1 - fy) + v1 * fy;
    }
};

const double kPalette[][3] = {
    {200, 60, 60},   // red
    {60, 90, 200},   // blue
    {220, 200, 60},  // yellow
    {190, 70, 190},  // magenta
    {70, 200, 190},  // teal
    {230, 140, 50},  // orange
    {120, 210, 80},  // green
    {150, 110, 220}, // violet
};
constexpr int kPaletteSize = int(sizeof(kPalette) / sizeof(kPalette[0]));

bool inside_shape(const Shape& s, int ly, int lx) {
    if (s.kind == Shape::Rect) return true;
    double ry = s.h / 2.0, rx = s.w / 2.0;
    double dy = (ly + 0.5 - ry) / ry, dx = (lx + 0.5 - rx) / rx;
    return dy * dy + dx * dx <= 1.0;
}

int wrap(int v, int n) { return ((v % n) + n) % n; }

// Start interval on one axis keeping the shape in-frame for all T frames.
int pick_start(Rng& rng, int extent, int size, int v, int frames, int* adjusted_v) {
    int vv = v;
    while (true) {
        int travel = vv * (frames - 1);
        int lo = std::max(0, -travel);
        int hi = std::min(extent - size, extent - size - travel);
        if (lo <= hi) {
            *adjusted_v = vv;
            return int(rng.uniform_int(lo, hi));
        }
        vv += vv > 0 ? -1 : 1;  // too fast to stay in-frame; slow down
    }
}

}  // namespace

std::vector<RenderedClip> render_synthetic_clips(const SyntheticConfig& cfg) {
    if (cfg.num_classes < 2)
        throw std::invalid_argument("synthetic: num_classes must be >= 2");
    if (cfg.max_shape_size >= cfg.height || cfg.max_shape_size >= cfg.width)
        throw std::invalid_argument("synthetic: shapes larger than frame");
    if (cfg.min_shape_size < 2 || cfg.min_shape_size > cfg.max_shape_size)
        throw std::invalid_argument("synthetic: bad shape size range");
    if (cfg.speed_min < 0 || cfg.speed_min > cfg.speed_max)
        throw std::invalid_argument("synthetic: bad speed range");

    const int C = cfg.num_classes;
    const int T = cfg.frames_per_clip;
    const int H = cfg.height, W = cfg.width;
    const bool pair_active = cfg.directional_pair && C >= 4;
    const int pair_right = C - 2, pair_left = C - 1;

    Rng master(cfg.seed);
    std::vector<RenderedClip> clips;
    clips.reserve(size_t(cfg.num_clips));

    for (int ci = 0; ci < cfg.num_clips; ++ci) {
        Rng rng = master.fork(uint64_t(ci) + 1);
        RenderedClip clip;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "clip_%04d", ci);
        clip.clip_id = idbuf;

        NoiseTexture coarse(H, W, 8, rng);
        NoiseTexture fine(H, W, 3, rng);

        auto sample_component = [&](bool* any_moving) {
            if (cfg.speed_max == 0) return 0;
            int v = int(rng.uniform_int(-cfg.speed_max, cfg.speed_max));
            if (v != 0) *any_moving = true;
            return v;
        };

        int gvx = 0, gvy = 0;  // global_motion velocity
        if (cfg.global_motion && cfg.speed_max > 0) {
            while (std::max(std::abs(gvx), std::abs(gvy)) < std::max(1, cfg.speed_min)) {
                bool dummy = false;
                gvx = sample_component(&dummy);
                gvy = sample_component(&dummy);
            }
        }

        int num_shapes = int(rng.uniform_int(cfg.min_shapes, cfg.max_shapes));
        std::vector<Shape> shapes;
        for (int si = 0; si < num_shapes; ++si) {
            Shape s;
            s.kind = rng.bernoulli(0.5) ? Shape::Rect : Shape::Ellipse;
            s.instance = si + 1;
            s.cls = int(rng.uniform_int(1, C - 1));
            s.w = int(rng.uniform_int(cfg.min_shape_size, cfg.max_shape_size));
            s.h = int(rng.uniform_int(cfg.min_shape_size, cfg.max_shape_size));

            if (cfg.global_motion) {
                s.vx = gvx;
                s.vy = gvy;
                s.x0 = int(rng.uniform_int(0, W - 1));
                s.y0 = int(rng.uniform_int(0, H - 1));
            } else {
                bool moving = false;
                s.vx = sample_component(&moving);
                s.vy = sample_component(&moving);
                if (cfg.speed_min > 0 && cfg.speed_max > 0 &&
                    std::max(std::abs(s.vx), std::abs(s.vy)) < cfg.speed_min) {
                    s.vx = s.vx >= 0 ? cfg.speed_min : -cfg.speed_min;
                }
                if (pair_active && (s.cls == pair_right || s.cls == pair_left)) {
                    // Direction is the class: rightward vs leftward.
                    int mag = std::max({1, cfg.speed_min, std::abs(s.vx)});
                    mag = std::min(mag, std::max(1, cfg.speed_max));
                    s.vx = s.cls == pair_right ? mag : -mag;
                }
                s.x0 = pick_start(rng, W, s.w, s.vx, T, &s.vx);
                s.y0 = pick_start(rng, H, s.h, s.vy, T, &s.vy);
            }

            // The directional pair shares one palette entry.
            int color_idx = (pair_active && s.cls == pair_left) ? pair_right - 1 : s.cls - 1;
            double jitter = rng.uniform(-18.0, 18.0);
            for (int c = 0; c < 3; ++c)
                s.color[c] = std::clamp(kPalette[color_idx % kPaletteSize][c] + jitter, 0.0, 255.0);
            shapes.push_back(s);
        }

        for (int t = 0; t < T; ++t) {
            Frame frame(H, W, NormTag::Raw);
            LabelMap label(H, W, C, 0);
            std::vector<int32_t> owner(size_t(H) * W, 0);

            // Background: static texture, or rigidly translated when the
            // whole scene moves.
            int bx = cfg.global_motion ? gvx * t : 0;
            int by = cfg.global_motion ? gvy * t : 0;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double sy = y - by, sx = x - bx;
                    for (int c = 0; c < 3; ++c) {
                        double v = 30.0 + 60.0 * coarse.sample(c, sy, sx, H, W) +
                                   25.0 * fine.sample(c, sy, sx, H, W);
                        frame.pixels.at(c, y, x) = v;
                    }
                }

            // Painter's order: later shapes on top.
            for (const Shape& s : shapes) {
                int ox = s.x0 + s.vx * t;
                int oy = s.y0 + s.vy * t;
                for (int ly = 0; ly < s.h; ++ly)
                    for (int lx = 0; lx < s.w; ++lx) {
                        if (!inside_shape(s, ly, lx)) continue;
                        int y = oy + ly, x = ox + lx;
                        if (cfg.global_motion) {
                            y = wrap(y, H);
                            x = wrap(x, W);
                        } else if (y < 0 || y >= H || x < 0 || x >= W) {
                            continue;
                        }
                        for (int c = 0; c < 3; ++c) frame.pixels.at(c, y, x) = s.color[c];
                        label.at(y, x) = s.cls;
                        owner[size_t(y) * W + x] = s.instance;
                    }
            }

            clip.frames.push_back(std::move(frame));
            clip.labels.push_back(std::move(label));
            clip.instance_ids.push_back(std::move(owner));
        }

        // Flow t -> t+1 on the target grid: each pixel carries its owner's
        // velocity (background moves only under global motion).
        for (int t = 0; t + 1 < T; ++t) {
            FlowField fl(H, W);
            const auto& owner = clip.instance_ids[size_t(t) + 1];
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    int iid = owner[size_t(y) * W + x];
                    if (iid == 0) {
                        fl.set(y, x, cfg.global_motion ? gvx : 0, cfg.global_motion ? gvy : 0);
                    } else {
                        const Shape& s = shapes[size_t(iid) - 1];
                        fl.set(y, x, s.vx, s.vy);
                    }
                }
            clip.flows.push_back(std::move(fl));
        }

        if (cfg.annotate_stride > 0) {
            for (int t = cfg.annotate_stride - 1; t < T; t += cfg.annotate_stride)
                clip.annotated_indices.push_back(t);
        } else {
            clip.annotated_indices.push_back(std::min(T - 1, (2 * T) / 3));
        }

        clips.push_back(std::move(clip));
    }
    return clips;
}

DatasetManifest generate_synthetic_dataset(const SyntheticConfig& cfg,
                                           const std::string& out_root) {
    std::vector<RenderedClip> clips = render_synthetic_clips(cfg);

    fs::path root(out_root);
    fs::create_directories(root);

    DatasetManifest m;
    m.num_classes = cfg.num_classes;
    m.height = cfg.height;
    m.width = cfg.width;

    double mean[3] = {0, 0, 0};
    size_t pixel_count = 0;
    char buf[64];
    for (const auto& clip : clips) {
        fs::create_directories(root / "clips" / clip.clip_id);
        fs::create_directories(root / "labels" / clip.clip_id);
        fs::create_directories(root / "flow" / clip.clip_id);

        for (size_t t = 0; t < clip.frames.size(); ++t) {
            std::snprintf(buf, sizeof buf, "frame_%06zu.png", t);
            write_frame_png((root / "clips" / clip.clip_id / buf).string(), clip.frames[t]);
            // Accumulate the 8-bit values readers will actually see.
            const Tensor& px = clip.frames[t].pixels;
            int hw = px.dim(1) * px.dim(2);
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < hw; ++i) {
                    double v = std::clamp(px[size_t(c) * hw + i], 0.0, 255.0);
                    mean[c] += std::floor(v + 0.5);
                }
            pixel_count += size_t(hw);
        }
        for (int t : clip.annotated_indices) {
            std::snprintf(buf, sizeof buf, "frame_%06d.png", t);
            write_label_png((root / "labels" / clip.clip_id / buf).string(),
                            clip.labels[size_t(t)]);
        }
        for (size_t t = 0; t < clip.flows.size(); ++t) {
            std::snprintf(buf, sizeof buf, "frame_%06zu.npyflt", t);
            write_flow_file((root / "flow" / clip.clip_id / buf).string(), clip.flows[t]);
        }

        ClipInfo info;
        info.clip_id = clip.clip_id;
        info.annotated_indices = clip.annotated_indices;
        // Counts only; real paths are rebuilt on load.
        info.frame_paths.resize(clip.frames.size());
        info.flow_paths.resize(clip.flows.size());
        m.clips.push_back(std::move(info));
    }
    for (int c = 0; c < 3; ++c) mean[c] /= double(pixel_count);
    m.channel_mean = {mean[0], mean[1], mean[2]};

    save_manifest(out_root, m);
    return load_manifest(out_root);
}

}  // namespace pearl
