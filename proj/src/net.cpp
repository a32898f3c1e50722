#include "pearl/net.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace pearl {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::ConvTranspose: return "conv_transpose";
        case LayerKind::MaxPool: return "max_pool";
        case LayerKind::ReLU: return "relu";
        case LayerKind::Tanh: return "tanh";
        case LayerKind::Sigmoid: return "sigmoid";
        case LayerKind::LogSoftmax: return "log_softmax";
        case LayerKind::Concat: return "concat";
        case LayerKind::Add: return "add";
        case LayerKind::GlobalAvgPool: return "global_avg_pool";
        case LayerKind::Affine: return "affine";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
    static const std::map<std::string, LayerKind> table = {
        {"conv", LayerKind::Conv},
        {"conv_transpose", LayerKind::ConvTranspose},
        {"max_pool", LayerKind::MaxPool},
        {"relu", LayerKind::ReLU},
        {"tanh", LayerKind::Tanh},
        {"sigmoid", LayerKind::Sigmoid},
        {"log_softmax", LayerKind::LogSoftmax},
        {"concat", LayerKind::Concat},
        {"add", LayerKind::Add},
        {"global_avg_pool", LayerKind::GlobalAvgPool},
        {"affine", LayerKind::Affine},
    };
    auto it = table.find(s);
    if (it == table.end()) throw std::invalid_argument("unknown layer kind: " + s);
    return it->second;
}

const LayerDesc* NetworkSpec::find(const std::string& n) const {
    for (const auto& l : layers)
        if (l.name == n) return &l;
    return nullptr;
}

LayerDesc* NetworkSpec::find(const std::string& n) {
    for (auto& l : layers)
        if (l.name == n) return &l;
    return nullptr;
}

int NetworkSpec::layer_index(const std::string& n) const {
    for (size_t i = 0; i < layers.size(); ++i)
        if (layers[i].name == n) return int(i);
    return -1;
}

std::string NetworkSpec::to_json_string(int indent) const {
    json j;
    j["name"] = name;
    j["num_inputs"] = num_inputs;
    j["input_channels"] = input_channels;
    j["outputs"] = outputs;
    j["taps"] = taps;
    j["layers"] = json::array();
    for (const auto& l : layers) {
        json jl;
        jl["name"] = l.name;
        jl["kind"] = to_string(l.kind);
        jl["section"] = l.section;
        jl["inputs"] = l.inputs;
        jl["in_channels"] = l.in_channels;
        jl["out_channels"] = l.out_channels;
        jl["kernel"] = l.kernel;
        jl["stride"] = l.stride;
        jl["pad"] = l.pad;
        jl["dilation"] = l.dilation;
        jl["groups"] = l.groups;
        jl["bias"] = l.bias;
        j["layers"].push_back(std::move(jl));
    }
    return j.dump(indent);
}

NetworkSpec NetworkSpec::from_json_string(const std::string& s) {
    json j = json::parse(s);
    NetworkSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.num_inputs = j.at("num_inputs").get<int>();
    spec.input_channels = j.at("input_channels").get<std::vector<int>>();
    spec.outputs = j.at("outputs").get<std::vector<std::string>>();
    if (j.contains("taps"))
        spec.taps = j["taps"].get<std::map<std::string, std::string>>();
    for (const auto& jl : j.at("layers")) {
        LayerDesc l;
        l.name = jl.at("name").get<std::string>();
        l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
        l.section = jl.at("section").get<std::string>();
        l.inputs = jl.at("inputs").get<std::vector<std::string>>();
        l.in_channels = jl.at("in_channels").get<int>();
        l.out_channels = jl.at("out_channels").get<int>();
        l.kernel = jl.at("kernel").get<int>();
        l.stride = jl.at("stride").get<int>();
        l.pad = jl.at("pad").get<int>();
        l.dilation = jl.at("dilation").get<int>();
        l.groups = jl.at("groups").get<int>();
        l.bias = jl.at("bias").get<bool>();
        spec.layers.push_back(std::move(l));
    }
    return spec;
}

std::string NetworkSpec::hash() const {
    std::string s = to_json_string();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

NetworkSpec prefix_spec(const NetworkSpec& spec, const std::string& prefix,
                        const std::vector<int>& input_map) {
    if (int(input_map.size()) != spec.num_inputs)
        throw std::invalid_argument("prefix_spec: input_map size mismatch");
    NetworkSpec out = spec;
    out.name = prefix + "." + spec.name;
    for (auto& l : out.layers) {
        l.name = prefix + "." + l.name;
        l.section = prefix + "." + l.section;
        for (auto& in : l.inputs) {
            if (!in.empty() && in[0] == '$')
                in = "$" + std::to_string(input_map[size_t(std::stoi(in.substr(1)))]);
            else
                in = prefix + "." + in;
        }
    }
    for (auto& o : out.outputs) o = prefix + "." + o;
    for (auto& [role, layer] : out.taps) layer = prefix + "." + layer;
    return out;
}

Tensor& ParameterStore::at(const std::string& name) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw std::out_of_range("no parameter array: " + name);
    return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw std::out_of_range("no parameter array: " + name);
    return it->second;
}

ParameterStore ParameterStore::zeros_like() const {
    ParameterStore g;
    for (const auto& [name, t] : arrays) g.arrays.emplace(name, Tensor(t.shape(), 0.0));
    return g;
}

void ParameterStore::zero_all() {
    for (auto& [name, t] : arrays) t.zero();
}

size_t ParameterStore::total_values() const {
    size_t n = 0;
    for (const auto& [name, t] : arrays) n += t.size();
    return n;
}

std::vector<std::string> ParameterStore::names_in_section(const std::string& section) const {
    std::vector<std::string> out;
    std::string prefix = section + ".";
    for (const auto& [name, t] : arrays)
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
}

namespace {

// FCN-style bilinear upsampling profile.
double bilinear_coeff(int i, int k) {
    double factor = (k + 1) / 2.0;
    double center = (k % 2 == 1) ? (k - 1) / 2.0 : factor - 0.5;
    return 1.0 - std::abs(i - center) / factor;
}

}  // namespace

ParameterStore init_parameters(const NetworkSpec& spec, Rng& rng) {
    ParameterStore store;
    for (const auto& l : spec.layers) {
        if (!l.has_params()) continue;
        if (l.kind == LayerKind::Conv) {
            int ig = l.in_channels / l.groups;
            Tensor w({l.out_channels, ig, l.kernel, l.kernel});
            double std = std::sqrt(2.0 / (double(ig) * l.kernel * l.kernel));
            for (auto& v : w.vec()) v = rng.normal(0.0, std);
            store.arrays.emplace(l.name + ".weight", std::move(w));
        } else if (l.kind == LayerKind::ConvTranspose) {
            Tensor w({l.in_channels, l.out_channels, l.kernel, l.kernel});
            bool identity_mix = l.in_channels == l.out_channels;
            std::vector<double> mix;
            if (!identity_mix) {
                mix.resize(size_t(l.in_channels) * l.out_channels);
                double std = std::sqrt(2.0 / double(l.in_channels));
                for (auto& v : mix) v = rng.normal(0.0, std);
            }
            for (int i = 0; i < l.in_channels; ++i)
                for (int o = 0; o < l.out_channels; ++o) {
                    double m = identity_mix ? (i == o ? 1.0 : 0.0)
                                            : mix[size_t(i) * l.out_channels + o];
                    for (int ky = 0; ky < l.kernel; ++ky)
                        for (int kx = 0; kx < l.kernel; ++kx)
                            w[((size_t(i) * l.out_channels + o) * l.kernel + ky) * l.kernel +
                              kx] = m * bilinear_coeff(ky, l.kernel) * bilinear_coeff(kx, l.kernel);
                }
            store.arrays.emplace(l.name + ".weight", std::move(w));
        } else {  // Affine
            Tensor w({l.out_channels, l.in_channels});
            double std = std::sqrt(2.0 / double(l.in_channels));
            for (auto& v : w.vec()) v = rng.normal(0.0, std);
            store.arrays.emplace(l.name + ".weight", std::move(w));
        }
        if (l.bias)
            store.arrays.emplace(l.name + ".bias", Tensor({l.out_channels}, 0.0));
        store.provenance[l.section] = "random";
    }
    return store;
}

int transfer_parameters(const ParameterStore& src, const std::string& src_section,
                        ParameterStore& dst, const std::string& dst_section,
                        const std::string& provenance_tag) {
    std::vector<std::string> names = src.names_in_section(src_section);
    if (names.empty())
        throw std::invalid_argument("transfer_parameters: no arrays in section '" + src_section +
                                    "'");
    // Validate the whole section before touching anything.
    std::string errors;
    std::vector<std::pair<std::string, std::string>> plan;
    for (const auto& n : names) {
        std::string dst_name = dst_section + n.substr(src_section.size());
        if (!dst.has(dst_name)) {
            errors += "  missing in destination: " + dst_name + "\n";
            continue;
        }
        if (dst.at(dst_name).shape() != src.at(n).shape()) {
            errors += "  shape mismatch at " + dst_name + ": src " + src.at(n).shape_str() +
                      " vs dst " + dst.at(dst_name).shape_str() + "\n";
            continue;
        }
        plan.emplace_back(n, dst_name);
    }
    if (!errors.empty())
        throw std::runtime_error("transfer_parameters: nothing applied:\n" + errors);
    for (const auto& [s, d] : plan) dst.at(d).vec() = src.at(s).vec();
    dst.provenance[dst_section] = provenance_tag;
    return int(plan.size());
}

int transfer_parameters(const ParameterStore& src, ParameterStore& dst,
                        const std::string& section, const std::string& provenance_tag) {
    return transfer_parameters(src, section, dst, section, provenance_tag);
}

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

namespace {

int conv_out_dim(int in, int k, int s, int p, int d) {
    return (in + 2 * p - d * (k - 1) - 1) / s + 1;
}

int deconv_out_dim(int in, int k, int s, int p, int d) {
    return (in - 1) * s - 2 * p + d * (k - 1) + 1;
}

// cols is (C*K*K) x (Ho*Wo), row-major.
void im2col(const double* im, int C, int H, int W, int K, int S, int P, int D, int Ho, int Wo,
            double* cols) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
                double* dst = cols + (size_t(c) * K * K + size_t(ky) * K + kx) * Ho * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * S - P + ky * D;
                    if (iy < 0 || iy >= H) {
                        std::memset(dst + size_t(oy) * Wo, 0, sizeof(double) * Wo);
                        continue;
                    }
                    const double* src = im + (size_t(c) * H + iy) * W;
                    double* row = dst + size_t(oy) * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * S - P + kx * D;
                        row[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
                    }
                }
            }
}

// Transpose of im2col: scatter-add columns back into the image.
void col2im(const double* cols, int C, int H, int W, int K, int S, int P, int D, int Ho, int Wo,
            double* im) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
                const double* src = cols + (size_t(c) * K * K + size_t(ky) * K + kx) * Ho * Wo;
                for (int oy = 0; oy < Ho; ++oy) {
                    int iy = oy * S - P + ky * D;
                    if (iy < 0 || iy >= H) continue;
                    double* dst = im + (size_t(c) * H + iy) * W;
                    const double* row = src + size_t(oy) * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        int ix = ox * S - P + kx * D;
                        if (ix >= 0 && ix < W) dst[ix] += row[ox];
                    }
                }
            }
}

}  // namespace

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
    if (int(spec_.input_channels.size()) != spec_.num_inputs)
        throw std::invalid_argument("network '" + spec_.name + "': input_channels size");

    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto& l = spec_.layers[i];
        if (index_.count(l.name))
            throw std::invalid_argument("duplicate layer name: " + l.name);
        index_[l.name] = int(i);
    }

    in_refs_.resize(spec_.layers.size());
    stride_.resize(spec_.layers.size(), 1.0);
    out_ch_.resize(spec_.layers.size(), 0);

    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        auto& l = spec_.layers[i];
        if (l.inputs.empty())
            throw std::invalid_argument("layer " + l.name + ": no inputs");

        std::vector<int> in_ch;
        std::vector<double> in_stride;
        for (const auto& in : l.inputs) {
            if (!in.empty() && in[0] == '$') {
                int k = std::stoi(in.substr(1));
                if (k < 0 || k >= spec_.num_inputs)
                    throw std::invalid_argument("layer " + l.name + ": bad input ref " + in);
                in_refs_[i].push_back(-1 - k);
                in_ch.push_back(spec_.input_channels[size_t(k)]);
                in_stride.push_back(1.0);
            } else {
                auto it = index_.find(in);
                if (it == index_.end() || it->second >= int(i))
                    throw std::invalid_argument("layer " + l.name +
                                                ": input not defined earlier: " + in);
                in_refs_[i].push_back(it->second);
                in_ch.push_back(out_ch_[size_t(it->second)]);
                in_stride.push_back(stride_[size_t(it->second)]);
            }
        }

        int total_in = 0;
        for (int c : in_ch) total_in += c;
        double s0 = in_stride[0];

        switch (l.kind) {
            case LayerKind::Conv:
                if (l.inputs.size() != 1)
                    throw std::invalid_argument("layer " + l.name + ": conv takes one input");
                if (l.in_channels != total_in)
                    throw std::invalid_argument(
                        "layer " + l.name + ": declared in_channels " +
                        std::to_string(l.in_channels) + " != producer channels " +
                        std::to_string(total_in));
                if (l.groups < 1 || l.in_channels % l.groups || l.out_channels % l.groups)
                    throw std::invalid_argument("layer " + l.name + ": channels not divisible by " +
                                                std::to_string(l.groups) + " groups");
                out_ch_[i] = l.out_channels;
                stride_[i] = s0 * l.stride;
                break;
            case LayerKind::ConvTranspose:
                if (l.groups != 1)
                    throw std::invalid_argument("layer " + l.name +
                                                ": grouped transposed convolution unsupported");
                if (l.in_channels != total_in)
                    throw std::invalid_argument("layer " + l.name + ": in_channels mismatch");
                out_ch_[i] = l.out_channels;
                stride_[i] = s0 / l.stride;
                break;
            case LayerKind::MaxPool:
                out_ch_[i] = total_in;
                stride_[i] = s0 * l.stride;
                break;
            case LayerKind::Concat:
                if (l.inputs.size() < 2)
                    throw std::invalid_argument("layer " + l.name + ": concat needs >= 2 inputs");
                for (double s : in_stride)
                    if (s != s0)
                        throw std::invalid_argument("layer " + l.name +
                                                    ": stride mismatch at concatenation");
                out_ch_[i] = total_in;
                stride_[i] = s0;
                break;
            case LayerKind::Add:
                if (l.inputs.size() != 2 || in_ch[0] != in_ch[1])
                    throw std::invalid_argument("layer " + l.name +
                                                ": add needs two equal-channel inputs");
                if (in_stride[0] != in_stride[1])
                    throw std::invalid_argument("layer " + l.name + ": stride mismatch at add");
                out_ch_[i] = in_ch[0];
                stride_[i] = s0;
                break;
            case LayerKind::GlobalAvgPool:
                out_ch_[i] = total_in;
                stride_[i] = s0;  // spatial collapses; stride loses meaning here
                break;
            case LayerKind::Affine:
                if (l.in_channels != total_in)
                    throw std::invalid_argument("layer " + l.name + ": in_channels mismatch");
                out_ch_[i] = l.out_channels;
                stride_[i] = s0;
                break;
            default:  // elementwise
                out_ch_[i] = total_in;
                stride_[i] = s0;
                break;
        }
    }

    for (const auto& o : spec_.outputs) {
        auto it = index_.find(o);
        if (it == index_.end())
            throw std::invalid_argument("network output not a layer: " + o);
        output_indices_.push_back(it->second);
    }
    if (output_indices_.empty())
        throw std::invalid_argument("network '" + spec_.name + "' has no outputs");
}

double Network::layer_stride(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no layer: " + name);
    return stride_[size_t(it->second)];
}

int Network::layer_out_channels(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no layer: " + name);
    return out_ch_[size_t(it->second)];
}

std::vector<Tensor> Network::forward(const std::vector<Tensor>& inputs,
                                     const ParameterStore& params, ForwardState* state) const {
    if (int(inputs.size()) != spec_.num_inputs)
        throw std::invalid_argument("forward: expected " + std::to_string(spec_.num_inputs) +
                                    " inputs");
    for (int k = 0; k < spec_.num_inputs; ++k)
        if (inputs[size_t(k)].dim(0) != spec_.input_channels[size_t(k)])
            throw std::invalid_argument("forward: input " + std::to_string(k) + " has " +
                                        std::to_string(inputs[size_t(k)].dim(0)) +
                                        " channels, spec wants " +
                                        std::to_string(spec_.input_channels[size_t(k)]));

    ForwardState local;
    ForwardState& st = state ? *state : local;
    st.inputs = inputs;
    st.act.assign(spec_.layers.size(), Tensor());
    st.aux.assign(spec_.layers.size(), {});

    auto resolve = [&](int ref) -> const Tensor& {
        return ref < 0 ? st.inputs[size_t(-1 - ref)] : st.act[size_t(ref)];
    };

    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto& l = spec_.layers[i];
        const Tensor& x = resolve(in_refs_[i][0]);

        switch (l.kind) {
            case LayerKind::Conv: {
                int I = x.dim(0), H = x.dim(1), W = x.dim(2);
                int Ho = conv_out_dim(H, l.kernel, l.stride, l.pad, l.dilation);
                int Wo = conv_out_dim(W, l.kernel, l.stride, l.pad, l.dilation);
                if (Ho < 1 || Wo < 1)
                    throw std::runtime_error("layer " + l.name + ": output collapsed");
                Tensor y({l.out_channels, Ho, Wo});
                const Tensor& wt = params.at(l.name + ".weight");
                int ig = I / l.groups, og = l.out_channels / l.groups;
                int ikk = ig * l.kernel * l.kernel;
                std::vector<double> cols(size_t(ikk) * Ho * Wo);
                for (int g = 0; g < l.groups; ++g) {
                    im2col(x.data() + size_t(g) * ig * H * W, ig, H, W, l.kernel, l.stride, l.pad,
                           l.dilation, Ho, Wo, cols.data());
                    CMapMat Wm(wt.data() + size_t(g) * og * ikk, og, ikk);
                    CMapMat Cm(cols.data(), ikk, Ho * Wo);
                    MapMat Ym(y.data() + size_t(g) * og * Ho * Wo, og, Ho * Wo);
                    Ym.noalias() = Wm * Cm;
                }
                if (l.bias) {
                    const Tensor& b = params.at(l.name + ".bias");
                    for (int o = 0; o < l.out_channels; ++o) {
                        double bv = b[size_t(o)];
                        double* row = y.data() + size_t(o) * Ho * Wo;
                        for (int p = 0; p < Ho * Wo; ++p) row[p] += bv;
                    }
                }
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::ConvTranspose: {
                int I = x.dim(0), H = x.dim(1), W = x.dim(2);
                int Ho = deconv_out_dim(H, l.kernel, l.stride, l.pad, l.dilation);
                int Wo = deconv_out_dim(W, l.kernel, l.stride, l.pad, l.dilation);
                if (Ho < 1 || Wo < 1)
                    throw std::runtime_error("layer " + l.name + ": output collapsed");
                const Tensor& wt = params.at(l.name + ".weight");  // (I,O,K,K)
                int okk = l.out_channels * l.kernel * l.kernel;
                std::vector<double> cols(size_t(okk) * H * W);
                CMapMat Wm(wt.data(), I, okk);
                CMapMat Xm(x.data(), I, H * W);
                MapMat Cm(cols.data(), okk, H * W);
                Cm.noalias() = Wm.transpose() * Xm;
                Tensor y({l.out_channels, Ho, Wo}, 0.0);
                col2im(cols.data(), l.out_channels, Ho, Wo, l.kernel, l.stride, l.pad, l.dilation,
                       H, W, y.data());
                if (l.bias) {
                    const Tensor& b = params.at(l.name + ".bias");
                    for (int o = 0; o < l.out_channels; ++o) {
                        double bv = b[size_t(o)];
                        double* row = y.data() + size_t(o) * Ho * Wo;
                        for (int p = 0; p < Ho * Wo; ++p) row[p] += bv;
                    }
                }
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::MaxPool: {
                int C = x.dim(0), H = x.dim(1), W = x.dim(2);
                int Ho = (H - l.kernel) / l.stride + 1;
                int Wo = (W - l.kernel) / l.stride + 1;
                Tensor y({C, Ho, Wo});
                auto& arg = st.aux[i];
                arg.assign(size_t(C) * Ho * Wo, 0);
                for (int c = 0; c < C; ++c)
                    for (int oy = 0; oy < Ho; ++oy)
                        for (int ox = 0; ox < Wo; ++ox) {
                            double best = -1e300;
                            int best_idx = 0;
                            for (int ky = 0; ky < l.kernel; ++ky)
                                for (int kx = 0; kx < l.kernel; ++kx) {
                                    int iy = oy * l.stride + ky, ix = ox * l.stride + kx;
                                    int idx = (c * H + iy) * W + ix;
                                    if (x[size_t(idx)] > best) {
                                        best = x[size_t(idx)];
                                        best_idx = idx;
                                    }
                                }
                            y.at(c, oy, ox) = best;
                            arg[(size_t(c) * Ho + oy) * Wo + ox] = best_idx;
                        }
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::ReLU: {
                Tensor y = x;
                for (auto& v : y.vec()) v = v > 0.0 ? v : 0.0;
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::Tanh: {
                Tensor y = x;
                for (auto& v : y.vec()) v = std::tanh(v);
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::Sigmoid: {
                Tensor y = x;
                for (auto& v : y.vec()) v = 1.0 / (1.0 + std::exp(-v));
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::LogSoftmax: {
                int C = x.dim(0), H = x.dim(1), W = x.dim(2);
                Tensor y({C, H, W});
                int hw = H * W;
                for (int p = 0; p < hw; ++p) {
                    double m = -1e300;
                    for (int c = 0; c < C; ++c) m = std::max(m, x[size_t(c) * hw + p]);
                    double sum = 0.0;
                    for (int c = 0; c < C; ++c) sum += std::exp(x[size_t(c) * hw + p] - m);
                    double lse = m + std::log(sum);
                    for (int c = 0; c < C; ++c)
                        y[size_t(c) * hw + p] = x[size_t(c) * hw + p] - lse;
                }
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::Concat: {
                int H = x.dim(1), W = x.dim(2);
                int C = 0;
                for (int ref : in_refs_[i]) {
                    const Tensor& t = resolve(ref);
                    if (t.dim(1) != H || t.dim(2) != W)
                        throw std::runtime_error("layer " + l.name + ": spatial mismatch");
                    C += t.dim(0);
                }
                Tensor y({C, H, W});
                size_t off = 0;
                for (int ref : in_refs_[i]) {
                    const Tensor& t = resolve(ref);
                    std::memcpy(y.data() + off, t.data(), t.size() * sizeof(double));
                    off += t.size();
                }
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::Add: {
                const Tensor& b = resolve(in_refs_[i][1]);
                if (!x.same_shape(b))
                    throw std::runtime_error("layer " + l.name + ": shape mismatch at add");
                Tensor y = x;
                for (size_t k = 0; k < y.size(); ++k) y[k] += b[k];
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::GlobalAvgPool: {
                int C = x.dim(0), H = x.dim(1), W = x.dim(2);
                Tensor y({C, 1, 1});
                for (int c = 0; c < C; ++c) {
                    double s = 0.0;
                    const double* row = x.data() + size_t(c) * H * W;
                    for (int p = 0; p < H * W; ++p) s += row[p];
                    y[size_t(c)] = s / double(H * W);
                }
                st.act[i] = std::move(y);
                break;
            }
            case LayerKind::Affine: {
                if (int(x.size()) != l.in_channels)
                    throw std::runtime_error("layer " + l.name + ": affine input size " +
                                             std::to_string(x.size()) + " != " +
                                             std::to_string(l.in_channels));
                const Tensor& wt = params.at(l.name + ".weight");
                Tensor y({l.out_channels, 1, 1});
                CMapMat Wm(wt.data(), l.out_channels, l.in_channels);
                Eigen::Map<const Eigen::VectorXd> xv(x.data(), x.size());
                Eigen::Map<Eigen::VectorXd> yv(y.data(), y.size());
                yv.noalias() = Wm * xv;
                if (l.bias) {
                    const Tensor& b = params.at(l.name + ".bias");
                    for (int o = 0; o < l.out_channels; ++o) y[size_t(o)] += b[size_t(o)];
                }
                st.act[i] = std::move(y);
                break;
            }
        }
    }

    std::vector<Tensor> outs;
    for (int oi : output_indices_) outs.push_back(st.act[size_t(oi)]);
    return outs;
}

void Network::backward(const ForwardState& st, const ParameterStore& params,
                       const std::vector<Tensor>& output_grads, ParameterStore* param_grads,
                       std::vector<Tensor>* input_grads) const {
    if (output_grads.size() != output_indices_.size())
        throw std::invalid_argument("backward: output_grads count mismatch");

    std::vector<Tensor> grad(spec_.layers.size());
    auto add_grad = [&](Tensor& dst, const Tensor& src_shape_like, const double* data) {
        if (dst.empty()) dst = Tensor(src_shape_like.shape(), 0.0);
        double* d = dst.data();
        for (size_t k = 0; k < dst.size(); ++k) d[k] += data[k];
    };

    for (size_t oi = 0; oi < output_indices_.size(); ++oi) {
        int li = output_indices_[oi];
        if (!output_grads[oi].same_shape(st.act[size_t(li)]))
            throw std::invalid_argument("backward: output grad shape mismatch at output " +
                                        std::to_string(oi));
        add_grad(grad[size_t(li)], st.act[size_t(li)], output_grads[oi].data());
    }

    if (input_grads) {
        input_grads->clear();
        for (const auto& in : st.inputs) input_grads->emplace_back(in.shape(), 0.0);
    }

    auto resolve = [&](int ref) -> const Tensor& {
        return ref < 0 ? st.inputs[size_t(-1 - ref)] : st.act[size_t(ref)];
    };
    // Routes a computed input-gradient to its producer (or network input).
    auto route = [&](size_t layer, int slot, const Tensor& g) {
        int ref = in_refs_[layer][size_t(slot)];
        if (ref < 0) {
            if (input_grads) {
                Tensor& dst = (*input_grads)[size_t(-1 - ref)];
                for (size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
            }
        } else {
            add_grad(grad[size_t(ref)], st.act[size_t(ref)], g.data());
        }
    };

    for (int li = int(spec_.layers.size()) - 1; li >= 0; --li) {
        if (grad[size_t(li)].empty()) continue;  // no consumer contributed
        const auto& l = spec_.layers[size_t(li)];
        const Tensor& dy = grad[size_t(li)];
        const Tensor& x = resolve(in_refs_[size_t(li)][0]);
        const Tensor& y = st.act[size_t(li)];

        switch (l.kind) {
            case LayerKind::Conv: {
                int I = x.dim(0), H = x.dim(1), W = x.dim(2);
                int Ho = dy.dim(1), Wo = dy.dim(2);
                const Tensor& wt = params.at(l.name + ".weight");
                Tensor& dwt = param_grads->at(l.name + ".weight");
                int ig = I / l.groups, og = l.out_channels / l.groups;
                int ikk = ig * l.kernel * l.kernel;
                std::vector<double> cols(size_t(ikk) * Ho * Wo);
                std::vector<double> dcols(size_t(ikk) * Ho * Wo);
                Tensor dx(x.shape(), 0.0);
                for (int g = 0; g < l.groups; ++g) {
                    im2col(x.data() + size_t(g) * ig * H * W, ig, H, W, l.kernel, l.stride, l.pad,
                           l.dilation, Ho, Wo, cols.data());
                    CMapMat Dy(dy.data() + size_t(g) * og * Ho * Wo, og, Ho * Wo);
                    CMapMat Cm(cols.data(), ikk, Ho * Wo);
                    MapMat Dw(dwt.data() + size_t(g) * og * ikk, og, ikk);
                    Dw.noalias() += Dy * Cm.transpose();
                    CMapMat Wm(wt.data() + size_t(g) * og * ikk, og, ikk);
                    MapMat Dc(dcols.data(), ikk, Ho * Wo);
                    Dc.noalias() = Wm.transpose() * Dy;
                    col2im(dcols.data(), ig, H, W, l.kernel, l.stride, l.pad, l.dilation, Ho, Wo,
                           dx.data() + size_t(g) * ig * H * W);
                }
                if (l.bias) {
                    Tensor& db = param_grads->at(l.name + ".bias");
                    for (int o = 0; o < l.out_channels; ++o) {
                        double s = 0.0;
                        const double* row = dy.data() + size_t(o) * Ho * Wo;
                        for (int p = 0; p < Ho * Wo; ++p) s += row[p];
                        db[size_t(o)] += s;
                    }
                }
                route(size_t(li), 0, dx);
                break;
            }
            case LayerKind::ConvTranspose: {
                int I = x.dim(0), H = x.dim(1), W = x.dim(2);
                int Ho = dy.dim(1), Wo = dy.dim(2);
                const Tensor& wt = params.at(l.name + ".weight");
                Tensor& dwt = param_grads->at(l.name + ".weight");
                int okk = l.out_channels * l.kernel * l.kernel;
                std::vector<double> cols(size_t(okk) * H * W);
                im2col(dy.data(), l.out_channels, Ho, Wo, l.kernel, l.stride, l.pad, l.dilation,
                       H, W, cols.data());
                CMapMat Cm(cols.data(), okk, H * W);
                CMapMat Xm(x.data(), I, H * W);
                MapMat Dw(dwt.data(), I, okk);
                Dw.noalias() += Xm * Cm.transpose();
                Tensor dx(x.shape());
                CMapMat Wm(wt.data(), I, okk);
                MapMat Dx(dx.data(), I, H * W);
                Dx.noalias() = Wm * Cm;
                if (l.bias) {
                    Tensor& db = param_grads->at(l.name + ".bias");
                    for (int o = 0; o < l.out_channels; ++o) {
                        double s = 0.0;
                        const double* row = dy.data() + size_t(o) * Ho * Wo;
                        for (int p = 0; p < Ho * Wo; ++p) s += row[p];
                        db[size_t(o)] += s;
                    }
                }
                route(size_t(li), 0, dx);
                break;
            }
            case LayerKind::MaxPool: {
                Tensor dx(x.shape(), 0.0);
                const auto& arg = st.aux[size_t(li)];
                for (size_t k = 0; k < dy.size(); ++k) dx[size_t(arg[k])] += dy[k];
                route(size_t(li), 0, dx);
                break;
            }
            case LayerKind::ReLU: {
                Tensor dx(x.shape());
                for (size_t k = 0; k < dy.size(); ++k) dx[k] = y[k] > 0.0 ? dy[k] : 0.0;
                route(size_t(li), 0, dx);
                break;
            }
            case LayerKind::Tanh: {
                Tensor dx(x.shape());
                for (size_t k = 0; k < dy.size(); ++k) dx[k] = dy[k] * (1.0 - y[k] * y[k]);
                route(size_t(li), 0, dx);
                break;
            }
            case LayerKind::Sigmoid: {
                Tensor dx(x.shape());
                for (size_t k = 0; k < dy.size(); ++k) dx[k] = dy[k] * y[k] * (1.0 - y[k]);
                route(size_t(li), 0, dx);
                break;
            }
            case LayerKind::LogSoftmax: {
                int C = y.dim(0), hw = y.dim(1) * y.dim(2);
                Tensor dx(x.shape());
                for (int p = 0; p < hw; ++p) {
                    double gsum = 0.0;
                    for (int c = 0; c < C; ++c) gsum += dy[size_t(c) * hw + p];
                    for (int c = 0; c < C; ++c)
                        dx[size_t(c) * hw + p] =
                            dy[size_t(c) * hw + p] - std::exp(y[size_t(c) * hw + p]) * gsum;
                }
                route(size_t(li), 0, dx);
                break;
            }
            case LayerKind::Concat: {
                size_t off = 0;
                for (size_t slot = 0; slot < in_refs_[size_t(li)].size(); ++slot) {
                    const Tensor& src = resolve(in_refs_[size_t(li)][slot]);
                    Tensor g(src.shape());
                    std::memcpy(g.data(), dy.data() + off, g.size() * sizeof(double));
                    off += g.size();
                    route(size_t(li), int(slot), g);
                }
                break;
            }
            case LayerKind::Add: {
                route(size_t(li), 0, dy);
                route(size_t(li), 1, dy);
                break;
            }
            case LayerKind::GlobalAvgPool: {
                int C = x.dim(0), H = x.dim(1), W = x.dim(2);
                Tensor dx(x.shape());
                for (int c = 0; c < C; ++c) {
                    double g = dy[size_t(c)] / double(H * W);
                    double* row = dx.data() + size_t(c) * H * W;
                    for (int p = 0; p < H * W; ++p) row[p] = g;
                }
                route(size_t(li), 0, dx);
                break;
            }
            case LayerKind::Affine: {
                const Tensor& wt = params.at(l.name + ".weight");
                Tensor& dwt = param_grads->at(l.name + ".weight");
                CMapMat Wm(wt.data(), l.out_channels, l.in_channels);
                Eigen::Map<const Eigen::VectorXd> dyv(dy.data(), dy.size());
                Eigen::Map<const Eigen::VectorXd> xv(x.data(), x.size());
                MapMat Dw(dwt.data(), l.out_channels, l.in_channels);
                Dw.noalias() += dyv * xv.transpose();
                Tensor dx(x.shape());
                Eigen::Map<Eigen::VectorXd> dxv(dx.data(), dx.size());
                dxv.noalias() = Wm.transpose() * dyv;
                if (l.bias) {
                    Tensor& db = param_grads->at(l.name + ".bias");
                    for (int o = 0; o < l.out_channels; ++o) db[size_t(o)] += dy[size_t(o)];
                }
                route(size_t(li), 0, dx);
                break;
            }
        }
    }
}

}  // namespace pearl
