#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pearl/rng.hpp"
#include "pearl/tensor.hpp"

namespace pearl {

enum class LayerKind {
    Conv,           // weight (O, I/g, K, K)
    ConvTranspose,  // weight (I, O, K, K)
    MaxPool,
    ReLU,
    Tanh,
    Sigmoid,
    LogSoftmax,     // over channels, per pixel
    Concat,         // channel-wise
    Add,
    GlobalAvgPool,
    Affine,         // weight (O, N) on the flattened input
};

const char* to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

// One node of the layer graph. Names are "<section>.<local>"; inputs refer
// to earlier layers by name, or to network inputs as "$0", "$1", ...
struct LayerDesc {
    std::string name;
    LayerKind kind = LayerKind::ReLU;
    std::string section;
    std::vector<std::string> inputs;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    int dilation = 1;
    int groups = 1;
    bool bias = true;

    bool has_params() const {
        return kind == LayerKind::Conv || kind == LayerKind::ConvTranspose ||
               kind == LayerKind::Affine;
    }
};

// Declarative layer graph. The layer list must be topologically ordered.
struct NetworkSpec {
    std::string name;
    int num_inputs = 1;
    std::vector<int> input_channels;
    std::vector<LayerDesc> layers;
    std::vector<std::string> outputs;
    std::map<std::string, std::string> taps;  // role -> layer name ("encoder_out", ...)

    const LayerDesc* find(const std::string& name) const;
    LayerDesc* find(const std::string& name);
    int layer_index(const std::string& name) const;  // -1 if absent

    std::string to_json_string(int indent = -1) const;
    static NetworkSpec from_json_string(const std::string& s);
    // FNV-1a hash of the canonical serialization; architecture identity.
    std::string hash() const;
};

// Renames every layer/section with "<prefix>." and remaps network-input
// references through input_map (old index -> new index).
NetworkSpec prefix_spec(const NetworkSpec& spec, const std::string& prefix,
                        const std::vector<int>& input_map);

// Flat name -> array map ("<layer>.weight" / "<layer>.bias").
struct ParameterStore {
    std::map<std::string, Tensor> arrays;
    std::string version = "1";
    std::map<std::string, std::string> provenance;  // section -> origin tag

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return arrays.count(name) > 0; }

    // Zero-filled clone with the same keys/shapes (gradient accumulator).
    ParameterStore zeros_like() const;
    void zero_all();
    size_t total_values() const;
    std::vector<std::string> names_in_section(const std::string& section) const;
};

// He fan-in for convolutions and affine layers, zero biases, bilinear
// upsampling profile for transposed convolutions.
ParameterStore init_parameters(const NetworkSpec& spec, Rng& rng);

// Copies src_section arrays into dst under dst_section (prefix rewrite).
// Validates every source array first; nothing is applied on mismatch.
// Returns the number of arrays copied.
int transfer_parameters(const ParameterStore& src, const std::string& src_section,
                        ParameterStore& dst, const std::string& dst_section,
                        const std::string& provenance_tag);
int transfer_parameters(const ParameterStore& src, ParameterStore& dst,
                        const std::string& section, const std::string& provenance_tag);

// Activations and pooling argmaxes kept alive for the backward pass.
struct ForwardState {
    std::vector<Tensor> inputs;
    std::vector<Tensor> act;                  // parallel to spec.layers
    std::vector<std::vector<int32_t>> aux;    // pool argmax indices
};

// Executable form of a NetworkSpec: validates wiring (channel compatibility,
// topological order, exact stride agreement at concat/add) and runs
// forward/backward passes. Immutable and shareable; forward is reentrant.
class Network {
public:
    explicit Network(NetworkSpec spec);

    const NetworkSpec& spec() const { return spec_; }

    // Cumulative spatial stride of a layer's output relative to the frame.
    double layer_stride(const std::string& name) const;
    int layer_out_channels(const std::string& name) const;

    // Single-sample forward; inputs are (C,H,W) tensors, one per network
    // input. Returns the spec.outputs tensors. `state`, when given, keeps
    // everything needed for backward.
    std::vector<Tensor> forward(const std::vector<Tensor>& inputs,
                                const ParameterStore& params,
                                ForwardState* state = nullptr) const;

    // Accumulates parameter gradients into param_grads (keys must exist,
    // e.g. from zeros_like) and, when requested, input gradients.
    void backward(const ForwardState& state, const ParameterStore& params,
                  const std::vector<Tensor>& output_grads, ParameterStore* param_grads,
                  std::vector<Tensor>* input_grads = nullptr) const;

private:
    NetworkSpec spec_;
    std::map<std::string, int> index_;       // layer name -> index
    std::vector<std::vector<int>> in_refs_;  // per layer: producer index, or -1-k for input $k
    std::vector<double> stride_;             // per layer cumulative stride
    std::vector<int> out_ch_;                // per layer output channels
    std::vector<int> output_indices_;
};

}  // namespace pearl
