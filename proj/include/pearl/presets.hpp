#pragma once

#include <string>
#include <vector>

#include "pearl/net.hpp"

namespace pearl {

// Toy-scale stand-ins for the full backbones: ~4 convolution stages, total
// stride 8, well under 1M parameters. VggToy stacks 3x3 convolutions with
// pooling; ResToy uses strided convolutions, a dilated final stage and skip
// connections from the early layers into the decoder.
enum class EncoderKind { VggToy, ResToy };

EncoderKind encoder_kind_from_string(const std::string& s);
const char* to_string(EncoderKind k);

struct BuiltNet {
    NetworkSpec spec;
    ParameterStore params;
    std::vector<std::string> frozen_sections;  // sections excluded from updates
};

// Frame-prediction generator: grouped first layer (one group per past
// frame), encoder, and a bounded RGB head mapping back to frame resolution.
BuiltNet build_generator(EncoderKind kind, int s, Rng& rng);

// Single-frame discriminator squashing to a scalar in (0,1).
BuiltNet build_discriminator(Rng& rng);

// Single-frame parser: encoder + three-transposed-convolution decoder with
// the O-halving / K(4) / S(2) / P(1) pattern and a per-pixel log-probability
// head. in_channels > 3 covers the flow-augmented variant.
BuiltNet build_ipnet(EncoderKind kind, int num_classes, Rng& rng, int in_channels = 3);

// Predictive parser: the generator's encoder (parameters copied) with the
// RGB head removed and a freshly initialized parsing decoder added.
BuiltNet build_ppnet_from_fpnet(const NetworkSpec& generator_spec,
                                const ParameterStore& generator_params, EncoderKind kind,
                                int num_classes, Rng& rng);

// Fresh PPNet without transfer, for the from-scratch ablation.
BuiltNet build_ppnet_random(EncoderKind kind, int s, int num_classes, Rng& rng);

// 1x1 convolution adapter, output channels = input channels, rectified.
BuiltNet build_adapnet(int in_channels, Rng& rng, int depth = 1);

// Joint prediction-steering parser: PPNet branch (past frames) steering the
// IPNet branch (current frame) through AdapNet-adapted feature
// concatenation; both parsing heads are outputs, predictive head first.
// The fused decoder's first layer grows extra input channels; those slices
// inherit from ipnet where shapes align and are freshly initialized
// otherwise.
BuiltNet assemble_pspnet(const BuiltNet& ppnet, const BuiltNet& ipnet, const BuiltNet& adapnet,
                         Rng& rng);

// Fig-3c style variant: a frozen feature encoder (from FPNet or PPNet)
// concatenated into IPNet; no predictive head.
BuiltNet assemble_frozen_variant(const BuiltNet& feature_net, const BuiltNet& ipnet,
                                 const BuiltNet& adapnet, Rng& rng);

}  // namespace pearl
