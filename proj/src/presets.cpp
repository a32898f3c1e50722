#include "pearl/presets.hpp"

#include <cmath>
#include <stdexcept>

namespace pearl {

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "vgg-toy" || s == "vgg") return EncoderKind::VggToy;
    if (s == "res-toy" || s == "res") return EncoderKind::ResToy;
    throw std::invalid_argument("unknown encoder kind: " + s);
}

const char* to_string(EncoderKind k) {
    return k == EncoderKind::VggToy ? "vgg-toy" : "res-toy";
}

namespace {

LayerDesc conv(const std::string& name, const std::string& sec, const std::string& in, int ic,
               int oc, int k, int s, int p, int dil = 1, int groups = 1) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerKind::Conv;
    l.section = sec;
    l.inputs = {in};
    l.in_channels = ic;
    l.out_channels = oc;
    l.kernel = k;
    l.stride = s;
    l.pad = p;
    l.dilation = dil;
    l.groups = groups;
    return l;
}

LayerDesc deconv(const std::string& name, const std::string& sec, const std::string& in, int ic,
                 int oc, int k, int s, int p) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerKind::ConvTranspose;
    l.section = sec;
    l.inputs = {in};
    l.in_channels = ic;
    l.out_channels = oc;
    l.kernel = k;
    l.stride = s;
    l.pad = p;
    return l;
}

LayerDesc unary(const std::string& name, LayerKind kind, const std::string& sec,
                const std::string& in) {
    LayerDesc l;
    l.name = name;
    l.kind = kind;
    l.section = sec;
    l.inputs = {in};
    return l;
}

LayerDesc pool(const std::string& name, const std::string& sec, const std::string& in, int k,
               int s) {
    LayerDesc l;
    l.name = name;
    l.kind = LayerKind::MaxPool;
    l.section = sec;
    l.inputs = {in};
    l.kernel = k;
    l.stride = s;
    return l;
}

struct EncoderInfo {
    std::string out_layer;  // encoder output (stride 8)
    int out_channels;
    int conv1_channels;
};

// Appends the EN section; first convolution grouped when groups > 1.
EncoderInfo append_encoder(NetworkSpec& spec, EncoderKind kind, int in_channels, int groups) {
    int c1 = groups > 1 ? 4 * groups : 16;
    if (kind == EncoderKind::VggToy) {
        spec.layers.push_back(conv("en.conv1", "en", "$0", in_channels, c1, 3, 1, 1, 1, groups));
        spec.layers.push_back(unary("en.relu1", LayerKind::ReLU, "en", "en.conv1"));
        spec.layers.push_back(pool("en.pool1", "en", "en.relu1", 2, 2));
        spec.layers.push_back(conv("en.conv2", "en", "en.pool1", c1, 32, 3, 1, 1));
        spec.layers.push_back(unary("en.relu2", LayerKind::ReLU, "en", "en.conv2"));
        spec.layers.push_back(pool("en.pool2", "en", "en.relu2", 2, 2));
        spec.layers.push_back(conv("en.conv3", "en", "en.pool2", 32, 64, 3, 1, 1));
        spec.layers.push_back(unary("en.relu3", LayerKind::ReLU, "en", "en.conv3"));
        spec.layers.push_back(pool("en.pool3", "en", "en.relu3", 2, 2));
        spec.layers.push_back(conv("en.conv4", "en", "en.pool3", 64, 64, 3, 1, 1));
        spec.layers.push_back(unary("en.relu4", LayerKind::ReLU, "en", "en.conv4"));
    } else {
        spec.layers.push_back(conv("en.conv1", "en", "$0", in_channels, c1, 3, 2, 1, 1, groups));
        spec.layers.push_back(unary("en.relu1", LayerKind::ReLU, "en", "en.conv1"));
        spec.layers.push_back(conv("en.conv2", "en", "en.relu1", c1, 32, 3, 2, 1));
        spec.layers.push_back(unary("en.relu2", LayerKind::ReLU, "en", "en.conv2"));
        spec.layers.push_back(conv("en.conv3", "en", "en.relu2", 32, 64, 3, 2, 1));
        spec.layers.push_back(unary("en.relu3", LayerKind::ReLU, "en", "en.conv3"));
        // Dilated final stage keeps stride 8 while widening the field.
        spec.layers.push_back(conv("en.conv4", "en", "en.relu3", 64, 64, 3, 1, 2, 2));
        spec.layers.push_back(unary("en.relu4", LayerKind::ReLU, "en", "en.conv4"));
    }
    spec.taps["encoder_out"] = "en.relu4";
    return {"en.relu4", 64, c1};
}

// Appends the parsing decoder: three K(4)-S(2)-P(1) transposed convolutions
// back to frame resolution, classifier, log-probabilities. The ResToy
// flavor adds skip connections from the encoder's early layers.
void append_parsing_decoder(NetworkSpec& spec, EncoderKind kind, const EncoderInfo& enc,
                            int num_classes) {
    int c1 = enc.conv1_channels;
    spec.layers.push_back(deconv("dn.deconv1", "dn", enc.out_layer, enc.out_channels, 32, 4, 2, 1));
    spec.layers.push_back(unary("dn.relu1", LayerKind::ReLU, "dn", "dn.deconv1"));
    std::string d2_in = "dn.relu1";
    if (kind == EncoderKind::ResToy) {
        LayerDesc skip = unary("dn.skip1", LayerKind::Add, "dn", "dn.relu1");
        skip.inputs.push_back("en.relu2");
        spec.layers.push_back(skip);
        d2_in = "dn.skip1";
    }
    spec.layers.push_back(deconv("dn.deconv2", "dn", d2_in, 32, c1, 4, 2, 1));
    spec.layers.push_back(unary("dn.relu2", LayerKind::ReLU, "dn", "dn.deconv2"));
    std::string d3_in = "dn.relu2";
    if (kind == EncoderKind::ResToy) {
        LayerDesc skip = unary("dn.skip2", LayerKind::Add, "dn", "dn.relu2");
        skip.inputs.push_back("en.relu1");
        spec.layers.push_back(skip);
        d3_in = "dn.skip2";
    }
    spec.layers.push_back(deconv("dn.deconv3", "dn", d3_in, c1, 8, 4, 2, 1));
    spec.layers.push_back(unary("dn.relu3", LayerKind::ReLU, "dn", "dn.deconv3"));
    spec.layers.push_back(conv("dn.classifier", "dn", "dn.relu3", 8, num_classes, 1, 1, 0));
    spec.layers.push_back(unary("dn.logprobs", LayerKind::LogSoftmax, "dn", "dn.classifier"));
    spec.taps["decoder_in"] = "dn.deconv1";
    spec.outputs = {"dn.logprobs"};
}

// Keeps only the EN section of a spec (the feature extractor).
NetworkSpec encoder_only(const NetworkSpec& src) {
    NetworkSpec out;
    out.name = src.name + ".encoder";
    out.num_inputs = 1;
    out.input_channels = {src.input_channels.at(0)};
    for (const auto& l : src.layers)
        if (l.section == "en") out.layers.push_back(l);
    out.taps["encoder_out"] = src.taps.at("encoder_out");
    out.outputs = {out.taps["encoder_out"]};
    return out;
}

void copy_section_params(const ParameterStore& src, const std::string& section,
                         ParameterStore& dst, const std::string& provenance) {
    for (const auto& name : src.names_in_section(section)) dst.arrays[name] = src.at(name);
    dst.provenance[section] = provenance;
}

}  // namespace

BuiltNet build_generator(EncoderKind kind, int s, Rng& rng) {
    if (s < 1) throw std::invalid_argument("build_generator: s must be >= 1");
    BuiltNet net;
    net.spec.name = std::string("fpnet_g_") + to_string(kind);
    net.spec.num_inputs = 1;
    net.spec.input_channels = {3 * s};
    EncoderInfo enc = append_encoder(net.spec, kind, 3 * s, s);
    // Single upsampling head back to frame resolution, bounded to [-1,1].
    net.spec.layers.push_back(
        deconv("gout.deconv", "gout", enc.out_layer, enc.out_channels, 3, 8, 8, 0));
    net.spec.layers.push_back(unary("gout.tanh", LayerKind::Tanh, "gout", "gout.deconv"));
    net.spec.outputs = {"gout.tanh"};
    Network check(net.spec);  // validates grouping and wiring
    net.params = init_parameters(net.spec, rng);
    return net;
}

BuiltNet build_discriminator(Rng& rng) {
    BuiltNet net;
    net.spec.name = "fpnet_d";
    net.spec.num_inputs = 1;
    net.spec.input_channels = {3};
    auto& L = net.spec.layers;
    L.push_back(conv("d.conv1", "d", "$0", 3, 16, 3, 2, 1));
    L.push_back(unary("d.relu1", LayerKind::ReLU, "d", "d.conv1"));
    L.push_back(conv("d.conv2", "d", "d.relu1", 16, 32, 3, 2, 1));
    L.push_back(unary("d.relu2", LayerKind::ReLU, "d", "d.conv2"));
    L.push_back(conv("d.conv3", "d", "d.relu2", 32, 64, 3, 2, 1));
    L.push_back(unary("d.relu3", LayerKind::ReLU, "d", "d.conv3"));
    L.push_back(unary("d.gap", LayerKind::GlobalAvgPool, "d", "d.relu3"));
    LayerDesc aff;
    aff.name = "d.affine";
    aff.kind = LayerKind::Affine;
    aff.section = "d";
    aff.inputs = {"d.gap"};
    aff.in_channels = 64;
    aff.out_channels = 1;
    L.push_back(aff);
    L.push_back(unary("d.sigmoid", LayerKind::Sigmoid, "d", "d.affine"));
    net.spec.outputs = {"d.sigmoid"};
    Network check(net.spec);
    net.params = init_parameters(net.spec, rng);
    return net;
}

BuiltNet build_ipnet(EncoderKind kind, int num_classes, Rng& rng, int in_channels) {
    BuiltNet net;
    net.spec.name = std::string("ipnet_") + to_string(kind);
    net.spec.num_inputs = 1;
    net.spec.input_channels = {in_channels};
    EncoderInfo enc = append_encoder(net.spec, kind, in_channels, 1);
    append_parsing_decoder(net.spec, kind, enc, num_classes);
    Network check(net.spec);
    net.params = init_parameters(net.spec, rng);
    return net;
}

BuiltNet build_ppnet_from_fpnet(const NetworkSpec& generator_spec,
                                const ParameterStore& generator_params, EncoderKind kind,
                                int num_classes, Rng& rng) {
    if (!generator_spec.taps.count("encoder_out"))
        throw std::invalid_argument("build_ppnet_from_fpnet: generator spec lacks encoder tap");
    BuiltNet net;
    net.spec.name = std::string("ppnet_") + to_string(kind);
    net.spec.num_inputs = 1;
    net.spec.input_channels = {generator_spec.input_channels.at(0)};
    // The D component and the generator's RGB head are dropped; only EN
    // survives, with a parsing decoder on top.
    NetworkSpec enc_spec = encoder_only(generator_spec);
    net.spec.layers = enc_spec.layers;
    net.spec.taps["encoder_out"] = enc_spec.taps["encoder_out"];
    EncoderInfo enc;
    enc.out_layer = net.spec.taps["encoder_out"];
    enc.out_channels = Network(enc_spec).layer_out_channels(enc.out_layer);
    enc.conv1_channels = net.spec.find("en.conv1")->out_channels;
    append_parsing_decoder(net.spec, kind, enc, num_classes);
    Network check(net.spec);
    net.params = init_parameters(net.spec, rng);
    copy_section_params(generator_params, "en", net.params, "transferred-from:FPNet");
    return net;
}

BuiltNet build_ppnet_random(EncoderKind kind, int s, int num_classes, Rng& rng) {
    BuiltNet net;
    net.spec.name = std::string("ppnet_") + to_string(kind);
    net.spec.num_inputs = 1;
    net.spec.input_channels = {3 * s};
    EncoderInfo enc = append_encoder(net.spec, kind, 3 * s, s);
    append_parsing_decoder(net.spec, kind, enc, num_classes);
    Network check(net.spec);
    net.params = init_parameters(net.spec, rng);
    return net;
}

BuiltNet build_adapnet(int in_channels, Rng& rng, int depth) {
    if (in_channels < 1) throw std::invalid_argument("build_adapnet: in_channels must be >= 1");
    if (depth < 1) throw std::invalid_argument("build_adapnet: depth must be >= 1");
    BuiltNet net;
    net.spec.name = "adapnet";
    net.spec.num_inputs = 1;
    net.spec.input_channels = {in_channels};
    std::string in = "$0";
    for (int d = 1; d <= depth; ++d) {
        std::string cname = "adap.conv" + std::to_string(d);
        std::string rname = "adap.relu" + std::to_string(d);
        net.spec.layers.push_back(conv(cname, "adap", in, in_channels, in_channels, 1, 1, 0));
        net.spec.layers.push_back(unary(rname, LayerKind::ReLU, "adap", cname));
        in = rname;
    }
    net.spec.outputs = {in};
    net.spec.taps["adapted"] = in;
    Network check(net.spec);
    net.params = init_parameters(net.spec, rng);
    return net;
}

namespace {

// Shared wiring for PSPNet and the frozen variant: feature branch -> AdapNet
// -> concat with IPNet encoder features -> IPNet decoder.
BuiltNet assemble_fused(const BuiltNet& feature_branch, bool keep_feature_decoder,
                        const std::string& feature_prefix, const BuiltNet& ipnet,
                        const BuiltNet& adapnet, Rng& rng, const char* feature_provenance) {
    NetworkSpec fspec = feature_branch.spec;
    if (!keep_feature_decoder) fspec = encoder_only(fspec);

    int feat_ch = Network(fspec).layer_out_channels(fspec.taps.at("encoder_out"));
    int ip_ch = Network(ipnet.spec).layer_out_channels(ipnet.spec.taps.at("encoder_out"));
    if (adapnet.spec.input_channels.at(0) != feat_ch)
        throw std::invalid_argument("assemble: adapnet expects " +
                                    std::to_string(adapnet.spec.input_channels.at(0)) +
                                    " channels, feature encoder yields " +
                                    std::to_string(feat_ch));

    NetworkSpec feat = prefix_spec(fspec, feature_prefix, {0});
    NetworkSpec ip = prefix_spec(ipnet.spec, "ip", {1});
    NetworkSpec adap = prefix_spec(adapnet.spec, "adap0", {0});

    std::string feat_enc_out = feat.taps.at("encoder_out");
    std::string ip_enc_out = ip.taps.at("encoder_out");
    std::string ip_dec_in = ip.taps.at("decoder_in");
    std::string adap_out = adap.taps.at("adapted");

    BuiltNet out;
    out.spec.name = keep_feature_decoder ? "pspnet" : "frozen_variant";
    out.spec.num_inputs = 2;
    out.spec.input_channels = {feature_branch.spec.input_channels.at(0),
                               ipnet.spec.input_channels.at(0)};

    for (const auto& l : feat.layers) out.spec.layers.push_back(l);
    for (auto l : adap.layers) {
        for (auto& in : l.inputs)
            if (in == "$0") in = feat_enc_out;
        out.spec.layers.push_back(l);
    }

    LayerDesc fuse;
    fuse.name = "fuse.concat";
    fuse.kind = LayerKind::Concat;
    fuse.section = "fuse";
    fuse.inputs = {ip_enc_out, adap_out};

    for (const auto& l : ip.layers) {
        if (l.name == ip_dec_in) {
            out.spec.layers.push_back(fuse);
            LayerDesc d = l;
            d.inputs = {"fuse.concat"};
            d.in_channels = ip_ch + feat_ch;
            out.spec.layers.push_back(d);
        } else {
            out.spec.layers.push_back(l);
        }
    }

    if (keep_feature_decoder)
        out.spec.outputs = {feature_prefix + "." + feature_branch.spec.outputs.at(0),
                            ip.outputs.at(0)};
    else
        out.spec.outputs = {ip.outputs.at(0)};
    out.spec.taps["pp_encoder_out"] = feat_enc_out;
    out.spec.taps["ip_encoder_out"] = ip_enc_out;
    out.spec.taps["fused_decoder_in"] = ip_dec_in;

    // Surfaces stride/channel mismatches before any training step.
    Network check(out.spec);
    (void)check;

    // Parameters: fresh init, then overlay the three components. The fused
    // decoder entry weight (I,O,K,K) grew input channels; the leading
    // I-slice maps to the IPNet features (first concat block) and inherits,
    // the rest keeps its fresh initialization.
    Rng init_rng = rng.fork(0x5050);
    out.params = init_parameters(out.spec, init_rng);

    for (const auto& [name, t] : feature_branch.params.arrays) {
        std::string pname = feature_prefix + "." + name;
        if (out.params.has(pname)) out.params.at(pname).vec() = t.vec();
    }
    for (const auto& [sec, tag] : feature_branch.params.provenance)
        out.params.provenance[feature_prefix + "." + sec] = tag;
    out.params.provenance[feature_prefix + ".en"] = feature_provenance;

    for (const auto& [name, t] : adapnet.params.arrays)
        out.params.at("adap0." + name).vec() = t.vec();
    out.params.provenance["adap0.adap"] = "random";

    const std::string dec_weight = ipnet.spec.taps.at("decoder_in") + ".weight";
    for (const auto& [name, t] : ipnet.params.arrays) {
        Tensor& dst = out.params.at("ip." + name);
        if (name == dec_weight && dst.shape() != t.shape())
            std::copy(t.vec().begin(), t.vec().end(), dst.vec().begin());
        else
            dst.vec() = t.vec();
    }
    for (const auto& [sec, tag] : ipnet.params.provenance)
        out.params.provenance["ip." + sec] = tag;

    if (!keep_feature_decoder) out.frozen_sections = {feature_prefix + ".en"};
    return out;
}

}  // namespace

BuiltNet assemble_pspnet(const BuiltNet& ppnet, const BuiltNet& ipnet, const BuiltNet& adapnet,
                         Rng& rng) {
    return assemble_fused(ppnet, true, "pp", ipnet, adapnet, rng, "transferred-from:PPNet");
}

BuiltNet assemble_frozen_variant(const BuiltNet& feature_net, const BuiltNet& ipnet,
                                 const BuiltNet& adapnet, Rng& rng) {
    return assemble_fused(feature_net, false, "feat", ipnet, adapnet, rng,
                          "transferred-from:feature-net");
}

}  // namespace pearl
