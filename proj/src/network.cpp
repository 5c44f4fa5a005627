#include "finnet/network.hpp"

#include <sstream>

#include "finnet/checkpoint.hpp"

namespace finnet {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::SeBlock: return "se_block";
        case LayerKind::Relu: return "relu";
        case LayerKind::LeakyRelu: return "leaky_relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Dense: return "dense";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::Softmax: return "softmax";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::ResidualAdd: return "residual_add";
        case LayerKind::GridOutput: return "grid_output";
    }
    return "?";
}

static LayerKind layer_kind_from(const std::string& s) {
    static const std::pair<const char*, LayerKind> table[] = {
        {"conv", LayerKind::Conv},        {"batchnorm", LayerKind::BatchNorm},
        {"se_block", LayerKind::SeBlock}, {"relu", LayerKind::Relu},
        {"leaky_relu", LayerKind::LeakyRelu}, {"maxpool", LayerKind::MaxPool},
        {"dense", LayerKind::Dense},      {"dropout", LayerKind::Dropout},
        {"softmax", LayerKind::Softmax},  {"flatten", LayerKind::Flatten},
        {"residual_add", LayerKind::ResidualAdd}, {"grid_output", LayerKind::GridOutput},
    };
    for (auto& [name, kind] : table)
        if (s == name) return kind;
    throw Error("unknown layer kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// spec serialization

std::string NetworkSpec::serialize() const {
    std::ostringstream os;
    os << "finnet-spec v1\n";
    os << "input " << in_channels << ' ' << in_height << ' ' << in_width << '\n';
    os << "classes " << class_count << '\n';
    os << "se_ratio " << se_ratio << '\n';
    os << "batch " << batch_size << '\n';
    os << "se_residual " << (se_residual ? 1 : 0) << '\n';
    for (const auto& l : layers) {
        os << "layer " << layer_kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::Conv:
                os << " filters=" << l.filters << " kernel=" << l.kernel << " stride=" << l.stride
                   << " pad=" << (l.pad == Padding::Valid ? "valid" : "same");
                if (l.from != 0) os << " from=" << l.from;
                break;
            case LayerKind::Dense: os << " units=" << l.units; break;
            case LayerKind::Dropout: os << " rate=" << l.rate; break;
            case LayerKind::LeakyRelu: os << " slope=" << l.slope; break;
            case LayerKind::SeBlock: os << " ratio=" << l.ratio; break;
            case LayerKind::ResidualAdd: os << " skip=" << l.skip; break;
            default: break;
        }
        os << '\n';
    }
    return os.str();
}

NetworkSpec NetworkSpec::parse(const std::string& text) {
    NetworkSpec spec;
    std::istringstream is(text);
    std::string line;
    bool header = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "finnet-spec") {
            std::string ver;
            ls >> ver;
            FN_CHECK(ver == "v1", "unsupported spec version '" + ver + "'");
            header = true;
        } else if (word == "input") {
            ls >> spec.in_channels >> spec.in_height >> spec.in_width;
        } else if (word == "classes") {
            ls >> spec.class_count;
        } else if (word == "se_ratio") {
            ls >> spec.se_ratio;
        } else if (word == "batch") {
            ls >> spec.batch_size;
        } else if (word == "se_residual") {
            int v = 0;
            ls >> v;
            spec.se_residual = v != 0;
        } else if (word == "layer") {
            std::string kind;
            ls >> kind;
            LayerSpec l;
            l.kind = layer_kind_from(kind);
            std::string kv;
            while (ls >> kv) {
                auto eq = kv.find('=');
                FN_CHECK(eq != std::string::npos, "malformed layer attribute '" + kv + "'");
                std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
                if (key == "filters") l.filters = std::stoi(val);
                else if (key == "kernel") l.kernel = std::stoi(val);
                else if (key == "stride") l.stride = std::stoi(val);
                else if (key == "units") l.units = std::stoi(val);
                else if (key == "rate") l.rate = std::stod(val);
                else if (key == "slope") l.slope = std::stod(val);
                else if (key == "ratio") l.ratio = std::stoi(val);
                else if (key == "skip") l.skip = std::stoi(val);
                else if (key == "from") l.from = std::stoi(val);
                else if (key == "pad") l.pad = (val == "same") ? Padding::Same : Padding::Valid;
                else throw Error("unknown layer attribute '" + key + "'");
            }
            spec.layers.push_back(l);
        } else {
            throw Error("unrecognized spec line: " + line);
        }
    }
    FN_CHECK(header, "missing finnet-spec header");
    return spec;
}

// ---------------------------------------------------------------------------
// shape validation

std::vector<Shape> NetworkSpec::validate() const {
    FN_CHECK(in_channels > 0 && in_height > 0 && in_width > 0, "network input shape must be set");
    std::vector<Shape> outs;
    const Shape input = {1, in_channels, in_height, in_width};
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        auto where = [&] { return std::string(layer_kind_name(l.kind)) + " at layer " + std::to_string(i); };
        int src = static_cast<int>(i) - 1 - l.from;
        FN_CHECK(l.from >= 0 && src >= -1, where() + ": 'from' reaches before the network input");
        Shape cur = (src < 0) ? input : outs[static_cast<size_t>(src)];
        switch (l.kind) {
            case LayerKind::Conv: {
                FN_CHECK(cur.size() == 4, where() + " needs a 4-d input, got " + shape_str(cur));
                FN_CHECK(l.filters > 0 && l.kernel > 0 && l.stride > 0, where() + " has invalid parameters");
                auto g = detail::conv_geometry(cur[2], cur[3], l.kernel, l.kernel, l.stride, l.pad);
                cur = {cur[0], l.filters, g.out_h, g.out_w};
                break;
            }
            case LayerKind::MaxPool:
                FN_CHECK(cur.size() == 4, where() + " needs a 4-d input");
                FN_CHECK(cur[2] >= 2 && cur[3] >= 2, where() + ": spatial extents below window size");
                cur = {cur[0], cur[1], cur[2] / 2, cur[3] / 2};
                break;
            case LayerKind::Dense:
                FN_CHECK(cur.size() == 2, where() + " needs a flattened 2-d input, got " + shape_str(cur));
                FN_CHECK(l.units > 0, where() + " has no unit count");
                cur = {cur[0], l.units};
                break;
            case LayerKind::Flatten: {
                std::int64_t rest = numel(cur) / cur[0];
                cur = {cur[0], static_cast<int>(rest)};
                break;
            }
            case LayerKind::SeBlock:
                FN_CHECK(cur.size() == 4, where() + " needs a 4-d input");
                break;
            case LayerKind::BatchNorm:
                FN_CHECK(cur.size() >= 2, where() + " needs at least 2-d input");
                break;
            case LayerKind::Dropout:
                FN_CHECK(l.rate >= 0.0 && l.rate < 1.0, where() + ": rate must lie in [0,1)");
                break;
            case LayerKind::ResidualAdd: {
                int other = static_cast<int>(i) - 1 - l.skip;
                FN_CHECK(l.skip > 0 && other >= -1, where() + ": skip reaches before the input");
                const Shape& o = (other < 0) ? Shape{1, in_channels, in_height, in_width}
                                             : outs[static_cast<size_t>(other)];
                FN_CHECK(o == cur, where() + ": operand shapes differ, " + shape_str(o) + " vs " +
                                       shape_str(cur));
                break;
            }
            case LayerKind::Relu:
            case LayerKind::LeakyRelu:
            case LayerKind::Softmax:
            case LayerKind::GridOutput:
                break;
        }
        outs.push_back(cur);
    }
    return outs;
}

// ---------------------------------------------------------------------------
// network

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    shapes_ = spec_.validate();
    state_.resize(spec_.layers.size());
    std::mt19937_64 rng(seed);
    Shape in = {1, spec_.in_channels, spec_.in_height, spec_.in_width};
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto& l = spec_.layers[i];
        int src = static_cast<int>(i) - 1 - l.from;
        const Shape& lin = (src < 0) ? in : shapes_[static_cast<size_t>(src)];
        auto& ls = state_[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                int c = lin[1];
                ls.w = Tensor::zeros({l.filters, c, l.kernel, l.kernel}, true);
                init_fan_in(ls.w, static_cast<std::int64_t>(c) * l.kernel * l.kernel, rng);
                ls.b = Tensor::zeros({l.filters}, true);
                break;
            }
            case LayerKind::Dense: {
                int k = lin[1];
                ls.w = Tensor::zeros({k, l.units}, true);
                init_fan_in(ls.w, k, rng);
                ls.b = Tensor::zeros({l.units}, true);
                break;
            }
            case LayerKind::BatchNorm: {
                int c = lin[1];
                ls.gamma = Tensor::filled({c}, 1.0f, true);
                ls.beta = Tensor::zeros({c}, true);
                ls.bn.running_mean.assign(static_cast<size_t>(c), 0.0f);
                ls.bn.running_var.assign(static_cast<size_t>(c), 0.0f);
                ls.bn_init_flag.assign(1, 0.0f);
                break;
            }
            case LayerKind::SeBlock: {
                int c = lin[1];
                int ratio = l.ratio > 0 ? l.ratio : spec_.se_ratio;
                int hidden = std::max(1, c / ratio);
                ls.se_rw = Tensor::zeros({c, hidden}, true);
                init_fan_in(ls.se_rw, c, rng);
                ls.se_rb = Tensor::zeros({hidden}, true);
                ls.se_ew = Tensor::zeros({hidden, c}, true);
                init_fan_in(ls.se_ew, hidden, rng);
                ls.se_eb = Tensor::zeros({c}, true);
                break;
            }
            default: break;
        }
    }
}

Tensor Network::run_layer(size_t i, const std::vector<Tensor>& outs, Tensor x, bool train,
                          std::mt19937_64* rng) {
    const auto& l = spec_.layers[i];
    auto& ls = state_[i];
    switch (l.kind) {
        case LayerKind::Conv: return conv2d(x, ls.w, ls.b, l.stride, l.pad);
        case LayerKind::BatchNorm: {
            auto y = batchnorm(x, ls.gamma, ls.beta, ls.bn, train);
            ls.bn_init_flag[0] = ls.bn.initialized ? 1.0f : 0.0f;
            return y;
        }
        case LayerKind::SeBlock: {
            auto s = global_avg_pool(x);
            auto h = relu(add_rowvec(matmul(s, ls.se_rw), ls.se_rb));
            auto e = sigmoid(add_rowvec(matmul(h, ls.se_ew), ls.se_eb));
            auto y = scale_channels(x, e);
            return spec_.se_residual ? add(x, y) : y;
        }
        case LayerKind::Relu: return relu(x);
        case LayerKind::LeakyRelu: return leaky_relu(x, static_cast<float>(l.slope));
        case LayerKind::MaxPool: return maxpool2d(x);
        case LayerKind::Dense: return add_rowvec(matmul(x, ls.w), ls.b);
        case LayerKind::Dropout: return dropout(x, static_cast<float>(l.rate), train, rng);
        case LayerKind::Softmax: return softmax(x);
        case LayerKind::Flatten: return flatten(x);
        case LayerKind::ResidualAdd: {
            int other = static_cast<int>(i) - 1 - l.skip;
            FN_CHECK(other >= 0, "residual_add cannot reach the network input at runtime");
            return add(x, outs[static_cast<size_t>(other)]);
        }
        case LayerKind::GridOutput: return x;
    }
    throw Error("unreachable layer kind");
}

Tensor Network::forward(Tensor x, bool train, std::mt19937_64* rng) {
    FN_CHECK(x.ndim() == 4 && x.dim(1) == spec_.in_channels && x.dim(2) == spec_.in_height &&
                 x.dim(3) == spec_.in_width,
             "network input " + shape_str(x.shape()) + " does not match spec input " +
                 shape_str({-1, spec_.in_channels, spec_.in_height, spec_.in_width}));
    std::vector<Tensor> outs;
    outs.reserve(spec_.layers.size());
    Tensor cur;
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        int src = static_cast<int>(i) - 1 - spec_.layers[i].from;
        Tensor in = (src < 0) ? x : outs[static_cast<size_t>(src)];
        cur = run_layer(i, outs, in, train, rng);
        outs.push_back(cur);
    }
    return cur;
}

std::vector<Tensor> Network::forward_grids(Tensor x, bool train, std::mt19937_64* rng) {
    std::vector<Tensor> outs, grids;
    Tensor cur;
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        int src = static_cast<int>(i) - 1 - spec_.layers[i].from;
        Tensor in = (src < 0) ? x : outs[static_cast<size_t>(src)];
        cur = run_layer(i, outs, in, train, rng);
        outs.push_back(cur);
        if (spec_.layers[i].kind == LayerKind::GridOutput) grids.push_back(cur);
    }
    if (grids.empty()) grids.push_back(cur);
    return grids;
}

void Network::sync_batchnorm_flags() {
    for (size_t i = 0; i < spec_.layers.size(); ++i)
        if (spec_.layers[i].kind == LayerKind::BatchNorm)
            state_[i].bn.initialized = !state_[i].bn_init_flag.empty() && state_[i].bn_init_flag[0] != 0.0f;
}

std::vector<NamedBuffer> Network::buffers() {
    std::vector<NamedBuffer> out;
    auto push = [&](const std::string& name, Tensor& t, bool trainable) {
        if (t.valid()) out.push_back({name, t.shape(), &t.values(), trainable});
    };
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        auto& ls = state_[i];
        std::string p = "L" + std::to_string(i);
        switch (spec_.layers[i].kind) {
            case LayerKind::Conv:
                push(p + ".conv.weight", ls.w, true);
                push(p + ".conv.bias", ls.b, true);
                break;
            case LayerKind::Dense:
                push(p + ".dense.weight", ls.w, true);
                push(p + ".dense.bias", ls.b, true);
                break;
            case LayerKind::BatchNorm: {
                push(p + ".bn.gamma", ls.gamma, true);
                push(p + ".bn.beta", ls.beta, true);
                int c = ls.gamma.dim(0);
                out.push_back({p + ".bn.running_mean", {c}, &ls.bn.running_mean, false});
                out.push_back({p + ".bn.running_var", {c}, &ls.bn.running_var, false});
                out.push_back({p + ".bn.running_init", {1}, &ls.bn_init_flag, false});
                break;
            }
            case LayerKind::SeBlock:
                push(p + ".se.reduce.weight", ls.se_rw, true);
                push(p + ".se.reduce.bias", ls.se_rb, true);
                push(p + ".se.expand.weight", ls.se_ew, true);
                push(p + ".se.expand.bias", ls.se_eb, true);
                break;
            default: break;
        }
    }
    return out;
}

std::vector<NamedParam<float>> Network::trainable_params() {
    std::vector<NamedParam<float>> out;
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        auto& ls = state_[i];
        std::string p = "L" + std::to_string(i);
        switch (spec_.layers[i].kind) {
            case LayerKind::Conv:
                out.emplace_back(p + ".conv.weight", ls.w);
                out.emplace_back(p + ".conv.bias", ls.b);
                break;
            case LayerKind::Dense:
                out.emplace_back(p + ".dense.weight", ls.w);
                out.emplace_back(p + ".dense.bias", ls.b);
                break;
            case LayerKind::BatchNorm:
                out.emplace_back(p + ".bn.gamma", ls.gamma);
                out.emplace_back(p + ".bn.beta", ls.beta);
                break;
            case LayerKind::SeBlock:
                out.emplace_back(p + ".se.reduce.weight", ls.se_rw);
                out.emplace_back(p + ".se.reduce.bias", ls.se_rb);
                out.emplace_back(p + ".se.expand.weight", ls.se_ew);
                out.emplace_back(p + ".se.expand.bias", ls.se_eb);
                break;
            default: break;
        }
    }
    return out;
}

std::int64_t Network::parameter_count() {
    std::int64_t n = 0;
    for (auto& [name, p] : trainable_params()) n += p.size();
    return n;
}

// ---------------------------------------------------------------------------
// builders

NetworkSpec build_cnn_senet(int class_count, int se_ratio, bool with_se) {
    FN_CHECK(class_count >= 2, "classifier needs at least 2 classes");
    NetworkSpec spec;
    spec.in_channels = 3;
    spec.in_height = spec.in_width = 200;
    spec.class_count = class_count;
    spec.se_ratio = se_ratio;
    spec.batch_size = 16;
    const int filters[5] = {32, 64, 64, 128, 256};
    const int kernels[5] = {5, 3, 3, 2, 2};
    for (int b = 0; b < 5; ++b) {
        spec.layers.push_back({.kind = LayerKind::Conv, .filters = filters[b], .kernel = kernels[b],
                               .stride = 1, .pad = Padding::Valid});
        spec.layers.push_back({.kind = LayerKind::BatchNorm});
        if (with_se) spec.layers.push_back({.kind = LayerKind::SeBlock, .ratio = se_ratio});
        spec.layers.push_back({.kind = LayerKind::Relu});
        spec.layers.push_back({.kind = LayerKind::MaxPool});
    }
    spec.layers.push_back({.kind = LayerKind::Flatten});
    spec.layers.push_back({.kind = LayerKind::Dense, .units = 256});
    spec.layers.push_back({.kind = LayerKind::BatchNorm});
    spec.layers.push_back({.kind = LayerKind::Dense, .units = 256});
    spec.layers.push_back({.kind = LayerKind::BatchNorm});
    spec.layers.push_back({.kind = LayerKind::Relu});
    spec.layers.push_back({.kind = LayerKind::Dropout, .rate = 0.5});
    spec.layers.push_back({.kind = LayerKind::Dense, .units = class_count});
    spec.layers.push_back({.kind = LayerKind::Softmax});
    spec.validate();
    return spec;
}

static void add_conv_bn_leaky(NetworkSpec& spec, int filters, int kernel, int stride) {
    spec.layers.push_back({.kind = LayerKind::Conv, .filters = filters, .kernel = kernel,
                           .stride = stride, .pad = Padding::Same});
    spec.layers.push_back({.kind = LayerKind::BatchNorm});
    spec.layers.push_back({.kind = LayerKind::LeakyRelu, .slope = 0.1});
}

NetworkSpec build_detector_backbone(DetectorPreset preset, int input_size, int anchors_per_grid) {
    NetworkSpec spec;
    spec.in_channels = 3;
    spec.class_count = 1;
    int head_channels = anchors_per_grid * (5 + 1);
    if (preset == DetectorPreset::Tiny) {
        spec.in_height = spec.in_width = input_size > 0 ? input_size : 128;
        add_conv_bn_leaky(spec, 8, 3, 1);
        add_conv_bn_leaky(spec, 16, 3, 2);
        add_conv_bn_leaky(spec, 32, 3, 2);
        add_conv_bn_leaky(spec, 32, 3, 2);
        add_conv_bn_leaky(spec, 64, 3, 2);
        // head: raw logits, no activation
        spec.layers.push_back({.kind = LayerKind::Conv, .filters = head_channels, .kernel = 1,
                               .stride = 1, .pad = Padding::Same});
        spec.layers.push_back({.kind = LayerKind::GridOutput});
    } else {
        spec.in_height = spec.in_width = input_size > 0 ? input_size : 608;
        int pending_from = 0;
        auto conv_stage = [&](int filters, int kernel, int stride) {
            spec.layers.push_back({.kind = LayerKind::Conv, .filters = filters, .kernel = kernel,
                                   .stride = stride, .pad = Padding::Same, .from = pending_from});
            pending_from = 0;
            spec.layers.push_back({.kind = LayerKind::BatchNorm});
            spec.layers.push_back({.kind = LayerKind::LeakyRelu, .slope = 0.1});
        };
        conv_stage(32, 3, 1);
        const int stage_filters[5] = {64, 128, 256, 512, 1024};
        const int stage_blocks[5] = {1, 2, 8, 8, 4};
        for (int s = 0; s < 5; ++s) {
            conv_stage(stage_filters[s], 3, 2);
            for (int b = 0; b < stage_blocks[s]; ++b) {
                conv_stage(stage_filters[s] / 2, 1, 1);
                conv_stage(stage_filters[s], 3, 1);
                spec.layers.push_back({.kind = LayerKind::ResidualAdd, .skip = 6});
            }
            if (s >= 2) {
                // detection grid head branches off the trunk at strides 8/16/32;
                // the next stage resumes from the pre-head feature map via `from`
                spec.layers.push_back({.kind = LayerKind::Conv, .filters = head_channels,
                                       .kernel = 1, .stride = 1, .pad = Padding::Same});
                spec.layers.push_back({.kind = LayerKind::GridOutput});
                pending_from = 2;
            }
        }
    }
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// checkpoint bridge

std::unique_ptr<Network> network_from_checkpoint(const Checkpoint& ckpt) {
    auto spec = NetworkSpec::parse(ckpt.spec_text);
    auto net = std::make_unique<Network>(spec, 0);
    for (auto& buf : net->buffers()) {
        const auto* e = ckpt.find(buf.name);
        FN_CHECK(e != nullptr, "checkpoint is missing parameter '" + buf.name + "'");
        FN_CHECK(e->shape == buf.shape, "checkpoint parameter '" + buf.name + "' has shape " +
                                            shape_str(e->shape) + ", expected " + shape_str(buf.shape));
        *buf.data = e->data;
    }
    net->sync_batchnorm_flags();
    return net;
}

std::unique_ptr<Network> replace_head(const Checkpoint& ckpt, int new_class_count,
                                      std::uint64_t reinit_seed) {
    FN_CHECK(new_class_count >= 2, "head surgery needs at least 2 output classes");
    auto spec = NetworkSpec::parse(ckpt.spec_text);
    FN_CHECK(spec.layers.size() >= 2 && spec.layers.back().kind == LayerKind::Softmax &&
                 spec.layers[spec.layers.size() - 2].kind == LayerKind::Dense,
             "head surgery requires a network ending in dense -> softmax");
    size_t head = spec.layers.size() - 2;
    spec.layers[head].units = new_class_count;
    spec.class_count = new_class_count;
    auto net = std::make_unique<Network>(spec, reinit_seed);
    std::string head_prefix = "L" + std::to_string(head) + ".dense.";
    for (auto& buf : net->buffers()) {
        if (buf.name.rfind(head_prefix, 0) == 0) continue;  // freshly initialized head
        const auto* e = ckpt.find(buf.name);
        FN_CHECK(e != nullptr, "checkpoint is missing parameter '" + buf.name + "'");
        FN_CHECK(e->shape == buf.shape, "checkpoint parameter '" + buf.name + "' shape mismatch");
        *buf.data = e->data;
    }
    net->sync_batchnorm_flags();
    return net;
}

}  // namespace finnet
