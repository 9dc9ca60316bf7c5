#include "fw/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace fw {

namespace {

std::string stage_prefix(int stage) { return "adapter.stage" + std::to_string(stage) + "."; }

// He-style fan-in scaling; keeps activation variance roughly constant
// through the conv+GELU stack.
Tensor conv_init(std::int64_t out_c, std::int64_t in_c, std::int64_t k, SplitMix64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_c * k * k));
    return Tensor::uniform({out_c, in_c, k, k}, -bound, bound, rng, true);
}

}  // namespace

void BackboneConfig::validate() const {
    if (stage_channels.size() != 4 || decoder_channels.size() != 4)
        throw ConfigError("backbone requires exactly four stages");
    for (int s : adapter_stages)
        if (s < 1 || s > 4) throw ConfigError("adapter stages must be within {1,2,3,4}");
    if (input_size % 16 != 0) throw ConfigError("input size must be divisible by 16");
    if (in_channels <= 0 || num_classes <= 0) throw ConfigError("bad channel/class counts");
}

std::int64_t BackboneConfig::stage_feature_size(int stage) const {
    std::int64_t s = input_size;
    for (int i = 0; i < stage; ++i) s /= 2;
    return s;
}

double BackboneConfig::stage_rho(int stage) const {
    auto it = rho.find(stage);
    if (it != rho.end() && it->second > 0.0) return it->second;
    return static_cast<double>(stage_feature_size(stage)) / 4.0;
}

std::vector<std::string> ModelParams::names() const {
    std::vector<std::string> out;
    out.reserve(buffers.size());
    for (const auto& [name, t] : buffers) out.push_back(name);
    return out;
}

ModelParams ModelParams::clone(bool requires_grad) const {
    ModelParams copy;
    for (const auto& [name, t] : buffers) {
        Tensor c = t.detach();
        c.set_requires_grad(requires_grad && t.requires_grad());
        copy.buffers.emplace(name, std::move(c));
    }
    return copy;
}

ModelParams init_backbone(const BackboneConfig& config, std::uint64_t seed) {
    config.validate();
    SplitMix64 rng(mix_seed(seed, 0xbb01ull));
    ModelParams p;
    std::int64_t in_c = config.in_channels;
    for (int s = 1; s <= 4; ++s) {
        const std::int64_t out_c = config.stage_channels[static_cast<std::size_t>(s - 1)];
        p.buffers.emplace("backbone.enc" + std::to_string(s) + ".weight",
                          conv_init(out_c, in_c, 3, rng));
        p.buffers.emplace("backbone.enc" + std::to_string(s) + ".bias",
                          Tensor::zeros({out_c}, true));
        in_c = out_c;
    }
    for (int s = 4; s >= 1; --s) {
        const std::int64_t out_c = config.decoder_channels[static_cast<std::size_t>(4 - s)];
        p.buffers.emplace("backbone.dec" + std::to_string(s) + ".weight",
                          conv_init(out_c, in_c, 3, rng));
        p.buffers.emplace("backbone.dec" + std::to_string(s) + ".bias",
                          Tensor::zeros({out_c}, true));
        in_c = out_c;
    }
    p.buffers.emplace("backbone.head.weight", conv_init(config.num_classes, in_c, 1, rng));
    p.buffers.emplace("backbone.head.bias", Tensor::zeros({config.num_classes}, true));
    return p;
}

void attach_adapters(ModelParams& params, const BackboneConfig& config, std::uint64_t seed) {
    for (int stage : config.adapter_stages) {
        const std::int64_t c = config.stage_channels[static_cast<std::size_t>(stage - 1)];
        SplitMix64 rng(mix_seed(seed, 0xada9ull, static_cast<std::uint64_t>(stage)));
        AdapterParams a = make_adapter_params(c, config.bottleneck_ratio, rng, true);
        for (const auto& [suffix, tensor] : a.named_tensors())
            params.buffers.emplace(stage_prefix(stage) + suffix, tensor);
    }
}

AdapterParams adapter_at_stage(const ModelParams& params, int stage) {
    const std::string prefix = stage_prefix(stage);
    auto get = [&](const char* suffix) {
        auto it = params.buffers.find(prefix + suffix);
        if (it == params.buffers.end())
            throw StateError("missing adapter buffer " + prefix + suffix);
        return it->second;
    };
    AdapterParams a;
    a.lf_kernel = get("lf_kernel");
    a.hf_kernel = get("hf_kernel");
    a.smlp_w1 = get("smlp.w1");
    a.smlp_b1 = get("smlp.b1");
    a.smlp_w2 = get("smlp.w2");
    a.smlp_b2 = get("smlp.b2");
    a.router_w1 = get("router.w1");
    a.router_b1 = get("router.b1");
    a.router_w2 = get("router.w2");
    a.router_b2 = get("router.b2");
    a.channels = a.lf_kernel.dim(0);
    a.bottleneck = a.smlp_b1.dim(0);
    return a;
}

Tensor backbone_forward(const Tensor& images, const ModelParams& params,
                        const BackboneConfig& config) {
    if (images.rank() != 4) throw ShapeError("backbone: images must be [B,C,H,W]");
    if (images.dim(1) != config.in_channels || images.dim(2) != config.input_size ||
        images.dim(3) != config.input_size)
        throw ShapeError("backbone: image size does not match config");

    auto buf = [&](const std::string& name) -> const Tensor& {
        auto it = params.buffers.find(name);
        if (it == params.buffers.end()) throw StateError("missing buffer " + name);
        return it->second;
    };

    Tensor x = images;
    for (int s = 1; s <= 4; ++s) {
        const std::string n = std::to_string(s);
        x = gelu(conv2d(x, buf("backbone.enc" + n + ".weight"), buf("backbone.enc" + n + ".bias"),
                        2, 1));
        if (config.adapter_stages.count(s)) {
            Tensor t = nchw_to_nhwc(x);
            t = adapter_forward(t, adapter_at_stage(params, s), config.stage_rho(s));
            x = nhwc_to_nchw(t);
        }
    }
    for (int s = 4; s >= 1; --s) {
        const std::string n = std::to_string(s);
        x = gelu(conv2d(upsample_nearest2(x), buf("backbone.dec" + n + ".weight"),
                        buf("backbone.dec" + n + ".bias"), 1, 1));
    }
    return conv2d(x, buf("backbone.head.weight"), buf("backbone.head.bias"), 1, 0);
}

void freeze_backbone(ModelParams& params) {
    for (auto& [name, t] : params.buffers) {
        if (name.rfind("adapter.", 0) != 0) t.set_requires_grad(false);
    }
}

ParamAccounting count_params(const ModelParams& params) {
    ParamAccounting acc;
    for (const auto& [name, t] : params.buffers) {
        if (t.requires_grad())
            acc.trainable += t.numel();
        else
            acc.frozen += t.numel();
    }
    return acc;
}

Tensor stack_images(const std::vector<const Sample*>& batch) {
    if (batch.empty()) throw DataError("empty batch");
    const Tensor& first = batch.front()->image;
    const std::int64_t c = first.dim(0), h = first.dim(1), w = first.dim(2);
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(batch.size() * c * h * w));
    for (const Sample* s : batch) {
        if (s->image.shape() != first.shape()) throw ShapeError("batch image shape mismatch");
        data.insert(data.end(), s->image.data(), s->image.data() + s->image.numel());
    }
    return Tensor({static_cast<std::int64_t>(batch.size()), c, h, w}, std::move(data));
}

ClassMap stack_labels(const std::vector<const Sample*>& batch) {
    if (batch.empty()) throw DataError("empty batch");
    const std::int64_t h = batch.front()->image.dim(1), w = batch.front()->image.dim(2);
    ClassMap m;
    m.shape = {static_cast<std::int64_t>(batch.size()), h, w};
    for (const Sample* s : batch) m.values.insert(m.values.end(), s->label.begin(), s->label.end());
    return m;
}

ClassMap argmax_channels(const Tensor& logits) {
    if (logits.rank() != 4) throw ShapeError("argmax: logits must be [B,Cls,H,W]");
    const std::int64_t b = logits.dim(0), cls = logits.dim(1), h = logits.dim(2),
                       w = logits.dim(3);
    ClassMap m;
    m.shape = {b, h, w};
    m.values.resize(static_cast<std::size_t>(b * h * w));
    const std::int64_t plane = h * w;
    const double* p = logits.data();
    for (std::int64_t ib = 0; ib < b; ++ib) {
        const double* base = p + ib * cls * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
            std::int32_t best = 0;
            double bv = base[j];
            for (std::int64_t c = 1; c < cls; ++c) {
                const double v = base[c * plane + j];
                if (v > bv) {  // strict: first index wins ties
                    bv = v;
                    best = static_cast<std::int32_t>(c);
                }
            }
            m.values[static_cast<std::size_t>(ib * plane + j)] = best;
        }
    }
    return m;
}

ModelParams pretrain_backbone(const std::vector<Sample>& data, const BackboneConfig& config,
                              std::int64_t epochs, double lr, std::int64_t batch,
                              std::uint64_t seed) {
    if (data.empty()) throw TrainingError("pretrain: empty dataset");
    BackboneConfig cfg = config;
    cfg.adapter_stages.clear();
    ModelParams params = init_backbone(cfg, seed);

    Adam opt;
    opt.lr = lr;
    std::vector<std::int64_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);

    for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
        SplitMix64 shuffle_rng(mix_seed(seed, 0x0e90cull, static_cast<std::uint64_t>(epoch)));
        for (std::int64_t i = static_cast<std::int64_t>(order.size()) - 1; i > 0; --i) {
            const std::int64_t j =
                static_cast<std::int64_t>(shuffle_rng.below(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[i], order[j]);
        }
        for (std::size_t start = 0; start < order.size(); start += batch) {
            std::vector<const Sample*> b;
            for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k)
                b.push_back(&data[static_cast<std::size_t>(order[k])]);
            Tensor images = stack_images(b);
            ClassMap targets = stack_labels(b);
            opt.zero_grad(params.buffers);
            Tensor loss = cross_entropy(backbone_forward(images, params, cfg), targets);
            if (!std::isfinite(loss.item())) throw NumericError("pretrain: NaN loss");
            loss.backward();
            opt.step(params.buffers);
        }
    }
    return params;
}

}  // namespace fw
