#include "fw/adapter.hpp"

#include <cmath>

#include "fw/spectral.hpp"

namespace fw {

std::int64_t bottleneck_width(std::int64_t channels, std::int64_t bottleneck_ratio) {
    if (bottleneck_ratio <= 0) throw ConfigError("bottleneck ratio must be positive");
    return std::max<std::int64_t>(1, channels / bottleneck_ratio);
}

AdapterParams make_adapter_params(std::int64_t channels, std::int64_t bottleneck_ratio,
                                  SplitMix64& rng, bool trainable) {
    if (channels <= 0) throw ConfigError("adapter channels must be positive");
    const std::int64_t bn = bottleneck_width(channels, bottleneck_ratio);
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels));

    AdapterParams p;
    p.channels = channels;
    p.bottleneck = bn;
    p.lf_kernel = Tensor::zeros({channels, 11, 11}, trainable);
    p.hf_kernel = Tensor::zeros({channels, 5, 5}, trainable);
    p.smlp_w1 = Tensor::uniform({channels, bn}, -bound, bound, rng, trainable);
    p.smlp_b1 = Tensor::zeros({bn}, trainable);
    p.smlp_w2 = Tensor::zeros({bn, channels}, trainable);
    p.smlp_b2 = Tensor::zeros({channels}, trainable);
    p.router_w1 = Tensor::uniform({channels, bn}, -bound, bound, rng, trainable);
    p.router_b1 = Tensor::zeros({bn}, trainable);
    p.router_w2 = Tensor::zeros({bn, 3}, trainable);
    p.router_b2 = Tensor::zeros({3}, trainable);
    return p;
}

std::vector<std::pair<std::string, Tensor>> AdapterParams::named_tensors() const {
    return {
        {"lf_kernel", lf_kernel},   {"hf_kernel", hf_kernel},   {"smlp.w1", smlp_w1},
        {"smlp.b1", smlp_b1},       {"smlp.w2", smlp_w2},       {"smlp.b2", smlp_b2},
        {"router.w1", router_w1},   {"router.b1", router_b1},   {"router.w2", router_w2},
        {"router.b2", router_b2},
    };
}

namespace {

void check_channels(const Tensor& x, const AdapterParams& p, std::size_t channel_axis) {
    if (x.rank() != 4) throw ShapeError("adapter branch: input must be rank 4");
    if (x.dim(channel_axis) != p.channels)
        throw ShapeError("adapter branch: channel count does not match params");
}

}  // namespace

Tensor branch_lf(const Tensor& x_lf, const AdapterParams& params) {
    check_channels(x_lf, params, 1);
    return nchw_to_nhwc(depthwise_conv2d(x_lf, params.lf_kernel));
}

Tensor branch_hf(const Tensor& x_hf, const AdapterParams& params) {
    check_channels(x_hf, params, 1);
    return nchw_to_nhwc(depthwise_conv2d(x_hf, params.hf_kernel));
}

Tensor branch_spatial(const Tensor& x, const AdapterParams& params) {
    check_channels(x, params, 3);
    return mlp2(x, params.smlp_w1, params.smlp_b1, params.smlp_w2, params.smlp_b2);
}

Tensor route(const Tensor& x, const AdapterParams& params) {
    check_channels(x, params, 3);
    Tensor g = global_avg_pool(x);
    Tensor logits = mlp2(g, params.router_w1, params.router_b1, params.router_w2,
                         params.router_b2);
    return softmax(logits);
}

Tensor adapter_forward(const Tensor& x, const AdapterParams& params, double cutoff) {
    check_channels(x, params, 3);
    Tensor x_nchw = nhwc_to_nchw(x);
    SpectralPair bands = decompose(x_nchw, cutoff);

    Tensor f_lf = branch_lf(bands.x_lf, params);
    Tensor f_hf = branch_hf(bands.x_hf, params);
    Tensor f_s = branch_spatial(x, params);
    Tensor weights = route(x, params);  // [B,3] = [r_s, r_lf, r_hf]

    Tensor y = add(x, mul_per_sample(f_s, select_column(weights, 0)));
    y = add(y, mul_per_sample(f_lf, select_column(weights, 1)));
    y = add(y, mul_per_sample(f_hf, select_column(weights, 2)));
    return y;
}

std::int64_t adapter_param_count(std::int64_t channels, std::int64_t bottleneck_ratio) {
    const std::int64_t c = channels;
    const std::int64_t bn = bottleneck_width(channels, bottleneck_ratio);
    const std::int64_t kernels = 121 * c + 25 * c;
    const std::int64_t smlp = c * bn + bn + bn * c + c;
    const std::int64_t router = c * bn + bn + bn * 3 + 3;
    return kernels + smlp + router;
}

}  // namespace fw
