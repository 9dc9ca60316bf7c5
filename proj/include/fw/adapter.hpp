#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fw/rng.hpp"
#include "fw/tensor.hpp"

namespace fw {

// Trainable parameter set for one adapter insertion site. Construction gives
// an exact identity mapping: both depthwise kernels and the second layers of
// the bottleneck MLP start at zero, so every branch output is zero and the
// residual fusion returns the input unchanged.
struct AdapterParams {
    std::int64_t channels = 0;
    std::int64_t bottleneck = 0;

    Tensor lf_kernel;  // [C,11,11]
    Tensor hf_kernel;  // [C,5,5]

    // spatial branch: C -> C/r -> C
    Tensor smlp_w1, smlp_b1, smlp_w2, smlp_b2;
    // router: C -> C/r -> 3
    Tensor router_w1, router_b1, router_w2, router_b2;

    // Every tensor paired with its serialization suffix, in a fixed order.
    std::vector<std::pair<std::string, Tensor>> named_tensors() const;
};

// First MLP layers draw from uniform(-1/sqrt(C), 1/sqrt(C)); everything that
// must vanish at initialization is zero.
AdapterParams make_adapter_params(std::int64_t channels, std::int64_t bottleneck_ratio,
                                  SplitMix64& rng, bool trainable = true);

// Eq-level branch operations. Inputs follow the layouts the surrounding model
// uses: frequency branches consume [B,C,H,W] reconstructions and emit
// [B,H,W,C]; the spatial branch and router consume [B,H,W,C] directly.
Tensor branch_lf(const Tensor& x_lf, const AdapterParams& params);
Tensor branch_hf(const Tensor& x_hf, const AdapterParams& params);
Tensor branch_spatial(const Tensor& x, const AdapterParams& params);

// Per-sample fusion weights on the 3-simplex, ordered [r_s, r_lf, r_hf].
Tensor route(const Tensor& x, const AdapterParams& params);

// Full adapter: Y = X + r_s.*F_s + r_lf.*F_lf + r_hf.*F_hf, x: [B,H,W,C].
Tensor adapter_forward(const Tensor& x, const AdapterParams& params, double cutoff);

// Closed-form parameter count for one site; must equal buffer enumeration.
std::int64_t adapter_param_count(std::int64_t channels, std::int64_t bottleneck_ratio);

std::int64_t bottleneck_width(std::int64_t channels, std::int64_t bottleneck_ratio);

struct ParamAccounting {
    std::int64_t trainable = 0;
    std::int64_t frozen = 0;

    double ratio() const {
        const std::int64_t total = trainable + frozen;
        return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
    }
};

}  // namespace fw
