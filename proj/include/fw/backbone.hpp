#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fw/adapter.hpp"
#include "fw/dataset.hpp"
#include "fw/optim.hpp"
#include "fw/tensor.hpp"

namespace fw {

// Four-stage hierarchical encoder-decoder. Each encoder stage is a stride-2
// 3x3 convolution + GELU (halving resolution); adapters slot in after the
// configured stages; the decoder is nearest-neighbor upsample + 3x3 conv per
// stage with a final 1x1 classification head.
struct BackboneConfig {
    std::int64_t in_channels = 3;
    std::vector<std::int64_t> stage_channels = {32, 64, 128, 256};
    std::vector<std::int64_t> decoder_channels = {128, 64, 32, 16};
    std::int64_t num_classes = 9;
    std::set<int> adapter_stages = {3, 4};
    std::map<int, double> rho;  // per-stage cutoff; missing -> min(H,W)/4 at the site
    std::int64_t input_size = 64;
    std::int64_t bottleneck_ratio = 16;

    void validate() const;
    std::int64_t stage_feature_size(int stage) const;  // input_size / 2^stage
    double stage_rho(int stage) const;
};

// Flat named buffer set: "backbone.*" plus "adapter.stage{k}.*" entries.
// Trainability is carried by each tensor's requires_grad flag.
struct ModelParams {
    NamedParams buffers;

    std::vector<std::string> names() const;
    ModelParams clone(bool requires_grad) const;
};

ModelParams init_backbone(const BackboneConfig& config, std::uint64_t seed);

// Adds freshly initialized adapter buffers for every configured stage.
void attach_adapters(ModelParams& params, const BackboneConfig& config, std::uint64_t seed);

// View of one stage's adapter buffers (shared storage, no copies).
AdapterParams adapter_at_stage(const ModelParams& params, int stage);

Tensor backbone_forward(const Tensor& images, const ModelParams& params,
                        const BackboneConfig& config);

// Marks every non-adapter buffer non-trainable. Idempotent.
void freeze_backbone(ModelParams& params);

ParamAccounting count_params(const ModelParams& params);

// Supervised training of the full backbone (no adapters) on the given
// labeled set. Deterministic under (seed); returns the trained parameters.
ModelParams pretrain_backbone(const std::vector<Sample>& data, const BackboneConfig& config,
                              std::int64_t epochs, double lr, std::int64_t batch,
                              std::uint64_t seed);

// Shared helpers for batching.
Tensor stack_images(const std::vector<const Sample*>& batch);
ClassMap stack_labels(const std::vector<const Sample*>& batch);
ClassMap argmax_channels(const Tensor& logits);  // [B,Cls,H,W] -> [B,H,W], first index wins ties

}  // namespace fw
