#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fw/backbone.hpp"
#include "fw/config.hpp"
#include "fw/dataset.hpp"
#include "fw/metrics.hpp"
#include "fw/semisup.hpp"

namespace fw {

// Table-5 row names double as the CLI training modes.
enum class TrainMode { baseline, fw, fw_uats };

TrainMode parse_mode(const std::string& name);
std::string mode_name(TrainMode mode);

BackboneConfig backbone_config_from(const RunConfig& cfg);
SceneSpec scene_spec_from(const RunConfig& cfg, std::uint64_t seed);
AugmentConfig augment_config_from(const RunConfig& cfg);

struct TrainOutcome {
    TeacherStudentState state;
    BackboneConfig config;       // the effective config of this run
    std::string loss_log;        // one tab-separated line per step
    ParamAccounting accounting;
    ConfusionMatrix test_cm;
    double mean_iou = 0.0;
    double mean_dice = 0.0;
};

// Supervised pretraining on a freshly generated source-domain set.
ModelParams pretrain_from_config(const RunConfig& cfg);

// One full training run of the requested mode on the given data, starting
// from the pretrained backbone, evaluated on the test split.
TrainOutcome run_training(const RunConfig& cfg, const LoadedDataset& data,
                          const ModelParams& pretrained, TrainMode mode, std::uint64_t seed,
                          std::int64_t epochs_override = -1);

ConfusionMatrix evaluate_model(const ModelParams& params, const BackboneConfig& config,
                               const std::vector<Sample>& test_set);

// Checkpoint packing: student.* / teacher.* entries plus the step counter.
std::map<std::string, Tensor> pack_state(const TeacherStudentState& state);
TeacherStudentState unpack_state(const std::map<std::string, Tensor>& entries);

// Re-establishes which buffers train under the given mode (loaded buffers
// come back with requires_grad unset).
void restore_trainability(ModelParams& params, TrainMode mode);

struct AblationRow {
    std::string label;
    std::vector<double> ious;
    std::vector<double> dices;
    double mean_iou = 0.0;
    double sd_iou = 0.0;
    double mean_dice = 0.0;
    double sd_dice = 0.0;
    bool asserted = false;  // rows reported without assertion keep this false
};

// FW/UATS on-off grid (3 rows) across seeds.
std::vector<AblationRow> run_mode_grid(const RunConfig& cfg, const LoadedDataset& data,
                                       const ModelParams& pretrained);

// Stage-placement grid (4 rows: {1,2,3,4}, {2,3,4}, {3,4}, {4}) across seeds.
std::vector<AblationRow> run_stage_grid(const RunConfig& cfg, const LoadedDataset& data,
                                        const ModelParams& pretrained);

std::string render_ablation_table(const std::string& title,
                                  const std::vector<AblationRow>& rows);

}  // namespace fw
