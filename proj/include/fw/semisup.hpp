#pragma once

#include <cstdint>
#include <vector>

#include "fw/backbone.hpp"
#include "fw/optim.hpp"
#include "fw/tensor.hpp"

namespace fw {

// Mean-teacher training state. The teacher mirrors the student's buffer name
// set, never receives gradients, and moves only through EMA blends.
struct TeacherStudentState {
    ModelParams student;
    ModelParams teacher;
    double alpha = 0.99;
    double lambda = 0.1;
    std::int64_t step = 0;
};

TeacherStudentState make_teacher_student(const ModelParams& student, double alpha = 0.99,
                                         double lambda = 0.1);

// theta_T <- alpha * theta_T + (1 - alpha) * theta_S, element-wise per buffer.
void ema_update(TeacherStudentState& state);

// Per-pixel confidence w = 1 - H/log(C) from channel-wise probabilities.
// P: [B,Cls,H,W] with channel sums 1 within 1e-4. Returns [B,H,W] in [0,1].
Tensor entropy_weights(const Tensor& probabilities);

// Plain (no-tape) channel softmax used for teacher predictions.
Tensor softmax_channels(const Tensor& logits);

struct PseudoLabelBatch {
    Tensor probabilities;  // teacher softmax, [B,Cls,H,W]
    ClassMap labels;       // per-pixel argmax (first index wins ties)
    Tensor weights;        // [B,H,W] confidence
};

PseudoLabelBatch make_pseudo_labels(const Tensor& teacher_logits);

struct AugmentConfig {
    double weak_noise = 0.01;
    double strong_noise = 0.05;
    bool jitter = true;   // per-channel affine: scale in [0.8,1.2], shift in [-0.1,0.1]
    bool cutout = true;   // one zero-filled rectangle covering at most 25% of the area
};

// Weak/strong views of one [3,H,W] image. Both derive the horizontal-flip
// coin from the same substream of `seed`, so pixel j corresponds across views
// and teacher pseudo-labels align with the student's strong view.
Tensor weak_augment(const Tensor& image, std::uint64_t seed, const AugmentConfig& cfg = {});
Tensor strong_augment(const Tensor& image, std::uint64_t seed, const AugmentConfig& cfg = {});
bool augment_flips(std::uint64_t seed);  // the shared coin

struct TrainStepStats {
    double l_sup = 0.0;
    double l_cons = 0.0;
    double l_total = 0.0;
    double mean_weight = 0.0;
};

// One optimization step: supervised CE on the labeled batch plus the
// confidence-weighted consistency term on the unlabeled batch, followed by an
// Adam step on trainable buffers and the EMA teacher update.
TrainStepStats train_step(TeacherStudentState& state, const BackboneConfig& config,
                          const std::vector<const Sample*>& labeled,
                          const std::vector<const Sample*>& unlabeled, Adam& opt,
                          std::uint64_t step_seed, const AugmentConfig& aug = {});

}  // namespace fw
