#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fw/tensor.hpp"

namespace fw {

// C x C count table; entry (truth, predicted). Mergeable across shards by
// element-wise addition.
struct ConfusionMatrix {
    std::int64_t num_classes = 0;
    std::vector<std::int64_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::int64_t c)
        : num_classes(c), counts(static_cast<std::size_t>(c * c), 0) {}

    std::int64_t& at(std::int64_t truth, std::int64_t pred) {
        return counts[static_cast<std::size_t>(truth * num_classes + pred)];
    }
    std::int64_t at(std::int64_t truth, std::int64_t pred) const {
        return counts[static_cast<std::size_t>(truth * num_classes + pred)];
    }
    std::int64_t total() const;
    std::int64_t row_sum(std::int64_t c) const;  // ground-truth pixels of class c
    std::int64_t col_sum(std::int64_t c) const;  // predicted pixels of class c

    ConfusionMatrix& merge(const ConfusionMatrix& other);
};

void accumulate(ConfusionMatrix& cm, const ClassMap& pred, const ClassMap& truth);

struct IouDice {
    std::vector<double> iou;        // per class; 0 when excluded
    std::vector<double> dice;
    std::vector<bool> present;      // union > 0
    double mean_iou = 0.0;          // over present classes only
    double mean_dice = 0.0;
};

IouDice iou_dice(const ConfusionMatrix& cm);

struct OaKappa {
    double oa = 0.0;
    double kappa = 0.0;
    bool kappa_degenerate = false;  // p_e == 1: kappa reported as 1 by convention
    std::vector<double> users_acc;      // precision per class, 0 on empty columns
    std::vector<double> producers_acc;  // recall per class, 0 on empty rows
};

OaKappa oa_kappa(const ConfusionMatrix& cm);

// Human-readable table plus "metric.class=value" lines.
std::string render_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);
std::string render_report_kv(const ConfusionMatrix& cm,
                             const std::vector<std::string>& class_names);

}  // namespace fw
