#include "fw/metrics.hpp"

#include <cstdio>
#include <numeric>

namespace fw {

namespace {

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

std::string class_label(const std::vector<std::string>& names, std::size_t i) {
    if (i < names.size()) return names[i];
    return "class" + std::to_string(i);
}

}  // namespace

std::int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), static_cast<std::int64_t>(0));
}

std::int64_t ConfusionMatrix::row_sum(std::int64_t c) const {
    std::int64_t s = 0;
    for (std::int64_t p = 0; p < num_classes; ++p) s += at(c, p);
    return s;
}

std::int64_t ConfusionMatrix::col_sum(std::int64_t c) const {
    std::int64_t s = 0;
    for (std::int64_t g = 0; g < num_classes; ++g) s += at(g, c);
    return s;
}

ConfusionMatrix& ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes != num_classes) throw ShapeError("confusion matrix class mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    return *this;
}

void accumulate(ConfusionMatrix& cm, const ClassMap& pred, const ClassMap& truth) {
    if (pred.shape != truth.shape) throw ShapeError("accumulate: map shape mismatch");
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        const std::int32_t p = pred.values[i];
        const std::int32_t g = truth.values[i];
        if (p < 0 || p >= cm.num_classes || g < 0 || g >= cm.num_classes)
            throw DataError("accumulate: class index out of range");
        ++cm.at(g, p);
    }
}

IouDice iou_dice(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DataError("iou_dice: empty confusion matrix");
    const std::int64_t c = cm.num_classes;
    IouDice r;
    r.iou.assign(c, 0.0);
    r.dice.assign(c, 0.0);
    r.present.assign(c, false);
    double sum_iou = 0.0, sum_dice = 0.0;
    std::int64_t present = 0;
    for (std::int64_t k = 0; k < c; ++k) {
        const std::int64_t inter = cm.at(k, k);
        const std::int64_t row = cm.row_sum(k);
        const std::int64_t col = cm.col_sum(k);
        const std::int64_t uni = row + col - inter;
        if (uni == 0) continue;  // absent from both prediction and truth: excluded from the mean
        r.present[k] = true;
        r.iou[k] = static_cast<double>(inter) / static_cast<double>(uni);
        r.dice[k] = 2.0 * static_cast<double>(inter) / static_cast<double>(row + col);
        sum_iou += r.iou[k];
        sum_dice += r.dice[k];
        ++present;
    }
    r.mean_iou = sum_iou / static_cast<double>(present);
    r.mean_dice = sum_dice / static_cast<double>(present);
    return r;
}

OaKappa oa_kappa(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total == 0) throw DataError("oa_kappa: empty confusion matrix");
    const std::int64_t c = cm.num_classes;
    OaKappa r;
    std::int64_t diag = 0;
    double pe = 0.0;
    const double dt = static_cast<double>(total);
    for (std::int64_t k = 0; k < c; ++k) {
        diag += cm.at(k, k);
        pe += static_cast<double>(cm.row_sum(k)) * static_cast<double>(cm.col_sum(k)) / (dt * dt);
    }
    r.oa = static_cast<double>(diag) / dt;
    if (pe >= 1.0 - 1e-15) {
        r.kappa = 1.0;
        r.kappa_degenerate = true;
    } else {
        r.kappa = (r.oa - pe) / (1.0 - pe);
    }
    r.users_acc.assign(c, 0.0);
    r.producers_acc.assign(c, 0.0);
    for (std::int64_t k = 0; k < c; ++k) {
        const std::int64_t col = cm.col_sum(k);
        const std::int64_t row = cm.row_sum(k);
        if (col > 0) r.users_acc[k] = static_cast<double>(cm.at(k, k)) / static_cast<double>(col);
        if (row > 0)
            r.producers_acc[k] = static_cast<double>(cm.at(k, k)) / static_cast<double>(row);
    }
    return r;
}

std::string render_report(const ConfusionMatrix& cm,
                          const std::vector<std::string>& class_names) {
    const IouDice id = iou_dice(cm);
    const OaKappa ok = oa_kappa(cm);
    std::string out;
    out += "Class                  IoU     Dice    User's Acc (%)  Producer's Acc (%)\n";
    for (std::int64_t k = 0; k < cm.num_classes; ++k) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-20s  %6.4f  %6.4f  %14.2f  %18.2f\n",
                      class_label(class_names, static_cast<std::size_t>(k)).c_str(), id.iou[k],
                      id.dice[k], 100.0 * ok.users_acc[k], 100.0 * ok.producers_acc[k]);
        out += line;
    }
    out += "Mean IoU (class-mean, absent classes excluded): " + fmt("%.4f", id.mean_iou) + "\n";
    out += "Mean Dice: " + fmt("%.4f", id.mean_dice) + "\n";
    out += "Overall Accuracy (OA): " + fmt("%.2f", 100.0 * ok.oa) + "%\n";
    out += "Kappa Coefficient: " + fmt("%.2f", 100.0 * ok.kappa) + "%";
    if (ok.kappa_degenerate) out += " (degenerate: chance agreement is 1)";
    out += "\n";
    return out;
}

std::string render_report_kv(const ConfusionMatrix& cm,
                             const std::vector<std::string>& class_names) {
    const IouDice id = iou_dice(cm);
    const OaKappa ok = oa_kappa(cm);
    std::string out;
    for (std::int64_t k = 0; k < cm.num_classes; ++k) {
        const std::string name = class_label(class_names, static_cast<std::size_t>(k));
        out += "iou." + name + "=" + fmt("%.6f", id.iou[k]) + "\n";
        out += "dice." + name + "=" + fmt("%.6f", id.dice[k]) + "\n";
        out += "users_acc." + name + "=" + fmt("%.6f", ok.users_acc[k]) + "\n";
        out += "producers_acc." + name + "=" + fmt("%.6f", ok.producers_acc[k]) + "\n";
    }
    out += "iou.mean=" + fmt("%.6f", id.mean_iou) + "\n";
    out += "dice.mean=" + fmt("%.6f", id.mean_dice) + "\n";
    out += "oa=" + fmt("%.6f", ok.oa) + "\n";
    out += "kappa=" + fmt("%.6f", ok.kappa) + "\n";
    out += std::string("kappa_degenerate=") + (ok.kappa_degenerate ? "1" : "0") + "\n";
    return out;
}

}  // namespace fw
