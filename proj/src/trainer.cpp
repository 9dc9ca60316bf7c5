#include "fw/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fw {

namespace {

std::string fmt_line(std::int64_t step, const TrainStepStats& s) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld\t%.9g\t%.9g\t%.9g\t%.9g\n",
                  static_cast<long long>(step), s.l_sup, s.l_cons, s.l_total, s.mean_weight);
    return buf;
}

void shuffle_indices(std::vector<std::int64_t>& idx, SplitMix64& rng) {
    for (std::int64_t i = static_cast<std::int64_t>(idx.size()) - 1; i > 0; --i) {
        const std::int64_t j =
            static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
        std::swap(idx[i], idx[j]);
    }
}

double sample_sd(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

void finish_row(AblationRow& row) {
    double si = 0.0, sd = 0.0;
    for (double v : row.ious) si += v;
    for (double v : row.dices) sd += v;
    row.mean_iou = si / static_cast<double>(row.ious.size());
    row.mean_dice = sd / static_cast<double>(row.dices.size());
    row.sd_iou = sample_sd(row.ious, row.mean_iou);
    row.sd_dice = sample_sd(row.dices, row.mean_dice);
}

}  // namespace

TrainMode parse_mode(const std::string& name) {
    if (name == "baseline") return TrainMode::baseline;
    if (name == "fw") return TrainMode::fw;
    if (name == "fw+uats") return TrainMode::fw_uats;
    throw ConfigError("unknown train mode: " + name + " (expected baseline|fw|fw+uats)");
}

std::string mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::baseline: return "baseline";
        case TrainMode::fw: return "fw";
        case TrainMode::fw_uats: return "fw+uats";
    }
    return "?";
}

BackboneConfig backbone_config_from(const RunConfig& cfg) {
    BackboneConfig b;
    b.in_channels = cfg.get_int("backbone.in_channels");
    b.stage_channels = cfg.get_int_list("backbone.channels");
    b.decoder_channels = cfg.get_int_list("backbone.decoder_channels");
    b.num_classes = cfg.get_int("data.classes");
    b.input_size = cfg.get_int("data.size");
    b.bottleneck_ratio = cfg.get_int("adapter.bottleneck");
    b.adapter_stages.clear();
    for (std::int64_t s : cfg.get_int_list("adapter.stages"))
        b.adapter_stages.insert(static_cast<int>(s));
    for (int s = 1; s <= 4; ++s) {
        const std::string key = "adapter.rho.stage" + std::to_string(s);
        std::string v = cfg.get(key);
        if (v == "auto") v = cfg.get("adapter.rho");
        if (v != "auto") b.rho[s] = std::stod(v);
    }
    b.validate();
    return b;
}

SceneSpec scene_spec_from(const RunConfig& cfg, std::uint64_t seed) {
    const std::int64_t size = cfg.get_int("data.size");
    const std::int64_t classes = cfg.get_int("data.classes");
    const std::string domain = cfg.get("data.domain");
    SceneSpec spec;
    if (classes == 9) {
        spec = domain == "source" ? source_scene_spec(size, seed)
                                  : default_scene_spec(size, seed);
    } else {
        spec = uniform_scene_spec(size, classes, seed);
    }
    return spec;
}

AugmentConfig augment_config_from(const RunConfig& cfg) {
    AugmentConfig a;
    a.weak_noise = cfg.get_double("aug.weak_noise");
    a.strong_noise = cfg.get_double("aug.strong_noise");
    a.jitter = cfg.get_bool("aug.jitter");
    a.cutout = cfg.get_bool("aug.cutout");
    return a;
}

ModelParams pretrain_from_config(const RunConfig& cfg) {
    RunConfig source = cfg;
    source.set("data.domain", "source");
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    SceneSpec spec = scene_spec_from(source, mix_seed(seed, 0x50a6ce));
    std::vector<Sample> data = generate(spec, cfg.get_int("pretrain.scenes"));

    BackboneConfig bcfg = backbone_config_from(cfg);
    bcfg.adapter_stages.clear();
    return pretrain_backbone(data, bcfg, cfg.get_int("pretrain.epochs"),
                             cfg.get_double("pretrain.lr"), cfg.get_int("pretrain.batch"),
                             mix_seed(seed, 0x50a6ba));
}

ConfusionMatrix evaluate_model(const ModelParams& params, const BackboneConfig& config,
                               const std::vector<Sample>& test_set) {
    if (test_set.empty()) throw DataError("evaluate: empty test set");
    ModelParams frozen = params.clone(false);  // no graph during inference
    ConfusionMatrix cm(config.num_classes);
    const std::int64_t batch = 2;
    for (std::size_t start = 0; start < test_set.size(); start += batch) {
        std::vector<const Sample*> b;
        for (std::size_t k = start; k < std::min(test_set.size(), start + batch); ++k)
            b.push_back(&test_set[k]);
        Tensor logits = backbone_forward(stack_images(b), frozen, config);
        accumulate(cm, argmax_channels(logits), stack_labels(b));
    }
    return cm;
}

TrainOutcome run_training(const RunConfig& cfg, const LoadedDataset& data,
                          const ModelParams& pretrained, TrainMode mode, std::uint64_t seed,
                          std::int64_t epochs_override) {
    if (data.labeled.empty()) throw TrainingError("no labeled training data");

    BackboneConfig config = backbone_config_from(cfg);
    if (mode == TrainMode::baseline) config.adapter_stages.clear();

    ModelParams params = pretrained.clone(true);
    if (mode != TrainMode::baseline) {
        attach_adapters(params, config, mix_seed(seed, 0xada9));
        freeze_backbone(params);
    }

    const double lambda = mode == TrainMode::fw_uats ? cfg.get_double("semisup.lambda") : 0.0;
    TeacherStudentState state =
        make_teacher_student(params, cfg.get_double("semisup.alpha"), lambda);

    Adam opt;
    opt.lr = cfg.get_double("train.lr");
    const std::int64_t batch = cfg.get_int("train.batch");
    const std::int64_t epochs =
        epochs_override >= 0 ? epochs_override : cfg.get_int("train.epochs");
    const AugmentConfig aug = augment_config_from(cfg);

    const std::vector<Sample>& labeled = data.labeled;
    const std::vector<Sample>& unlabeled = data.unlabeled;

    std::vector<std::int64_t> lidx(labeled.size());
    for (std::size_t i = 0; i < lidx.size(); ++i) lidx[i] = static_cast<std::int64_t>(i);
    std::vector<std::int64_t> uidx(unlabeled.size());
    for (std::size_t i = 0; i < uidx.size(); ++i) uidx[i] = static_cast<std::int64_t>(i);

    TrainOutcome out;
    std::int64_t global_step = 0;
    std::size_t ucursor = 0;
    for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
        SplitMix64 lrng(mix_seed(seed, 0x1ab5, static_cast<std::uint64_t>(epoch)));
        shuffle_indices(lidx, lrng);
        if (!uidx.empty()) {
            SplitMix64 urng(mix_seed(seed, 0x41ab, static_cast<std::uint64_t>(epoch)));
            shuffle_indices(uidx, urng);
        }
        for (std::size_t start = 0; start < lidx.size(); start += batch) {
            std::vector<const Sample*> lb;
            for (std::size_t k = start; k < std::min(lidx.size(), start + batch); ++k)
                lb.push_back(&labeled[static_cast<std::size_t>(lidx[k])]);
            std::vector<const Sample*> ub;
            if (lambda > 0.0 && !uidx.empty()) {
                for (std::size_t k = 0; k < lb.size(); ++k) {  // 1:1 unlabeled ratio
                    ub.push_back(&unlabeled[static_cast<std::size_t>(uidx[ucursor])]);
                    ucursor = (ucursor + 1) % uidx.size();
                }
            }
            const TrainStepStats stats =
                train_step(state, config, lb, ub, opt,
                           mix_seed(seed, 0x57e9, static_cast<std::uint64_t>(global_step)), aug);
            out.loss_log += fmt_line(global_step, stats);
            ++global_step;
        }
    }

    out.config = config;
    out.accounting = count_params(state.student);
    out.test_cm = evaluate_model(state.student, config, data.test);
    const IouDice id = iou_dice(out.test_cm);
    out.mean_iou = id.mean_iou;
    out.mean_dice = id.mean_dice;
    out.state = std::move(state);
    return out;
}

std::map<std::string, Tensor> pack_state(const TeacherStudentState& state) {
    std::map<std::string, Tensor> entries;
    for (const auto& [name, t] : state.student.buffers) entries.emplace("student." + name, t);
    for (const auto& [name, t] : state.teacher.buffers) entries.emplace("teacher." + name, t);
    entries.emplace("step", Tensor({1}, {static_cast<double>(state.step)}));
    return entries;
}

TeacherStudentState unpack_state(const std::map<std::string, Tensor>& entries) {
    TeacherStudentState state;
    for (const auto& [name, t] : entries) {
        if (name.rfind("student.", 0) == 0)
            state.student.buffers.emplace(name.substr(8), t);
        else if (name.rfind("teacher.", 0) == 0)
            state.teacher.buffers.emplace(name.substr(8), t);
        else if (name == "step")
            state.step = static_cast<std::int64_t>(t.item());
        else
            throw StateError("unexpected checkpoint entry: " + name);
    }
    if (state.student.buffers.empty()) throw StateError("checkpoint has no student parameters");
    return state;
}

void restore_trainability(ModelParams& params, TrainMode mode) {
    for (auto& [name, t] : params.buffers) {
        const bool is_adapter = name.rfind("adapter.", 0) == 0;
        t.set_requires_grad(mode == TrainMode::baseline ? true : is_adapter);
    }
}

std::vector<AblationRow> run_mode_grid(const RunConfig& cfg, const LoadedDataset& data,
                                       const ModelParams& pretrained) {
    const std::int64_t seeds = cfg.get_int("ablate.seeds");
    const std::int64_t epochs = cfg.get_int("ablate.epochs");
    const std::uint64_t base_seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    std::vector<AblationRow> rows;
    for (TrainMode mode : {TrainMode::baseline, TrainMode::fw, TrainMode::fw_uats}) {
        AblationRow row;
        row.label = mode_name(mode);
        row.asserted = true;
        for (std::int64_t s = 0; s < seeds; ++s) {
            TrainOutcome o = run_training(cfg, data, pretrained, mode,
                                          mix_seed(base_seed, 0xab1a7e, static_cast<std::uint64_t>(s)),
                                          epochs);
            row.ious.push_back(o.mean_iou);
            row.dices.push_back(o.mean_dice);
        }
        finish_row(row);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<AblationRow> run_stage_grid(const RunConfig& cfg, const LoadedDataset& data,
                                        const ModelParams& pretrained) {
    const std::int64_t seeds = cfg.get_int("ablate.seeds");
    const std::int64_t epochs = cfg.get_int("ablate.epochs");
    const std::uint64_t base_seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    const std::vector<std::pair<std::string, std::set<int>>> grids = {
        {"stages 1,2,3,4", {1, 2, 3, 4}},
        {"stages 2,3,4", {2, 3, 4}},
        {"stages 3,4", {3, 4}},
        {"stage 4", {4}},
    };
    std::vector<AblationRow> rows;
    for (const auto& [label, stages] : grids) {
        RunConfig sub = cfg;
        std::string stage_list;
        for (int s : stages) stage_list += (stage_list.empty() ? "" : ",") + std::to_string(s);
        sub.set("adapter.stages", stage_list);
        AblationRow row;
        row.label = label;
        row.asserted = (stages == std::set<int>{3, 4}) || (stages == std::set<int>{4});
        for (std::int64_t s = 0; s < seeds; ++s) {
            TrainOutcome o = run_training(sub, data, pretrained, TrainMode::fw,
                                          mix_seed(base_seed, 0xab57a6e, static_cast<std::uint64_t>(s)),
                                          epochs);
            row.ious.push_back(o.mean_iou);
            row.dices.push_back(o.mean_dice);
        }
        finish_row(row);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string render_ablation_table(const std::string& title,
                                  const std::vector<AblationRow>& rows) {
    std::string out = title + "\n";
    out += "row                 IoU (mean+-sd)      Dice (mean+-sd)\n";
    for (const AblationRow& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-18s  %.4f +- %.4f    %.4f +- %.4f%s\n",
                      r.label.c_str(), r.mean_iou, r.sd_iou, r.mean_dice, r.sd_dice,
                      r.asserted ? "" : "  (reported, not asserted)");
        out += buf;
    }
    return out;
}

}  // namespace fw
