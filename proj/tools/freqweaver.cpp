// freqweaver: synthetic land-cover data generation, frequency-adapter
// training (supervised and mean-teacher semi-supervised), evaluation,
// spectral inspection and ablation reproduction.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fw/checkpoint.hpp"
#include "fw/config.hpp"
#include "fw/dataset.hpp"
#include "fw/metrics.hpp"
#include "fw/spectral.hpp"
#include "fw/trainer.hpp"

namespace fsys = std::filesystem;
using namespace fw;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out_dir = "run";
    std::int64_t seed = -1;  // -1: keep config value
    bool force = false;
};

RunConfig resolve_config(const GlobalOpts& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig() : RunConfig::from_file(g.config_path);
    if (g.seed >= 0) cfg.set("seed", std::to_string(g.seed));
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out << text;
}

void ensure_out_dir(const std::string& dir) { fsys::create_directories(dir); }

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
    ensure_out_dir(out_dir);
    write_text(out_dir + "/config.resolved", cfg.render());
}

std::vector<std::string> names_for(const RunConfig& cfg) {
    return class_names(scene_spec_from(cfg, 0));
}

int cmd_generate(const GlobalOpts& g) {
    RunConfig cfg = resolve_config(g);
    const std::string dir = g.out_dir;
    if (fsys::exists(dir) && !fsys::is_empty(dir) && !g.force)
        throw DataError("output directory " + dir + " is not empty (use --force)");
    ensure_out_dir(dir);

    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    SceneSpec spec = scene_spec_from(cfg, seed);
    std::vector<Sample> samples = generate(spec, cfg.get_int("data.scenes"));
    SplitResult splits = split(samples, cfg.get_double("data.labeled_fraction"), seed,
                               cfg.get_double("data.test_fraction"));
    write_dataset(dir, splits);
    echo_config(cfg, dir);

    // class histogram over everything generated
    std::vector<std::int64_t> hist(spec.classes.size(), 0);
    std::int64_t total = 0;
    for (const Sample& s : samples)
        for (std::int32_t v : s.label) {
            ++hist[static_cast<std::size_t>(v)];
            ++total;
        }
    std::printf("generated %zu scenes (%lldx%lld), split %zu/%zu/%zu "
                "(labeled/unlabeled/test) into %s\n",
                samples.size(), static_cast<long long>(spec.height),
                static_cast<long long>(spec.width), splits.labeled.size(),
                splits.unlabeled.size(), splits.test.size(), dir.c_str());
    std::printf("class distribution:\n");
    for (std::size_t c = 0; c < hist.size(); ++c)
        std::printf("  %-14s %8.4f%%  (target %.4f%%)\n", spec.classes[c].name.c_str(),
                    100.0 * static_cast<double>(hist[c]) / static_cast<double>(total),
                    100.0 * spec.classes[c].share);
    return 0;
}

int cmd_pretrain(const GlobalOpts& g) {
    RunConfig cfg = resolve_config(g);
    ensure_out_dir(g.out_dir);
    ModelParams backbone = pretrain_from_config(cfg);
    const std::string path = g.out_dir + "/" + cfg.get("pretrain.checkpoint");
    save_checkpoint(path, backbone.buffers);
    echo_config(cfg, g.out_dir);
    const ParamAccounting acc = count_params(backbone);
    std::printf("pretrained backbone (%lld parameters) -> %s\n",
                static_cast<long long>(acc.trainable + acc.frozen), path.c_str());
    return 0;
}

std::string params_report(const ParamAccounting& acc) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "trainable=%lld\nfrozen=%lld\nratio=%.6f\n"
                  "# Adapter share of all model parameters. For orientation only: FreqWeaver\n"
                  "# on a SAM2-scale backbone trains 5.96%% of parameters; that figure belongs\n"
                  "# to the large model and is not comparable to this toy-scale ratio.\n",
                  static_cast<long long>(acc.trainable), static_cast<long long>(acc.frozen),
                  acc.ratio());
    return buf;
}

ModelParams load_pretrained(const RunConfig& cfg, const std::string& out_dir) {
    std::string path = cfg.get("pretrain.checkpoint");
    if (!fsys::exists(path) && fsys::exists(out_dir + "/" + path)) path = out_dir + "/" + path;
    if (!fsys::exists(path))
        throw DataError("pretrained backbone checkpoint not found: " + path +
                        " (run the pretrain command first)");
    ModelParams p;
    p.buffers = load_checkpoint(path);
    for (auto& [name, t] : p.buffers) t.set_requires_grad(true);
    return p;
}

int cmd_train(const GlobalOpts& g, const std::string& data_dir) {
    RunConfig cfg = resolve_config(g);
    const std::string dir = data_dir.empty() ? cfg.get("data.dir") : data_dir;
    LoadedDataset data = load_dataset(dir);
    ModelParams pretrained = load_pretrained(cfg, g.out_dir);
    const TrainMode mode = parse_mode(cfg.get("train.mode"));

    TrainOutcome out = run_training(cfg, data, pretrained, mode,
                                    static_cast<std::uint64_t>(cfg.get_int("seed")));

    ensure_out_dir(g.out_dir);
    echo_config(cfg, g.out_dir);
    write_text(g.out_dir + "/loss.log", out.loss_log);
    save_checkpoint(g.out_dir + "/model.fwck", pack_state(out.state));
    write_text(g.out_dir + "/params.txt", params_report(out.accounting));
    const auto names = names_for(cfg);
    write_text(g.out_dir + "/metrics.txt", render_report(out.test_cm, names));
    write_text(g.out_dir + "/metrics.kv", render_report_kv(out.test_cm, names));

    std::printf("%s", render_report(out.test_cm, names).c_str());
    std::printf("%s", params_report(out.accounting).c_str());
    std::printf("run artifacts in %s\n", g.out_dir.c_str());
    return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& checkpoint, const std::string& data_dir,
             bool oracle) {
    RunConfig cfg = resolve_config(g);
    const std::string dir = data_dir.empty() ? cfg.get("data.dir") : data_dir;
    LoadedDataset data = load_dataset(dir);
    if (data.test.empty()) throw DataError("no test split under " + dir);
    const auto names = names_for(cfg);

    ConfusionMatrix cm(cfg.get_int("data.classes"));
    if (oracle) {
        for (const Sample& s : data.test) {
            ClassMap m{{s.image.dim(1), s.image.dim(2)}, s.label};
            accumulate(cm, m, m);
        }
    } else {
        if (checkpoint.empty()) throw ConfigError("eval requires --checkpoint (or --oracle)");
        TeacherStudentState state = unpack_state(load_checkpoint(checkpoint));
        BackboneConfig bcfg = backbone_config_from(cfg);
        const auto head = state.student.buffers.find("backbone.head.weight");
        if (head == state.student.buffers.end())
            throw DataError("checkpoint lacks a classification head");
        if (head->second.dim(0) != bcfg.num_classes)
            throw DataError("checkpoint class count does not match data");
        // run with the adapter stages the checkpoint actually contains
        bcfg.adapter_stages.clear();
        for (int s = 1; s <= 4; ++s)
            if (state.student.buffers.count("adapter.stage" + std::to_string(s) + ".lf_kernel"))
                bcfg.adapter_stages.insert(s);
        cm = evaluate_model(state.student, bcfg, data.test);
    }

    std::printf("%s", render_report(cm, names).c_str());
    if (!g.out_dir.empty()) {
        ensure_out_dir(g.out_dir);
        write_text(g.out_dir + "/metrics.txt", render_report(cm, names));
        write_text(g.out_dir + "/metrics.kv", render_report_kv(cm, names));
    }
    return 0;
}

int cmd_decompose(const GlobalOpts& g, const std::string& input, double rho) {
    Tensor t = load_tensor(input);
    if (t.rank() == 2)
        t = Tensor({1, 1, t.dim(0), t.dim(1)}, std::vector<double>(t.data(), t.data() + t.numel()));
    else if (t.rank() == 3)
        t = Tensor({1, t.dim(0), t.dim(1), t.dim(2)},
                   std::vector<double>(t.data(), t.data() + t.numel()));
    else if (t.rank() != 4)
        throw DataError("decompose expects a rank 2/3/4 tensor file");

    const double cutoff = rho > 0.0 ? rho : static_cast<double>(std::min(t.dim(2), t.dim(3))) / 4.0;
    SpectralPair p = decompose(t, cutoff);
    ensure_out_dir(g.out_dir);
    save_tensor(g.out_dir + "/lf.fwtn", p.x_lf);
    save_tensor(g.out_dir + "/hf.fwtn", p.x_hf);

    const BandEnergy e = band_energy(t, p.masks);
    const double total = e.total();
    std::printf("cutoff rho=%.4f  low-frequency bins=%lld of %lld\n", cutoff,
                static_cast<long long>(p.masks.low_count()),
                static_cast<long long>(p.masks.height * p.masks.width));
    std::printf("band energy: low %.6f  high %.6f  (fractions %.6f / %.6f)\n", e.low, e.high,
                total > 0 ? e.low / total : 0.0, total > 0 ? e.high / total : 0.0);
    std::printf("wrote %s/lf.fwtn and %s/hf.fwtn\n", g.out_dir.c_str(), g.out_dir.c_str());
    return 0;
}

int cmd_ablate(const GlobalOpts& g, const std::string& data_dir) {
    RunConfig cfg = resolve_config(g);
    ensure_out_dir(g.out_dir);

    // self-contained: make data and the pretrained backbone when missing
    std::string dir = data_dir.empty() ? cfg.get("data.dir") : data_dir;
    if (!fsys::exists(dir + "/train_labeled")) {
        std::printf("data dir %s missing, generating...\n", dir.c_str());
        const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
        SceneSpec spec = scene_spec_from(cfg, seed);
        SplitResult splits = split(generate(spec, cfg.get_int("data.scenes")),
                                   cfg.get_double("data.labeled_fraction"), seed,
                                   cfg.get_double("data.test_fraction"));
        write_dataset(dir, splits);
    }
    LoadedDataset data = load_dataset(dir);

    ModelParams pretrained;
    const std::string ck = g.out_dir + "/" + cfg.get("pretrain.checkpoint");
    if (fsys::exists(ck)) {
        pretrained.buffers = load_checkpoint(ck);
        for (auto& [name, t] : pretrained.buffers) t.set_requires_grad(true);
    } else {
        std::printf("pretraining backbone (%lld epochs on %lld source scenes)...\n",
                    static_cast<long long>(cfg.get_int("pretrain.epochs")),
                    static_cast<long long>(cfg.get_int("pretrain.scenes")));
        pretrained = pretrain_from_config(cfg);
        save_checkpoint(ck, pretrained.buffers);
    }

    const auto mode_rows = run_mode_grid(cfg, data, pretrained);
    const auto stage_rows = run_stage_grid(cfg, data, pretrained);
    std::string report = render_ablation_table("adapter/semi-supervision grid", mode_rows);
    report += "\n";
    report += render_ablation_table("adapter stage placement grid (fw mode)", stage_rows);
    std::printf("%s", report.c_str());
    write_text(g.out_dir + "/ablation.txt", report);
    echo_config(cfg, g.out_dir);
    return 0;
}

int cmd_params(const GlobalOpts& g) {
    RunConfig cfg = resolve_config(g);
    BackboneConfig bcfg = backbone_config_from(cfg);
    ModelParams params = init_backbone(bcfg, 0);
    attach_adapters(params, bcfg, 0);
    freeze_backbone(params);
    const ParamAccounting acc = count_params(params);
    std::printf("%s", params_report(acc).c_str());
    for (int s : bcfg.adapter_stages) {
        const std::int64_t c = bcfg.stage_channels[static_cast<std::size_t>(s - 1)];
        std::printf("adapter.stage%d: channels=%lld parameters=%lld\n", s,
                    static_cast<long long>(c),
                    static_cast<long long>(adapter_param_count(c, bcfg.bottleneck_ratio)));
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"frequency-adapter segmentation workbench"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "key=value config file");
    app.add_option("--seed", g.seed, "override the config seed");
    app.add_option("--out", g.out_dir, "output directory (default: run)");
    app.add_flag("--force", g.force, "overwrite non-empty output directories");

    auto* generate_cmd = app.add_subcommand("generate", "generate the synthetic dataset");
    auto* pretrain_cmd = app.add_subcommand("pretrain", "pretrain the backbone on source scenes");

    std::string data_dir;
    auto* train_cmd = app.add_subcommand("train", "train adapters (or the full baseline)");
    train_cmd->add_option("--data", data_dir, "dataset directory");

    std::string eval_checkpoint, eval_data;
    bool oracle = false;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint (FWCK)");
    eval_cmd->add_option("--data", eval_data, "dataset directory");
    eval_cmd->add_flag("--oracle", oracle, "score ground truth against itself");

    std::string dec_input;
    double dec_rho = 0.0;
    auto* dec_cmd = app.add_subcommand("decompose", "split a tensor into frequency bands");
    dec_cmd->add_option("--input", dec_input, "FWTN tensor file")->required();
    dec_cmd->add_option("--rho", dec_rho, "radial cutoff (default min(H,W)/4)");

    std::string ablate_data;
    auto* ablate_cmd = app.add_subcommand("ablate", "reproduce the ablation grids");
    ablate_cmd->add_option("--data", ablate_data, "dataset directory");

    auto* params_cmd = app.add_subcommand("params", "parameter accounting report");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate_cmd->parsed()) return cmd_generate(g);
        if (pretrain_cmd->parsed()) return cmd_pretrain(g);
        if (train_cmd->parsed()) return cmd_train(g, data_dir);
        if (eval_cmd->parsed()) return cmd_eval(g, eval_checkpoint, eval_data, oracle);
        if (dec_cmd->parsed()) return cmd_decompose(g, dec_input, dec_rho);
        if (ablate_cmd->parsed()) return cmd_ablate(g, ablate_data);
        if (params_cmd->parsed()) return cmd_params(g);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
