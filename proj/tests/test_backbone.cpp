#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "fw/backbone.hpp"
#include "fw/checkpoint.hpp"
#include "fw/metrics.hpp"
#include "fw/semisup.hpp"
#include "oracles.hpp"

using namespace fw;

TEST_SUITE_BEGIN("backbone");

namespace {

BackboneConfig small_config(std::int64_t input = 32) {
    BackboneConfig b;
    b.stage_channels = {4, 8, 8, 8};
    b.decoder_channels = {8, 8, 4, 4};
    b.num_classes = 4;
    b.adapter_stages = {3, 4};
    b.input_size = input;
    b.bottleneck_ratio = 4;
    return b;
}

Tensor random_images(std::int64_t b, const BackboneConfig& cfg, std::uint64_t seed) {
    SplitMix64 rng(seed);
    return Tensor::uniform({b, cfg.in_channels, cfg.input_size, cfg.input_size}, 0.0, 1.0, rng);
}

// Supervised adapter training on a frozen backbone; returns test-set mean IoU.
double adapt_and_score(const ModelParams& backbone, const BackboneConfig& cfg,
                       const std::vector<Sample>& train, const std::vector<Sample>& test,
                       std::int64_t epochs, std::uint64_t seed) {
    ModelParams params = backbone.clone(true);
    attach_adapters(params, cfg, mix_seed(seed, 1));
    freeze_backbone(params);
    TeacherStudentState state = make_teacher_student(params, 0.99, 0.0);
    Adam opt;
    opt.lr = 5e-4;
    for (std::int64_t e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < train.size(); i += 2) {
            std::vector<const Sample*> batch;
            for (std::size_t k = i; k < std::min(train.size(), i + 2); ++k)
                batch.push_back(&train[k]);
            train_step(state, cfg, batch, {}, opt, mix_seed(seed, 2, e * 100 + i));
        }
    }
    ConfusionMatrix cm(cfg.num_classes);
    std::vector<const Sample*> all;
    for (const Sample& s : test) all.push_back(&s);
    ModelParams frozen = state.student.clone(false);
    accumulate(cm, argmax_channels(backbone_forward(stack_images(all), frozen, cfg)),
               stack_labels(all));
    return iou_dice(cm).mean_iou;
}

}  // namespace

TEST_CASE("config validation") {
    BackboneConfig b = small_config();
    b.validate();
    b.adapter_stages = {0};
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b = small_config();
    b.input_size = 24;
    CHECK_THROWS_AS(b.validate(), ConfigError);
    b = small_config();
    b.stage_channels = {4, 8};
    CHECK_THROWS_AS(b.validate(), ConfigError);
}

TEST_CASE("logits keep the documented shape") {
    BackboneConfig cfg = small_config(64);
    cfg.num_classes = 9;
    ModelParams params = init_backbone(cfg, 7);
    attach_adapters(params, cfg, 8);
    Tensor logits = backbone_forward(random_images(2, cfg, 9), params, cfg);
    CHECK(logits.shape() == std::vector<std::int64_t>{2, 9, 64, 64});
}

TEST_CASE("fresh adapters do not change logits at any insertion choice") {
    BackboneConfig none = small_config();
    none.adapter_stages.clear();
    ModelParams base = init_backbone(none, 21);
    Tensor images = random_images(2, none, 22);
    Tensor plain = backbone_forward(images, base, none);

    for (const auto& stages :
         {std::set<int>{3, 4}, std::set<int>{4}, std::set<int>{1, 2, 3, 4}}) {
        BackboneConfig with = small_config();
        with.adapter_stages = stages;
        ModelParams params = base.clone(true);
        attach_adapters(params, with, 23);
        Tensor adapted = backbone_forward(images, params, with);
        CHECK(oracle::max_abs_diff(plain, adapted) < 1e-9);
    }
}

TEST_CASE("freezing is idempotent and counted exactly") {
    BackboneConfig cfg = small_config();
    ModelParams params = init_backbone(cfg, 31);
    attach_adapters(params, cfg, 32);

    freeze_backbone(params);
    const ParamAccounting once = count_params(params);
    freeze_backbone(params);
    const ParamAccounting twice = count_params(params);
    CHECK(once.trainable == twice.trainable);
    CHECK(once.frozen == twice.frozen);

    std::int64_t expected = 0;
    for (int s : cfg.adapter_stages)
        expected += adapter_param_count(cfg.stage_channels[static_cast<std::size_t>(s - 1)],
                                        cfg.bottleneck_ratio);
    CHECK(once.trainable == expected);
}

TEST_CASE("frozen buffers survive optimization steps bit-identically") {
    BackboneConfig cfg = small_config();
    ModelParams params = init_backbone(cfg, 41);
    attach_adapters(params, cfg, 42);
    freeze_backbone(params);

    // manual perturbation still changes logits: the weight is used, just not trained
    Tensor images = random_images(1, cfg, 43);
    Tensor before = backbone_forward(images, params, cfg);
    Tensor enc1 = params.buffers.at("backbone.enc1.weight");
    const double keep = enc1.data()[0];
    enc1.data()[0] += 0.5;
    Tensor after = backbone_forward(images, params, cfg);
    CHECK(oracle::max_abs_diff(before, after) > 0.0);
    enc1.data()[0] = keep;

    const std::vector<double> snapshot(enc1.data(), enc1.data() + enc1.numel());

    // one SGD step on a real loss touches adapters only
    SceneSpec spec = default_scene_spec(cfg.input_size, 44);
    spec.classes.resize(4);
    double total = 0.0;
    for (auto& c : spec.classes) total += c.share;
    for (auto& c : spec.classes) c.share /= total;
    auto data = generate(spec, 2);
    std::vector<const Sample*> batch = {&data[0], &data[1]};
    for (auto& [name, t] : params.buffers) t.zero_grad();
    Tensor loss = cross_entropy(backbone_forward(stack_images(batch), params, cfg),
                                stack_labels(batch));
    loss.backward();
    sgd_step(params.buffers, 0.1);

    const Tensor& enc1_after = params.buffers.at("backbone.enc1.weight");
    for (std::int64_t i = 0; i < enc1_after.numel(); ++i)
        CHECK(enc1_after.data()[i] == snapshot[static_cast<std::size_t>(i)]);

    // adapters did move
    double moved = 0.0;
    const Tensor& k = params.buffers.at("adapter.stage3.lf_kernel");
    for (std::int64_t i = 0; i < k.numel(); ++i) moved += std::abs(k.data()[i]);
    CHECK(moved > 0.0);
}

TEST_CASE("checkpoint roundtrip reproduces logits bit-identically") {
    namespace fsys = std::filesystem;
    const std::string dir = "/tmp/fw_bb_ck";
    fsys::remove_all(dir);
    fsys::create_directories(dir);

    BackboneConfig cfg = small_config();
    ModelParams params = init_backbone(cfg, 51);
    attach_adapters(params, cfg, 52);
    save_checkpoint(dir + "/m.fwck", params.buffers);

    ModelParams loaded;
    loaded.buffers = load_checkpoint(dir + "/m.fwck");
    save_checkpoint(dir + "/m2.fwck", loaded.buffers);
    ModelParams loaded2;
    loaded2.buffers = load_checkpoint(dir + "/m2.fwck");

    Tensor images = random_images(1, cfg, 53);
    Tensor a = backbone_forward(images, loaded, cfg);
    Tensor b = backbone_forward(images, loaded2, cfg);
    CHECK(oracle::max_abs_diff(a, b) == 0.0);
    CHECK(loaded.names() == params.names());
}

TEST_CASE("pretraining reduces the loss and is deterministic") {
    BackboneConfig cfg = small_config();
    cfg.num_classes = 9;
    cfg.adapter_stages.clear();
    SceneSpec spec = source_scene_spec(cfg.input_size, 61);
    auto data = generate(spec, 8);

    std::vector<const Sample*> all;
    for (const Sample& s : data) all.push_back(&s);
    Tensor images = stack_images(all);
    ClassMap targets = stack_labels(all);

    ModelParams fresh = init_backbone(cfg, 62);
    const double before =
        cross_entropy(backbone_forward(images, fresh.clone(false), cfg), targets).item();

    ModelParams trained = pretrain_backbone(data, cfg, 1, 5e-4, 2, 62);
    const double after =
        cross_entropy(backbone_forward(images, trained.clone(false), cfg), targets).item();
    CHECK(after < before);

    ModelParams trained2 = pretrain_backbone(data, cfg, 1, 5e-4, 2, 62);
    const double after2 =
        cross_entropy(backbone_forward(images, trained2.clone(false), cfg), targets).item();
    CHECK(std::abs(after - after2) < 1e-9);

    CHECK_THROWS_AS(pretrain_backbone({}, cfg, 1, 5e-4, 2, 0), TrainingError);
}

TEST_CASE("pretrained frozen backbone beats a random frozen one for adaptation") {
    BackboneConfig cfg = small_config();
    cfg.num_classes = 9;

    BackboneConfig pre_cfg = cfg;
    pre_cfg.adapter_stages.clear();
    auto source = generate(source_scene_spec(cfg.input_size, 71), 16);
    ModelParams pretrained = pretrain_backbone(source, pre_cfg, 8, 5e-4, 2, 72);

    auto target = generate(default_scene_spec(cfg.input_size, 73), 12);
    std::vector<Sample> train(target.begin(), target.begin() + 8);
    std::vector<Sample> test(target.begin() + 8, target.end());

    double pre_sum = 0.0, rand_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        ModelParams random_backbone = init_backbone(pre_cfg, 1000 + seed);
        pre_sum += adapt_and_score(pretrained, cfg, train, test, 6, 80 + seed);
        rand_sum += adapt_and_score(random_backbone, cfg, train, test, 6, 80 + seed);
    }
    CHECK(pre_sum / 3.0 > rand_sum / 3.0);
}

TEST_SUITE_END();
