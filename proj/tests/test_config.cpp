#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fw/config.hpp"
#include "fw/error.hpp"
#include "fw/trainer.hpp"

using namespace fw;

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults resolve every key") {
    RunConfig cfg;
    CHECK(cfg.get_int("train.batch") == 2);
    CHECK(cfg.get_double("train.lr") == doctest::Approx(5e-4));
    CHECK(cfg.get_double("semisup.alpha") == doctest::Approx(0.99));
    CHECK(cfg.get_double("semisup.lambda") == doctest::Approx(0.1));
    CHECK(cfg.get_int("train.epochs") == 50);
    CHECK(cfg.get("train.mode") == "fw+uats");
    CHECK(cfg.get_int_list("adapter.stages") == std::vector<std::int64_t>{3, 4});
}

TEST_CASE("unknown keys are rejected") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.set("train.levitate", "1"), ConfigError);
    CHECK_THROWS_AS(cfg.get("definitely.not.a.key"), ConfigError);
}

TEST_CASE("file parsing handles comments, blanks and bad lines") {
    const std::string path = "/tmp/fw_cfg_test.cfg";
    {
        std::ofstream f(path);
        f << "# a comment\n\nseed=9\ntrain.mode = fw\n  adapter.stages = 4 \n";
    }
    RunConfig cfg = RunConfig::from_file(path);
    CHECK(cfg.get_int("seed") == 9);
    CHECK(cfg.get("train.mode") == "fw");
    CHECK(cfg.get_int_list("adapter.stages") == std::vector<std::int64_t>{4});

    {
        std::ofstream f(path);
        f << "seed 9\n";
    }
    CHECK_THROWS_AS(RunConfig::from_file(path), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_file("/tmp/does_not_exist.cfg"), ConfigError);
}

TEST_CASE("typed getters validate their values") {
    RunConfig cfg;
    cfg.set("train.epochs", "abc");
    CHECK_THROWS_AS(cfg.get_int("train.epochs"), ConfigError);
    cfg.set("aug.jitter", "maybe");
    CHECK_THROWS_AS(cfg.get_bool("aug.jitter"), ConfigError);
    cfg.set("backbone.channels", "32,,64");
    CHECK_THROWS_AS(cfg.get_int_list("backbone.channels"), ConfigError);
}

TEST_CASE("render lists the full resolved key set") {
    RunConfig cfg;
    const std::string text = cfg.render();
    for (const char* key : {"seed=", "train.lr=", "semisup.alpha=", "adapter.bottleneck="})
        CHECK(text.find(key) != std::string::npos);
    // render is stable
    CHECK(text == RunConfig().render());
}

TEST_CASE("backbone config derives from run config") {
    RunConfig cfg;
    BackboneConfig b = backbone_config_from(cfg);
    CHECK(b.stage_channels == std::vector<std::int64_t>{32, 64, 128, 256});
    CHECK(b.adapter_stages == std::set<int>{3, 4});
    CHECK(b.stage_feature_size(3) == 8);
    CHECK(b.stage_rho(3) == doctest::Approx(2.0));  // min(8,8)/4
    CHECK(b.stage_rho(4) == doctest::Approx(1.0));

    cfg.set("adapter.rho.stage3", "3.5");
    CHECK(backbone_config_from(cfg).stage_rho(3) == doctest::Approx(3.5));
    cfg.set("adapter.rho", "2.5");
    CHECK(backbone_config_from(cfg).stage_rho(4) == doctest::Approx(2.5));

    cfg.set("data.size", "60");
    CHECK_THROWS_AS(backbone_config_from(cfg), ConfigError);  // not divisible by 16
}

TEST_SUITE_END();
