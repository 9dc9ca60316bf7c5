#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fw/dataset.hpp"
#include "oracles.hpp"

using namespace fw;
namespace fsys = std::filesystem;

TEST_SUITE_BEGIN("dataset");

namespace {

std::string temp_dir(const char* tag) {
    const std::string dir = std::string("/tmp/fw_test_") + tag;
    fsys::remove_all(dir);
    fsys::create_directories(dir);
    return dir;
}

bool same_bytes(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return sa == sb && !sa.empty();
}

}  // namespace

TEST_CASE("generation is deterministic under a fixed seed") {
    SceneSpec spec = default_scene_spec(32, 123);
    auto a = generate(spec, 3);
    auto b = generate(spec, 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].label == b[i].label);
        CHECK(oracle::max_abs_diff(a[i].image, b[i].image) == 0.0);
    }
}

TEST_CASE("every pixel gets exactly one in-range class and finite colors") {
    SceneSpec spec = default_scene_spec(32, 5);
    for (const Sample& s : generate(spec, 4)) {
        for (std::int32_t v : s.label) {
            CHECK(v >= 0);
            CHECK(v < spec.num_classes());
        }
        for (std::int64_t i = 0; i < s.image.numel(); ++i) {
            CHECK(s.image.data()[i] >= 0.0);
            CHECK(s.image.data()[i] <= 1.0);
        }
    }
}

TEST_CASE("class histogram tracks the profile within 50% relative") {
    SceneSpec spec = default_scene_spec(64, 77);
    auto samples = generate(spec, 100);
    std::vector<double> hist(spec.classes.size(), 0.0);
    double total = 0.0;
    for (const Sample& s : samples)
        for (std::int32_t v : s.label) {
            hist[static_cast<std::size_t>(v)] += 1.0;
            total += 1.0;
        }
    for (std::size_t c = 0; c < hist.size(); ++c) {
        const double share = hist[c] / total;
        const double target = spec.classes[c].share;
        CAPTURE(spec.classes[c].name);
        CHECK(share > 0.5 * target);
        CHECK(share < 1.5 * target);
    }
}

TEST_CASE("single-class profile yields a constant label map") {
    SceneSpec spec = uniform_scene_spec(16, 1, 9);
    for (const Sample& s : generate(spec, 2))
        for (std::int32_t v : s.label) CHECK(v == 0);
}

TEST_CASE("invalid profiles are rejected") {
    SceneSpec spec = default_scene_spec(16, 0);
    spec.classes[0].share += 0.5;
    CHECK_THROWS_AS(generate(spec, 1), ConfigError);
    CHECK_THROWS_AS(generate(default_scene_spec(16, 0), 0), ConfigError);
}

TEST_CASE("split is disjoint, exhaustive and deterministic") {
    SceneSpec spec = default_scene_spec(16, 3);
    auto samples = generate(spec, 60);
    SplitResult r = split(samples, 0.2, 42);
    CHECK(r.labeled.size() == 11);
    CHECK(r.unlabeled.size() == 44);
    CHECK(r.test.size() == 5);

    SplitResult r2 = split(samples, 0.2, 42);
    CHECK(r2.labeled.size() == r.labeled.size());
    CHECK(oracle::max_abs_diff(r2.labeled[0].image, r.labeled[0].image) == 0.0);

    // union of splits equals the input multiset (match by label buffers)
    std::vector<std::vector<std::int32_t>> all;
    for (const auto& v : {r.labeled, r.unlabeled, r.test})
        for (const Sample& s : v) all.push_back(s.label);
    std::vector<std::vector<std::int32_t>> orig;
    for (const Sample& s : samples) orig.push_back(s.label);
    std::sort(all.begin(), all.end());
    std::sort(orig.begin(), orig.end());
    CHECK(all == orig);

    for (const Sample& s : r.unlabeled) CHECK(!s.labeled);
    for (const Sample& s : r.labeled) CHECK(s.labeled);
}

TEST_CASE("full labeled fraction leaves no unlabeled samples") {
    auto samples = generate(default_scene_spec(16, 4), 12);
    SplitResult r = split(samples, 1.0, 1);
    CHECK(r.unlabeled.empty());
    CHECK(r.labeled.size() + r.test.size() == samples.size());
    CHECK_THROWS_AS(split(samples, 0.0, 1), ConfigError);
}

TEST_CASE("tensor files roundtrip bit-exactly") {
    const std::string dir = temp_dir("fwtn");
    SplitMix64 rng(9);
    Tensor t = oracle::random_tensor({2, 3, 5}, rng, -4.0, 4.0);
    // values must be f32-representable for a bit-exact roundtrip
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<double>(static_cast<float>(t.data()[i]));
    save_tensor(dir + "/t.fwtn", t);
    Tensor back = load_tensor(dir + "/t.fwtn");
    CHECK(back.shape() == t.shape());
    CHECK(oracle::max_abs_diff(back, t) == 0.0);

    save_tensor(dir + "/t2.fwtn", back);
    CHECK(same_bytes(dir + "/t.fwtn", dir + "/t2.fwtn"));
}

TEST_CASE("label files have the documented byte layout") {
    const std::string dir = temp_dir("fwlb");
    save_labels(dir + "/l.fwlb", 2, 2, {0, 1, 2, 3});
    CHECK(fsys::file_size(dir + "/l.fwlb") == 20);  // 4+4+4+4+4
    std::int64_t h = 0, w = 0;
    auto labels = load_labels(dir + "/l.fwlb", &h, &w);
    CHECK(h == 2);
    CHECK(w == 2);
    CHECK(labels == std::vector<std::int32_t>{0, 1, 2, 3});
}

TEST_CASE("corrupt files raise the designated errors") {
    const std::string dir = temp_dir("corrupt");
    SplitMix64 rng(10);
    save_tensor(dir + "/good.fwtn", oracle::random_tensor({2, 2}, rng));

    {  // wrong magic
        std::ofstream f(dir + "/magic.fwtn", std::ios::binary);
        f << "NOPE" << std::string(16, '\0');
    }
    CHECK_THROWS_AS(load_tensor(dir + "/magic.fwtn"), BadMagicError);

    {  // truncated payload
        std::ifstream in(dir + "/good.fwtn", std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        std::ofstream f(dir + "/short.fwtn", std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
    }
    CHECK_THROWS_AS(load_tensor(dir + "/short.fwtn"), TruncatedFileError);

    {  // bad version
        std::ifstream in(dir + "/good.fwtn", std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        bytes[4] = 9;
        std::ofstream f(dir + "/version.fwtn", std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_tensor(dir + "/version.fwtn"), VersionError);

    {  // trailing garbage
        std::ifstream in(dir + "/good.fwtn", std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        bytes += "x";
        std::ofstream f(dir + "/long.fwtn", std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_tensor(dir + "/long.fwtn"), DataError);

    {  // truncated label file
        std::ofstream f(dir + "/l.fwlb", std::ios::binary);
        f << "FWLB";
    }
    CHECK_THROWS_AS(load_labels(dir + "/l.fwlb", nullptr, nullptr), TruncatedFileError);
}

TEST_CASE("dataset directory roundtrip preserves splits") {
    const std::string dir = temp_dir("dataset");
    auto samples = generate(default_scene_spec(16, 8), 12);
    SplitResult r = split(samples, 0.25, 3);
    write_dataset(dir, r);
    LoadedDataset d = load_dataset(dir);
    CHECK(d.labeled.size() == r.labeled.size());
    CHECK(d.unlabeled.size() == r.unlabeled.size());
    CHECK(d.test.size() == r.test.size());
    CHECK(d.labeled[0].label == r.labeled[0].label);
    CHECK(!d.unlabeled.empty());
    CHECK(!d.unlabeled[0].labeled);  // labels on disk, withheld from the trainer
    CHECK_THROWS_AS(load_dataset(dir + "/missing"), DataError);
}

TEST_SUITE_END();
