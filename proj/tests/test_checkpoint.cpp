#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fw/checkpoint.hpp"
#include "oracles.hpp"

using namespace fw;
namespace fsys = std::filesystem;

TEST_SUITE_BEGIN("checkpoint");

namespace {

std::string temp_dir(const char* tag) {
    const std::string dir = std::string("/tmp/fw_ck_") + tag;
    fsys::remove_all(dir);
    fsys::create_directories(dir);
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint roundtrip is stable at file level") {
    const std::string dir = temp_dir("rt");
    SplitMix64 rng(31);
    std::map<std::string, Tensor> entries;
    entries.emplace("adapter.stage3.lf_kernel", oracle::random_tensor({2, 11, 11}, rng));
    entries.emplace("backbone.enc1.weight", oracle::random_tensor({4, 3, 3, 3}, rng));
    entries.emplace("step", Tensor({1}, {17.0}));

    save_checkpoint(dir + "/a.fwck", entries);
    auto loaded = load_checkpoint(dir + "/a.fwck");
    REQUIRE(loaded.size() == entries.size());
    CHECK(loaded.at("step").item() == 17.0);

    // save(load(f)) reproduces f byte for byte
    save_checkpoint(dir + "/b.fwck", loaded);
    CHECK(slurp(dir + "/a.fwck") == slurp(dir + "/b.fwck"));

    // and a loaded model roundtrips losslessly (values are f32 already)
    auto again = load_checkpoint(dir + "/b.fwck");
    for (const auto& [name, t] : loaded)
        CHECK(oracle::max_abs_diff(t, again.at(name)) == 0.0);
}

TEST_CASE("corrupt checkpoints are rejected with distinct errors") {
    const std::string dir = temp_dir("bad");
    SplitMix64 rng(32);
    std::map<std::string, Tensor> entries;
    entries.emplace("w", oracle::random_tensor({3, 3}, rng));
    save_checkpoint(dir + "/good.fwck", entries);
    const std::string bytes = slurp(dir + "/good.fwck");

    {
        std::ofstream f(dir + "/magic.fwck", std::ios::binary);
        f << "XXXX" << bytes.substr(4);
    }
    CHECK_THROWS_AS(load_checkpoint(dir + "/magic.fwck"), BadMagicError);

    {
        std::ofstream f(dir + "/short.fwck", std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
    }
    CHECK_THROWS_AS(load_checkpoint(dir + "/short.fwck"), TruncatedFileError);

    {
        std::string v = bytes;
        v[4] = 42;
        std::ofstream f(dir + "/ver.fwck", std::ios::binary);
        f.write(v.data(), static_cast<std::streamsize>(v.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(dir + "/ver.fwck"), VersionError);

    {
        std::string v = bytes + "z";
        std::ofstream f(dir + "/long.fwck", std::ios::binary);
        f.write(v.data(), static_cast<std::streamsize>(v.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(dir + "/long.fwck"), DataError);
}

TEST_SUITE_END();
