#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fw/tensor.hpp"

namespace fw {

// Per-class appearance and coverage target. Texture frequency is in cycles
// across the patch: low for region classes, high for built structures.
struct ClassStyle {
    std::string name;
    double share = 0.0;
    std::array<double, 3> base_rgb{0.5, 0.5, 0.5};
    double texture_freq = 2.0;
};

struct SceneSpec {
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::vector<ClassStyle> classes;
    std::int64_t blob_count_min = 80;
    std::int64_t blob_count_max = 120;
    // Per-scene appearance variability (lighting/season/sensor stand-in):
    // every class's color shifts per channel by uniform(-color_jitter, +color_jitter)
    // and its texture frequency scales by uniform(1-freq_jitter, 1+freq_jitter),
    // drawn once per scene. Keeps single scenes uninformative about the full
    // appearance distribution.
    double color_jitter = 0.10;
    double freq_jitter = 0.30;
    std::uint64_t seed = 0;

    std::int64_t num_classes() const { return static_cast<std::int64_t>(classes.size()); }
    void validate() const;  // shares must sum to 1 within 1e-6
};

// The nine UrbanWatch-style urban categories; agriculture deliberately near
// zero to keep one heavily underrepresented class in play.
SceneSpec default_scene_spec(std::int64_t size = 64, std::uint64_t seed = 0);

// Shifted palette / frequencies / mixture standing in for a source domain the
// backbone is pretrained on before adaptation.
SceneSpec source_scene_spec(std::int64_t size = 64, std::uint64_t seed = 0);

// Uniform-share profile for arbitrary class counts.
SceneSpec uniform_scene_spec(std::int64_t size, std::int64_t num_classes, std::uint64_t seed);

struct Sample {
    Tensor image;                    // [3,H,W] in [0,1]
    std::vector<std::int32_t> label; // H*W class indices
    bool labeled = true;
};

// Deterministic given (spec, n): sample k derives its own RNG stream from
// spec.seed and k, so generation order or parallelism cannot change results.
//
// Scenes are dead-leaves compositions: the background and every blob draw
// their class independently from the profile with class-independent geometry,
// so the pixel-class marginal equals the profile exactly in expectation.
std::vector<Sample> generate(const SceneSpec& spec, std::int64_t n);

struct SplitResult {
    std::vector<Sample> labeled;
    std::vector<Sample> unlabeled;  // labels retained for oracle evaluation only
    std::vector<Sample> test;
};

// Disjoint, exhaustive, deterministic. test_fraction defaults to the 5-in-60
// corpus shape; labeled_fraction applies to the remaining training pool.
SplitResult split(const std::vector<Sample>& samples, double labeled_fraction,
                  std::uint64_t seed, double test_fraction = 5.0 / 60.0);

// FWTN: "FWTN" | u32 version=1 | u32 ndim | ndim x u32 dims | f32 payload (LE).
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// FWLB: "FWLB" | u32 version=1 | u32 H | u32 W | H*W bytes of class indices.
void save_labels(const std::string& path, std::int64_t h, std::int64_t w,
                 const std::vector<std::int32_t>& labels);
std::vector<std::int32_t> load_labels(const std::string& path, std::int64_t* h_out,
                                      std::int64_t* w_out);

// data/{train_labeled,train_unlabeled,test}/NNNN.{fwtn,fwlb}
void write_dataset(const std::string& dir, const SplitResult& splits);

struct LoadedDataset {
    std::vector<Sample> labeled;
    std::vector<Sample> unlabeled;
    std::vector<Sample> test;
};

LoadedDataset load_dataset(const std::string& dir);

std::vector<std::string> class_names(const SceneSpec& spec);

}  // namespace fw
