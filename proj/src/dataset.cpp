#include "fw/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fw {

namespace {

namespace fsys = std::filesystem;

constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw TruncatedFileError("truncated file: " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ofstream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(std::ifstream& in, const std::string& path) {
    const std::uint32_t bits = get_u32(in, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void check_magic(std::ifstream& in, const char* expect, const std::string& path) {
    char magic[4];
    if (!in.read(magic, 4)) throw TruncatedFileError("truncated file: " + path);
    if (std::memcmp(magic, expect, 4) != 0)
        throw BadMagicError("bad magic in " + path + " (expected " + expect + ")");
}

void check_eof(std::ifstream& in, const std::string& path) {
    char extra;
    if (in.read(&extra, 1)) throw DataError("trailing bytes in " + path);
}

// ---- scene painting ----

struct Blob {
    std::int64_t cls;
    double cy, cx, ry, rx;  // center and half extents, in pixels
    bool ellipse;
};

void paint(std::vector<std::int32_t>& label, std::int64_t h, std::int64_t w, const Blob& b) {
    const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(b.cy - b.ry));
    const std::int64_t y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(b.cy + b.ry));
    const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(b.cx - b.rx));
    const std::int64_t x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(b.cx + b.rx));
    for (std::int64_t y = y0; y <= y1; ++y)
        for (std::int64_t x = x0; x <= x1; ++x) {
            if (b.ellipse) {
                const double dy = (static_cast<double>(y) - b.cy) / b.ry;
                const double dx = (static_cast<double>(x) - b.cx) / b.rx;
                if (dy * dy + dx * dx > 1.0) continue;
            }
            label[y * w + x] = static_cast<std::int32_t>(b.cls);
        }
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

void SceneSpec::validate() const {
    if (classes.empty()) throw ConfigError("scene spec has no classes");
    double s = 0.0;
    for (const auto& c : classes) {
        if (c.share < 0.0) throw ConfigError("negative class share");
        s += c.share;
    }
    if (std::abs(s - 1.0) > 1e-6)
        throw ConfigError("class shares must sum to 1 (got " + std::to_string(s) + ")");
}

SceneSpec default_scene_spec(std::int64_t size, std::uint64_t seed) {
    SceneSpec s;
    s.height = size;
    s.width = size;
    s.seed = seed;
    s.classes = {
        {"building", 0.16, {0.62, 0.48, 0.44}, 12.0},
        {"road", 0.14, {0.32, 0.32, 0.34}, 10.0},
        {"parking_lot", 0.08, {0.50, 0.50, 0.52}, 8.0},
        {"tree_canopy", 0.20, {0.10, 0.35, 0.12}, 6.0},
        {"grass_shrub", 0.22, {0.35, 0.60, 0.25}, 2.0},
        {"agriculture", 0.01, {0.55, 0.52, 0.20}, 3.0},
        {"water", 0.09, {0.12, 0.22, 0.50}, 1.0},
        {"barren", 0.04, {0.58, 0.46, 0.30}, 2.0},
        {"other", 0.06, {0.55, 0.25, 0.45}, 4.0},
    };
    return s;
}

SceneSpec source_scene_spec(std::int64_t size, std::uint64_t seed) {
    // Same categories, shifted palette/texture and different mixture: the
    // pretraining distribution differs from the adaptation target.
    SceneSpec s;
    s.height = size;
    s.width = size;
    s.seed = seed;
    s.classes = {
        {"building", 0.10, {0.70, 0.42, 0.36}, 9.0},
        {"road", 0.10, {0.26, 0.28, 0.30}, 13.0},
        {"parking_lot", 0.05, {0.44, 0.46, 0.46}, 6.0},
        {"tree_canopy", 0.28, {0.14, 0.30, 0.10}, 8.0},
        {"grass_shrub", 0.26, {0.42, 0.56, 0.20}, 3.0},
        {"agriculture", 0.02, {0.60, 0.55, 0.25}, 2.0},
        {"water", 0.12, {0.10, 0.18, 0.42}, 1.5},
        {"barren", 0.04, {0.52, 0.42, 0.26}, 2.5},
        {"other", 0.03, {0.48, 0.22, 0.40}, 5.0},
    };
    return s;
}

SceneSpec uniform_scene_spec(std::int64_t size, std::int64_t num_classes, std::uint64_t seed) {
    if (num_classes <= 0) throw ConfigError("num_classes must be positive");
    SceneSpec s;
    s.height = size;
    s.width = size;
    s.seed = seed;
    for (std::int64_t c = 0; c < num_classes; ++c) {
        SplitMix64 rng(mix_seed(0xc01052u, static_cast<std::uint64_t>(c)));
        ClassStyle cs;
        cs.name = "class" + std::to_string(c);
        cs.share = 1.0 / static_cast<double>(num_classes);
        cs.base_rgb = {0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform(),
                       0.2 + 0.6 * rng.uniform()};
        cs.texture_freq = 1.0 + 11.0 * rng.uniform();
        s.classes.push_back(cs);
    }
    return s;
}

std::vector<std::string> class_names(const SceneSpec& spec) {
    std::vector<std::string> names;
    names.reserve(spec.classes.size());
    for (const auto& c : spec.classes) names.push_back(c.name);
    return names;
}

std::vector<Sample> generate(const SceneSpec& spec, std::int64_t n) {
    if (n < 1) throw ConfigError("generate: n must be >= 1");
    spec.validate();
    if (spec.blob_count_min < 0 || spec.blob_count_max < spec.blob_count_min)
        throw ConfigError("generate: bad blob count range");
    const std::int64_t h = spec.height, w = spec.width;

    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t idx = 0; idx < n; ++idx) {
        SplitMix64 rng(mix_seed(spec.seed, 0x5ce7eull, static_cast<std::uint64_t>(idx)));

        // CDF inversion over the share profile.
        auto draw_class = [&](SplitMix64& r) -> std::int64_t {
            const double u = r.uniform();
            double acc = 0.0;
            std::int64_t last = 0;
            for (std::size_t c = 0; c < spec.classes.size(); ++c) {
                if (spec.classes[c].share <= 0.0) continue;
                acc += spec.classes[c].share;
                last = static_cast<std::int64_t>(c);
                if (u < acc) return last;
            }
            return last;
        };

        const std::int64_t background = draw_class(rng);
        std::vector<std::int32_t> label(static_cast<std::size_t>(h * w),
                                        static_cast<std::int32_t>(background));

        const std::int64_t blobs =
            spec.blob_count_min +
            static_cast<std::int64_t>(rng.below(
                static_cast<std::uint64_t>(spec.blob_count_max - spec.blob_count_min + 1)));
        for (std::int64_t k = 0; k < blobs; ++k) {
            const std::int64_t cls = draw_class(rng);
            // geometry is independent of the class: later blobs overwrite
            // earlier ones uniformly, keeping the per-class marginal exact
            const double cy = rng.uniform(0.0, static_cast<double>(h));
            const double cx = rng.uniform(0.0, static_cast<double>(w));
            const double ry = rng.uniform(static_cast<double>(h) / 10.0,
                                          static_cast<double>(h) / 3.5);
            const double rx = rng.uniform(static_cast<double>(w) / 10.0,
                                          static_cast<double>(w) / 3.5);
            const bool ellipse = rng.coin();
            paint(label, h, w, {cls, cy, cx, ry, rx, ellipse});
        }

        // Render: (jittered) base color + directional sinusoidal texture + noise.
        std::vector<double> phase(spec.classes.size());
        std::vector<double> dir(spec.classes.size());
        std::vector<double> freq(spec.classes.size());
        std::vector<std::array<double, 3>> rgb(spec.classes.size());
        for (std::size_t c = 0; c < spec.classes.size(); ++c) {
            phase[c] = rng.uniform(0.0, 2.0 * M_PI);
            dir[c] = rng.uniform(0.0, M_PI);
            freq[c] = spec.classes[c].texture_freq *
                      rng.uniform(1.0 - spec.freq_jitter, 1.0 + spec.freq_jitter);
            for (std::size_t ch = 0; ch < 3; ++ch)
                rgb[c][ch] = spec.classes[c].base_rgb[ch] +
                             rng.uniform(-spec.color_jitter, spec.color_jitter);
        }
        std::vector<double> img(static_cast<std::size_t>(3 * h * w));
        const double amp = 0.06;
        const double sigma = 0.02;
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const std::int32_t c = label[y * w + x];
                const double u = std::cos(dir[c]), v = std::sin(dir[c]);
                const double t = std::sin(2.0 * M_PI * freq[c] *
                                              (u * static_cast<double>(y) +
                                               v * static_cast<double>(x)) /
                                              static_cast<double>(h) +
                                          phase[c]);
                for (std::int64_t ch = 0; ch < 3; ++ch) {
                    const double val = rgb[c][static_cast<std::size_t>(ch)] + amp * t +
                                       sigma * rng.normal();
                    img[(ch * h + y) * w + x] = clamp01(val);
                }
            }
        }

        Sample s;
        s.image = Tensor({3, h, w}, std::move(img));
        s.label = std::move(label);
        s.labeled = true;
        out.push_back(std::move(s));
    }
    return out;
}

SplitResult split(const std::vector<Sample>& samples, double labeled_fraction,
                  std::uint64_t seed, double test_fraction) {
    if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
        throw ConfigError("labeled_fraction must be in (0,1]");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must be in [0,1)");
    const std::int64_t n = static_cast<std::int64_t>(samples.size());
    if (n == 0) throw DataError("split: empty sample set");

    std::vector<std::int64_t> perm(samples.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
    SplitMix64 rng(mix_seed(seed, 0x59117ull));
    for (std::int64_t i = n - 1; i > 0; --i) {
        const std::int64_t j =
            static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[i], perm[j]);
    }

    const std::int64_t n_test = static_cast<std::int64_t>(
        std::llround(test_fraction * static_cast<double>(n)));
    const std::int64_t n_train = n - n_test;
    std::int64_t n_labeled = static_cast<std::int64_t>(
        std::llround(labeled_fraction * static_cast<double>(n_train)));
    n_labeled = std::max<std::int64_t>(1, std::min(n_labeled, n_train));
    if (n_train == 0) throw DataError("split: no training samples left");

    SplitResult r;
    for (std::int64_t i = 0; i < n; ++i) {
        Sample s = samples[static_cast<std::size_t>(perm[i])];
        if (i < n_labeled) {
            s.labeled = true;
            r.labeled.push_back(std::move(s));
        } else if (i < n_train) {
            s.labeled = false;
            r.unlabeled.push_back(std::move(s));
        } else {
            s.labeled = true;
            r.test.push_back(std::move(s));
        }
    }
    return r;
}

// ---- file formats ----

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write("FWTN", 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i)
        put_u32(out, static_cast<std::uint32_t>(t.shape()[i]));
    for (std::int64_t i = 0; i < t.numel(); ++i)
        put_f32(out, static_cast<float>(t.data()[i]));
    if (!out) throw DataError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    check_magic(in, "FWTN", path);
    const std::uint32_t version = get_u32(in, path);
    if (version != kFormatVersion)
        throw VersionError("unsupported FWTN version " + std::to_string(version) + " in " + path);
    const std::uint32_t ndim = get_u32(in, path);
    if (ndim > 8) throw DataError("implausible tensor rank in " + path);
    std::vector<std::int64_t> shape(ndim);
    std::int64_t numel = 1;
    for (auto& d : shape) {
        d = static_cast<std::int64_t>(get_u32(in, path));
        if (d <= 0) throw DataError("bad dimension in " + path);
        numel *= d;
    }
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (auto& v : data) v = static_cast<double>(get_f32(in, path));
    check_eof(in, path);
    return Tensor(std::move(shape), std::move(data));
}

void save_labels(const std::string& path, std::int64_t h, std::int64_t w,
                 const std::vector<std::int32_t>& labels) {
    if (static_cast<std::int64_t>(labels.size()) != h * w)
        throw ShapeError("save_labels: size mismatch");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write("FWLB", 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(h));
    put_u32(out, static_cast<std::uint32_t>(w));
    for (std::int32_t v : labels) {
        if (v < 0 || v > 255) throw DataError("label index out of byte range");
        const unsigned char b = static_cast<unsigned char>(v);
        out.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!out) throw DataError("write failed: " + path);
}

std::vector<std::int32_t> load_labels(const std::string& path, std::int64_t* h_out,
                                      std::int64_t* w_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    check_magic(in, "FWLB", path);
    const std::uint32_t version = get_u32(in, path);
    if (version != kFormatVersion)
        throw VersionError("unsupported FWLB version " + std::to_string(version) + " in " + path);
    const std::int64_t h = static_cast<std::int64_t>(get_u32(in, path));
    const std::int64_t w = static_cast<std::int64_t>(get_u32(in, path));
    if (h <= 0 || w <= 0) throw DataError("bad label dimensions in " + path);
    std::vector<std::int32_t> labels(static_cast<std::size_t>(h * w));
    for (auto& v : labels) {
        unsigned char b;
        if (!in.read(reinterpret_cast<char*>(&b), 1))
            throw TruncatedFileError("truncated file: " + path);
        v = static_cast<std::int32_t>(b);
    }
    check_eof(in, path);
    if (h_out) *h_out = h;
    if (w_out) *w_out = w;
    return labels;
}

namespace {

void write_split(const std::string& dir, const std::vector<Sample>& samples) {
    fsys::create_directories(dir);
    char name[32];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::snprintf(name, sizeof(name), "%04zu", i);
        const Sample& s = samples[i];
        save_tensor(dir + "/" + name + ".fwtn", s.image);
        save_labels(dir + "/" + name + ".fwlb", s.image.dim(1), s.image.dim(2), s.label);
    }
}

std::vector<Sample> read_split(const std::string& dir, bool labeled) {
    std::vector<Sample> out;
    if (!fsys::exists(dir)) return out;
    std::vector<std::string> stems;
    for (const auto& e : fsys::directory_iterator(dir)) {
        if (e.path().extension() == ".fwtn") stems.push_back(e.path().stem().string());
    }
    std::sort(stems.begin(), stems.end());
    for (const auto& stem : stems) {
        Sample s;
        s.image = load_tensor(dir + "/" + stem + ".fwtn");
        if (s.image.rank() != 3) throw DataError("image tensor must be [3,H,W]: " + stem);
        std::int64_t h = 0, w = 0;
        s.label = load_labels(dir + "/" + stem + ".fwlb", &h, &w);
        if (h != s.image.dim(1) || w != s.image.dim(2))
            throw DataError("label/image size mismatch: " + stem);
        s.labeled = labeled;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

void write_dataset(const std::string& dir, const SplitResult& splits) {
    write_split(dir + "/train_labeled", splits.labeled);
    write_split(dir + "/train_unlabeled", splits.unlabeled);
    write_split(dir + "/test", splits.test);
}

LoadedDataset load_dataset(const std::string& dir) {
    LoadedDataset d;
    d.labeled = read_split(dir + "/train_labeled", true);
    d.unlabeled = read_split(dir + "/train_unlabeled", false);
    d.test = read_split(dir + "/test", true);
    if (d.labeled.empty() && d.unlabeled.empty() && d.test.empty())
        throw DataError("no dataset found under " + dir);
    return d;
}

}  // namespace fw
