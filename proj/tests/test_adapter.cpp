#include <cmath>
#include <vector>

#include "doctest.h"
#include "fw/adapter.hpp"
#include "fw/spectral.hpp"
#include "oracles.hpp"

using namespace fw;

TEST_SUITE_BEGIN("adapter");

namespace {

AdapterParams fresh(std::int64_t c, std::int64_t r, std::uint64_t seed) {
    SplitMix64 rng(seed);
    return make_adapter_params(c, r, rng);
}

// Fill every parameter with small random values so no branch is degenerate.
void randomize(AdapterParams& p, std::uint64_t seed, double scale = 0.3) {
    SplitMix64 rng(seed);
    for (auto& [name, t] : p.named_tensors()) {
        Tensor tt = t;
        for (std::int64_t i = 0; i < tt.numel(); ++i) tt.data()[i] = rng.uniform(-scale, scale);
    }
}

std::int64_t enumerate_count(const AdapterParams& p) {
    std::int64_t n = 0;
    for (const auto& [name, t] : p.named_tensors()) n += t.numel();
    return n;
}

}  // namespace

TEST_CASE("frequency branches vanish at initialization") {
    SplitMix64 rng(70);
    AdapterParams p = fresh(3, 4, 71);
    Tensor x = oracle::random_tensor({2, 3, 8, 8}, rng);
    CHECK(oracle::max_abs(branch_lf(x, p)) == 0.0);
    CHECK(oracle::max_abs(branch_hf(x, p)) == 0.0);
}

TEST_CASE("identity kernel in the low branch transposes the input") {
    SplitMix64 rng(72);
    AdapterParams p = fresh(2, 4, 73);
    Tensor lfk = p.lf_kernel;
    for (std::int64_t c = 0; c < 2; ++c) lfk.data()[c * 121 + 5 * 11 + 5] = 1.0;
    Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng);
    Tensor y = branch_lf(x, p);
    CHECK(oracle::max_abs_diff(y, nchw_to_nhwc(x)) == 0.0);
}

TEST_CASE("high branch impulse kernel preserves an impulse map") {
    AdapterParams p = fresh(1, 4, 74);
    p.hf_kernel.data()[2 * 5 + 2] = 1.0;
    Tensor x = Tensor::zeros({1, 1, 5, 5});
    x.data()[2 * 5 + 3] = 1.0;
    Tensor y = branch_hf(x, p);
    CHECK(oracle::max_abs_diff(y, nchw_to_nhwc(x)) == 0.0);
}

TEST_CASE("frequency branches match the naive convolution oracle") {
    SplitMix64 rng(75);
    AdapterParams p = fresh(2, 4, 76);
    randomize(p, 77);
    Tensor x = oracle::random_tensor({1, 2, 16, 16}, rng);
    const auto ref_lf = oracle::naive_depthwise(x, p.lf_kernel);
    const auto ref_hf = oracle::naive_depthwise(x, p.hf_kernel);
    Tensor lf = nhwc_to_nchw(branch_lf(x, p));
    Tensor hf = nhwc_to_nchw(branch_hf(x, p));
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        CHECK(std::abs(lf.data()[i] - ref_lf[i]) < 1e-6);
        CHECK(std::abs(hf.data()[i] - ref_hf[i]) < 1e-6);
    }
}

TEST_CASE("spatial branch is zero at init and positionwise") {
    SplitMix64 rng(78);
    AdapterParams p = fresh(4, 4, 79);
    Tensor x = oracle::random_tensor({1, 3, 3, 4}, rng);
    CHECK(oracle::max_abs(branch_spatial(x, p)) == 0.0);

    randomize(p, 80);
    Tensor y = branch_spatial(x, p);
    // spatial permutation equivariance: swap two pixel positions
    Tensor xp = x.clone();
    for (std::int64_t c = 0; c < 4; ++c)
        std::swap(xp.data()[(0 * 3 + 1) * 4 + c], xp.data()[(2 * 3 + 2) * 4 + c]);
    Tensor yp = branch_spatial(xp, p);
    for (std::int64_t c = 0; c < 4; ++c) {
        CHECK(yp.data()[(0 * 3 + 1) * 4 + c] == doctest::Approx(y.data()[(2 * 3 + 2) * 4 + c]));
        CHECK(yp.data()[(2 * 3 + 2) * 4 + c] == doctest::Approx(y.data()[(0 * 3 + 1) * 4 + c]));
    }
}

TEST_CASE("spatial branch gradient check") {
    SplitMix64 rng(81);
    AdapterParams p = fresh(4, 4, 82);
    randomize(p, 83);
    Tensor x = oracle::random_tensor({1, 4, 4, 4}, rng, -1.0, 1.0, true);
    CHECK(check_gradients([&] { return sum(branch_spatial(x, p)); }, {x}) < 1e-3);
}

TEST_CASE("router starts uniform") {
    SplitMix64 rng(84);
    AdapterParams p = fresh(5, 4, 85);
    Tensor w = route(oracle::random_tensor({3, 4, 4, 5}, rng), p);
    REQUIRE(w.shape() == std::vector<std::int64_t>{3, 3});
    for (std::int64_t i = 0; i < w.numel(); ++i)
        CHECK(w.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("identical samples route identically") {
    SplitMix64 rng(86);
    AdapterParams p = fresh(4, 4, 87);
    randomize(p, 88);
    Tensor one = oracle::random_tensor({1, 5, 5, 4}, rng);
    std::vector<double> two(one.data(), one.data() + one.numel());
    two.insert(two.end(), one.data(), one.data() + one.numel());
    Tensor w = route(Tensor({2, 5, 5, 4}, std::move(two)), p);
    for (std::int64_t k = 0; k < 3; ++k)
        CHECK(w.data()[k] == doctest::Approx(w.data()[3 + k]).epsilon(1e-12));
}

TEST_CASE("fusion weights live on the simplex for arbitrary parameters") {
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        SplitMix64 rng(900 + trial);
        AdapterParams p = fresh(3, 2, 1000 + trial);
        randomize(p, 2000 + trial, 2.0);
        Tensor x = oracle::random_tensor({2, 3, 3, 3}, rng, -3.0, 3.0);
        Tensor w = route(x, p);
        for (std::int64_t b = 0; b < 2; ++b) {
            double s = 0.0;
            for (std::int64_t k = 0; k < 3; ++k) {
                const double v = w.data()[b * 3 + k];
                CHECK(v > 0.0);
                CHECK(v < 1.0);
                s += v;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("adapter is an exact identity at initialization") {
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        SplitMix64 rng(300 + trial);
        AdapterParams p = fresh(4, 4, 400 + trial);
        Tensor x = oracle::random_tensor({2, 8, 8, 4}, rng, -2.0, 2.0);
        Tensor y = adapter_forward(x, p, 2.0);
        CHECK(oracle::max_abs_diff(x, y) < 1e-9);
    }
}

TEST_CASE("router bias forced to the spatial branch recovers X + F_s") {
    SplitMix64 rng(89);
    AdapterParams p = fresh(4, 4, 90);
    // spatial branch made non-trivial, conv kernels stay zero
    SplitMix64 prng(91);
    for (Tensor t : {p.smlp_w1, p.smlp_b1, p.smlp_w2, p.smlp_b2})
        for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = prng.uniform(-0.5, 0.5);
    p.router_b2.data()[0] = 60.0;  // r_s -> 1 up to ~1e-26
    Tensor x = oracle::random_tensor({1, 6, 6, 4}, rng);
    Tensor expect = add(x, branch_spatial(x, p));
    Tensor y = adapter_forward(x, p, 1.5);
    CHECK(oracle::max_abs_diff(y, expect) < 1e-9);
}

TEST_CASE("full adapter forward passes gradient checks for every parameter") {
    SplitMix64 rng(92);
    AdapterParams p = fresh(4, 4, 93);
    randomize(p, 94);
    Tensor x = oracle::random_tensor({1, 8, 8, 4}, rng, -1.0, 1.0, true);
    Tensor probe = oracle::random_tensor({1, 8, 8, 4}, rng);
    std::vector<Tensor> params = {x};
    for (auto& [name, t] : p.named_tensors()) params.push_back(t);
    const double err =
        check_gradients([&] { return sum(mul(adapter_forward(x, p, 2.0), probe)); }, params);
    CHECK(err < 1e-3);
}

TEST_CASE("adapter forward + cross-entropy gradient check on 1x8x8x4") {
    SplitMix64 rng(95);
    AdapterParams p = fresh(4, 4, 96);
    randomize(p, 97);
    Tensor x = oracle::random_tensor({1, 8, 8, 4}, rng, -1.0, 1.0, true);
    ClassMap targets;
    targets.shape = {1, 8, 8};
    SplitMix64 trng(98);
    for (int i = 0; i < 64; ++i)
        targets.values.push_back(static_cast<std::int32_t>(trng.below(4)));
    std::vector<Tensor> params = {x};
    for (auto& [name, t] : p.named_tensors()) params.push_back(t);
    const double err = check_gradients(
        [&] {
            // channels double as class logits on this probe
            return cross_entropy(nhwc_to_nchw(adapter_forward(x, p, 2.0)), targets);
        },
        params);
    CHECK(err < 1e-3);
}

TEST_CASE("output shape is preserved") {
    SplitMix64 rng(99);
    AdapterParams p = fresh(3, 4, 100);
    randomize(p, 101);
    for (auto shape : {std::vector<std::int64_t>{1, 4, 4, 3}, {2, 8, 6, 3}, {1, 16, 16, 3}}) {
        Tensor x = oracle::random_tensor(shape, rng);
        CHECK(adapter_forward(x, p, 2.0).shape() == shape);
    }
}

TEST_CASE("residual dominance bound holds element-wise") {
    SplitMix64 rng(102);
    AdapterParams p = fresh(3, 4, 103);
    randomize(p, 104);
    Tensor x = oracle::random_tensor({2, 8, 8, 3}, rng);
    Tensor y = adapter_forward(x, p, 2.0);

    SpectralPair bands = decompose(nhwc_to_nchw(x), 2.0);
    Tensor f_lf = branch_lf(bands.x_lf, p);
    Tensor f_hf = branch_hf(bands.x_hf, p);
    Tensor f_s = branch_spatial(x, p);
    Tensor w = route(x, p);

    const std::int64_t rest = x.numel() / x.dim(0);
    for (std::int64_t b = 0; b < x.dim(0); ++b) {
        const double rs = w.data()[b * 3 + 0];
        const double rlf = w.data()[b * 3 + 1];
        const double rhf = w.data()[b * 3 + 2];
        for (std::int64_t j = 0; j < rest; ++j) {
            const std::int64_t i = b * rest + j;
            const double lhs = std::abs(y.data()[i] - x.data()[i]);
            const double rhs = rs * std::abs(f_s.data()[i]) + rlf * std::abs(f_lf.data()[i]) +
                               rhf * std::abs(f_hf.data()[i]);
            CHECK(lhs <= rhs + 1e-12);
        }
    }
}

TEST_CASE("parameter count: closed form equals enumeration") {
    for (auto [c, r] : {std::pair<std::int64_t, std::int64_t>{8, 4}, {3, 4}, {32, 16}, {5, 2}}) {
        AdapterParams p = fresh(c, r, 500 + static_cast<std::uint64_t>(c));
        CHECK(adapter_param_count(c, r) == enumerate_count(p));
    }
    // C=8, r=4: kernels 968 + 200, smlp 8*2+2+2*8+8 = 42, router 8*2+2+2*3+3 = 27
    CHECK(adapter_param_count(8, 4) == 968 + 200 + 42 + 27);
}

TEST_CASE("channel mismatch raises a shape error") {
    SplitMix64 rng(105);
    AdapterParams p = fresh(4, 4, 106);
    CHECK_THROWS_AS(branch_lf(oracle::random_tensor({1, 3, 4, 4}, rng), p), ShapeError);
    CHECK_THROWS_AS(adapter_forward(oracle::random_tensor({1, 4, 4, 3}, rng), p, 1.0),
                    ShapeError);
}

TEST_SUITE_END();
