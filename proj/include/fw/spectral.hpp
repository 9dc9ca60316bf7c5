#pragma once

#include <cstdint>
#include <vector>

#include "fw/tensor.hpp"

namespace fw {

// Complementary radial binary masks over the centered (shifted) spectrum.
// lf[i*w+j] = 1 where the distance from (h/2, w/2) is strictly below the
// cutoff; hf is the complement. Centrosymmetric by construction, so masked
// spectra of real signals stay conjugate-symmetric.
struct RadialMaskPair {
    std::int64_t height = 0;
    std::int64_t width = 0;
    double cutoff = 0.0;
    std::vector<std::uint8_t> lf;
    std::vector<std::uint8_t> hf;

    std::int64_t low_count() const;
};

RadialMaskPair make_radial_masks(std::int64_t h, std::int64_t w, double cutoff);

// Low- and high-frequency spatial reconstructions of one feature map.
struct SpectralPair {
    Tensor x_lf;
    Tensor x_hf;
    RadialMaskPair masks;
};

enum class Band { low, high };

// Differentiable band selection: IDFT(mask .* DFT(x)) per channel, real part.
// The filter is linear and self-adjoint, so its backward pass applies the same
// filter to the upstream gradient. Masks are constants, never trained.
Tensor band_filter(const Tensor& x, const RadialMaskPair& masks, Band band,
                   double* imag_residue = nullptr);

// Splits x into complementary bands; x_lf + x_hf == x within roundoff.
SpectralPair decompose(const Tensor& x, double cutoff);

// Spectrum energy split for reporting: {low, high} as sums of |X|^2 over the
// masked coefficient sets (disjoint, so they add up to the total).
struct BandEnergy {
    double low = 0.0;
    double high = 0.0;

    double total() const { return low + high; }
};

BandEnergy band_energy(const Tensor& x, const RadialMaskPair& masks);

}  // namespace fw
