#include "fw/spectral.hpp"

#include <algorithm>
#include <cmath>

namespace fw {

namespace {

// Mask in unshifted spectrum coordinates: value at frequency (u, v) equals the
// centered mask at ((u + h/2) mod h, (v + w/2) mod w). Masking the raw DFT
// output with this is identical to shift -> mask -> unshift.
std::vector<std::uint8_t> unshift_mask(const std::vector<std::uint8_t>& centered,
                                       std::int64_t h, std::int64_t w) {
    const std::int64_t ch = h / 2, cw = w / 2;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(h * w));
    for (std::int64_t u = 0; u < h; ++u) {
        const std::int64_t i = (u + ch) % h;
        for (std::int64_t v = 0; v < w; ++v) {
            const std::int64_t j = (v + cw) % w;
            out[u * w + v] = centered[i * w + j];
        }
    }
    return out;
}

// The raw linear filter on plain buffers; used by both forward and backward.
void apply_band(const double* in, double* out, std::int64_t slices, std::int64_t h,
                std::int64_t w, const std::vector<std::uint8_t>& mask_unshifted,
                double* imag_residue) {
    Tensor x({slices, 1, h, w},
             std::vector<double>(in, in + slices * h * w), false);
    ComplexTensor xf = dft2(x);
    for (std::int64_t s = 0; s < slices; ++s) {
        double* re = xf.re.data() + s * h * w;
        double* im = xf.im.data() + s * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) {
            if (!mask_unshifted[i]) {
                re[i] = 0.0;
                im[i] = 0.0;
            }
        }
    }
    Tensor y = idft2(xf, imag_residue);
    std::copy(y.data(), y.data() + y.numel(), out);
}

}  // namespace

std::int64_t RadialMaskPair::low_count() const {
    std::int64_t n = 0;
    for (auto v : lf) n += v;
    return n;
}

RadialMaskPair make_radial_masks(std::int64_t h, std::int64_t w, double cutoff) {
    if (h <= 0 || w <= 0) throw ConfigError("make_radial_masks: nonpositive dimensions");
    if (!(cutoff > 0.0)) throw ConfigError("make_radial_masks: cutoff must be positive");
    RadialMaskPair m;
    m.height = h;
    m.width = w;
    m.cutoff = cutoff;
    m.lf.resize(static_cast<std::size_t>(h * w));
    m.hf.resize(static_cast<std::size_t>(h * w));
    const std::int64_t ch = h / 2, cw = w / 2;
    for (std::int64_t i = 0; i < h; ++i) {
        for (std::int64_t j = 0; j < w; ++j) {
            const double dy = static_cast<double>(i - ch);
            const double dx = static_cast<double>(j - cw);
            const double r = std::sqrt(dy * dy + dx * dx);
            const bool low = r < cutoff;  // ties at r == cutoff go high
            m.lf[i * w + j] = low ? 1 : 0;
            m.hf[i * w + j] = low ? 0 : 1;
        }
    }
    return m;
}

Tensor band_filter(const Tensor& x, const RadialMaskPair& masks, Band band,
                   double* imag_residue) {
    if (x.rank() != 4) throw ShapeError("band_filter: input must be [B,C,H,W]");
    const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h != masks.height || w != masks.width)
        throw ShapeError("band_filter: mask size mismatch");

    auto mask = std::make_shared<std::vector<std::uint8_t>>(
        unshift_mask(band == Band::low ? masks.lf : masks.hf, h, w));

    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    double residue = 0.0;
    apply_band(x.data(), out.data(), b * c, h, w, *mask, &residue);
    if (imag_residue) *imag_residue = residue;
    if (residue >= 1e-5)
        throw NumericError("band_filter: imaginary residue above tolerance");

    Tensor result(x.shape(), std::move(out), false);
    if (x.requires_grad()) {
        auto impl = result.impl();
        impl->requires_grad = true;
        impl->parents.push_back(x.impl());
        impl->backward_fn = [x, mask, b, c, h, w](detail::TensorImpl& self) {
            // Self-adjoint in the real sense: backward = same band filter.
            std::vector<double> g(self.grad.size());
            apply_band(self.grad.data(), g.data(), b * c, h, w, *mask, nullptr);
            x.impl()->accumulate(g.data(), g.size());
        };
    }
    return result;
}

SpectralPair decompose(const Tensor& x, double cutoff) {
    if (x.rank() != 4) throw ShapeError("decompose: input must be [B,C,H,W]");
    assert_finite(x, "decompose input");
    SpectralPair p;
    p.masks = make_radial_masks(x.dim(2), x.dim(3), cutoff);
    p.x_lf = band_filter(x, p.masks, Band::low);
    p.x_hf = band_filter(x, p.masks, Band::high);
    return p;
}

BandEnergy band_energy(const Tensor& x, const RadialMaskPair& masks) {
    if (x.rank() != 4) throw ShapeError("band_energy: input must be [B,C,H,W]");
    const std::int64_t bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h != masks.height || w != masks.width)
        throw ShapeError("band_energy: mask size mismatch");
    const auto mask = unshift_mask(masks.lf, h, w);
    ComplexTensor xf = dft2(x);
    BandEnergy e;
    for (std::int64_t s = 0; s < bc; ++s) {
        const double* re = xf.re.data() + s * h * w;
        const double* im = xf.im.data() + s * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) {
            const double p = re[i] * re[i] + im[i] * im[i];
            if (mask[i])
                e.low += p;
            else
                e.high += p;
        }
    }
    return e;
}

}  // namespace fw
