#include "fw/optim.hpp"

#include <cmath>

namespace fw {

void Adam::step(NamedParams& params) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, p] : params) {
        if (!p.requires_grad()) continue;
        const double* g = p.grad();
        if (!g) continue;  // no gradient reached this buffer this step
        auto& ms = m[name];
        auto& vs = v[name];
        if (ms.size() != static_cast<std::size_t>(p.numel())) ms.assign(p.numel(), 0.0);
        if (vs.size() != static_cast<std::size_t>(p.numel())) vs.assign(p.numel(), 0.0);
        double* d = p.data();
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            ms[i] = beta1 * ms[i] + (1.0 - beta1) * g[i];
            vs[i] = beta2 * vs[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = ms[i] / bc1;
            const double vhat = vs[i] / bc2;
            d[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

void Adam::zero_grad(NamedParams& params) {
    for (auto& [name, p] : params) p.zero_grad();
}

void sgd_step(NamedParams& params, double lr) {
    for (auto& [name, p] : params) {
        if (!p.requires_grad()) continue;
        const double* g = p.grad();
        if (!g) continue;
        double* d = p.data();
        for (std::int64_t i = 0; i < p.numel(); ++i) d[i] -= lr * g[i];
    }
}

}  // namespace fw
