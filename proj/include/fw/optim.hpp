#pragma once

#include <map>
#include <string>
#include <vector>

#include "fw/tensor.hpp"

namespace fw {

// Named parameter collection. Trainability lives on the tensors themselves
// (requires_grad); optimizers only ever touch buffers that require grad.
using NamedParams = std::map<std::string, Tensor>;

struct Adam {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    std::int64_t t = 0;

    void step(NamedParams& params);
    void zero_grad(NamedParams& params);
};

// Plain SGD step, mostly used by tests to probe freezing behavior.
void sgd_step(NamedParams& params, double lr);

}  // namespace fw
