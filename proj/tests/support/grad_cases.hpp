#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsdesk/diffcore/grad_check.hpp"

namespace nsdesk::testing {

struct GradCase {
    std::string name;
    LossBuilder build;
    std::vector<Tensor<double>> inputs;
};

// One randomized case per differentiable primitive, each reduced to a scalar
// through a fixed random weighting so no gradient vanishes by symmetry.
std::vector<GradCase> primitive_grad_cases(std::uint64_t seed);

}  // namespace nsdesk::testing
