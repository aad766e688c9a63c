#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "nsdesk/diffcore/graph.hpp"

namespace nsdesk {

// Builds a scalar loss from graph inputs. Called once for the analytic pass
// and twice per perturbed scalar, so it must be a pure function of `inputs`.
using LossBuilder = std::function<Var<double>(Graph<double>&, std::span<const Var<double>> inputs)>;

struct GradCheckReport {
    std::vector<double> max_rel_error;  // per input
    double worst = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;  // scalars compared
};

// Compares reverse-mode gradients of `build` against central differences
// (L(x+h) - L(x-h)) / 2h for every scalar of every input flagged in
// `check` (all inputs when empty). Relative error is
// |a - n| / max(|a|, |n|, 1e-8). h must lie in [1e-6, 1e-4].
GradCheckReport grad_check(const LossBuilder& build, const std::vector<Tensor<double>>& inputs,
                           double h = 1e-5, const std::vector<bool>& check = {});

}  // namespace nsdesk
