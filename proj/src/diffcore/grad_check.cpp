#include "nsdesk/diffcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nsdesk {
namespace {

double evaluate(const LossBuilder& build, const std::vector<Tensor<double>>& inputs) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    vars.reserve(inputs.size());
    for (const Tensor<double>& t : inputs) {
        vars.push_back(g.input(t, false));
    }
    const Var<double> loss = build(g, vars);
    if (loss.value().size() != 1) {
        throw ShapeError("grad_check: loss of shape " + shape_str(loss.shape()) + " is not a scalar");
    }
    return loss.value()[0];
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build, const std::vector<Tensor<double>>& inputs,
                           double h, const std::vector<bool>& check) {
    if (!(h >= 1e-6 && h <= 1e-4)) {
        throw Error("grad_check: perturbation " + std::to_string(h) + " outside [1e-6, 1e-4]");
    }
    if (!check.empty() && check.size() != inputs.size()) {
        throw Error("grad_check: check mask length does not match input count");
    }
    const auto checked = [&](std::size_t i) { return check.empty() || check[i]; };

    Graph<double> g;
    std::vector<Var<double>> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        vars.push_back(g.input(inputs[i], checked(i)));
    }
    const Var<double> loss = build(g, vars);
    g.backward(loss);

    GradCheckReport report;
    report.max_rel_error.assign(inputs.size(), 0.0);
    std::vector<Tensor<double>> work = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!checked(i)) {
            continue;
        }
        const Tensor<double>& analytic = vars[i].grad();
        for (std::size_t k = 0; k < inputs[i].size(); ++k) {
            const double x0 = inputs[i][k];
            work[i][k] = x0 + h;
            const double up = evaluate(build, work);
            work[i][k] = x0 - h;
            const double down = evaluate(build, work);
            work[i][k] = x0;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("grad_check: non-finite loss at perturbed point (input " +
                                   std::to_string(i) + ", element " + std::to_string(k) + ")");
            }
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.empty() ? 0.0 : analytic[k];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            ++report.checked;
            report.max_rel_error[i] = std::max(report.max_rel_error[i], rel);
            if (rel > report.worst || report.checked == 1) {
                report.worst = std::max(report.worst, rel);
                report.worst_input = i;
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace nsdesk
