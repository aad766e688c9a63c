#include "nsdesk/symlosses/symlosses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nsdesk/common/error.hpp"
#include "nsdesk/diffcore/ops.hpp"

namespace nsdesk::sym {

namespace {

void check_probability(double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw NumericError(std::string(what) + ": probability " + std::to_string(p) + " outside [0,1]");
    }
}

void check_targets(const Shape& p_shape, const Tensor<double>& q) {
    if (p_shape.size() != 2 || q.shape() != p_shape) {
        throw ShapeError("semantic_loss: probabilities " + shape_str(p_shape) + " vs targets " +
                         shape_str(q.shape()));
    }
    const std::size_t n = q.dim(0), c = q.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            s += q[i * c + k];
        }
        if (!(std::abs(s - 1.0) <= 1e-6)) {
            throw NumericError("semantic_loss: target row " + std::to_string(i) + " sums to " + std::to_string(s));
        }
    }
}

// sum_i q_i log q_i with 0 log 0 = 0, averaged over rows.
double negative_target_entropy(const Tensor<double>& q) {
    double s = 0.0;
    for (double v : q.data()) {
        if (v > 0.0) {
            s += v * std::log(v);
        }
    }
    return s / static_cast<double>(q.dim(0));
}

template <typename T>
Var<T> filled_like(Var<T> x, double v) {
    return x.graph->constant(Tensor<T>(x.shape(), static_cast<T>(v)));
}

template <typename T>
std::vector<double> values_of(Var<T> x) {
    const auto d = x.value().data();
    return {d.begin(), d.end()};
}

std::vector<std::vector<std::size_t>> expected_values(const rules::RuleBase& rb, std::span<const std::size_t> labels) {
    std::vector<std::vector<std::size_t>> e(rb.num_attributes(), std::vector<std::size_t>(labels.size()));
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] >= rb.num_classes()) {
            throw ConfigError("label " + std::to_string(labels[n]) + " out of range for " +
                              std::to_string(rb.num_classes()) + " classes");
        }
        for (std::size_t j = 0; j < rb.num_attributes(); ++j) {
            e[j][n] = rb.expected_value(labels[n], j);
        }
    }
    return e;
}

template <typename T>
Tensor<T> soft_targets(const rules::RuleBase& rb, std::span<const std::size_t> labels) {
    const std::size_t c = rb.num_classes();
    Tensor<T> q(Shape{labels.size(), c});
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const auto row = rb.soft_target(labels[n], c);
        for (std::size_t k = 0; k < c; ++k) {
            q[n * c + k] = static_cast<T>(row[k]);
        }
    }
    return q;
}

template <typename T>
void check_outputs(const net::ModelOutputs<T>& out, std::span<const std::size_t> labels) {
    const Shape& s = out.logits.shape();
    if (s.size() != 2 || s[0] != labels.size()) {
        throw ShapeError("loss: logits " + shape_str(s) + " for " + std::to_string(labels.size()) + " labels");
    }
    for (std::size_t y : labels) {
        if (y >= s[1]) {
            throw ConfigError("label " + std::to_string(y) + " out of range for " + std::to_string(s[1]) + " classes");
        }
    }
}

}  // namespace

void LossWeights::validate(std::size_t num_attributes) const {
    const auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!ok(lambda_semantic) || !ok(lambda_logic_base)) {
        throw ConfigError("loss weights: lambdas must be finite and nonnegative");
    }
    if (!w.empty() && w.size() != num_attributes) {
        throw ConfigError("loss weights: " + std::to_string(w.size()) + " component weights for " +
                          std::to_string(num_attributes) + " attributes");
    }
    if (!std::all_of(w.begin(), w.end(), ok)) {
        throw ConfigError("loss weights: component weights must be finite and nonnegative");
    }
    if (!(eps_stab > 0.0 && eps_stab <= 1e-4)) {
        throw ConfigError("loss weights: eps_stab must lie in (0, 1e-4]");
    }
}

std::vector<double> LossWeights::component_weights(std::size_t num_attributes) const {
    validate(num_attributes);
    return w.empty() ? std::vector<double>(num_attributes, 1.0) : w;
}

double semantic_loss(const Tensor<double>& p, const Tensor<double>& q, double eps) {
    check_targets(p.shape(), q);
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] > 0.0) {
            s += q[i] * (std::log(q[i]) - std::log(std::max(p[i], eps)));
        }
    }
    return s / static_cast<double>(q.dim(0));
}

double implication_truth(double p_a, double p_b, double eps) {
    check_probability(p_a, "implication_truth");
    check_probability(p_b, "implication_truth");
    if (p_a > p_b) {
        return std::clamp(p_b / (p_a + eps), 0.0, 1.0);
    }
    return 1.0;
}

double logic_loss(double truth, double eps) {
    check_probability(truth, "logic_loss");
    return std::max(0.0, -std::log(truth + eps));
}

double joint_truth(std::span<const double> p_attr, std::span<const double> w, double p_cls, double eps) {
    if (w.size() != p_attr.size()) {
        throw ConfigError("joint_truth: " + std::to_string(w.size()) + " weights for " +
                          std::to_string(p_attr.size()) + " attributes");
    }
    check_probability(p_cls, "joint_truth");
    double prod = 1.0;
    for (std::size_t j = 0; j < p_attr.size(); ++j) {
        check_probability(p_attr[j], "joint_truth");
        prod *= std::pow(std::max(p_attr[j], eps), w[j]);
    }
    return std::min(prod / (p_cls + eps), 1.0);
}

std::vector<double> update_component_weights(std::span<const double> accuracy) {
    std::vector<double> w(accuracy.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] = 1.0 - accuracy[j] + kWeightFloor;
    }
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    for (double& v : w) {
        v /= mean;
    }
    return w;
}

double adaptive_lambda(double ce_mean, double accuracy, double lambda_base, std::size_t num_classes) {
    if (num_classes < 2) {
        throw ConfigError("adaptive_lambda: at least two classes required");
    }
    const double pressure = 0.5 + (1.0 - accuracy) + std::min(ce_mean / std::log(static_cast<double>(num_classes)), 1.0);
    return lambda_base * std::clamp(pressure, 0.5, 2.5);
}

template <typename T>
Var<T> semantic_loss(Var<T> p, const Tensor<T>& q, double eps) {
    const Tensor<double> qd = q.template cast<double>();
    check_targets(p.shape(), qd);
    const double n = static_cast<double>(q.dim(0));
    Graph<T>& g = *p.graph;
    const Var<T> log_p = ops::log(ops::clamp(p, static_cast<T>(eps), T(2)));
    const Var<T> cross = ops::sum(ops::mul(g.constant(q), log_p));
    return ops::add_scalar(ops::scale(cross, static_cast<T>(-1.0 / n)), static_cast<T>(negative_target_entropy(qd)));
}

template <typename T>
Var<T> implication_truth(Var<T> p_a, Var<T> p_b, double eps) {
    if (p_a.shape() != p_b.shape()) {
        throw ShapeError("implication_truth: " + shape_str(p_a.shape()) + " vs " + shape_str(p_b.shape()));
    }
    std::vector<bool> fires(p_a.value().size());
    for (std::size_t i = 0; i < fires.size(); ++i) {
        check_probability(p_a.value()[i], "implication_truth");
        check_probability(p_b.value()[i], "implication_truth");
        fires[i] = p_a.value()[i] > p_b.value()[i];
    }
    // Where the premise fires the ratio already lies in [0, 1).
    const Var<T> ratio = ops::mul(p_b, ops::pow(ops::add_scalar(p_a, static_cast<T>(eps)), T(-1)));
    return ops::where(fires, ratio, filled_like(p_a, 1.0));
}

template <typename T>
Var<T> logic_loss(Var<T> truth, double eps) {
    const Var<T> neg_log = ops::scale(ops::log(ops::add_scalar(truth, static_cast<T>(eps))), T(-1));
    std::vector<bool> positive(neg_log.value().size());
    for (std::size_t i = 0; i < positive.size(); ++i) {
        positive[i] = neg_log.value()[i] > 0;
    }
    return ops::where(positive, neg_log, filled_like(truth, 0.0));
}

template <typename T>
Var<T> joint_truth(std::span<const Var<T>> attr_probs, const std::vector<std::vector<std::size_t>>& expected,
                   std::span<const double> w, Var<T> p_cls, double eps) {
    if (w.size() != attr_probs.size() || expected.size() != attr_probs.size()) {
        throw ConfigError("joint_truth: " + std::to_string(w.size()) + " weights and " +
                          std::to_string(expected.size()) + " label columns for " +
                          std::to_string(attr_probs.size()) + " attributes");
    }
    if (attr_probs.empty()) {
        throw ConfigError("joint_truth: no attributes");
    }
    Var<T> log_prod;
    for (std::size_t j = 0; j < attr_probs.size(); ++j) {
        const Var<T> pj = ops::pick(attr_probs[j], std::span<const std::size_t>(expected[j]));
        const Var<T> term = ops::scale(ops::log(ops::clamp(pj, static_cast<T>(eps), T(2))), static_cast<T>(w[j]));
        log_prod = j == 0 ? term : ops::add(log_prod, term);
    }
    if (log_prod.shape() != p_cls.shape()) {
        throw ShapeError("joint_truth: attribute terms " + shape_str(log_prod.shape()) + " vs class probabilities " +
                         shape_str(p_cls.shape()));
    }
    const Var<T> ratio = ops::mul(ops::exp(log_prod), ops::pow(ops::add_scalar(p_cls, static_cast<T>(eps)), T(-1)));
    std::vector<bool> below(ratio.value().size());
    for (std::size_t i = 0; i < below.size(); ++i) {
        below[i] = ratio.value()[i] < 1;
    }
    return ops::where(below, ratio, filled_like(ratio, 1.0));
}

template <typename T>
Var<T> joint_logic_loss(const net::ModelOutputs<T>& out, std::span<const std::size_t> labels,
                        const rules::RuleBase& rb, const LossWeights& weights) {
    check_outputs(out, labels);
    if (out.attr_logits.size() != rb.num_attributes()) {
        throw ShapeError("joint_logic_loss: " + std::to_string(out.attr_logits.size()) + " attribute heads for " +
                         std::to_string(rb.num_attributes()) + " rule attributes");
    }
    std::vector<Var<T>> probs;
    for (const auto& a : out.attr_logits) {
        probs.push_back(ops::softmax(a));
    }
    const auto w = weights.component_weights(rb.num_attributes());
    const Var<T> p_cls = ops::pick(ops::softmax(out.logits), labels);
    const Var<T> t = joint_truth<T>(probs, expected_values(rb, labels), w, p_cls, weights.eps_stab);
    return ops::mean(logic_loss(t, weights.eps_stab));
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> labels) {
    const Var<T> picked = ops::pick(ops::log_softmax(logits), labels);
    return ops::scale(ops::mean(picked), T(-1));
}

template <typename T>
BatchStats batch_stats(const net::ModelOutputs<T>& out, std::span<const std::size_t> labels) {
    check_outputs(out, labels);
    const Tensor<T>& z = out.logits.value();
    const std::size_t n = z.dim(0), c = z.dim(1);
    BatchStats s;
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = z.ptr() + i * c;
        const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + c) - row);
        double m = row[0];
        for (std::size_t k = 1; k < c; ++k) {
            m = std::max(m, static_cast<double>(row[k]));
        }
        double lse = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            lse += std::exp(static_cast<double>(row[k]) - m);
        }
        s.ce_mean += m + std::log(lse) - static_cast<double>(row[labels[i]]);
        s.accuracy += arg == labels[i] ? 1.0 : 0.0;
    }
    s.ce_mean /= static_cast<double>(n);
    s.accuracy /= static_cast<double>(n);
    return s;
}

template <typename T>
LossBundle<T> objective(const net::ModelOutputs<T>& out, std::span<const std::size_t> labels,
                        const rules::RuleBase* rb, const LossWeights& weights, double lambda_logic,
                        bool symbolic) {
    check_outputs(out, labels);
    if (symbolic && rb == nullptr) {
        throw ConfigError("symbolic loss terms require a rule base");
    }
    LossBundle<T> b;
    b.samples = labels.size();
    const Var<T> picked = ops::pick(ops::log_softmax(out.logits), labels);
    for (T v : picked.value().data()) {
        b.ce_per_sample.push_back(-static_cast<double>(v));
    }
    const Var<T> ce = ops::scale(ops::mean(picked), T(-1));
    b.ce = ce.value().item();
    b.total_var = ce;

    if (rb != nullptr) {
        if (out.attr_logits.size() != rb->num_attributes()) {
            throw ShapeError("loss: " + std::to_string(out.attr_logits.size()) + " attribute heads for " +
                             std::to_string(rb->num_attributes()) + " rule attributes");
        }
        std::vector<Var<T>> probs;
        for (const auto& a : out.attr_logits) {
            probs.push_back(ops::softmax(a));
        }
        const Var<T> p_all = ops::softmax(out.logits);
        const Var<T> p_cls = ops::pick(p_all, labels);
        const auto w = weights.component_weights(rb->num_attributes());
        const Var<T> t = joint_truth<T>(probs, expected_values(*rb, labels), w, p_cls, weights.eps_stab);
        b.t_joint_per_sample = values_of(t);
        b.mean_t_joint = std::accumulate(b.t_joint_per_sample.begin(), b.t_joint_per_sample.end(), 0.0) /
                         static_cast<double>(b.samples);
        if (symbolic) {
            const Var<T> joint = ops::mean(logic_loss(t, weights.eps_stab));
            const Var<T> sem = semantic_loss(p_all, soft_targets<T>(*rb, labels), weights.eps_stab);
            b.joint = joint.value().item();
            b.semantic = sem.value().item();
            b.lambda_logic = lambda_logic;
            b.total_var = ops::add(ops::add(ce, ops::scale(joint, static_cast<T>(lambda_logic))),
                                   ops::scale(sem, static_cast<T>(weights.lambda_semantic)));
        }
    }
    b.total = b.total_var.value().item();
    return b;
}

template <typename T>
LossBundle<T> total_loss(const net::ModelOutputs<T>* clean, const net::ModelOutputs<T>* adv,
                         std::span<const std::size_t> labels, const rules::RuleBase* rb,
                         const LossWeights& weights, bool symbolic) {
    if (clean == nullptr && adv == nullptr) {
        throw ConfigError("total_loss: neither a clean nor an adversarial batch");
    }
    double lambda = 0.0;
    if (symbolic) {
        const BatchStats s = batch_stats(clean != nullptr ? *clean : *adv, labels);
        lambda = adaptive_lambda(s.ce_mean, s.accuracy, weights.lambda_logic_base, clean != nullptr
                                     ? clean->logits.shape()[1] : adv->logits.shape()[1]);
    }
    if (clean == nullptr || adv == nullptr) {
        return objective(clean != nullptr ? *clean : *adv, labels, rb, weights, lambda, symbolic);
    }
    LossBundle<T> a = objective(*clean, labels, rb, weights, lambda, symbolic);
    LossBundle<T> b = objective(*adv, labels, rb, weights, lambda, symbolic);
    LossBundle<T> s;
    s.total_var = ops::add(a.total_var, b.total_var);
    s.ce = a.ce + b.ce;
    s.semantic = a.semantic + b.semantic;
    s.joint = a.joint + b.joint;
    s.total = s.total_var.value().item();
    s.lambda_logic = lambda;
    s.samples = a.samples + b.samples;
    s.ce_per_sample = std::move(a.ce_per_sample);
    s.ce_per_sample.insert(s.ce_per_sample.end(), b.ce_per_sample.begin(), b.ce_per_sample.end());
    s.t_joint_per_sample = std::move(a.t_joint_per_sample);
    s.t_joint_per_sample.insert(s.t_joint_per_sample.end(), b.t_joint_per_sample.begin(), b.t_joint_per_sample.end());
    if (!s.t_joint_per_sample.empty()) {
        s.mean_t_joint = std::accumulate(s.t_joint_per_sample.begin(), s.t_joint_per_sample.end(), 0.0) /
                         static_cast<double>(s.t_joint_per_sample.size());
    }
    return s;
}

#define NSDESK_SYM_INSTANTIATE(T)                                                                                  \
    template Var<T> semantic_loss(Var<T>, const Tensor<T>&, double);                                               \
    template Var<T> implication_truth(Var<T>, Var<T>, double);                                                     \
    template Var<T> logic_loss(Var<T>, double);                                                                    \
    template Var<T> joint_truth(std::span<const Var<T>>, const std::vector<std::vector<std::size_t>>&,            \
                                std::span<const double>, Var<T>, double);                                          \
    template Var<T> joint_logic_loss(const net::ModelOutputs<T>&, std::span<const std::size_t>,                    \
                                     const rules::RuleBase&, const LossWeights&);                                  \
    template Var<T> cross_entropy(Var<T>, std::span<const std::size_t>);                                           \
    template BatchStats batch_stats(const net::ModelOutputs<T>&, std::span<const std::size_t>);                    \
    template LossBundle<T> objective(const net::ModelOutputs<T>&, std::span<const std::size_t>,                    \
                                     const rules::RuleBase*, const LossWeights&, double, bool);                    \
    template LossBundle<T> total_loss(const net::ModelOutputs<T>*, const net::ModelOutputs<T>*,                    \
                                      std::span<const std::size_t>, const rules::RuleBase*, const LossWeights&, bool);

NSDESK_SYM_INSTANTIATE(float)
NSDESK_SYM_INSTANTIATE(double)

}  // namespace nsdesk::sym
