#pragma once

// Symbolic supervision: semantic KL against rule-derived soft targets, soft
// implication truth, the weighted joint rule loss, the adaptive weights and
// the combined objective. Scalar functions are the double-precision
// reference; the graph functions are their differentiable counterparts.

#include <cstddef>
#include <span>
#include <vector>

#include "nsdesk/diffcore/graph.hpp"
#include "nsdesk/netcore/model.hpp"
#include "nsdesk/rulebase/rulebase.hpp"

namespace nsdesk::sym {

inline constexpr double kDefaultLambdaSemantic = 0.3;
inline constexpr double kDefaultLambdaLogic = 0.5;
inline constexpr double kDefaultEpsStab = 1e-8;
inline constexpr double kWeightFloor = 0.05;

struct LossWeights {
    double lambda_semantic = kDefaultLambdaSemantic;
    double lambda_logic_base = kDefaultLambdaLogic;
    std::vector<double> w;  // per attribute; empty means all ones
    double eps_stab = kDefaultEpsStab;

    // Throws ConfigError unless weights are finite and nonnegative, w has
    // num_attributes entries (or is empty) and eps_stab lies in (0, 1e-4].
    void validate(std::size_t num_attributes) const;
    std::vector<double> component_weights(std::size_t num_attributes) const;
};

// ---- scalar reference -----------------------------------------------------

// Batch mean of sum_i q_i log(q_i / max(p_i, eps)) with 0 log 0 = 0. Rows of
// q must sum to 1 within 1e-6.
double semantic_loss(const Tensor<double>& p, const Tensor<double>& q, double eps = kDefaultEpsStab);

// p_B / (p_A + eps) when p_A > p_B, else 1; clamped to [0, 1].
double implication_truth(double p_a, double p_b, double eps = kDefaultEpsStab);

// max(0, -log(T + eps)).
double logic_loss(double truth, double eps = kDefaultEpsStab);

// min(prod_j max(p_j, eps)^w_j / (p_cls + eps), 1).
double joint_truth(std::span<const double> p_attr, std::span<const double> w, double p_cls,
                   double eps = kDefaultEpsStab);

// w_j = 1 - acc_j + 0.05, rescaled to mean 1.
std::vector<double> update_component_weights(std::span<const double> accuracy);

// lambda_base * clamp(0.5 + (1 - acc) + min(ce / ln C, 1), 0.5, 2.5).
double adaptive_lambda(double ce_mean, double accuracy, double lambda_base, std::size_t num_classes);

// ---- differentiable forms -------------------------------------------------

// p [N,C] probabilities (typically a softmax output), q [N,C] soft targets.
template <typename T>
Var<T> semantic_loss(Var<T> p, const Tensor<T>& q, double eps = kDefaultEpsStab);

// Elementwise implication truth over equally shaped p_A, p_B.
template <typename T>
Var<T> implication_truth(Var<T> p_a, Var<T> p_b, double eps = kDefaultEpsStab);

// Elementwise max(0, -log(T + eps)); the mean is left to the caller.
template <typename T>
Var<T> logic_loss(Var<T> truth, double eps = kDefaultEpsStab);

// Per-sample joint truth [N]. attr_probs[j] is [N, d_j]; expected[j][n] is
// the value index the label of sample n expects; p_cls is [N].
template <typename T>
Var<T> joint_truth(std::span<const Var<T>> attr_probs, const std::vector<std::vector<std::size_t>>& expected,
                   std::span<const double> w, Var<T> p_cls, double eps = kDefaultEpsStab);

// Batch mean of max(0, -log(T_joint + eps)) for the profile of each label.
template <typename T>
Var<T> joint_logic_loss(const net::ModelOutputs<T>& out, std::span<const std::size_t> labels,
                        const rules::RuleBase& rb, const LossWeights& weights);

// Batch mean softmax cross-entropy against hard labels.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> labels);

// ---- combined objective ---------------------------------------------------

template <typename T>
struct LossBundle {
    Var<T> total_var;  // differentiable total

    double ce = 0.0;
    double semantic = 0.0;
    double joint = 0.0;
    double total = 0.0;
    double lambda_logic = 0.0;
    double mean_t_joint = 0.0;
    std::vector<double> ce_per_sample;
    std::vector<double> t_joint_per_sample;
    std::size_t samples = 0;
};

// Batch statistics that drive the adaptive logic weight.
struct BatchStats {
    double ce_mean = 0.0;
    double accuracy = 0.0;
};

template <typename T>
BatchStats batch_stats(const net::ModelOutputs<T>& out, std::span<const std::size_t> labels);

// One term of the objective on one batch: cross-entropy alone, or
// CE + lambda_logic * L_joint + lambda_semantic * L_semantic when symbolic.
// Joint truth diagnostics are reported whenever rules are given; symbolic
// terms require them.
template <typename T>
LossBundle<T> objective(const net::ModelOutputs<T>& out, std::span<const std::size_t> labels,
                        const rules::RuleBase* rb, const LossWeights& weights, double lambda_logic,
                        bool symbolic);

// Objective on the clean batch plus the same objective on the adversarial
// batch when present. At least one of the two must be given. The adaptive
// logic weight comes from clean-batch statistics (adversarial ones when no
// clean batch takes part) and is shared by both terms.
template <typename T>
LossBundle<T> total_loss(const net::ModelOutputs<T>* clean, const net::ModelOutputs<T>* adv,
                         std::span<const std::size_t> labels, const rules::RuleBase* rb,
                         const LossWeights& weights, bool symbolic);

}  // namespace nsdesk::sym
