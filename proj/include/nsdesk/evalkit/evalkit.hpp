#pragma once

// Evaluation of frozen models: clean and attacked top-1 accuracy, symbolic
// consistency of the predicted attributes, the share of errors that stay
// inside the true label's equivalence group, and a 2D PCA of the features.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nsdesk/attacks/attacks.hpp"
#include "nsdesk/netcore/model.hpp"
#include "nsdesk/rulebase/rulebase.hpp"
#include "nsdesk/signforge/signforge.hpp"

namespace nsdesk::eval {

inline constexpr std::size_t kEvalBatch = 64;

struct AttackAccuracy {
    attack::AttackSpec spec;
    double accuracy = 0.0;
    std::optional<double> within_group_error;  // over the attacked errors; needs rules
};

struct ModelEval {
    std::string name;
    std::size_t samples = 0;
    double clean_acc = 0.0;
    std::vector<AttackAccuracy> attacks;  // in the order requested
    std::optional<double> consistency_rate;     // needs rules
    std::optional<double> within_group_error;   // absent without errors or rules
    std::size_t clean_errors = 0;
    std::size_t parameters = 0;
    std::uint64_t macs_per_sample = 0;

    // Accuracy under the first attack of `kind`, if one was run.
    std::optional<double> accuracy_under(attack::Kind kind) const;
    // Within-group share of the errors under the first attack of `kind`.
    std::optional<double> within_group_under(attack::Kind kind) const;
};

struct EvalReport {
    std::vector<ModelEval> rows;

    std::string markdown() const;
    std::string csv() const;
};

// Fraction of predictions whose argmax attributes match the profile of the
// argmax class.
double symbolic_consistency_rate(const net::Predictions& pred, const rules::RuleBase& rules);

// Among misclassified samples, the fraction predicted inside S(true label);
// absent when every prediction is correct.
std::optional<double> within_group_error(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                                         const rules::RuleBase& rules);

// Top-1 accuracy of class predictions against labels.
double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels);

// White-box evaluation against `model` itself. Each attack draws its noise
// from a stream keyed by the seed, the attack spec and the batch, so results
// do not depend on which other attacks run or in what order. Throws
// ConfigError on an empty dataset. The model is not modified.
ModelEval evaluate(const net::Model<float>& model, const sign::Dataset& data,
                   std::span<const attack::AttackSpec> attacks, const rules::RuleBase* rules, std::uint64_t seed,
                   std::string name = {});

// Adversarial copies of every image of `data` under `spec`, batch-seeded as
// in evaluate().
Tensor<float> attack_dataset(const net::Model<float>& model, const sign::Dataset& data,
                             const attack::AttackSpec& spec, std::uint64_t seed);

// ---- feature projection -----------------------------------------------------

struct Pca2 {
    std::vector<double> mean;                   // [D]
    std::vector<double> axis1, axis2;           // unit principal directions
    double variance1 = 0.0, variance2 = 0.0;    // along each axis
    double total_variance = 0.0;
    std::vector<double> x, y;                   // projected coordinates per row
};

// Centers the rows of `rows` [N,D] and projects onto the two leading
// eigenvectors of the sample covariance. Needs N >= 3 and D >= 2.
Pca2 pca2(const Tensor<double>& rows);

struct ProjectionPoint {
    double x = 0.0, y = 0.0;
    std::size_t label = 0;
    bool adversarial = false;
};

// Features of the clean set and, when `spec` is given, of its adversarial
// copies, projected together. Throws ConfigError with fewer than 3 samples.
std::vector<ProjectionPoint> project_features(const net::Model<float>& model, const sign::Dataset& data,
                                              const std::optional<attack::AttackSpec>& spec, std::uint64_t seed,
                                              Pca2* pca = nullptr);

// `x,y,label,condition` with condition clean or adv.
std::string projection_csv(const std::vector<ProjectionPoint>& points);

}  // namespace nsdesk::eval
