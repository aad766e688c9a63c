#pragma once

// Training of the eight configurations: clean and/or adversarial
// supervision, cross-entropy or the full symbolic objective, adaptive
// attribute weights per epoch, Adam updates, a divergence guard and a
// versioned binary checkpoint.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nsdesk/attacks/attacks.hpp"
#include "nsdesk/common/config.hpp"
#include "nsdesk/common/rng.hpp"
#include "nsdesk/netcore/model.hpp"
#include "nsdesk/rulebase/rulebase.hpp"
#include "nsdesk/signforge/signforge.hpp"
#include "nsdesk/symlosses/symlosses.hpp"

namespace nsdesk::train {

enum class Mode { plain, fgsm_only, pgd_only, fgsm_clean, pgd_clean, neurosym, fgsm_neurosym, pgd_neurosym };

inline constexpr std::array<Mode, 8> kAllModes = {Mode::plain,      Mode::fgsm_only,     Mode::pgd_only,
                                                  Mode::fgsm_clean, Mode::pgd_clean,     Mode::neurosym,
                                                  Mode::fgsm_neurosym, Mode::pgd_neurosym};

std::string_view mode_name(Mode mode);
// Throws ConfigError listing the valid names.
Mode parse_mode(std::string_view name);

bool is_adversarial(Mode mode);   // generates adversarial counterparts
bool uses_clean(Mode mode);       // supervises the clean batch
bool is_symbolic(Mode mode);      // full symbolic objective instead of CE
attack::Kind attack_kind(Mode mode);  // meaningful for adversarial modes

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline constexpr double kDivergenceThreshold = 1e4;

struct TrainConfig {
    Mode mode = Mode::plain;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    AdamConfig adam;
    sym::LossWeights weights;

    double epsilon = attack::kDefaultEpsilon;
    std::size_t attack_steps = attack::kDefaultPgdSteps;
    double attack_step_size = 0.0;  // 0 selects epsilon / 4
    bool attack_random_start = true;

    double holdout_fraction = 0.1;
    double divergence_threshold = kDivergenceThreshold;
    std::size_t budget_check_every = 20;  // batches between adversarial budget spot checks

    // Backbone and head sizes. Class count and attributes are filled from
    // the rule base (or the default schema) when training starts.
    net::ModelConfig model;

    attack::AttackSpec attack() const;
    // Throws ConfigError; `have_rules` tells whether a rule base is present.
    void validate(bool have_rules) const;
};

// Canonical `key = value` text; apply_config reads it back to an equal
// config. apply_config consumes the keys it knows and leaves the rest.
std::string to_text(const TrainConfig& config);
void apply_config(config::KeyValues& kv, TrainConfig& config);
TrainConfig parse_train_config(std::string_view text, std::string_view source = "<config>");

struct EpochMetrics {
    std::size_t epoch = 0;         // 1-based
    double clean_acc = 0.0;        // held-out slice
    std::vector<double> attr_acc;  // held-out slice, empty without rules
    double mean_lambda_logic = 0.0;
    double mean_t_joint = 0.0;     // NaN without rules
    double loss_total = 0.0;       // mean over batches
    std::vector<double> w;         // attribute weights after this epoch's update
    std::size_t batches = 0;
};

// `epoch,clean_acc,attr_acc_<name>...,mean_lambda_logic,mean_T_joint,loss_total`
std::string metrics_csv(const std::vector<EpochMetrics>& log, const std::vector<std::string>& attr_names);

// ---- checkpoint -------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    std::size_t epoch = 0;
    std::vector<double> w;
    std::string rng_state;
    std::vector<std::string> names;     // parameters, then batchnorm buffers
    std::vector<Tensor<double>> tensors;

    static Checkpoint capture(const TrainConfig& config, const net::Model<float>& model, std::size_t epoch,
                              std::vector<double> w, const Rng& rng);
    // Builds the model described by the config and copies the tensors in.
    net::Model<float> model() const;
    // Copies the tensors into an existing model. A missing, extra or
    // differently shaped tensor throws ShapeError naming it.
    void load_into(net::Model<float>& model) const;
};

std::string serialize(const Checkpoint& ckpt);
// Validates magic, version, shape table and checksum; throws CheckpointError.
Checkpoint deserialize(std::string_view bytes, std::string_view source = "<checkpoint>");
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- training ---------------------------------------------------------------

struct StepReport {
    double loss = 0.0;
    double ce = 0.0;
    double lambda_logic = 0.0;
    double mean_t_joint = 0.0;
    Tensor<float> clean;
    Tensor<float> adversarial;  // empty for non-adversarial modes
    std::vector<std::size_t> labels;
};

class Trainer {
public:
    // `rules` may be null only for modes without symbolic supervision; the
    // heads then follow the default schema and attribute metrics are empty.
    Trainer(TrainConfig config, const sign::Dataset& data, const rules::RuleBase* rules);

    const TrainConfig& config() const { return config_; }
    const net::Model<float>& model() const { return model_; }
    std::span<const std::size_t> train_indices() const { return train_idx_; }
    std::span<const std::size_t> holdout_indices() const { return holdout_idx_; }
    const std::vector<double>& weights() const { return w_; }
    std::size_t epoch() const { return epoch_; }

    // One optimizer step on the given samples. Throws DivergenceError.
    StepReport step(std::span<const std::size_t> batch);
    // The objective of this mode on a batch, without touching any state.
    double batch_loss(const Tensor<float>& clean, const Tensor<float>* adversarial,
                      std::span<const std::size_t> labels) const;

    EpochMetrics run_epoch();
    std::vector<EpochMetrics> run(const std::function<void(const EpochMetrics&)>& on_epoch = {});

    // Held-out class accuracy (NaN without a held-out slice) and
    // per-attribute accuracy (empty without rules) of the current model.
    struct HoldoutScores {
        double accuracy = 0.0;
        std::vector<double> attribute_accuracy;
    };
    HoldoutScores holdout_scores() const;

    Checkpoint checkpoint() const;

private:
    sym::LossBundle<float> objective(Graph<float>& g, const std::vector<Var<float>>& params, const Tensor<float>& clean,
                                     const Tensor<float>* adversarial, std::span<const std::size_t> labels,
                                     std::vector<net::ForwardStats<float>>* stats) const;
    void adam_step(const std::vector<Var<float>>& params);

    TrainConfig config_;
    const sign::Dataset& data_;
    const rules::RuleBase* rules_;
    net::Model<float> model_;
    std::vector<std::size_t> train_idx_, holdout_idx_;
    std::vector<double> w_;
    std::vector<Tensor<float>> adam_m_, adam_v_;
    std::uint64_t adam_t_ = 0;
    std::size_t epoch_ = 0;
    std::size_t batch_counter_ = 0;
    Rng rng_;
};

// Fills the class count and attribute heads of `config.model` from the rule
// base, or from the default schema and `num_classes` without one.
void resolve_model(TrainConfig& config, const rules::RuleBase* rules, std::size_t num_classes,
                   std::size_t input_size);

}  // namespace nsdesk::train
