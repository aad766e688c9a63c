#include <cmath>
#include <sstream>

#include "nsdesk/common/error.hpp"
#include "nsdesk/common/text.hpp"
#include "nsdesk/trainer/trainer.hpp"

namespace nsdesk::train {

namespace {

constexpr std::array<std::string_view, 8> kModeNames = {"plain",      "fgsm_only", "pgd_only",      "fgsm_clean",
                                                        "pgd_clean",  "neurosym",  "fgsm_neurosym", "pgd_neurosym"};

std::string fmt(double v) { return text::format_double(v); }

template <typename V>
std::string list(const std::vector<V>& v) {
    std::vector<std::string> parts;
    for (const auto& x : v) {
        if constexpr (std::is_same_v<V, double>) {
            parts.push_back(fmt(x));
        } else if constexpr (std::is_same_v<V, std::string>) {
            parts.push_back(x);
        } else {
            parts.push_back(std::to_string(x));
        }
    }
    return text::join(parts, ",");
}

}  // namespace

std::string_view mode_name(Mode mode) { return kModeNames[static_cast<std::size_t>(mode)]; }

Mode parse_mode(std::string_view name) {
    const std::string_view t = text::trim(name);
    for (std::size_t i = 0; i < kModeNames.size(); ++i) {
        if (kModeNames[i] == t) return static_cast<Mode>(i);
    }
    std::vector<std::string> valid(kModeNames.begin(), kModeNames.end());
    throw ConfigError("unknown training mode '" + std::string(t) + "'; valid modes: " + text::join(valid, ", "));
}

bool is_adversarial(Mode m) { return m != Mode::plain && m != Mode::neurosym; }

bool uses_clean(Mode m) { return m != Mode::fgsm_only && m != Mode::pgd_only; }

bool is_symbolic(Mode m) { return m == Mode::neurosym || m == Mode::fgsm_neurosym || m == Mode::pgd_neurosym; }

attack::Kind attack_kind(Mode m) {
    return (m == Mode::fgsm_only || m == Mode::fgsm_clean || m == Mode::fgsm_neurosym) ? attack::Kind::fgsm
                                                                                       : attack::Kind::pgd;
}

attack::AttackSpec TrainConfig::attack() const {
    if (attack_kind(mode) == attack::Kind::fgsm) return attack::AttackSpec::fgsm(epsilon);
    return attack::AttackSpec::pgd(epsilon, attack_steps, attack_step_size, attack_random_start);
}

void TrainConfig::validate(bool have_rules) const {
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
    if (batch_size < 2) throw ConfigError("train: batch_size must be at least 2 (batchnorm)");
    if (!(adam.lr > 0.0) || !std::isfinite(adam.lr)) throw ConfigError("train: lr must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw ConfigError("train: Adam betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
    if (!(holdout_fraction >= 0.0 && holdout_fraction <= 0.5)) {
        throw ConfigError("train: holdout_fraction must lie in [0, 0.5]");
    }
    if (!(divergence_threshold > 0.0)) throw ConfigError("train: divergence_threshold must be positive");
    if (budget_check_every == 0) throw ConfigError("train: budget_check_every must be positive");
    if (is_symbolic(mode) && !have_rules) {
        throw ConfigError("train: mode " + std::string(mode_name(mode)) + " requires a rule file (--rules)");
    }
    if (is_adversarial(mode)) attack().validate();
    model.backbone.validate();
    if (!model.heads.attr_dims.empty()) weights.validate(model.heads.attr_dims.size());
}

std::string to_text(const TrainConfig& c) {
    std::ostringstream o;
    o << "mode = " << mode_name(c.mode) << "\n"
      << "epochs = " << c.epochs << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "seed = " << c.seed << "\n"
      << "lr = " << fmt(c.adam.lr) << "\n"
      << "beta1 = " << fmt(c.adam.beta1) << "\n"
      << "beta2 = " << fmt(c.adam.beta2) << "\n"
      << "adam_eps = " << fmt(c.adam.eps) << "\n"
      << "lambda_semantic = " << fmt(c.weights.lambda_semantic) << "\n"
      << "lambda_logic = " << fmt(c.weights.lambda_logic_base) << "\n"
      << "eps_stab = " << fmt(c.weights.eps_stab) << "\n"
      << "attr_weights = " << list(c.weights.w) << "\n"
      << "epsilon = " << fmt(c.epsilon) << "\n"
      << "attack_steps = " << c.attack_steps << "\n"
      << "attack_step_size = " << fmt(c.attack_step_size) << "\n"
      << "attack_random_start = " << (c.attack_random_start ? "true" : "false") << "\n"
      << "holdout_fraction = " << fmt(c.holdout_fraction) << "\n"
      << "divergence_threshold = " << fmt(c.divergence_threshold) << "\n"
      << "budget_check_every = " << c.budget_check_every << "\n"
      << "input_size = " << c.model.backbone.input_size << "\n"
      << "widths = " << list(c.model.backbone.widths) << "\n"
      << "blocks_per_stage = " << c.model.backbone.blocks_per_stage << "\n"
      << "head_hidden = " << c.model.heads.hidden << "\n"
      << "num_classes = " << c.model.heads.num_classes << "\n"
      << "attr_names = " << list(c.model.heads.attr_names) << "\n"
      << "attr_dims = " << list(c.model.heads.attr_dims) << "\n";
    return o.str();
}

void apply_config(config::KeyValues& kv, TrainConfig& c) {
    using namespace config;
    const auto read = [&](std::string_view key, auto&& assign) {
        if (auto v = kv.take(key)) assign(*v);
    };
    read("mode", [&](const std::string& v) { c.mode = parse_mode(v); });
    read("epochs", [&](const std::string& v) { c.epochs = as_size("epochs", v); });
    read("batch_size", [&](const std::string& v) { c.batch_size = as_size("batch_size", v); });
    read("seed", [&](const std::string& v) { c.seed = as_u64("seed", v); });
    read("lr", [&](const std::string& v) { c.adam.lr = as_double("lr", v); });
    read("beta1", [&](const std::string& v) { c.adam.beta1 = as_double("beta1", v); });
    read("beta2", [&](const std::string& v) { c.adam.beta2 = as_double("beta2", v); });
    read("adam_eps", [&](const std::string& v) { c.adam.eps = as_double("adam_eps", v); });
    read("lambda_semantic", [&](const std::string& v) { c.weights.lambda_semantic = as_double("lambda_semantic", v); });
    read("lambda_logic", [&](const std::string& v) { c.weights.lambda_logic_base = as_double("lambda_logic", v); });
    read("eps_stab", [&](const std::string& v) { c.weights.eps_stab = as_double("eps_stab", v); });
    read("attr_weights", [&](const std::string& v) { c.weights.w = as_double_list("attr_weights", v); });
    read("epsilon", [&](const std::string& v) { c.epsilon = attack::parse_epsilon(v); });
    read("attack_steps", [&](const std::string& v) { c.attack_steps = as_size("attack_steps", v); });
    read("attack_step_size", [&](const std::string& v) { c.attack_step_size = attack::parse_epsilon(v); });
    read("attack_random_start",
         [&](const std::string& v) { c.attack_random_start = as_bool("attack_random_start", v); });
    read("holdout_fraction", [&](const std::string& v) { c.holdout_fraction = as_double("holdout_fraction", v); });
    read("divergence_threshold",
         [&](const std::string& v) { c.divergence_threshold = as_double("divergence_threshold", v); });
    read("budget_check_every",
         [&](const std::string& v) { c.budget_check_every = as_size("budget_check_every", v); });
    read("input_size", [&](const std::string& v) { c.model.backbone.input_size = as_size("input_size", v); });
    read("widths", [&](const std::string& v) { c.model.backbone.widths = as_size_list("widths", v); });
    read("blocks_per_stage",
         [&](const std::string& v) { c.model.backbone.blocks_per_stage = as_size("blocks_per_stage", v); });
    read("head_hidden", [&](const std::string& v) { c.model.heads.hidden = as_size("head_hidden", v); });
    read("num_classes", [&](const std::string& v) { c.model.heads.num_classes = as_size("num_classes", v); });
    read("attr_names", [&](const std::string& v) { c.model.heads.attr_names = as_string_list(v); });
    read("attr_dims", [&](const std::string& v) { c.model.heads.attr_dims = as_size_list("attr_dims", v); });
}

TrainConfig parse_train_config(std::string_view text, std::string_view source) {
    auto kv = config::KeyValues::parse(text, source);
    TrainConfig c;
    apply_config(kv, c);
    kv.expect_empty(source);
    return c;
}

void resolve_model(TrainConfig& config, const rules::RuleBase* rules, std::size_t num_classes,
                   std::size_t input_size) {
    const rules::AttributeSchema schema = rules != nullptr ? rules->schema() : rules::default_schema();
    auto& h = config.model.heads;
    h.num_classes = rules != nullptr ? rules->num_classes() : num_classes;
    h.attr_names = schema.names;
    h.attr_dims.clear();
    for (std::size_t j = 0; j < schema.size(); ++j) h.attr_dims.push_back(schema.cardinality(j));
    config.model.backbone.input_size = input_size;
}

std::string metrics_csv(const std::vector<EpochMetrics>& log, const std::vector<std::string>& attr_names) {
    std::ostringstream o;
    o << "epoch,clean_acc";
    for (const auto& n : attr_names) o << ",attr_acc_" << n;
    for (const auto& n : attr_names) o << ",w_" << n;
    o << ",mean_lambda_logic,mean_T_joint,loss_total\n";
    for (const auto& m : log) {
        o << m.epoch << "," << fmt(m.clean_acc);
        for (std::size_t j = 0; j < attr_names.size(); ++j) {
            o << "," << (j < m.attr_acc.size() ? fmt(m.attr_acc[j]) : std::string());
        }
        for (std::size_t j = 0; j < attr_names.size(); ++j) {
            o << "," << (j < m.w.size() ? fmt(m.w[j]) : std::string());
        }
        o << "," << fmt(m.mean_lambda_logic) << "," << (std::isnan(m.mean_t_joint) ? "" : fmt(m.mean_t_joint))
          << "," << fmt(m.loss_total) << "\n";
    }
    return o.str();
}

}  // namespace nsdesk::train
