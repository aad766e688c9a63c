#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "nsdesk/common/error.hpp"
#include "nsdesk/common/text.hpp"
#include "nsdesk/trainer/trainer.hpp"

namespace nsdesk::train {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;     // "init"
constexpr std::uint64_t kShuffleStream = 0x73687566;  // "shuf"
constexpr std::uint64_t kHoldoutStream = 0x686f6c64;  // "hold"
constexpr std::uint64_t kAttackStream = 0x61747461;   // "atta"

TrainConfig resolved(TrainConfig config, const sign::Dataset& data, const rules::RuleBase* rules) {
    if (data.empty()) throw ConfigError("train: dataset is empty");
    if (data.height() != data.width()) {
        throw ConfigError("train: images must be square, got " + std::to_string(data.width()) + "x" +
                          std::to_string(data.height()));
    }
    const std::size_t classes = *std::max_element(data.labels().begin(), data.labels().end()) + 1;
    resolve_model(config, rules, std::max<std::size_t>(classes, 2), data.height());
    config.validate(rules != nullptr);
    return config;
}

}  // namespace

Trainer::Trainer(TrainConfig config, const sign::Dataset& data, const rules::RuleBase* rules)
    : config_(resolved(std::move(config), data, rules)),
      data_(data),
      rules_(rules),
      model_(config_.model, mix_seed({config_.seed, kInitStream})),
      rng_(mix_seed({config_.seed, kShuffleStream})) {
    for (std::size_t y : data.labels()) {
        if (y >= config_.model.heads.num_classes) {
            throw ConfigError("train: label " + std::to_string(y) + " out of range for " +
                              std::to_string(config_.model.heads.num_classes) + " classes");
        }
    }
    w_ = config_.weights.component_weights(model_.num_attributes());

    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), 0);
    Rng split(mix_seed({config_.seed, kHoldoutStream}));
    split.shuffle(all.begin(), all.end());
    const auto n_hold = static_cast<std::size_t>(std::llround(config_.holdout_fraction * static_cast<double>(all.size())));
    holdout_idx_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_hold));
    train_idx_.assign(all.begin() + static_cast<std::ptrdiff_t>(n_hold), all.end());
    std::sort(holdout_idx_.begin(), holdout_idx_.end());
    std::sort(train_idx_.begin(), train_idx_.end());
    if (train_idx_.size() < 2) throw ConfigError("train: fewer than 2 training samples after the held-out split");

    for (const auto& p : model_.params()) {
        adam_m_.emplace_back(p.shape(), 0.0f);
        adam_v_.emplace_back(p.shape(), 0.0f);
    }
}

sym::LossBundle<float> Trainer::objective(Graph<float>& g, const std::vector<Var<float>>& params,
                                          const Tensor<float>& clean, const Tensor<float>* adversarial,
                                          std::span<const std::size_t> labels,
                                          std::vector<net::ForwardStats<float>>* stats) const {
    const Mode mode = config_.mode;
    net::ModelOutputs<float> clean_out, adv_out;
    const net::ModelOutputs<float>* cp = nullptr;
    const net::ModelOutputs<float>* ap = nullptr;
    const auto pass = [&](const Tensor<float>& x) {
        net::ForwardStats<float> st;
        auto out = model_.forward(g, params, g.constant(x), net::Mode::train, stats != nullptr ? &st : nullptr);
        if (stats != nullptr) stats->push_back(std::move(st));
        return out;
    };
    if (uses_clean(mode)) {
        clean_out = pass(clean);
        cp = &clean_out;
    }
    if (is_adversarial(mode)) {
        if (adversarial == nullptr || adversarial->shape() != clean.shape()) {
            throw ShapeError("train: adversarial batch missing or misshaped for mode " +
                             std::string(mode_name(mode)));
        }
        adv_out = pass(*adversarial);
        ap = &adv_out;
    }
    sym::LossWeights lw = config_.weights;
    lw.w = w_;
    return sym::total_loss<float>(cp, ap, labels, rules_, lw, is_symbolic(mode));
}

double Trainer::batch_loss(const Tensor<float>& clean, const Tensor<float>* adversarial,
                           std::span<const std::size_t> labels) const {
    Graph<float> g;
    return objective(g, model_.bind(g, false), clean, adversarial, labels, nullptr).total;
}

void Trainer::adam_step(const std::vector<Var<float>>& params) {
    ++adam_t_;
    const AdamConfig& a = config_.adam;
    const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(adam_t_));
    const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(adam_t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor<float>& g = params[i].grad();
        if (g.size() == 0) continue;  // parameter took no part in this loss
        Tensor<float>& p = model_.params()[i];
        Tensor<float>& m = adam_m_[i];
        Tensor<float>& v = adam_v_[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k];
            const double mk = a.beta1 * m[k] + (1.0 - a.beta1) * gk;
            const double vk = a.beta2 * v[k] + (1.0 - a.beta2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            p[k] = static_cast<float>(p[k] - a.lr * (mk / c1) / (std::sqrt(vk / c2) + a.eps));
        }
    }
}

StepReport Trainer::step(std::span<const std::size_t> batch) {
    if (batch.size() < 2) throw ShapeError("train: a batch needs at least 2 samples");
    StepReport r;
    r.labels.reserve(batch.size());
    for (std::size_t i : batch) r.labels.push_back(data_.label(i));
    r.clean = data_.images<float>(batch);
    const Mode mode = config_.mode;
    if (is_adversarial(mode)) {
        const attack::AttackSpec spec = config_.attack();
        r.adversarial = attack::run(model_, r.clean, r.labels, spec,
                                    mix_seed({config_.seed, kAttackStream, epoch_, batch_counter_}));
        if (batch_counter_ % config_.budget_check_every == 0) {
            for (std::size_t k = 0; k < r.clean.size(); ++k) {
                const double d = std::abs(static_cast<double>(r.adversarial[k]) - static_cast<double>(r.clean[k]));
                if (!(d <= spec.epsilon) || r.adversarial[k] < 0.0f || r.adversarial[k] > 1.0f) {
                    throw Error("train: adversarial batch violates the attack budget at element " +
                                std::to_string(k));
                }
            }
        }
    }

    Graph<float> g;
    const auto params = model_.bind(g, true);
    std::vector<net::ForwardStats<float>> stats;
    const auto bundle = objective(g, params, r.clean, is_adversarial(mode) ? &r.adversarial : nullptr, r.labels,
                                  &stats);
    if (!std::isfinite(bundle.total) || bundle.total > config_.divergence_threshold) {
        std::ostringstream msg;
        msg << "training diverged: mode " << mode_name(mode) << ", epoch " << epoch_ << ", batch " << batch_counter_
            << ": L_total=" << bundle.total << " (CE=" << bundle.ce << ", joint=" << bundle.joint
            << ", semantic=" << bundle.semantic << ", lambda_logic=" << bundle.lambda_logic
            << "); threshold " << config_.divergence_threshold;
        if (is_adversarial(mode)) msg << "; attack " << config_.attack().describe();
        throw DivergenceError(msg.str());
    }
    g.backward(bundle.total_var);
    adam_step(params);
    for (const auto& p : model_.params()) {
        if (!p.all_finite()) {
            throw DivergenceError("training diverged: non-finite parameters after the update at epoch " +
                                  std::to_string(epoch_) + ", batch " + std::to_string(batch_counter_));
        }
    }
    for (const auto& st : stats) model_.update_running_stats(st);
    ++batch_counter_;

    r.loss = bundle.total;
    r.ce = bundle.ce;
    r.lambda_logic = bundle.lambda_logic;
    r.mean_t_joint = bundle.mean_t_joint;
    return r;
}

Trainer::HoldoutScores Trainer::holdout_scores() const {
    HoldoutScores h;
    h.accuracy = std::numeric_limits<double>::quiet_NaN();
    if (holdout_idx_.empty()) return h;
    const auto pred = net::predict(model_, data_.images<float>(holdout_idx_));
    const auto n = static_cast<double>(holdout_idx_.size());
    std::size_t hit = 0;
    for (std::size_t k = 0; k < holdout_idx_.size(); ++k) hit += pred.cls[k] == data_.label(holdout_idx_[k]);
    h.accuracy = static_cast<double>(hit) / n;
    if (rules_ == nullptr) return h;
    h.attribute_accuracy.assign(model_.num_attributes(), 0.0);
    for (std::size_t j = 0; j < h.attribute_accuracy.size(); ++j) {
        hit = 0;
        for (std::size_t k = 0; k < holdout_idx_.size(); ++k) {
            hit += pred.attrs[j][k] == rules_->expected_value(data_.label(holdout_idx_[k]), j);
        }
        h.attribute_accuracy[j] = static_cast<double>(hit) / n;
    }
    return h;
}

EpochMetrics Trainer::run_epoch() {
    ++epoch_;
    std::vector<std::size_t> order = train_idx_;
    rng_.shuffle(order.begin(), order.end());
    EpochMetrics m;
    m.epoch = epoch_;
    double loss = 0.0, lambda = 0.0, tj = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
        const std::size_t b = std::min(config_.batch_size, order.size() - start);
        if (b < 2) break;
        const StepReport r = step(std::span<const std::size_t>(order).subspan(start, b));
        loss += r.loss;
        lambda += r.lambda_logic;
        tj += r.mean_t_joint;
        ++m.batches;
    }
    const double nb = static_cast<double>(std::max<std::size_t>(m.batches, 1));
    m.loss_total = loss / nb;
    m.mean_lambda_logic = lambda / nb;
    m.mean_t_joint = rules_ != nullptr ? tj / nb : std::numeric_limits<double>::quiet_NaN();
    HoldoutScores h = holdout_scores();
    m.clean_acc = h.accuracy;
    m.attr_acc = std::move(h.attribute_accuracy);
    if (!m.attr_acc.empty()) w_ = sym::update_component_weights(m.attr_acc);
    m.w = w_;
    return m;
}

std::vector<EpochMetrics> Trainer::run(const std::function<void(const EpochMetrics&)>& on_epoch) {
    std::vector<EpochMetrics> log;
    while (epoch_ < config_.epochs) {
        log.push_back(run_epoch());
        if (on_epoch) on_epoch(log.back());
    }
    return log;
}

Checkpoint Trainer::checkpoint() const { return Checkpoint::capture(config_, model_, epoch_, w_, rng_); }

}  // namespace nsdesk::train
