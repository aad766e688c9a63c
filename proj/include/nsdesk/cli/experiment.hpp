#pragma once

// Train-then-evaluate over a list of training modes on shared data: the
// experiment matrix behind the `report` command.

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "nsdesk/evalkit/evalkit.hpp"
#include "nsdesk/trainer/trainer.hpp"

namespace nsdesk::cli {

struct ExperimentConfig {
    train::TrainConfig base;  // the mode field is replaced per run
    std::vector<train::Mode> modes{train::kAllModes.begin(), train::kAllModes.end()};
    std::vector<attack::AttackSpec> eval_attacks;
    std::uint64_t eval_seed = 1;
    // When set, each mode writes <out_dir>/<mode>/{model.nshd,metrics.csv}.
    std::filesystem::path out_dir;
};

struct ModeRun {
    train::Mode mode = train::Mode::plain;
    std::vector<train::EpochMetrics> log;
    eval::ModelEval eval;
    double train_seconds = 0.0;
    double eval_seconds = 0.0;
    bool diverged = false;
    std::string error;  // divergence diagnostic
};

struct ExperimentResult {
    std::vector<ModeRun> runs;
    eval::EvalReport report;  // rows of the modes that finished
    double seconds = 0.0;

    const ModeRun* find(train::Mode mode) const;
    bool any_diverged() const;
};

// A divergence in one mode is recorded and the remaining modes still run.
ExperimentResult run_experiment(const ExperimentConfig& config, const sign::Dataset& train_data,
                                const sign::Dataset& test_data, const rules::RuleBase* rules,
                                const std::function<void(std::string_view)>& progress = {});

}  // namespace nsdesk::cli
