#include "nsdesk/cli/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "nsdesk/common/error.hpp"

namespace nsdesk::cli {

namespace {

double since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

const ModeRun* ExperimentResult::find(train::Mode mode) const {
    for (const auto& r : runs) {
        if (r.mode == mode) return &r;
    }
    return nullptr;
}

bool ExperimentResult::any_diverged() const {
    for (const auto& r : runs) {
        if (r.diverged) return true;
    }
    return false;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const sign::Dataset& train_data,
                                const sign::Dataset& test_data, const rules::RuleBase* rules,
                                const std::function<void(std::string_view)>& progress) {
    const auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    const auto t_all = std::chrono::steady_clock::now();
    ExperimentResult result;
    for (train::Mode mode : config.modes) {
        ModeRun run;
        run.mode = mode;
        const std::string name(train::mode_name(mode));
        train::TrainConfig tc = config.base;
        tc.mode = mode;
        const auto t0 = std::chrono::steady_clock::now();
        train::Trainer trainer(tc, train_data, rules);
        try {
            trainer.run([&](const train::EpochMetrics& m) {
                run.log.push_back(m);
                char buf[160];
                std::snprintf(buf, sizeof buf, "%s epoch %zu/%zu: held-out acc %.4f, loss %.4f (%.0fs)", name.c_str(),
                              m.epoch, tc.epochs, m.clean_acc, m.loss_total, since(t0));
                say(buf);
            });
        } catch (const DivergenceError& e) {
            run.diverged = true;
            run.error = e.what();
            say(name + ": " + e.what());
        }
        run.train_seconds = since(t0);
        if (!config.out_dir.empty()) {
            const auto dir = config.out_dir / name;
            std::filesystem::create_directories(dir);
            write_text(dir / "metrics.csv", train::metrics_csv(run.log, trainer.config().model.heads.attr_names));
            if (!run.diverged) train::save_checkpoint(trainer.checkpoint(), dir / "model.nshd");
        }
        if (!run.diverged) {
            const auto t1 = std::chrono::steady_clock::now();
            run.eval = eval::evaluate(trainer.model(), test_data, config.eval_attacks, rules, config.eval_seed, name);
            run.eval_seconds = since(t1);
            result.report.rows.push_back(run.eval);
            char buf[200];
            std::snprintf(buf, sizeof buf, "%s: clean %.4f", name.c_str(), run.eval.clean_acc);
            std::string line = buf;
            for (const auto& a : run.eval.attacks) {
                std::snprintf(buf, sizeof buf, ", %s %.4f", std::string(attack::kind_name(a.spec.kind)).c_str(),
                              a.accuracy);
                line += buf;
            }
            std::snprintf(buf, sizeof buf, " (train %.0fs, eval %.0fs)", run.train_seconds, run.eval_seconds);
            say(line + buf);
        }
        result.runs.push_back(std::move(run));
    }
    result.seconds = since(t_all);
    return result;
}

}  // namespace nsdesk::cli
