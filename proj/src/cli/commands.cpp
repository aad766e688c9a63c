#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "nsdesk/cli/cli.hpp"
#include "nsdesk/cli/experiment.hpp"
#include "nsdesk/common/config.hpp"
#include "nsdesk/common/error.hpp"
#include "nsdesk/common/text.hpp"

namespace nsdesk::cli {

namespace fs = std::filesystem;

namespace {

// Raised for problems with the command line or the config file, as opposed
// to failures while the command runs.
class UsageError : public Error {
public:
    using Error::Error;
};

struct Flag {
    const char* name;  // without leading dashes; the config key swaps '-' for '_'
    const char* help;
    enum Kind { value, boolean, list } kind = value;
};

struct Command {
    CLI::App* app = nullptr;
    std::vector<Flag> flags;
    std::map<std::string, std::string> values;
    std::map<std::string, bool> switches;
    std::map<std::string, std::vector<std::string>> lists;
    std::vector<std::pair<CLI::Option*, std::string>> options;
    std::string config_file;

    static std::string key_of(const char* name) {
        std::string k = name;
        for (char& c : k) {
            if (c == '-') c = '_';
        }
        return k;
    }

    void attach(CLI::App* parent, const char* name, const char* description, std::vector<Flag> fs) {
        app = parent->add_subcommand(name, description);
        app->add_option("--config", config_file, "key = value config file; command-line flags take precedence");
        flags = std::move(fs);
        for (const Flag& f : flags) {
            const std::string key = key_of(f.name);
            const std::string opt = std::string("--") + f.name;
            CLI::Option* o = nullptr;
            switch (f.kind) {
                case Flag::value: o = app->add_option(opt, values[key], f.help); break;
                case Flag::boolean: o = app->add_flag(opt, switches[key], f.help); break;
                case Flag::list: o = app->add_option(opt, lists[key], f.help)->expected(1, -1); break;
            }
            options.emplace_back(o, key);
        }
    }

    // Built-in defaults < config file < explicit flags.
    config::KeyValues resolve() const {
        config::KeyValues kv;
        if (!config_file.empty()) {
            try {
                kv = config::KeyValues::load(config_file);
            } catch (const Error& e) {
                throw UsageError(e.what());
            }
        }
        for (const auto& [opt, key] : options) {
            if (opt->count() == 0) continue;
            if (switches.contains(key)) {
                kv.set(key, switches.at(key) ? "true" : "false");
            } else if (lists.contains(key)) {
                kv.set(key, text::join(lists.at(key), ","));
            } else {
                kv.set(key, values.at(key));
            }
        }
        return kv;
    }
};

// Typed access to a resolved KeyValues during the usage phase.
class Args {
public:
    Args(config::KeyValues kv, std::string command) : kv_(std::move(kv)), command_(std::move(command)) {}

    std::optional<std::string> opt(std::string_view key) {
        auto v = kv_.take(key);
        if (v) resolved_.set(std::string(key), *v);
        return v;
    }
    std::string req(std::string_view key) {
        auto v = opt(key);
        if (!v || v->empty()) {
            std::string flag(key);
            for (char& c : flag) {
                if (c == '_') c = '-';
            }
            throw UsageError(command_ + ": --" + flag + " is required");
        }
        return *v;
    }
    std::string str(std::string_view key, std::string def) {
        auto v = opt(key);
        if (!v) resolved_.set(std::string(key), def);
        return v ? *v : def;
    }
    std::size_t size(std::string_view key, std::size_t def) {
        auto v = opt(key);
        if (!v) resolved_.set(std::string(key), std::to_string(def));
        return v ? config::as_size(key, *v) : def;
    }
    std::uint64_t u64(std::string_view key, std::uint64_t def) {
        auto v = opt(key);
        if (!v) resolved_.set(std::string(key), std::to_string(def));
        return v ? config::as_u64(key, *v) : def;
    }
    double real(std::string_view key, double def) {
        auto v = opt(key);
        if (!v) resolved_.set(std::string(key), text::format_double(def));
        return v ? config::as_double(key, *v) : def;
    }
    double epsilon(std::string_view key, double def) {
        auto v = opt(key);
        if (!v) resolved_.set(std::string(key), text::format_double(def));
        return v ? attack::parse_epsilon(*v) : def;
    }
    bool flag(std::string_view key) {
        auto v = opt(key);
        if (!v) resolved_.set(std::string(key), "false");
        return v && config::as_bool(key, *v);
    }
    config::KeyValues& rest() { return kv_; }
    void finish() { kv_.expect_empty(command_); }

    // Every key this command read, with defaults filled in.
    config::KeyValues& resolved() { return resolved_; }

private:
    config::KeyValues kv_;
    config::KeyValues resolved_;
    std::string command_;
};

fs::path manifest_path(const std::string& data) {
    const fs::path p(data);
    return fs::is_directory(p) ? p / "manifest.csv" : p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

void write_resolved(const fs::path& dir, const std::string& command, const std::string& body) {
    fs::create_directories(dir);
    write_text(dir / "run_config.txt", "# resolved configuration\ncommand = " + command + "\n" + body);
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

std::optional<rules::RuleBase> load_optional_rules(const std::optional<std::string>& path) {
    if (!path || path->empty()) return std::nullopt;
    return rules::load_rules(*path);
}

void check_rules_match(const rules::RuleBase& rb, const net::ModelConfig& m) {
    bool ok = rb.num_classes() == m.heads.num_classes && rb.num_attributes() == m.heads.attr_dims.size();
    for (std::size_t j = 0; ok && j < rb.num_attributes(); ++j) {
        ok = rb.schema().cardinality(j) == m.heads.attr_dims[j] && rb.schema().names[j] == m.heads.attr_names[j];
    }
    if (!ok) {
        throw ConfigError("rule file does not match the checkpoint: " + std::to_string(rb.num_classes()) +
                          " classes / " + std::to_string(rb.num_attributes()) + " attributes vs " +
                          std::to_string(m.heads.num_classes) + " / " + std::to_string(m.heads.attr_dims.size()));
    }
}

attack::AttackSpec pgd_spec(Args& a, double eps, const char* steps_key, const char* size_key) {
    const std::size_t steps = a.size(steps_key, attack::kDefaultPgdSteps);
    const double alpha = a.epsilon(size_key, 0.0);
    return attack::AttackSpec::pgd(eps, steps, alpha, true);
}

// ---- commands -----------------------------------------------------------------

using Body = std::function<int(std::ostream&)>;

Body gen_data(Args& a) {
    const std::string rules_path = a.req("rules");
    const fs::path out = a.req("out");
    const std::size_t per_class = a.size("per_class", 200);
    const std::uint64_t seed = a.u64("seed", 1);
    const std::string split = a.str("split", "train");
    const std::size_t canvas = a.size("canvas", 32);
    sign::Jitter j;
    j.rotation_deg = a.real("rotation", j.rotation_deg);
    j.translation_px = a.real("translation", j.translation_px);
    j.brightness_lo = a.real("brightness_lo", j.brightness_lo);
    j.brightness_hi = a.real("brightness_hi", j.brightness_hi);
    j.noise = a.real("noise", j.noise);
    a.finish();
    try {
        j.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    if (per_class == 0) throw UsageError("gen-data: --per-class must be positive");
    const std::string resolved = a.resolved().to_text();
    return [=](std::ostream& os) {
        const auto rb = rules::load_rules(rules_path);
        const auto m = sign::generate_dataset(rb, std::vector<std::size_t>(rb.num_classes(), per_class), j, seed,
                                              split, out, canvas);
        write_resolved(out, "gen-data", resolved);
        os << "wrote " << m.entries.size() << " images of " << rb.num_classes() << " classes to "
           << (out / "manifest.csv").string() << "\n";
        return kExitOk;
    };
}

Body train_cmd(Args& a) {
    const std::string data = a.req("data");
    const fs::path out = a.req("out");
    const auto rules_path = a.opt("rules");
    train::TrainConfig c;
    train::apply_config(a.rest(), c);
    a.finish();
    try {
        c.validate(rules_path.has_value() && !rules_path->empty());
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const std::string extra = a.resolved().to_text();
    return [=](std::ostream& os) {
        const auto rb = load_optional_rules(rules_path);
        const auto ds = sign::load_dataset(manifest_path(data), rb ? rb->num_classes() : 0);
        train::Trainer trainer(c, ds, rb ? &*rb : nullptr);
        write_resolved(out, "train", extra + train::to_text(trainer.config()));
        std::vector<train::EpochMetrics> log;
        const auto t0 = std::chrono::steady_clock::now();
        const auto flush_metrics = [&] {
            write_text(out / "metrics.csv", train::metrics_csv(log, trainer.config().model.heads.attr_names));
        };
        try {
            trainer.run([&](const train::EpochMetrics& m) {
                log.push_back(m);
                const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                char buf[160];
                std::snprintf(buf, sizeof buf, "epoch %zu/%zu: held-out acc %.4f, loss %.4f, lambda %.3f (%.1fs)\n",
                              m.epoch, trainer.config().epochs, m.clean_acc, m.loss_total, m.mean_lambda_logic, s);
                os << buf << std::flush;
            });
        } catch (const DivergenceError&) {
            flush_metrics();
            throw;
        }
        flush_metrics();
        train::save_checkpoint(trainer.checkpoint(), out / "model.nshd");
        os << "saved " << (out / "model.nshd").string() << " (" << trainer.model().parameter_count()
           << " parameters)\n";
        return kExitOk;
    };
}

Body eval_cmd(Args& a) {
    const auto ckpts = config::as_string_list(a.req("ckpt"));
    const std::string data = a.req("data");
    const auto rules_path = a.opt("rules");
    const auto out = a.opt("out");
    const bool fgsm = a.flag("fgsm");
    const bool pgd = a.flag("pgd");
    const double eps = a.epsilon("epsilon", attack::kDefaultEpsilon);
    std::vector<attack::AttackSpec> specs;
    if (fgsm) specs.push_back(attack::AttackSpec::fgsm(eps));
    const auto p = pgd_spec(a, eps, "pgd_steps", "pgd_step_size");
    if (pgd) specs.push_back(p);
    const std::uint64_t seed = a.u64("seed", 1);
    a.finish();
    try {
        for (const auto& s : specs) s.validate();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const std::string resolved = a.resolved().to_text();
    return [=](std::ostream& os) {
        const auto rb = load_optional_rules(rules_path);
        const auto ds = sign::load_dataset(manifest_path(data));
        eval::EvalReport report;
        std::map<std::string, int> seen;
        for (const auto& path : ckpts) {
            const auto ck = train::load_checkpoint(path);
            if (rb) check_rules_match(*rb, ck.config.model);
            std::string name(train::mode_name(ck.config.mode));
            if (seen[name]++ > 0) name += " (" + fs::path(path).stem().string() + ")";
            report.rows.push_back(eval::evaluate(ck.model(), ds, specs, rb ? &*rb : nullptr, seed, name));
        }
        os << report.markdown();
        if (out) {
            write_resolved(*out, "eval", resolved);
            write_text(fs::path(*out) / "report.md", report.markdown());
            write_text(fs::path(*out) / "report.csv", report.csv());
        }
        return kExitOk;
    };
}

Body attack_cmd(Args& a) {
    const std::string ckpt = a.req("ckpt");
    const std::string data = a.req("data");
    const auto kind = attack::parse_kind(a.str("kind", "fgsm"));
    std::vector<double> sweep;
    if (auto s = a.opt("epsilon_sweep")) {
        for (const auto& e : config::as_string_list(*s)) sweep.push_back(attack::parse_epsilon(e));
    }
    const double eps = a.epsilon("epsilon", attack::kDefaultEpsilon);
    if (sweep.empty()) sweep.push_back(eps);
    const std::size_t steps = a.size("pgd_steps", attack::kDefaultPgdSteps);
    const double alpha = a.epsilon("pgd_step_size", 0.0);
    const bool dump = a.flag("dump");
    const std::size_t limit = a.size("dump_limit", 16);
    const auto out = a.opt("out");
    const std::uint64_t seed = a.u64("seed", 1);
    a.finish();
    std::vector<attack::AttackSpec> specs;
    try {
        for (double e : sweep) {
            specs.push_back(kind == attack::Kind::fgsm ? attack::AttackSpec::fgsm(e)
                                                       : attack::AttackSpec::pgd(e, steps, alpha, true));
            specs.back().validate();
        }
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    if (dump && !out) throw UsageError("attack: --dump needs --out");
    const std::string resolved = a.resolved().to_text();
    return [=](std::ostream& os) {
        const auto model = train::load_checkpoint(ckpt).model();
        const auto ds = sign::load_dataset(manifest_path(data));
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), 0);
        const auto clean_pred = net::predict(model, ds.images<float>(all)).cls;
        std::ostringstream csv;
        csv << "epsilon,attack,accuracy,clean_accuracy,samples\n";
        const double clean_acc = eval::accuracy(clean_pred, ds.labels());
        if (out) write_resolved(*out, "attack", resolved);
        const std::size_t per = ds.channels() * ds.height() * ds.width();
        const auto dump_set = [&](const fs::path& dir, const Tensor<float>& images) {
            fs::create_directories(dir);
            for (std::size_t i = 0; i < std::min(limit, ds.size()); ++i) {
                Tensor<float> one(Shape{ds.channels(), ds.height(), ds.width()});
                std::copy_n(images.ptr() + i * per, per, one.ptr());
                sign::write_ppm(dir / fs::path(ds.path(i)).filename(), sign::quantize(one));
            }
        };
        if (dump) dump_set(fs::path(*out) / "clean", ds.images<float>(all));
        for (const auto& spec : specs) {
            const auto adv = eval::attack_dataset(model, ds, spec, seed);
            const double acc = eval::accuracy(net::predict(model, adv).cls, ds.labels());
            csv << text::format_double(spec.epsilon) << "," << attack::kind_name(spec.kind) << ","
                << text::format_double(acc) << "," << text::format_double(clean_acc) << "," << ds.size() << "\n";
            os << spec.describe() << ": accuracy " << pct(acc) << " (clean " << pct(clean_acc) << ")\n";
            if (dump) dump_set(fs::path(*out) / ("eps_" + text::format_double(spec.epsilon)), adv);
        }
        if (out) write_text(fs::path(*out) / "attack.csv", csv.str());
        return kExitOk;
    };
}

Body verify_cmd(Args& a) {
    const std::string ckpt = a.req("ckpt");
    const std::string data = a.req("data");
    const std::string rules_path = a.req("rules");
    const auto out = a.opt("out");
    a.finish();
    const std::string resolved = a.resolved().to_text();
    return [=](std::ostream& os) {
        const auto rb = rules::load_rules(rules_path);
        const auto ck = train::load_checkpoint(ckpt);
        check_rules_match(rb, ck.config.model);
        const auto model = ck.model();
        const auto ds = sign::load_dataset(manifest_path(data), rb.num_classes());
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), 0);
        const auto pred = net::predict(model, ds.images<float>(all));
        std::ostringstream csv;
        csv << "index,path,label,predicted,violations,mismatches\n";
        std::size_t flagged = 0;
        std::vector<std::size_t> values(rb.num_attributes());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            for (std::size_t j = 0; j < values.size(); ++j) values[j] = pred.attrs[j][i];
            const auto rep = rb.verify_prediction(pred.cls[i], values);
            if (rep.consistent()) continue;
            ++flagged;
            std::vector<std::string> mism;
            for (const auto& c : rep.checks) {
                if (!c.match) mism.push_back(c.attribute + ":" + c.expected + "->" + c.predicted);
            }
            csv << i << "," << ds.path(i) << "," << ds.label(i) << "," << pred.cls[i] << "," << rep.violations << ","
                << text::join(mism, ";") << "\n";
        }
        os << "flagged " << flagged << " of " << ds.size() << " predictions as inconsistent with the rules"
           << " (consistency rate " << pct(1.0 - static_cast<double>(flagged) / static_cast<double>(ds.size()))
           << ")\n";
        if (out) {
            write_resolved(*out, "verify", resolved);
            write_text(fs::path(*out) / "flagged.csv", csv.str());
        }
        return kExitOk;
    };
}

Body project_cmd(Args& a) {
    const std::string ckpt = a.req("ckpt");
    const std::string data = a.req("data");
    const fs::path out = a.req("out");
    const std::string which = a.str("attack", "none");
    const double eps = a.epsilon("epsilon", attack::kDefaultEpsilon);
    const std::size_t steps = a.size("pgd_steps", attack::kDefaultPgdSteps);
    const std::uint64_t seed = a.u64("seed", 1);
    a.finish();
    std::optional<attack::AttackSpec> spec;
    try {
        if (which != "none") {
            spec = attack::parse_kind(which) == attack::Kind::fgsm ? attack::AttackSpec::fgsm(eps)
                                                                  : attack::AttackSpec::pgd(eps, steps);
            spec->validate();
        }
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    const std::string resolved = a.resolved().to_text();
    return [=](std::ostream& os) {
        const auto model = train::load_checkpoint(ckpt).model();
        const auto ds = sign::load_dataset(manifest_path(data));
        eval::Pca2 pca;
        const auto pts = eval::project_features(model, ds, spec, seed, &pca);
        write_resolved(out, "project", resolved);
        write_text(out / "projection.csv", eval::projection_csv(pts));
        char buf[160];
        std::snprintf(buf, sizeof buf, "projected %zu points; top-2 components explain %.1f%% of feature variance\n",
                      pts.size(), 100.0 * (pca.variance1 + pca.variance2) / std::max(pca.total_variance, 1e-300));
        os << buf;
        return kExitOk;
    };
}

Body report_cmd(Args& a) {
    const std::string train_data = a.req("train_data");
    const std::string test_data = a.req("test_data");
    const auto rules_path = a.opt("rules");
    const fs::path out = a.req("out");
    ExperimentConfig ec;
    if (auto m = a.opt("modes")) {
        ec.modes.clear();
        try {
            for (const auto& name : config::as_string_list(*m)) ec.modes.push_back(train::parse_mode(name));
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
    }
    const std::size_t eval_steps = a.size("eval_pgd_steps", attack::kDefaultPgdSteps);
    const double eval_alpha = a.epsilon("eval_pgd_step_size", 0.0);
    ec.eval_seed = a.u64("eval_seed", 1);
    train::apply_config(a.rest(), ec.base);
    a.finish();
    const bool have_rules = rules_path.has_value() && !rules_path->empty();
    try {
        for (train::Mode m : ec.modes) {
            train::TrainConfig t = ec.base;
            t.mode = m;
            t.validate(have_rules);
        }
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    ec.eval_attacks = {attack::AttackSpec::fgsm(ec.base.epsilon),
                       attack::AttackSpec::pgd(ec.base.epsilon, eval_steps, eval_alpha, true)};
    ec.out_dir = out;
    const std::string resolved = a.resolved().to_text() + train::to_text(ec.base);
    return [=](std::ostream& os) {
        const auto rb = load_optional_rules(rules_path);
        const std::size_t classes = rb ? rb->num_classes() : 0;
        const auto tr = sign::load_dataset(manifest_path(train_data), classes);
        const auto te = sign::load_dataset(manifest_path(test_data), classes);
        write_resolved(out, "report", resolved);
        const auto result = run_experiment(ec, tr, te, rb ? &*rb : nullptr,
                                           [&](std::string_view line) { os << line << "\n" << std::flush; });
        write_text(out / "report.md", result.report.markdown());
        write_text(out / "report.csv", result.report.csv());
        os << "\n" << result.report.markdown();
        char buf[96];
        std::snprintf(buf, sizeof buf, "total time %.1f min\n", result.seconds / 60.0);
        os << buf;
        return result.any_diverged() ? kExitDivergence : kExitOk;
    };
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"nsdesk: neuro-symbolic adversarial training on synthetic traffic signs", "nsdesk"};
    app.require_subcommand(1, 1);
    app.allow_extras(false);

    const std::vector<Flag> common_eval = {
        {"ckpt", "checkpoint file (eval accepts several)", Flag::list},
        {"data", "dataset manifest or its directory"},
        {"seed", "seed of the attack noise"},
    };
    const auto with = [](std::vector<Flag> a, const std::vector<Flag>& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    };
    const std::vector<Flag> train_flags = {
        {"mode", "plain | fgsm_only | pgd_only | fgsm_clean | pgd_clean | neurosym | fgsm_neurosym | pgd_neurosym"},
        {"epochs", "training epochs (10)"},
        {"batch-size", "minibatch size (32)"},
        {"seed", "run seed (1)"},
        {"lr", "Adam learning rate (1e-3)"},
        {"epsilon", "attack budget, decimal or fraction such as 8/255"},
        {"attack-steps", "PGD iterations during training (10)"},
        {"attack-step-size", "PGD step size during training (epsilon/4)"},
        {"attack-random-start", "PGD random start during training (true)"},
        {"lambda-semantic", "weight of the semantic term (0.3)"},
        {"lambda-logic", "base weight of the logic term (0.5)"},
        {"widths", "comma-separated stage widths (16,32,64)"},
        {"blocks-per-stage", "residual blocks per stage (2)"},
        {"holdout-fraction", "share of training data held out for the weight updates (0.1)"},
    };

    std::map<std::string, Command> cmds;
    cmds["gen-data"].attach(&app, "gen-data", "render a synthetic sign dataset",
                            {{"rules", "rule file"},
                             {"out", "output directory"},
                             {"per-class", "images per class (200)"},
                             {"seed", "dataset seed (1)"},
                             {"split", "split tag mixed into the seeds (train)"},
                             {"canvas", "image side in pixels (32)"},
                             {"rotation", "max rotation in degrees (10)"},
                             {"translation", "max shift in pixels (2)"},
                             {"brightness-lo", "brightness factor lower bound (0.8)"},
                             {"brightness-hi", "brightness factor upper bound (1.2)"},
                             {"noise", "background noise amplitude (0.15)"}});
    cmds["train"].attach(&app, "train", "train one model",
                         with({{"data", "training manifest or its directory"},
                               {"rules", "rule file (required by the neuro-symbolic modes)"},
                               {"out", "output directory"}},
                              train_flags));
    cmds["eval"].attach(&app, "eval", "clean and attacked accuracy of one or more checkpoints",
                        with(common_eval, {{"rules", "rule file for consistency metrics"},
                                           {"out", "directory for report.md and report.csv"},
                                           {"fgsm", "evaluate under FGSM", Flag::boolean},
                                           {"pgd", "evaluate under PGD", Flag::boolean},
                                           {"epsilon", "attack budget"},
                                           {"pgd-steps", "PGD iterations (10)"},
                                           {"pgd-step-size", "PGD step size (epsilon/4)"}}));
    cmds["attack"].attach(&app, "attack", "attack a checkpoint over one or several budgets",
                          with({{"ckpt", "checkpoint file"}, {"data", "dataset manifest or its directory"},
                                {"seed", "seed of the attack noise"}},
                               {{"kind", "fgsm | pgd (fgsm)"},
                                {"epsilon", "attack budget"},
                                {"epsilon-sweep", "comma-separated budgets", Flag::list},
                                {"pgd-steps", "PGD iterations (10)"},
                                {"pgd-step-size", "PGD step size (epsilon/4)"},
                                {"dump", "write adversarial images as PPM", Flag::boolean},
                                {"dump-limit", "images written per budget (16)"},
                                {"out", "output directory"}}));
    cmds["verify"].attach(&app, "verify", "flag predictions that contradict the rules",
                          {{"ckpt", "checkpoint file"},
                           {"data", "dataset manifest or its directory"},
                           {"rules", "rule file"},
                           {"out", "directory for flagged.csv"}});
    cmds["project"].attach(&app, "project", "2D PCA of clean and adversarial features",
                           {{"ckpt", "checkpoint file"},
                            {"data", "dataset manifest or its directory"},
                            {"out", "output directory"},
                            {"attack", "none | fgsm | pgd (none)"},
                            {"epsilon", "attack budget"},
                            {"pgd-steps", "PGD iterations (10)"},
                            {"seed", "seed of the attack noise"}});
    cmds["report"].attach(&app, "report", "train and evaluate every mode, then tabulate",
                          with({{"train-data", "training manifest or its directory"},
                                {"test-data", "test manifest or its directory"},
                                {"rules", "rule file"},
                                {"out", "output directory"},
                                {"modes", "comma-separated subset of modes (all)", Flag::list},
                                {"eval-pgd-steps", "PGD iterations at evaluation (10)"},
                                {"eval-pgd-step-size", "PGD step size at evaluation (epsilon/4)"},
                                {"eval-seed", "seed of the evaluation attacks (1)"}},
                               train_flags));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    const std::map<std::string, std::function<Body(Args&)>> handlers = {
        {"gen-data", gen_data}, {"train", train_cmd},     {"eval", eval_cmd},     {"attack", attack_cmd},
        {"verify", verify_cmd}, {"project", project_cmd}, {"report", report_cmd},
    };
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    Body body;
    try {
        Args args(cmds.at(name).resolve(), name);
        body = handlers.at(name)(args);
    } catch (const Error& e) {
        err << "nsdesk " << name << ": " << e.what() << "\n";
        return kExitUsage;
    }
    try {
        return body(out);
    } catch (const DivergenceError& e) {
        err << "nsdesk " << name << ": " << e.what() << "\n";
        return kExitDivergence;
    } catch (const std::exception& e) {
        err << "nsdesk " << name << ": " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace nsdesk::cli
