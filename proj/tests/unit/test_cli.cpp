#include <filesystem>
#include <fstream>

#include "cli_runner.hpp"
#include "doctest.h"
#include "nsdesk/trainer/trainer.hpp"
#include "temp_dir.hpp"

using namespace nsdesk;
using nsdesk::testing::read_file;
using nsdesk::testing::run_cli;
using nsdesk::testing::TempDir;

namespace fs = std::filesystem;

namespace {

const std::string kRules = NSDESK_DATA_DIR "/rules/synthetic_signs.csv";

std::vector<std::string> small_model() {
    return {"--widths", "4,8", "--blocks-per-stage", "1", "--epochs", "1", "--batch-size", "16", "--attack-steps", "2"};
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

// One generated train/test pair shared by the cases of this file.
struct Data {
    TempDir dir{"cli"};
    Data() {
        for (const char* split : {"train", "test"}) {
            const auto r = run_cli({"gen-data", "--rules", kRules, "--per-class", split[1] == 'r' ? "5" : "2", "--seed",
                                    "3", "--split", split, "--canvas", "16", "--out", (dir / split).string()});
            REQUIRE(r.code == 0);
        }
    }
    std::string train() const { return (dir / "train").string(); }
    std::string test() const { return (dir / "test").string(); }
};

Data& data() {
    static Data d;
    return d;
}

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run_cli({"--help"}).code == 0);
    const auto h = run_cli({"train", "--help"});
    CHECK(h.code == 0);
    for (const char* flag : {"--mode", "--epsilon", "--rules", "--config", "--widths"}) {
        CHECK(h.out.find(flag) != std::string::npos);
    }
    CHECK(run_cli({}).code == 1);
    CHECK(run_cli({"fly"}).code == 1);
    CHECK(run_cli({"train", "--data", "x", "--out", "y", "--bogus", "1"}).code == 1);
    const auto mode = run_cli({"train", "--data", "x", "--out", "y", "--mode", "robust"});
    CHECK(mode.code == 1);
    CHECK(mode.err.find("pgd_neurosym") != std::string::npos);
    const auto rules = run_cli({"train", "--data", "x", "--out", "y", "--mode", "neurosym"});
    CHECK(rules.code == 1);
    CHECK(rules.err.find("rule file") != std::string::npos);
    CHECK(run_cli({"train", "--out", "y"}).code == 1);
    CHECK(run_cli({"eval", "--ckpt", "a", "--data", "b", "--epsilon", "2"}).code == 1);
}

TEST_CASE("gen-data is byte-identical on rerun and reports missing rules") {
    TempDir d("gen");
    const auto args = std::vector<std::string>{"gen-data", "--rules", kRules, "--per-class", "2", "--seed", "7",
                                               "--canvas", "16", "--out", (d / "a").string()};
    REQUIRE(run_cli(args).code == 0);
    const std::string manifest = read_file(d / "a/manifest.csv");
    std::vector<std::string> images;
    for (const auto& e : fs::directory_iterator(d / "a/img")) images.push_back(read_file(e.path()));
    REQUIRE(run_cli(args).code == 0);
    CHECK(read_file(d / "a/manifest.csv") == manifest);
    std::size_t same = 0, k = 0;
    for (const auto& e : fs::directory_iterator(d / "a/img")) same += read_file(e.path()) == images[k++];
    CHECK(same == 40);
    CHECK(read_file(d / "a/run_config.txt").find("per_class = 2") != std::string::npos);

    const auto missing = run_cli({"gen-data", "--rules", (d / "none.csv").string(), "--out", (d / "b").string()});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("none.csv") != std::string::npos);
}

TEST_CASE("train runs without rules in plain mode and is deterministic") {
    auto& D = data();
    TempDir d("train");
    const auto base = cat({"train", "--data", D.train(), "--mode", "pgd_neurosym", "--rules", kRules, "--seed", "1"},
                          small_model());
    REQUIRE(run_cli(cat(base, {"--out", (d / "a").string()})).code == 0);
    REQUIRE(run_cli(cat(base, {"--out", (d / "b").string()})).code == 0);
    CHECK(read_file(d / "a/model.nshd") == read_file(d / "b/model.nshd"));
    CHECK(read_file(d / "a/metrics.csv").starts_with("epoch,clean_acc,attr_acc_shape,"));
    const std::string cfg = read_file(d / "a/run_config.txt");
    CHECK(cfg.find("mode = pgd_neurosym") != std::string::npos);
    CHECK(cfg.find("num_classes = 20") != std::string::npos);

    const auto plain = run_cli(cat({"train", "--data", D.train(), "--out", (d / "p").string()}, small_model()));
    CHECK(plain.code == 0);
    CHECK(fs::exists(d / "p/model.nshd"));
}

TEST_CASE("config file sits between defaults and flags") {
    auto& D = data();
    TempDir d("prec");
    {
        std::ofstream f(d / "run.cfg");
        f << "# shared settings\nepochs = 2\nlr = 0.002\nwidths = 4,8\nblocks_per_stage = 1\nbatch_size = 16\n";
    }
    const auto r = run_cli({"train", "--config", (d / "run.cfg").string(), "--epochs", "1", "--data", D.train(),
                            "--out", (d / "o").string()});
    REQUIRE(r.code == 0);
    const auto ck = train::load_checkpoint(d / "o/model.nshd");
    CHECK(ck.config.epochs == 1);
    CHECK(ck.config.adam.lr == 0.002);
    CHECK(ck.config.batch_size == 16);
    CHECK(ck.epoch == 1);
    {
        std::ofstream f(d / "bad.cfg");
        f << "colour = red\n";
    }
    CHECK(run_cli({"train", "--config", (d / "bad.cfg").string(), "--data", D.train(), "--out", "x"}).code == 1);
    CHECK(run_cli({"train", "--config", (d / "none.cfg").string(), "--data", D.train(), "--out", "x"}).code == 1);
}

TEST_CASE("divergence aborts with exit code 3 and keeps the metrics") {
    auto& D = data();
    TempDir d("div");
    {
        std::ofstream f(d / "div.cfg");
        f << "divergence_threshold = 1e-6\n";
    }
    const auto r = run_cli(cat({"train", "--config", (d / "div.cfg").string(), "--data", D.train(), "--out",
                                (d / "o").string()},
                               small_model()));
    CHECK(r.code == 3);
    CHECK(r.err.find("diverged") != std::string::npos);
    CHECK(fs::exists(d / "o/metrics.csv"));
    CHECK_FALSE(fs::exists(d / "o/model.nshd"));
}

TEST_CASE("eval, attack, verify and project on a trained checkpoint") {
    auto& D = data();
    TempDir d("eval");
    REQUIRE(run_cli(cat({"train", "--data", D.train(), "--rules", kRules, "--mode", "neurosym", "--out",
                         (d / "m").string()},
                        small_model()))
                .code == 0);
    const std::string ck = (d / "m/model.nshd").string();

    const auto e = run_cli({"eval", "--ckpt", ck, ck, "--data", D.test(), "--rules", kRules, "--fgsm", "--pgd",
                            "--epsilon", "8/255", "--pgd-steps", "3", "--out", (d / "e").string()});
    REQUIRE(e.code == 0);
    CHECK(e.out.find("| neurosym |") != std::string::npos);
    CHECK(e.out.find("| neurosym (model) |") != std::string::npos);
    CHECK(read_file(d / "e/report.csv").starts_with("mode,samples,clean_acc,fgsm_acc,pgd_acc"));
    CHECK(fs::exists(d / "e/run_config.txt"));
    CHECK(run_cli({"eval", "--ckpt", (d / "missing.nshd").string(), "--data", D.test()}).code == 2);

    const auto a = run_cli({"attack", "--ckpt", ck, "--data", D.test(), "--epsilon-sweep", "0.03,0.1,0.5,1", "--dump",
                            "--dump-limit", "3", "--out", (d / "a").string()});
    REQUIRE(a.code == 0);
    for (const char* sub : {"clean", "eps_0.03", "eps_0.1", "eps_0.5", "eps_1"}) {
        INFO(sub);
        CHECK(std::distance(fs::directory_iterator(d / "a" / sub), fs::directory_iterator{}) == 3);
    }
    const std::string sweep = read_file(d / "a/attack.csv");
    CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 5);

    const auto v = run_cli({"verify", "--ckpt", ck, "--data", D.test(), "--rules", kRules, "--out", (d / "v").string()});
    REQUIRE(v.code == 0);
    CHECK(v.out.find("flagged") != std::string::npos);
    CHECK(read_file(d / "v/flagged.csv").starts_with("index,path,label,predicted,violations,mismatches\n"));

    const auto p = run_cli({"project", "--ckpt", ck, "--data", D.test(), "--attack", "fgsm", "--out",
                            (d / "p").string()});
    REQUIRE(p.code == 0);
    const std::string csv = read_file(d / "p/projection.csv");
    CHECK(csv.starts_with("x,y,label,condition\n"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 81);
}

TEST_CASE("report trains and tabulates a subset of modes") {
    auto& D = data();
    TempDir d("report");
    const auto r = run_cli(cat({"report", "--train-data", D.train(), "--test-data", D.test(), "--rules", kRules,
                                "--modes", "plain,fgsm_neurosym", "--eval-pgd-steps", "2", "--out", d.path().string()},
                               small_model()));
    REQUIRE(r.code == 0);
    const std::string md = read_file(d / "report.md");
    CHECK(md.find("| plain |") != std::string::npos);
    CHECK(md.find("| fgsm_neurosym |") != std::string::npos);
    CHECK(fs::exists(d / "plain/model.nshd"));
    CHECK(fs::exists(d / "fgsm_neurosym/metrics.csv"));
    CHECK(read_file(d / "run_config.txt").find("modes = plain,fgsm_neurosym") != std::string::npos);
}
