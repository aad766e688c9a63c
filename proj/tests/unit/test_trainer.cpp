#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "nsdesk/common/error.hpp"
#include "nsdesk/trainer/trainer.hpp"
#include "small_dataset.hpp"
#include "temp_dir.hpp"

using namespace nsdesk;
using nsdesk::testing::shipped_rules;
using nsdesk::testing::small_dataset;

namespace {

train::TrainConfig small_config(train::Mode mode, std::size_t epochs = 1) {
    train::TrainConfig c;
    c.mode = mode;
    c.epochs = epochs;
    c.batch_size = 16;
    c.seed = 3;
    c.model.backbone.widths = {4, 8};
    c.model.backbone.blocks_per_stage = 1;
    c.attack_steps = 2;
    c.holdout_fraction = 0.2;
    return c;
}

struct Fixture {
    rules::RuleBase rb = shipped_rules();
    sign::Dataset data = small_dataset(rb, 5);
};

}  // namespace

TEST_CASE("mode names and flags") {
    CHECK(train::kAllModes.size() == 8);
    for (train::Mode m : train::kAllModes) CHECK(train::parse_mode(train::mode_name(m)) == m);
    using train::Mode;
    CHECK_FALSE(train::is_adversarial(Mode::plain));
    CHECK_FALSE(train::is_adversarial(Mode::neurosym));
    CHECK(train::is_adversarial(Mode::pgd_neurosym));
    CHECK_FALSE(train::uses_clean(Mode::fgsm_only));
    CHECK_FALSE(train::uses_clean(Mode::pgd_only));
    CHECK(train::uses_clean(Mode::pgd_clean));
    CHECK(train::is_symbolic(Mode::fgsm_neurosym));
    CHECK_FALSE(train::is_symbolic(Mode::fgsm_clean));
    CHECK(train::attack_kind(Mode::fgsm_clean) == attack::Kind::fgsm);
    CHECK(train::attack_kind(Mode::pgd_only) == attack::Kind::pgd);
    try {
        train::parse_mode("robust");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        for (train::Mode m : train::kAllModes) CHECK(msg.find(train::mode_name(m)) != std::string::npos);
    }
}

TEST_CASE("config text round trip and validation") {
    train::TrainConfig c = small_config(train::Mode::pgd_neurosym, 4);
    c.weights.w = {1.0, 0.5, 2.0, 1.0, 0.5};
    c.epsilon = 8.0 / 255.0;
    c.attack_random_start = false;
    const std::string t = train::to_text(c);
    CHECK(train::to_text(train::parse_train_config(t)) == t);
    CHECK(train::parse_train_config("epsilon = 8/255\n").epsilon == 8.0 / 255.0);
    CHECK_THROWS_AS(train::parse_train_config("colour = red\n"), ConfigError);
    CHECK_THROWS_AS(train::parse_train_config("epochs = -1\n"), ParseError);
    CHECK_THROWS_AS(train::parse_train_config("epochs = 1\nepochs = 2\n"), ParseError);

    CHECK_THROWS_AS(small_config(train::Mode::neurosym).validate(false), ConfigError);
    CHECK_NOTHROW(small_config(train::Mode::plain).validate(false));
    auto bad = small_config(train::Mode::plain);
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.validate(false), ConfigError);
    bad = small_config(train::Mode::pgd_only);
    bad.epsilon = 1.5;
    CHECK_THROWS_AS(bad.validate(false), ConfigError);
}

TEST_CASE("trainer refuses symbolic modes without rules and runs plain without them") {
    Fixture f;
    CHECK_THROWS_AS(train::Trainer(small_config(train::Mode::neurosym), f.data, nullptr), ConfigError);
    train::Trainer t(small_config(train::Mode::plain), f.data, nullptr);
    const auto log = t.run();
    REQUIRE(log.size() == 1);
    CHECK(log[0].attr_acc.empty());
    CHECK(std::isnan(log[0].mean_t_joint));
    CHECK(t.config().model.heads.num_classes == 20);
    CHECK(t.holdout_indices().size() == 20);
    CHECK(t.train_indices().size() == 80);
}

TEST_CASE("metrics log header and rows") {
    Fixture f;
    train::Trainer t(small_config(train::Mode::neurosym, 2), f.data, &f.rb);
    const auto log = t.run();
    const std::string csv = train::metrics_csv(log, f.rb.schema().names);
    CHECK(csv.starts_with("epoch,clean_acc,attr_acc_shape,attr_acc_fill_color,attr_acc_border_color,attr_acc_icon,"
                          "attr_acc_category,w_shape,w_fill_color,w_border_color,w_icon,w_category,"
                          "mean_lambda_logic,mean_T_joint,loss_total\n"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    for (const auto& m : log) {
        CHECK(m.mean_lambda_logic > 0.0);
        CHECK(m.batches == 5);
        CHECK(m.attr_acc.size() == 5);
    }
}

TEST_CASE("plain training equals the symbolic objective with zero weights") {
    Fixture f;
    auto plain = small_config(train::Mode::plain, 2);
    auto zero = small_config(train::Mode::neurosym, 2);
    zero.weights.lambda_semantic = 0.0;
    zero.weights.lambda_logic_base = 0.0;
    train::Trainer a(plain, f.data, &f.rb), b(zero, f.data, &f.rb);
    for (int e = 0; e < 2; ++e) CHECK(a.run_epoch().loss_total == b.run_epoch().loss_total);
    CHECK(a.model().params() == b.model().params());
}

TEST_CASE("identical seeds give bitwise identical checkpoints") {
    Fixture f;
    const auto run = [&](std::uint64_t seed) {
        auto c = small_config(train::Mode::pgd_neurosym, 2);
        c.seed = seed;
        train::Trainer t(c, f.data, &f.rb);
        t.run();
        return train::serialize(t.checkpoint());
    };
    const std::string a = run(9);
    CHECK(a == run(9));
    CHECK(a != run(10));
}

TEST_CASE("optimizer steps decrease the batch objective") {
    Fixture f;
    for (train::Mode mode : {train::Mode::plain, train::Mode::neurosym, train::Mode::pgd_neurosym}) {
        auto c = small_config(mode);
        c.batch_size = 8;
        train::Trainer t(c, f.data, &f.rb);
        std::vector<std::size_t> order(t.train_indices().begin(), t.train_indices().end());
        std::size_t down = 0, steps = 0;
        for (std::size_t s = 0; s + 8 <= order.size(); s += 8, ++steps) {
            const auto r = t.step(std::span<const std::size_t>(order).subspan(s, 8));
            const double after = t.batch_loss(r.clean, r.adversarial.size() ? &r.adversarial : nullptr, r.labels);
            down += after < r.loss;
        }
        INFO(train::mode_name(mode));
        CHECK(static_cast<double>(down) >= 0.8 * static_cast<double>(steps));
    }
}

TEST_CASE("adversarial counterparts respect the budget") {
    Fixture f;
    for (train::Mode mode : {train::Mode::fgsm_only, train::Mode::pgd_clean}) {
        auto c = small_config(mode);
        train::Trainer t(c, f.data, &f.rb);
        const std::vector<std::size_t> batch(t.train_indices().begin(), t.train_indices().begin() + 16);
        const auto r = t.step(batch);
        REQUIRE(r.adversarial.shape() == r.clean.shape());
        bool moved = false;
        for (std::size_t k = 0; k < r.clean.size(); ++k) {
            REQUIRE(std::abs(static_cast<double>(r.adversarial[k]) - r.clean[k]) <= c.epsilon);
            REQUIRE(r.adversarial[k] >= 0.0f);
            REQUIRE(r.adversarial[k] <= 1.0f);
            moved |= r.adversarial[k] != r.clean[k];
        }
        CHECK(moved);
    }
}

TEST_CASE("lowest held-out attribute accuracy gets the largest weight") {
    Fixture f;
    train::Trainer t(small_config(train::Mode::neurosym, 3), f.data, &f.rb);
    for (const auto& m : t.run()) {
        const auto wmax = std::max_element(m.w.begin(), m.w.end()) - m.w.begin();
        CHECK(m.attr_acc[static_cast<std::size_t>(wmax)] == *std::min_element(m.attr_acc.begin(), m.attr_acc.end()));
        double mean = 0.0;
        for (double w : m.w) mean += w / static_cast<double>(m.w.size());
        CHECK(mean == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("divergence guard aborts with a diagnostic") {
    Fixture f;
    auto c = small_config(train::Mode::pgd_neurosym);
    c.divergence_threshold = 1e-3;
    train::Trainer t(c, f.data, &f.rb);
    try {
        t.run();
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("pgd_neurosym") != std::string::npos);
        CHECK(msg.find("L_total") != std::string::npos);
    }
}

TEST_CASE("checkpoint round trip is byte-identical and preserves outputs") {
    Fixture f;
    train::Trainer t(small_config(train::Mode::fgsm_neurosym, 1), f.data, &f.rb);
    t.run();
    const train::Checkpoint ck = t.checkpoint();
    const std::string bytes = train::serialize(ck);
    const train::Checkpoint back = train::deserialize(bytes);
    CHECK(train::serialize(back) == bytes);
    CHECK(back.epoch == 1);
    CHECK(back.w == t.weights());

    testing::TempDir dir("ckpt");
    train::save_checkpoint(ck, dir / "m.nshd");
    const auto model = train::load_checkpoint(dir / "m.nshd").model();
    CHECK(model.state_hash() == t.model().state_hash());
    const std::vector<std::size_t> idx = {0, 7, 33, 99};
    const auto x = f.data.images<float>(idx);
    Graph<float> g1, g2;
    const auto o1 = t.model().forward(g1, t.model().bind(g1, false), g1.constant(x), net::Mode::eval);
    const auto o2 = model.forward(g2, model.bind(g2, false), g2.constant(x), net::Mode::eval);
    CHECK(o1.logits.value() == o2.logits.value());
    for (std::size_t j = 0; j < o1.attr_logits.size(); ++j) CHECK(o1.attr_logits[j].value() == o2.attr_logits[j].value());
}

TEST_CASE("corrupt checkpoints are rejected") {
    Fixture f;
    train::Trainer t(small_config(train::Mode::plain, 1), f.data, &f.rb);
    const std::string bytes = train::serialize(t.checkpoint());
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{8}, std::size_t{100}, bytes.size() / 2,
                            bytes.size() - 1}) {
        CHECK_THROWS_AS(train::deserialize(std::string_view(bytes).substr(0, cut)), CheckpointError);
    }
    std::string flipped = bytes;
    flipped[bytes.size() - 20] ^= 0x40;
    CHECK_THROWS_WITH_AS(train::deserialize(flipped), doctest::Contains("checksum"), CheckpointError);
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_WITH_AS(train::deserialize(magic), doctest::Contains("magic"), CheckpointError);
    std::string version = bytes;
    version[4] = 9;
    CHECK_THROWS_WITH_AS(train::deserialize(version), doctest::Contains("version"), CheckpointError);
    CHECK_THROWS_AS(train::deserialize(bytes + "x"), CheckpointError);
    CHECK_THROWS_AS(train::load_checkpoint("/nonexistent/m.nshd"), IoError);
}

TEST_CASE("loading into a mismatched model names the tensor") {
    Fixture f;
    train::Trainer t(small_config(train::Mode::plain, 1), f.data, &f.rb);
    const auto ck = t.checkpoint();
    auto cfg = ck.config.model;
    cfg.backbone.widths = {4, 12};
    net::Model<float> other(cfg, 1);
    CHECK_THROWS_WITH_AS(ck.load_into(other), doctest::Contains("stage2.block0.conv1"), ShapeError);
}
