#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "loss_cases.hpp"
#include "nsdesk/common/error.hpp"
#include "nsdesk/diffcore/ops.hpp"
#include "nsdesk/symlosses/symlosses.hpp"
#include "random_tensors.hpp"

using namespace nsdesk;
using nsdesk::testing::random_distributions;
using nsdesk::testing::uniform_tensor;

namespace {

rules::RuleBase shipped() { return rules::load_rules(NSDESK_DATA_DIR "/rules/synthetic_signs.csv"); }

// Rule base whose profiles are all distinct on the equivalence attributes.
rules::RuleBase singletons() {
    std::string text = shipped().to_text();
    text = text.substr(0, text.find("!equivalence=")) + "!equivalence=shape,fill_color,border_color,icon,category\n";
    return rules::parse_rules(text);
}

net::ModelOutputs<double> outputs(Graph<double>& g, const std::vector<Tensor<double>>& heads) {
    net::ModelOutputs<double> out;
    out.logits = g.input(heads[0], true);
    for (std::size_t j = 1; j < heads.size(); ++j) {
        out.attr_logits.push_back(g.input(heads[j], true));
    }
    out.features = out.logits;
    return out;
}

std::vector<Tensor<double>> random_heads(const rules::RuleBase& rb, std::size_t n, Rng& rng, double scale) {
    std::vector<Tensor<double>> t{uniform_tensor({n, rb.num_classes()}, rng, -scale, scale)};
    for (std::size_t j = 0; j < rb.num_attributes(); ++j) {
        t.push_back(uniform_tensor({n, rb.schema().cardinality(j)}, rng, -scale, scale));
    }
    return t;
}

// Logits that put almost all mass on the label and on its profile values.
std::vector<Tensor<double>> confident_heads(const rules::RuleBase& rb, const std::vector<std::size_t>& labels) {
    const std::size_t n = labels.size();
    std::vector<Tensor<double>> t{Tensor<double>({n, rb.num_classes()}, -40.0)};
    for (std::size_t i = 0; i < n; ++i) {
        t[0].at(i, labels[i]) = 40.0;
    }
    for (std::size_t j = 0; j < rb.num_attributes(); ++j) {
        Tensor<double> a({n, rb.schema().cardinality(j)}, -40.0);
        for (std::size_t i = 0; i < n; ++i) {
            a.at(i, rb.expected_value(labels[i], j)) = 40.0;
        }
        t.push_back(a);
    }
    return t;
}

}  // namespace

TEST_CASE("semantic loss hand cases") {
    const auto q_half = Tensor<double>({1, 4}, std::vector<double>{0.5, 0.5, 0, 0});
    const auto p_unif = Tensor<double>({1, 4}, 0.25);
    CHECK(sym::semantic_loss(p_unif, q_half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(sym::semantic_loss(q_half, q_half) == 0.0);

    const auto one_a = Tensor<double>({1, 3}, std::vector<double>{1, 0, 0});
    const auto one_b = Tensor<double>({1, 3}, std::vector<double>{0, 1, 0});
    CHECK(sym::semantic_loss(one_b, one_a) == doctest::Approx(-std::log(1e-8)).epsilon(1e-12));

    CHECK_THROWS_AS(sym::semantic_loss(p_unif, one_a), ShapeError);
    const auto not_dist = Tensor<double>({1, 4}, std::vector<double>{0.5, 0.4, 0, 0});
    CHECK_THROWS_AS(sym::semantic_loss(p_unif, not_dist), NumericError);

    Graph<double> g;
    const auto lg = sym::semantic_loss(g.input(p_unif), q_half);
    CHECK(lg.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("semantic loss matches a brute-force KL sum") {
    Rng rng(11);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t c = 2 + rng.below(19);
        auto p = random_distributions(1, c, rng);
        auto q = random_distributions(1, c, rng);
        if (k % 3 == 0) {
            // Sparse targets exercise 0 log 0.
            for (std::size_t i = 0; i < c; i += 2) q[i] = 0.0;
            const double s = std::accumulate(q.data().begin(), q.data().end(), 0.0);
            for (double& v : q.data()) v /= s;
        }
        double brute = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            if (q[i] > 0) brute += q[i] * std::log(q[i] / std::max(p[i], 1e-8));
        }
        Graph<double> g;
        const double graph_value = sym::semantic_loss(g.input(p), q).value().item();
        worst = std::max({worst, std::abs(sym::semantic_loss(p, q) - brute), std::abs(graph_value - brute)});
        CHECK(sym::semantic_loss(p, q) >= -1e-15);
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("implication truth and logic loss") {
    CHECK(sym::implication_truth(0.9, 0.45) == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(sym::implication_truth(0.3, 0.3) == 1.0);
    CHECK(sym::implication_truth(0.0, 0.0) == 1.0);
    CHECK_THROWS_AS(sym::implication_truth(1.2, 0.1), NumericError);
    CHECK_THROWS_AS(sym::implication_truth(0.5, -0.1), NumericError);

    CHECK(sym::logic_loss(1.0) == 0.0);
    CHECK(sym::logic_loss(0.5) == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(sym::logic_loss(0.0) == doctest::Approx(-std::log(1e-8)).epsilon(1e-12));
    CHECK(std::abs(sym::logic_loss(0.0) - 18.42) < 0.01);
    CHECK_THROWS_AS(sym::logic_loss(1.5), NumericError);

    SUBCASE("monotone over a grid") {
        for (int b = 0; b <= 20; ++b) {
            const double pb = b / 20.0;
            double prev = 2.0;
            for (int a = b + 1; a <= 20; ++a) {
                const double t = sym::implication_truth(a / 20.0, pb);
                CHECK(t <= prev);
                CHECK((t >= 0.0 && t <= 1.0));
                prev = t;
            }
        }
        for (int a = 0; a <= 20; ++a) {
            double prev = -1.0;
            for (int b = 0; b <= 20; ++b) {
                const double t = sym::implication_truth(a / 20.0, b / 20.0);
                CHECK(t >= prev);
                prev = t;
            }
        }
    }
}

TEST_CASE("joint truth hand cases and properties") {
    const std::vector<double> ones{1.0, 1.0};
    CHECK(sym::joint_truth(std::vector<double>{1.0, 1.0}, std::vector<double>{0.3, 2.0}, 0.7) == 1.0);
    CHECK(sym::joint_truth(std::vector<double>{0.5, 0.5}, ones, 0.9) == doctest::Approx(0.25 / 0.9).epsilon(1e-7));
    CHECK(std::abs(sym::joint_truth(std::vector<double>{0.5, 0.5}, ones, 0.9) - 0.27778) < 1e-5);
    CHECK(sym::joint_truth(std::vector<double>{0.5, 0.5}, ones, 0.0) == 1.0);
    CHECK_THROWS_AS(sym::joint_truth(std::vector<double>{0.5}, ones, 0.5), ConfigError);

    Rng rng(5);
    for (int k = 0; k < 200; ++k) {
        std::vector<double> p(5), w(5);
        for (std::size_t j = 0; j < 5; ++j) {
            p[j] = rng.uniform();
            w[j] = rng.uniform(0.1, 2.0);
        }
        const double pc = rng.uniform();
        const double t = sym::joint_truth(p, w, pc);
        CHECK((t >= 0.0 && t <= 1.0));
        auto up = p;
        up[k % 5] = std::min(1.0, up[k % 5] + 0.1);
        CHECK(sym::joint_truth(up, w, pc) >= t);
        CHECK(sym::joint_truth(p, w, std::min(1.0, pc + 0.1)) <= t);
        auto w2 = w;
        for (double& v : w2) v *= 1.7;
        CHECK(sym::joint_truth(std::vector<double>(5, 1.0), w2, pc) == sym::joint_truth(std::vector<double>(5, 1.0), w, pc));
    }
}

TEST_CASE("joint logic loss on a batch") {
    const auto rb = shipped();
    SUBCASE("perfect outputs give zero") {
        Graph<double> g;
        const std::vector<std::size_t> labels{0, 3, 7, 19};
        const auto out = outputs(g, confident_heads(rb, labels));
        CHECK(sym::joint_logic_loss(out, labels, rb, sym::LossWeights{}).value().item() == 0.0);
    }
    SUBCASE("the 0.5, 0.5 over 0.9 case") {
        // Two attributes at probability 0.5 and the class at 0.9; the
        // remaining attributes carry no weight.
        const std::vector<std::size_t> labels{3};
        auto heads = confident_heads(rb, labels);
        heads[0] = Tensor<double>({1, rb.num_classes()}, std::log(0.1 / 19.0));
        heads[0].at(0, 3) = std::log(0.9);
        for (std::size_t j : {1, 2}) {
            const std::size_t d = rb.schema().cardinality(j - 1);
            heads[j] = Tensor<double>({1, d}, std::log(0.5 / static_cast<double>(d - 1)));
            heads[j].at(0, rb.expected_value(3, j - 1)) = std::log(0.5);
        }
        sym::LossWeights w;
        w.w = {1.0, 1.0, 0.0, 0.0, 0.0};
        Graph<double> g;
        const auto out = outputs(g, heads);
        const double loss = sym::joint_logic_loss(out, labels, rb, w).value().item();
        CHECK(std::abs(loss - -std::log(0.25 / 0.9 + 1e-8)) <= 1e-7);
        CHECK(std::abs(loss - 1.2809) < 1e-4);
    }
    SUBCASE("labels out of range") {
        Graph<double> g;
        Rng rng(1);
        const auto out = outputs(g, random_heads(rb, 2, rng, 1.0));
        const std::vector<std::size_t> bad{0, 20};
        CHECK_THROWS_AS(sym::joint_logic_loss(out, bad, rb, sym::LossWeights{}), ConfigError);
    }
}

TEST_CASE("component weights") {
    for (double a : {0.0, 0.3, 1.0}) {
        for (double v : sym::update_component_weights(std::vector<double>(5, a))) {
            CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
        }
    }
    const auto w = sym::update_component_weights(std::vector<double>{1.0, 0.5});
    CHECK(w[0] == doctest::Approx(0.05 / 0.3).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(0.55 / 0.3).epsilon(1e-12));
    CHECK(std::abs(w[0] - 0.1667) < 1e-4);
    CHECK(std::abs(w[1] - 1.8333) < 1e-4);

    Rng rng(3);
    for (int k = 0; k < 500; ++k) {
        std::vector<double> acc(5);
        for (double& a : acc) a = rng.uniform();
        if (k % 10 == 0) acc[k % 5] = 1.0;
        const auto v = sym::update_component_weights(acc);
        CHECK(std::accumulate(v.begin(), v.end(), 0.0) / 5.0 == doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t a = 0; a < 5; ++a) {
            CHECK(v[a] > 0.0);
            for (std::size_t b = 0; b < 5; ++b) {
                if (acc[a] < acc[b]) CHECK(v[a] > v[b]);
            }
        }
    }
}

TEST_CASE("adaptive logic weight") {
    const double lnc = std::log(20.0);
    CHECK(sym::adaptive_lambda(0.0, 1.0, 0.5, 20) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(sym::adaptive_lambda(lnc, 0.0, 0.5, 20) == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(sym::adaptive_lambda(5 * lnc, 0.0, 0.5, 20) == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(sym::adaptive_lambda(0.5 * lnc, 0.5, 0.5, 20) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK_THROWS_AS(sym::adaptive_lambda(0.1, 0.5, 0.5, 1), ConfigError);
    for (int c = 0; c <= 30; ++c) {
        double prev = 0.0;
        for (int e = 0; e <= 50; ++e) {
            const double lam = sym::adaptive_lambda(c * 0.1, 1.0 - e / 50.0, 0.5, 20);
            CHECK(lam >= prev);
            prev = lam;
        }
    }
}

TEST_CASE("loss weights validation") {
    sym::LossWeights w;
    CHECK_NOTHROW(w.validate(5));
    w.w = {1, 1};
    CHECK_THROWS_AS(w.validate(5), ConfigError);
    w = {};
    w.eps_stab = 1e-3;
    CHECK_THROWS_AS(w.validate(5), ConfigError);
    w = {};
    w.lambda_semantic = -1;
    CHECK_THROWS_AS(w.validate(5), ConfigError);
}

TEST_CASE("objective reductions") {
    const auto rb = shipped();
    Rng rng(21);
    const std::vector<std::size_t> labels{0, 4, 8, 12, 16, 19};

    SUBCASE("zero weights reduce to cross-entropy") {
        sym::LossWeights w;
        w.lambda_semantic = 0.0;
        Graph<double> g;
        const auto out = outputs(g, random_heads(rb, 6, rng, 2.0));
        const auto b = sym::objective(out, labels, &rb, w, 0.0, true);
        CHECK(b.total == sym::cross_entropy(out.logits, labels).value().item());
        const auto plain = sym::objective(out, labels, nullptr, w, 0.0, false);
        CHECK(plain.total == b.total);
        CHECK_THROWS_AS(sym::objective(out, labels, nullptr, w, 0.0, true), ConfigError);
    }
    SUBCASE("total is the weighted sum of its parts") {
        Graph<double> g;
        const auto out = outputs(g, random_heads(rb, 6, rng, 2.0));
        const auto b = sym::objective(out, labels, &rb, sym::LossWeights{}, 0.7, true);
        CHECK(std::abs(b.total - (b.ce + 0.7 * b.joint + 0.3 * b.semantic)) <= 1e-9);
        CHECK(b.ce >= 0.0);
        CHECK(b.joint >= 0.0);
        CHECK(b.semantic >= 0.0);
        CHECK(b.ce_per_sample.size() == 6);
        CHECK(b.t_joint_per_sample.size() == 6);
    }
    SUBCASE("perfect predictions with singleton groups give zero") {
        const auto single = singletons();
        Graph<double> g;
        const auto out = outputs(g, confident_heads(single, labels));
        const auto b = sym::total_loss<double>(&out, nullptr, labels, &single, sym::LossWeights{}, true);
        CHECK(b.total <= 1e-12);
        CHECK(b.lambda_logic == doctest::Approx(0.25));
    }
    SUBCASE("clean plus adversarial equals the sum of separate terms") {
        Graph<double> g;
        const auto clean = outputs(g, random_heads(rb, 6, rng, 2.0));
        const auto adv = outputs(g, random_heads(rb, 6, rng, 2.0));
        const sym::LossWeights w;
        const auto both = sym::total_loss(&clean, &adv, labels, &rb, w, true);
        const auto s = sym::batch_stats(clean, labels);
        const double lam = sym::adaptive_lambda(s.ce_mean, s.accuracy, w.lambda_logic_base, 20);
        CHECK(both.lambda_logic == lam);
        const auto a = sym::objective(clean, labels, &rb, w, lam, true);
        const auto b = sym::objective(adv, labels, &rb, w, lam, true);
        CHECK(both.total == a.total + b.total);
        CHECK(both.ce == a.ce + b.ce);
        CHECK(both.joint == a.joint + b.joint);
        CHECK(both.semantic == a.semantic + b.semantic);
        CHECK(both.ce_per_sample.size() == 12);
    }
    SUBCASE("batch statistics") {
        Graph<double> g;
        const auto out = outputs(g, confident_heads(rb, labels));
        const auto s = sym::batch_stats(out, labels);
        CHECK(s.accuracy == 1.0);
        CHECK(s.ce_mean < 1e-20);
    }
}

TEST_CASE("loss gradients agree with central differences") {
    const auto rb = shipped();
    for (std::uint64_t seed : {1, 2, 3}) {
        for (const auto& c : nsdesk::testing::loss_grad_cases(rb, seed)) {
            CAPTURE(c.name);
            CAPTURE(seed);
            const auto r = grad_check(c.build, c.inputs, 1e-5);
            CHECK(r.checked > 0);
            CHECK(r.worst < 1e-4);
        }
    }
}

TEST_CASE("single precision forms track double precision") {
    const auto rb = shipped();
    Rng rng(8);
    const auto heads = random_heads(rb, 8, rng, 2.0);
    const std::vector<std::size_t> labels{0, 1, 2, 3, 7, 8, 13, 19};
    Graph<double> gd;
    const auto od = outputs(gd, heads);
    Graph<float> gf;
    net::ModelOutputs<float> of;
    of.logits = gf.input(heads[0].cast<float>(), true);
    for (std::size_t j = 1; j < heads.size(); ++j) of.attr_logits.push_back(gf.input(heads[j].cast<float>(), true));
    const auto bd = sym::objective(od, labels, &rb, sym::LossWeights{}, 0.6, true);
    const auto bf = sym::objective(of, labels, &rb, sym::LossWeights{}, 0.6, true);
    CHECK(bf.total == doctest::Approx(bd.total).epsilon(1e-5));
    CHECK(bf.mean_t_joint == doctest::Approx(bd.mean_t_joint).epsilon(1e-5));
}
