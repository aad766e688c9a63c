#include <algorithm>
#include <set>
#include <string_view>
#include <vector>

#include "doctest.h"
#include "nsdesk/common/error.hpp"
#include "nsdesk/netcore/model.hpp"
#include "nsdesk/rulebase/rulebase.hpp"
#include "nsdesk/symlosses/symlosses.hpp"
#include "random_tensors.hpp"
#include "tiny_model.hpp"

using namespace nsdesk;
using nsdesk::testing::uniform_tensor;

namespace {

net::ModelConfig shipped_config() {
    const auto s = rules::default_schema();
    std::vector<std::size_t> dims;
    for (std::size_t j = 0; j < s.size(); ++j) dims.push_back(s.cardinality(j));
    return net::default_model_config(20, s.names, dims);
}

template <typename T>
net::ModelOutputs<T> run(const net::Model<T>& m, Graph<T>& g, const Tensor<T>& x, net::Mode mode) {
    return m.forward(g, m.bind(g, false), g.constant(x), mode);
}

}  // namespace

TEST_CASE("one classifier head and one head per attribute") {
    const net::Model<float> m(shipped_config(), 1);
    Graph<float> g;
    Rng rng(1);
    const auto out = run(m, g, uniform_tensor<float>({4, 3, 32, 32}, rng, 0, 1), net::Mode::eval);
    CHECK(m.num_attributes() == 5);
    REQUIRE(out.attr_logits.size() == 5);
    CHECK(out.logits.shape() == Shape{4, 20});
    const std::size_t dims[] = {5, 6, 4, 12, 4};
    for (std::size_t j = 0; j < 5; ++j) CHECK(out.attr_logits[j].shape() == Shape{4, dims[j]});
    CHECK(out.features.shape() == Shape{4, 64});
    std::size_t w2 = 0;
    for (const auto& p : m.param_info()) w2 += p.name.ends_with(".w2");
    CHECK(w2 == 5);
}

TEST_CASE("parameter count of the default configuration") {
    // Stem 464; stages 9344, 33088 and 131712; classifier 20*64+20; five
    // heads of 64*32 + 2*32 weights each plus 32*(5+6+4+12+4) outputs.
    constexpr std::size_t hand = 464 + 9344 + 33088 + 131712 + 1300 + 5 * 2112 + 32 * 31;
    static_assert(hand == 187460);
    const net::Model<float> m(shipped_config(), 3);
    CHECK(m.parameter_count() == hand);
    CHECK(net::expected_parameter_count(shipped_config()) == hand);
    auto narrow = shipped_config();
    narrow.backbone.widths = {8, 16, 32};
    narrow.backbone.blocks_per_stage = 1;
    CHECK(net::Model<float>(narrow, 3).parameter_count() == net::expected_parameter_count(narrow));
}

TEST_CASE("initialization is a function of the seed") {
    const net::Model<double> a(shipped_config(), 42), b(shipped_config(), 42), c(shipped_config(), 43);
    CHECK(a.state_hash() == b.state_hash());
    CHECK(a.params() == b.params());
    CHECK(a.state_hash() != c.state_hash());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        const auto& info = a.param_info()[i];
        if (info.kind == net::ParamKind::bn_gamma) CHECK(a.params()[i] == Tensor<double>(info.shape, 1.0));
        if (info.kind == net::ParamKind::bn_beta) CHECK(a.params()[i] == Tensor<double>(info.shape, 0.0));
    }
}

TEST_CASE("configuration errors") {
    auto c = shipped_config();
    c.backbone.widths = {};
    CHECK_THROWS_AS(net::Model<float>(c, 1), ConfigError);
    c = shipped_config();
    c.backbone.input_size = 6;
    CHECK_THROWS_AS(net::Model<float>(c, 1), ConfigError);
    c = shipped_config();
    c.heads.attr_dims.pop_back();
    CHECK_THROWS_AS(net::Model<float>(c, 1), ConfigError);
    c = shipped_config();
    c.heads.attr_dims[0] = 1;
    CHECK_THROWS_AS(net::Model<float>(c, 1), ConfigError);
    c = shipped_config();
    c.heads.num_classes = 1;
    CHECK_THROWS_AS(net::Model<float>(c, 1), ConfigError);
}

TEST_CASE("input shape and batch errors") {
    const auto m = testing::tiny_model<double>(1);
    Graph<double> g;
    const auto p = m.bind(g, false);
    CHECK_THROWS_AS(m.forward(g, p, g.constant(Tensor<double>({2, 3, 9, 9})), net::Mode::eval), ShapeError);
    CHECK_THROWS_AS(m.forward(g, p, g.constant(Tensor<double>({2, 1, 8, 8})), net::Mode::eval), ShapeError);
    CHECK_THROWS_AS(m.forward(g, p, g.constant(Tensor<double>({1, 3, 8, 8})), net::Mode::train), ShapeError);
    CHECK_NOTHROW(m.forward(g, p, g.constant(Tensor<double>({1, 3, 8, 8})), net::Mode::eval));
    const std::vector<Var<double>> short_params(p.begin(), p.end() - 1);
    CHECK_THROWS_AS(m.forward(g, short_params, g.constant(Tensor<double>({2, 3, 8, 8})), net::Mode::eval),
                    ShapeError);
}

TEST_CASE("graph structure: 3x3 stem, no early pooling, pooled features feed the heads") {
    const net::Model<double> m(shipped_config(), 5);
    Graph<double> g;
    Rng rng(2);
    const auto params = m.bind(g, false);
    const Var<double> x = g.constant(uniform_tensor<double>({2, 3, 32, 32}, rng, 0, 1));
    const auto out = m.forward(g, params, x, net::Mode::eval);

    NodeId first_op = g.size();
    std::vector<NodeId> pools;
    for (NodeId i = 0; i < g.size(); ++i) {
        const std::string_view op = g.node(i).op;
        if (g.node(i).inputs.empty()) continue;
        if (first_op == g.size()) first_op = i;
        if (op.find("pool") != std::string_view::npos) pools.push_back(i);
    }
    REQUIRE(first_op < g.size());
    CHECK(g.node(first_op).op == "conv2d");
    const Shape& stem_w = g.value(g.node(first_op).inputs[1]).shape();
    CHECK(stem_w[2] == 3);
    CHECK(stem_w[3] == 3);
    REQUIRE(pools.size() == 1);
    CHECK(g.node(pools[0]).op == "global_avg_pool");
    CHECK(out.features.id == pools[0]);

    // Every consumer of the pooled vector is the first layer of a head.
    std::size_t consumers = 0;
    for (NodeId i = pools[0] + 1; i < g.size(); ++i) {
        const auto& in = g.node(i).inputs;
        if (std::find(in.begin(), in.end(), pools[0]) == in.end()) continue;
        ++consumers;
        CHECK(g.node(i).op == "matmul_bt");
        // The feature path is computed once: no second backbone after pooling.
        CHECK(g.node(i + 1).op != "conv2d");
    }
    CHECK(consumers == 1 + m.num_attributes());
    for (NodeId i = pools[0] + 1; i < g.size(); ++i) CHECK(g.node(i).op != "conv2d");
}

TEST_CASE("features equal a backbone-only pass") {
    const auto m = testing::tiny_model<double>(7);
    Rng rng(3);
    const auto x = uniform_tensor<double>({3, 3, 8, 8}, rng, 0, 1);
    Graph<double> g1, g2;
    const auto full = run(m, g1, x, net::Mode::eval);
    const auto p = m.bind(g2, false);
    const auto f = m.features(g2, p, g2.constant(x), net::Mode::eval);
    CHECK(full.features.value() == f.value());
}

TEST_CASE("eval mode is deterministic and batch-size invariant") {
    auto m = testing::tiny_model<float>(11);
    Rng rng(4);
    // Move the running statistics away from their initial values first.
    {
        Graph<float> g;
        net::ForwardStats<float> st;
        m.forward(g, m.bind(g, false), g.constant(uniform_tensor<float>({6, 3, 8, 8}, rng, 0, 1)),
                  net::Mode::train, &st);
        m.update_running_stats(st);
    }
    const auto x = uniform_tensor<float>({5, 3, 8, 8}, rng, 0, 1);
    Graph<float> g;
    const auto batch = run(m, g, x, net::Mode::eval);
    for (std::size_t n = 0; n < 5; ++n) {
        Tensor<float> one({1, 3, 8, 8});
        std::copy_n(x.ptr() + n * 192, 192, one.ptr());
        Graph<float> g1;
        const auto single = run(m, g1, one, net::Mode::eval);
        for (std::size_t c = 0; c < 4; ++c) CHECK(single.logits.value().at(0, c) == batch.logits.value().at(n, c));
        for (std::size_t j = 0; j < m.num_attributes(); ++j) {
            const auto& a = single.attr_logits[j].value();
            for (std::size_t c = 0; c < a.dim(1); ++c) CHECK(a.at(0, c) == batch.attr_logits[j].value().at(n, c));
        }
    }
    Tensor<float> twin({2, 3, 8, 8});
    std::copy_n(x.ptr(), 192, twin.ptr());
    std::copy_n(x.ptr(), 192, twin.ptr() + 192);
    Graph<float> g2;
    const auto t = run(m, g2, twin, net::Mode::eval);
    for (std::size_t c = 0; c < 4; ++c) CHECK(t.logits.value().at(0, c) == t.logits.value().at(1, c));
}

TEST_CASE("running statistics follow the momentum rule") {
    auto m = testing::tiny_model<double>(2);
    Graph<double> g;
    Rng rng(6);
    net::ForwardStats<double> st;
    m.forward(g, m.bind(g, false), g.constant(uniform_tensor<double>({4, 3, 8, 8}, rng, 0, 1)), net::Mode::train,
              &st);
    REQUIRE(st.size() == m.num_batchnorm());
    const auto before = m.buffers();
    m.update_running_stats(st, 0.1);
    const auto& s0 = st[0];
    for (std::size_t c = 0; c < s0.mean.size(); ++c) {
        CHECK(m.buffers()[0][c] == doctest::Approx(0.9 * before[0][c] + 0.1 * s0.mean[c]).epsilon(1e-14));
        const double unbiased = s0.var[c] * s0.count / (s0.count - 1.0);
        CHECK(m.buffers()[1][c] == doctest::Approx(0.9 * before[1][c] + 0.1 * unbiased).epsilon(1e-14));
    }
    CHECK_THROWS_AS(m.update_running_stats(net::ForwardStats<double>(1)), ShapeError);
}

TEST_CASE("every parameter receives gradient under the total objective") {
    const rules::RuleBase rb = rules::load_rules(NSDESK_DATA_DIR "/rules/synthetic_signs.csv");
    auto cfg = shipped_config();
    cfg.backbone.input_size = 16;
    const net::Model<double> m(cfg, 13);
    Rng rng(8);
    std::vector<std::size_t> labels(6);
    for (auto& y : labels) y = rng.below(20);
    Graph<double> g;
    const auto p = m.bind(g, true);
    const auto clean = m.forward(g, p, g.constant(uniform_tensor<double>({6, 3, 16, 16}, rng, 0, 1)),
                                 net::Mode::train);
    const auto adv = m.forward(g, p, g.constant(uniform_tensor<double>({6, 3, 16, 16}, rng, 0, 1)),
                               net::Mode::train);
    const auto loss = sym::total_loss<double>(&clean, &adv, labels, &rb, sym::LossWeights{}, true);
    g.backward(loss.total_var);
    for (std::size_t i = 0; i < p.size(); ++i) {
        double mag = 0.0;
        for (double v : p[i].grad().data()) mag = std::max(mag, std::abs(v));
        INFO(m.param_info()[i].name);
        CHECK(mag > 0.0);
    }
}

TEST_CASE("multiply-accumulate count of a one-stage model") {
    net::ModelConfig c = net::default_model_config(3, {"a"}, {2});
    c.backbone.input_size = 4;
    c.backbone.widths = {2};
    c.backbone.blocks_per_stage = 1;
    const net::Model<float> m(c, 1);
    // Stem 16*2*3*9, block 2*(16*2*2*9), classifier 3*2, head 1*2 + 2*1.
    CHECK(m.macs_per_sample() == 864 + 1152 + 6 + 4);
}
