#include "grad_cases.hpp"

#include <cmath>

#include "nsdesk/diffcore/ops.hpp"
#include "random_tensors.hpp"

namespace nsdesk::testing {
namespace {

using V = Var<double>;
using Inputs = std::span<const V>;

// sum(out * w) with a fixed weight tensor.
V weighted(Graph<double>& g, V out, const Tensor<double>& w) {
    return ops::sum(ops::mul(out, g.constant(w)));
}

// Keeps values at least `gap` away from `kink`, where finite differences break.
Tensor<double> away_from(Tensor<double> t, double kink, double gap) {
    for (double& v : t.data()) {
        if (std::abs(v - kink) < gap) v = v < kink ? kink - gap : kink + gap;
    }
    return t;
}

}  // namespace

std::vector<GradCase> primitive_grad_cases(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCase> cases;
    const auto W = [&](Shape s) { return uniform_tensor(std::move(s), rng, -1.0, 1.0); };

    {
        auto w = W({3, 4});
        cases.push_back({"add", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::add(in[0], in[1]), w); },
                         {W({3, 4}), W({3, 4})}});
    }
    {
        auto w = W({3, 4});
        cases.push_back({"sub", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::sub(in[0], in[1]), w); },
                         {W({3, 4}), W({3, 4})}});
    }
    {
        auto w = W({3, 4});
        cases.push_back({"mul", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::mul(in[0], in[1]), w); },
                         {W({3, 4}), W({3, 4})}});
    }
    {
        auto w = W({5});
        cases.push_back({"mul_fanout", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::mul(in[0], in[0]), w); },
                         {W({5})}});
    }
    {
        auto w = W({2, 3});
        cases.push_back({"scale", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::scale(in[0], -2.5), w); },
                         {W({2, 3})}});
    }
    {
        auto w = W({2, 3});
        cases.push_back({"add_scalar",
                         [w](Graph<double>& g, Inputs in) { return weighted(g, ops::add_scalar(in[0], 0.75), w); },
                         {W({2, 3})}});
    }
    {
        auto w = W({2, 3, 2, 2});
        cases.push_back({"add_channel",
                         [w](Graph<double>& g, Inputs in) { return weighted(g, ops::add_channel(in[0], in[1]), w); },
                         {W({2, 3, 2, 2}), W({3})}});
    }
    {
        auto w = W({3, 5});
        cases.push_back({"matmul", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::matmul(in[0], in[1]), w); },
                         {W({3, 4}), W({4, 5})}});
    }
    {
        auto w = W({3, 5});
        cases.push_back({"matmul_bt",
                         [w](Graph<double>& g, Inputs in) { return weighted(g, ops::matmul_bt(in[0], in[1]), w); },
                         {W({3, 4}), W({5, 4})}});
    }
    {
        auto w = W({2, 4, 6, 6});
        cases.push_back({"conv2d_s1_p1",
                         [w](Graph<double>& g, Inputs in) {
                             return weighted(g, ops::conv2d(in[0], in[1], {1, 1}), w);
                         },
                         {W({2, 3, 6, 6}), W({4, 3, 3, 3})}});
    }
    {
        auto w = W({2, 4, 3, 3});
        cases.push_back({"conv2d_s2_p1",
                         [w](Graph<double>& g, Inputs in) {
                             return weighted(g, ops::conv2d(in[0], in[1], {2, 1}), w);
                         },
                         {W({2, 3, 6, 6}), W({4, 3, 3, 3})}});
    }
    {
        auto w = W({2, 4, 3, 3});
        cases.push_back({"conv2d_1x1_s2",
                         [w](Graph<double>& g, Inputs in) {
                             return weighted(g, ops::conv2d(in[0], in[1], {2, 0}), w);
                         },
                         {W({2, 3, 6, 6}), W({4, 3, 1, 1})}});
    }
    {
        auto w = W({2, 3});
        cases.push_back({"global_avg_pool",
                         [w](Graph<double>& g, Inputs in) { return weighted(g, ops::global_avg_pool(in[0]), w); },
                         {W({2, 3, 4, 4})}});
    }
    {
        auto w = W({4, 3, 3, 3});
        cases.push_back({"batch_norm_train_4d",
                         [w](Graph<double>& g, Inputs in) {
                             return weighted(g, ops::batch_norm_train(in[0], in[1], in[2], 1e-5), w);
                         },
                         {W({4, 3, 3, 3}), uniform_tensor<double>({3}, rng, 0.5, 1.5), W({3})}});
    }
    {
        auto w = W({8, 5});
        cases.push_back({"batch_norm_train_2d",
                         [w](Graph<double>& g, Inputs in) {
                             return weighted(g, ops::batch_norm_train(in[0], in[1], in[2], 1e-5), w);
                         },
                         {W({8, 5}), uniform_tensor<double>({5}, rng, 0.5, 1.5), W({5})}});
    }
    {
        auto w = W({3, 2, 3, 3});
        auto rm = W({2});
        auto rv = uniform_tensor<double>({2}, rng, 0.5, 2.0);
        cases.push_back({"batch_norm_eval",
                         [w, rm, rv](Graph<double>& g, Inputs in) {
                             return weighted(g, ops::batch_norm_eval(in[0], in[1], in[2], rm, rv, 1e-5), w);
                         },
                         {W({3, 2, 3, 3}), uniform_tensor<double>({2}, rng, 0.5, 1.5), W({2})}});
    }
    {
        auto w = W({4, 5});
        cases.push_back({"relu", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::relu(in[0]), w); },
                         {away_from(W({4, 5}), 0.0, 0.05)}});
    }
    {
        auto w = W({3, 5});
        cases.push_back({"softmax", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::softmax(in[0]), w); },
                         {uniform_tensor<double>({3, 5}, rng, -2.0, 2.0)}});
    }
    {
        auto w = W({3, 5});
        cases.push_back({"log_softmax",
                         [w](Graph<double>& g, Inputs in) { return weighted(g, ops::log_softmax(in[0]), w); },
                         {uniform_tensor<double>({3, 5}, rng, -2.0, 2.0)}});
    }
    {
        auto w = W({6});
        cases.push_back({"log", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::log(in[0]), w); },
                         {uniform_tensor<double>({6}, rng, 0.3, 2.0)}});
    }
    {
        auto w = W({6});
        cases.push_back({"exp", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::exp(in[0]), w); },
                         {W({6})}});
    }
    {
        auto w = W({6});
        cases.push_back({"pow", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::pow(in[0], 2.5), w); },
                         {uniform_tensor<double>({6}, rng, 0.3, 2.0)}});
    }
    {
        auto w = W({6});
        cases.push_back({"pow_reciprocal",
                         [w](Graph<double>& g, Inputs in) { return weighted(g, ops::pow(in[0], -1.0), w); },
                         {uniform_tensor<double>({6}, rng, 0.5, 2.0)}});
    }
    cases.push_back({"sum",
                     [](Graph<double>&, Inputs in) { return ops::sum(ops::mul(in[0], in[0])); },
                     {W({3, 3})}});
    cases.push_back({"mean",
                     [](Graph<double>&, Inputs in) { return ops::mean(ops::mul(in[0], in[0])); },
                     {W({3, 3})}});
    {
        auto w = W({4});
        cases.push_back({"sum_rows", [w](Graph<double>& g, Inputs in) { return weighted(g, ops::sum_rows(in[0]), w); },
                         {W({4, 3})}});
    }
    {
        auto w = W({5, 3});
        cases.push_back({"concat_rows",
                         [w](Graph<double>& g, Inputs in) {
                             const V parts[] = {in[0], in[1]};
                             return weighted(g, ops::concat_rows<double>(parts), w);
                         },
                         {W({2, 3}), W({3, 3})}});
    }
    {
        auto w = W({2, 3});
        cases.push_back({"slice_rows",
                         [w](Graph<double>& g, Inputs in) { return weighted(g, ops::slice_rows(in[0], 1, 3), w); },
                         {W({4, 3})}});
    }
    {
        auto w = W({3});
        cases.push_back({"pick",
                         [w](Graph<double>& g, Inputs in) {
                             const std::size_t idx[] = {2, 0, 3};
                             return weighted(g, ops::pick<double>(in[0], idx), w);
                         },
                         {W({3, 4})}});
    }
    {
        auto w = W({8});
        cases.push_back({"sign",
                         [w](Graph<double>& g, Inputs in) {
                             return ops::add(weighted(g, ops::sign(in[0]), w), weighted(g, in[0], w));
                         },
                         {away_from(W({8}), 0.0, 0.05)}});
    }
    {
        auto w = W({8});
        auto x = away_from(away_from(uniform_tensor<double>({8}, rng, -1.0, 1.5), -0.5, 0.05), 1.0, 0.05);
        cases.push_back({"clamp",
                         [w](Graph<double>& g, Inputs in) { return weighted(g, ops::clamp(in[0], -0.5, 1.0), w); },
                         {x}});
    }
    {
        auto w = W({6});
        const std::vector<bool> mask = {true, false, false, true, true, false};
        cases.push_back({"where",
                         [w, mask](Graph<double>& g, Inputs in) { return weighted(g, ops::where(mask, in[0], in[1]), w); },
                         {W({6}), W({6})}});
    }
    {
        auto w = W({3, 4});
        cases.push_back({"reshape",
                         [w](Graph<double>& g, Inputs in) { return weighted(g, ops::reshape(in[0], {3, 4}), w); },
                         {W({2, 6})}});
    }
    return cases;
}

}  // namespace nsdesk::testing
