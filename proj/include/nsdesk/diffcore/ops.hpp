#pragma once

// Differentiable primitives. Each call evaluates eagerly and records itself on
// the graph owning its inputs. Shape violations throw ShapeError naming the
// primitive and both shapes.

#include <cstddef>
#include <span>
#include <type_traits>
#include <vector>

#include "nsdesk/diffcore/graph.hpp"

namespace nsdesk::ops {

// Scalar arguments do not take part in template deduction, so literals of
// either precision bind to Var<float> and Var<double> alike.
template <typename T>
using Scalar = std::type_identity_t<T>;

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, Scalar<T> s);
template <typename T>
Var<T> add_scalar(Var<T> a, Scalar<T> s);

// x is [N,C] or [N,C,H,W]; b is [C] and is broadcast along axis 1.
template <typename T>
Var<T> add_channel(Var<T> x, Var<T> b);

// [M,K] x [K,N] -> [M,N]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
// [M,K] x [N,K]^T -> [M,N]; the layout used by linear layers.
template <typename T>
Var<T> matmul_bt(Var<T> a, Var<T> b);

struct Conv2dParams {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

// x [N,C,H,W], w [O,C,KH,KW] -> [N,O,HO,WO], zero padding.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Conv2dParams params);

// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avg_pool(Var<T> x);

template <typename T>
struct BatchNormStats {
    Tensor<T> mean;  // per channel
    Tensor<T> var;   // biased, per channel
    std::size_t count = 0;  // elements reduced per channel
};

// Training mode: normalises with statistics over (batch x spatial) and
// reports them through `stats` so the caller can update running averages.
template <typename T>
Var<T> batch_norm_train(Var<T> x, Var<T> gamma, Var<T> beta, Scalar<T> eps,
                        Scalar<BatchNormStats<T>>* stats = nullptr);

// Inference mode: normalises with the supplied running statistics.
template <typename T>
Var<T> batch_norm_eval(Var<T> x, Var<T> gamma, Var<T> beta, const Tensor<T>& running_mean,
                       const Tensor<T>& running_var, Scalar<T> eps);

template <typename T>
Var<T> relu(Var<T> x);

// Row-wise over the last axis of a 2-D tensor.
template <typename T>
Var<T> softmax(Var<T> x);
template <typename T>
Var<T> log_softmax(Var<T> x);

template <typename T>
Var<T> log(Var<T> x);
template <typename T>
Var<T> exp(Var<T> x);
template <typename T>
Var<T> pow(Var<T> x, Scalar<T> exponent);

// Full reductions to shape [1].
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);

// [N,K] -> [N]
template <typename T>
Var<T> sum_rows(Var<T> x);

// Concatenate along axis 0; trailing dimensions must agree.
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);

// Rows [begin, end) along axis 0.
template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end);

// out[i] = x[i, index[i]] for a 2-D x.
template <typename T>
Var<T> pick(Var<T> x, std::span<const std::size_t> index);

// Forward only; sign(0) = 0.
template <typename T>
Var<T> sign(Var<T> x);

// Gradient passes strictly inside (lo, hi) and is zero at or beyond a bound.
// NaN maps to lo.
template <typename T>
Var<T> clamp(Var<T> x, Scalar<T> lo, Scalar<T> hi);

// Elementwise select; gradient routed to the chosen branch.
template <typename T>
Var<T> where(const std::vector<bool>& mask, Var<T> a, Var<T> b);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

}  // namespace nsdesk::ops
