#include "nsdesk/diffcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "nsdesk/simd/kernels.hpp"

namespace nsdesk::ops {
namespace {

template <typename T>
const simd::Kernels<T>& K() {
    return simd::kernels<T>();
}

[[noreturn]] void mismatch(std::string_view op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void bad_rank(std::string_view op, const Shape& a, std::string_view want) {
    throw ShapeError(std::string(op) + ": expected " + std::string(want) + ", got " + shape_str(a));
}

template <typename T>
void same_graph(std::string_view op, Var<T> a, Var<T> b) {
    if (a.graph != b.graph) {
        throw Error(std::string(op) + ": operands belong to different graphs");
    }
}

template <typename T>
bool wants(Graph<T>& g, NodeId id) {
    return g.node(id).requires_grad;
}

// grad(id) += src
template <typename T>
void accumulate(Graph<T>& g, NodeId id, const T* src) {
    if (!wants(g, id)) {
        return;
    }
    Tensor<T>& gb = g.grad_buffer(id);
    K<T>().axpy(gb.size(), T(1), src, gb.ptr());
}

template <typename T>
Tensor<T> transpose2d(const T* src, std::size_t rows, std::size_t cols) {
    auto out = Tensor<T>::uninitialized(Shape{cols, rows});
    T* dst = out.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    return out;
}

struct ConvGeom {
    std::size_t n, c, h, w, o, kh, kw, stride, pad, ho, wo;
    std::size_t patch() const { return c * kh * kw; }
    std::size_t pixels() const { return ho * wo; }
};

// Output columns [lo, hi) whose input column ox*stride + j - pad lies inside
// the image.
struct ColRange {
    std::size_t lo, hi;
};

inline ColRange valid_cols(const ConvGeom& g, std::size_t j) {
    const long pad = static_cast<long>(g.pad), stride = static_cast<long>(g.stride);
    const long first = pad - static_cast<long>(j);
    long lo = first <= 0 ? 0 : (first + stride - 1) / stride;
    long hi = (static_cast<long>(g.w) - 1 + first) / stride + 1;
    if (static_cast<long>(g.w) - 1 + first < 0) hi = 0;
    lo = std::min<long>(lo, static_cast<long>(g.wo));
    hi = std::clamp<long>(hi, lo, static_cast<long>(g.wo));
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols[(ci*kh + i)*kw + j][oy*wo + ox]
template <typename T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
    const std::size_t P = g.pixels();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                T* row = cols + ((ci * g.kh + i) * g.kw + j) * P;
                const ColRange r = valid_cols(g, j);
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                    T* out = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(out, out + g.wo, T(0));
                        continue;
                    }
                    const T* src = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
                    std::fill(out, out + r.lo, T(0));
                    if (g.stride == 1 && r.lo < r.hi) {
                        std::copy(src + (r.lo + j - g.pad), src + (r.hi + j - g.pad), out + r.lo);
                    } else {
                        for (std::size_t ox = r.lo; ox < r.hi; ++ox) out[ox] = src[ox * g.stride + j - g.pad];
                    }
                    std::fill(out + r.hi, out + g.wo, T(0));
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* cols, T* x) {
    const std::size_t P = g.pixels();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t i = 0; i < g.kh; ++i) {
            for (std::size_t j = 0; j < g.kw; ++j) {
                const T* row = cols + ((ci * g.kh + i) * g.kw + j) * P;
                const ColRange r = valid_cols(g, j);
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    T* dst = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const T* src = row + oy * g.wo;
                    if (g.stride == 1 && r.lo < r.hi) {
                        T* d = dst + (r.lo + j - g.pad);
                        for (std::size_t ox = r.lo; ox < r.hi; ++ox) d[ox - r.lo] += src[ox];
                    } else {
                        for (std::size_t ox = r.lo; ox < r.hi; ++ox) dst[ox * g.stride + j - g.pad] += src[ox];
                    }
                }
            }
        }
    }
}

// Channel layout helper for [N,C] and [N,C,H,W].
struct ChannelLayout {
    std::size_t n, c, spatial;
};

ChannelLayout channel_layout(std::string_view op, const Shape& s) {
    if (s.size() == 2) return {s[0], s[1], 1};
    if (s.size() == 4) return {s[0], s[1], s[2] * s[3]};
    bad_rank(op, s, "[N,C] or [N,C,H,W]");
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    same_graph("add", a, b);
    if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
    auto out = Tensor<T>::uninitialized(a.shape());
    K<T>().add(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
    const NodeId ia = a.id, ib = b.id;
    return a.graph->record("add", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, NodeId self) {
        const T* gy = g.grad(self).ptr();
        accumulate(g, ia, gy);
        accumulate(g, ib, gy);
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    same_graph("sub", a, b);
    if (a.shape() != b.shape()) mismatch("sub", a.shape(), b.shape());
    auto out = Tensor<T>::uninitialized(a.shape());
    K<T>().sub(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
    const NodeId ia = a.id, ib = b.id;
    return a.graph->record("sub", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, NodeId self) {
        const Tensor<T>& gy = g.grad(self);
        accumulate(g, ia, gy.ptr());
        if (wants(g, ib)) {
            Tensor<T>& gb = g.grad_buffer(ib);
            K<T>().axpy(gb.size(), T(-1), gy.ptr(), gb.ptr());
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    same_graph("mul", a, b);
    if (a.shape() != b.shape()) mismatch("mul", a.shape(), b.shape());
    auto out = Tensor<T>::uninitialized(a.shape());
    K<T>().mul(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
    const NodeId ia = a.id, ib = b.id;
    return a.graph->record("mul", std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, NodeId self) {
        const Tensor<T>& gy = g.grad(self);
        if (wants(g, ia)) {
            Tensor<T>& ga = g.grad_buffer(ia);
            K<T>().mul_acc(ga.size(), gy.ptr(), g.value(ib).ptr(), ga.ptr());
        }
        if (wants(g, ib)) {
            Tensor<T>& gb = g.grad_buffer(ib);
            K<T>().mul_acc(gb.size(), gy.ptr(), g.value(ia).ptr(), gb.ptr());
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, Scalar<T> s) {
    auto out = Tensor<T>::uninitialized(a.shape());
    K<T>().scale(out.size(), s, a.value().ptr(), out.ptr());
    const NodeId ia = a.id;
    return a.graph->record("scale", std::move(out), {ia}, [ia, s](Graph<T>& g, NodeId self) {
        if (!wants(g, ia)) return;
        Tensor<T>& ga = g.grad_buffer(ia);
        K<T>().axpy(ga.size(), s, g.grad(self).ptr(), ga.ptr());
    });
}

template <typename T>
Var<T> add_scalar(Var<T> a, Scalar<T> s) {
    Tensor<T> out = a.value();
    for (T& v : out.data()) v += s;
    const NodeId ia = a.id;
    return a.graph->record("add_scalar", std::move(out), {ia}, [ia](Graph<T>& g, NodeId self) {
        accumulate(g, ia, g.grad(self).ptr());
    });
}

template <typename T>
Var<T> add_channel(Var<T> x, Var<T> b) {
    same_graph("add_channel", x, b);
    const ChannelLayout L = channel_layout("add_channel", x.shape());
    if (b.shape() != Shape{L.c}) mismatch("add_channel", x.shape(), b.shape());
    Tensor<T> out = x.value();
    const T* bv = b.value().ptr();
    T* o = out.ptr();
    for (std::size_t n = 0; n < L.n; ++n) {
        for (std::size_t c = 0; c < L.c; ++c) {
            T* p = o + (n * L.c + c) * L.spatial;
            for (std::size_t s = 0; s < L.spatial; ++s) p[s] += bv[c];
        }
    }
    const NodeId ix = x.id, ib = b.id;
    return x.graph->record("add_channel", std::move(out), {ix, ib}, [ix, ib, L](Graph<T>& g, NodeId self) {
        const T* gy = g.grad(self).ptr();
        accumulate(g, ix, gy);
        if (wants(g, ib)) {
            T* gb = g.grad_buffer(ib).ptr();
            for (std::size_t n = 0; n < L.n; ++n) {
                for (std::size_t c = 0; c < L.c; ++c) {
                    gb[c] += K<T>().sum(L.spatial, gy + (n * L.c + c) * L.spatial);
                }
            }
        }
    });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    same_graph("matmul", a, b);
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
        mismatch("matmul", a.shape(), b.shape());
    }
    const std::size_t M = a.shape()[0], Kd = a.shape()[1], N = b.shape()[1];
    auto out = Tensor<T>::uninitialized(Shape{M, N});
    K<T>().gemm(M, N, Kd, a.value().ptr(), Kd, b.value().ptr(), N, out.ptr(), N, false);
    const NodeId ia = a.id, ib = b.id;
    return a.graph->record("matmul", std::move(out), {ia, ib}, [=](Graph<T>& g, NodeId self) {
        const T* gy = g.grad(self).ptr();
        if (wants(g, ia)) {
            // dA = dY * B^T
            const Tensor<T> bt = transpose2d(g.value(ib).ptr(), Kd, N);
            K<T>().gemm(M, Kd, N, gy, N, bt.ptr(), Kd, g.grad_buffer(ia).ptr(), Kd, true);
        }
        if (wants(g, ib)) {
            // dB = A^T * dY
            const Tensor<T> at = transpose2d(g.value(ia).ptr(), M, Kd);
            K<T>().gemm(Kd, N, M, at.ptr(), M, gy, N, g.grad_buffer(ib).ptr(), N, true);
        }
    });
}

template <typename T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
    same_graph("matmul_bt", a, b);
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[1]) {
        mismatch("matmul_bt", a.shape(), b.shape());
    }
    const std::size_t M = a.shape()[0], Kd = a.shape()[1], N = b.shape()[0];
    const Tensor<T> bt = transpose2d(b.value().ptr(), N, Kd);
    auto out = Tensor<T>::uninitialized(Shape{M, N});
    K<T>().gemm(M, N, Kd, a.value().ptr(), Kd, bt.ptr(), N, out.ptr(), N, false);
    const NodeId ia = a.id, ib = b.id;
    return a.graph->record("matmul_bt", std::move(out), {ia, ib}, [=](Graph<T>& g, NodeId self) {
        const T* gy = g.grad(self).ptr();
        if (wants(g, ia)) {
            // dA = dY * B
            K<T>().gemm(M, Kd, N, gy, N, g.value(ib).ptr(), Kd, g.grad_buffer(ia).ptr(), Kd, true);
        }
        if (wants(g, ib)) {
            // dB = dY^T * A
            const Tensor<T> gyt = transpose2d(gy, M, N);
            K<T>().gemm(N, Kd, M, gyt.ptr(), M, g.value(ia).ptr(), Kd, g.grad_buffer(ib).ptr(), Kd, true);
        }
    });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Conv2dParams params) {
    same_graph("conv2d", x, w);
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1]) mismatch("conv2d", xs, ws);
    if (params.stride == 0) throw ShapeError("conv2d: stride must be positive");
    if (xs[2] + 2 * params.padding < ws[2] || xs[3] + 2 * params.padding < ws[3]) {
        mismatch("conv2d", xs, ws);
    }
    ConvGeom G{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], params.stride, params.padding, 0, 0};
    G.ho = (G.h + 2 * G.pad - G.kh) / G.stride + 1;
    G.wo = (G.w + 2 * G.pad - G.kw) / G.stride + 1;
    const std::size_t KP = G.patch(), P = G.pixels();

    auto out = Tensor<T>::uninitialized(Shape{G.n, G.o, G.ho, G.wo});
    // Columns are kept for the weight gradient when one will be needed.
    const bool keep_cols = w.requires_grad();
    auto cols = std::make_shared<Buffer<T>>(keep_cols ? G.n * KP * P : KP * P);
    const T* xv = x.value().ptr();
    const T* wv = w.value().ptr();
    for (std::size_t n = 0; n < G.n; ++n) {
        T* cn = cols->data() + (keep_cols ? n * KP * P : 0);
        im2col(G, xv + n * G.c * G.h * G.w, cn);
        K<T>().gemm(G.o, P, KP, wv, KP, cn, P, out.ptr() + n * G.o * P, P, false);
    }
    if (!keep_cols) cols.reset();
    const NodeId ix = x.id, iw = w.id;
    return x.graph->record("conv2d", std::move(out), {ix, iw}, [G, ix, iw, cols](Graph<T>& g, NodeId self) {
        const std::size_t KP = G.patch(), P = G.pixels();
        const T* gy = g.grad(self).ptr();
        if (wants(g, iw)) {
            // gw^T[KP x O] = sum_n cols_n[KP x P] * gy_n^T[P x O]
            Buffer<T> gyt(P * G.o);
            Buffer<T> gwt(KP * G.o);
            for (std::size_t n = 0; n < G.n; ++n) {
                const T* gyn = gy + n * G.o * P;
                for (std::size_t o = 0; o < G.o; ++o) {
                    for (std::size_t q = 0; q < P; ++q) gyt[q * G.o + o] = gyn[o * P + q];
                }
                K<T>().gemm(KP, G.o, P, cols->data() + n * KP * P, P, gyt.data(), G.o, gwt.data(), G.o, n > 0);
            }
            T* gw = g.grad_buffer(iw).ptr();
            for (std::size_t o = 0; o < G.o; ++o) {
                for (std::size_t q = 0; q < KP; ++q) gw[o * KP + q] += gwt[q * G.o + o];
            }
        }
        if (wants(g, ix)) {
            T* gx = g.grad_buffer(ix).ptr();
            const Tensor<T> wt = transpose2d(g.value(iw).ptr(), G.o, KP);
            Buffer<T> dcols(KP * P);
            for (std::size_t n = 0; n < G.n; ++n) {
                K<T>().gemm(KP, P, G.o, wt.ptr(), G.o, gy + n * G.o * P, P, dcols.data(), P, false);
                col2im_add(G, dcols.data(), gx + n * G.c * G.h * G.w);
            }
        }
    });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
    const Shape& s = x.shape();
    if (s.size() != 4) bad_rank("global_avg_pool", s, "[N,C,H,W]");
    const std::size_t N = s[0], C = s[1], S = s[2] * s[3];
    auto out = Tensor<T>::uninitialized(Shape{N, C});
    const T inv = T(1) / static_cast<T>(S);
    for (std::size_t i = 0; i < N * C; ++i) {
        out[i] = K<T>().sum(S, x.value().ptr() + i * S) * inv;
    }
    const NodeId ix = x.id;
    return x.graph->record("global_avg_pool", std::move(out), {ix}, [=](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const T* gy = g.grad(self).ptr();
        T* gx = g.grad_buffer(ix).ptr();
        for (std::size_t i = 0; i < N * C; ++i) {
            const T v = gy[i] * inv;
            for (std::size_t k = 0; k < S; ++k) gx[i * S + k] += v;
        }
    });
}

template <typename T>
Var<T> batch_norm_train(Var<T> x, Var<T> gamma, Var<T> beta, Scalar<T> eps,
                        Scalar<BatchNormStats<T>>* stats) {
    same_graph("batch_norm", x, gamma);
    same_graph("batch_norm", x, beta);
    const ChannelLayout L = channel_layout("batch_norm", x.shape());
    if (gamma.shape() != Shape{L.c}) mismatch("batch_norm", x.shape(), gamma.shape());
    if (beta.shape() != Shape{L.c}) mismatch("batch_norm", x.shape(), beta.shape());
    const std::size_t m = L.n * L.spatial;
    if (m < 2) {
        throw ShapeError("batch_norm: training mode needs at least 2 values per channel, got shape " +
                         shape_str(x.shape()));
    }
    const T* xv = x.value().ptr();
    Tensor<T> mean(Shape{L.c}), var(Shape{L.c}), inv_std(Shape{L.c});
    auto xhat = Tensor<T>::uninitialized(x.shape());
    auto out = Tensor<T>::uninitialized(x.shape());
    const T* gv = gamma.value().ptr();
    const T* bv = beta.value().ptr();
    for (std::size_t c = 0; c < L.c; ++c) {
        T s = T(0);
        for (std::size_t n = 0; n < L.n; ++n) s += K<T>().sum(L.spatial, xv + (n * L.c + c) * L.spatial);
        const T mu = s / static_cast<T>(m);
        T ss = T(0);
        for (std::size_t n = 0; n < L.n; ++n) {
            const T* p = xv + (n * L.c + c) * L.spatial;
            for (std::size_t k = 0; k < L.spatial; ++k) ss += (p[k] - mu) * (p[k] - mu);
        }
        const T v = ss / static_cast<T>(m);
        const T is = T(1) / std::sqrt(v + eps);
        mean[c] = mu;
        var[c] = v;
        inv_std[c] = is;
        for (std::size_t n = 0; n < L.n; ++n) {
            const std::size_t off = (n * L.c + c) * L.spatial;
            for (std::size_t k = 0; k < L.spatial; ++k) {
                const T h = (xv[off + k] - mu) * is;
                xhat[off + k] = h;
                out[off + k] = gv[c] * h + bv[c];
            }
        }
    }
    if (stats != nullptr) {
        stats->mean = mean;
        stats->var = var;
        stats->count = m;
    }
    const NodeId ix = x.id, ig = gamma.id, ib = beta.id;
    return x.graph->record(
        "batch_norm_train", std::move(out), {ix, ig, ib},
        [L, m, ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& g, NodeId self) {
            const T* gy = g.grad(self).ptr();
            const T* gam = g.value(ig).ptr();
            const bool want_x = wants(g, ix), want_g = wants(g, ig), want_b = wants(g, ib);
            T* gx = want_x ? g.grad_buffer(ix).ptr() : nullptr;
            for (std::size_t c = 0; c < L.c; ++c) {
                T dg = T(0), db = T(0);
                for (std::size_t n = 0; n < L.n; ++n) {
                    const std::size_t off = (n * L.c + c) * L.spatial;
                    db += K<T>().sum(L.spatial, gy + off);
                    dg += K<T>().dot(L.spatial, gy + off, xhat.ptr() + off);
                }
                if (want_g) g.grad_buffer(ig)[c] += dg;
                if (want_b) g.grad_buffer(ib)[c] += db;
                if (want_x) {
                    const T k = gam[c] * inv_std[c] / static_cast<T>(m);
                    const T mf = static_cast<T>(m);
                    for (std::size_t n = 0; n < L.n; ++n) {
                        const std::size_t off = (n * L.c + c) * L.spatial;
                        for (std::size_t s = 0; s < L.spatial; ++s) {
                            gx[off + s] += k * (mf * gy[off + s] - db - xhat[off + s] * dg);
                        }
                    }
                }
            }
        });
}

template <typename T>
Var<T> batch_norm_eval(Var<T> x, Var<T> gamma, Var<T> beta, const Tensor<T>& running_mean,
                       const Tensor<T>& running_var, Scalar<T> eps) {
    same_graph("batch_norm", x, gamma);
    same_graph("batch_norm", x, beta);
    const ChannelLayout L = channel_layout("batch_norm", x.shape());
    if (gamma.shape() != Shape{L.c}) mismatch("batch_norm", x.shape(), gamma.shape());
    if (beta.shape() != Shape{L.c}) mismatch("batch_norm", x.shape(), beta.shape());
    if (running_mean.shape() != Shape{L.c}) mismatch("batch_norm", x.shape(), running_mean.shape());
    if (running_var.shape() != Shape{L.c}) mismatch("batch_norm", x.shape(), running_var.shape());
    const T* xv = x.value().ptr();
    const T* gv = gamma.value().ptr();
    const T* bv = beta.value().ptr();
    Tensor<T> inv_std(Shape{L.c});
    for (std::size_t c = 0; c < L.c; ++c) inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
    auto xhat = Tensor<T>::uninitialized(x.shape());
    auto out = Tensor<T>::uninitialized(x.shape());
    for (std::size_t n = 0; n < L.n; ++n) {
        for (std::size_t c = 0; c < L.c; ++c) {
            const std::size_t off = (n * L.c + c) * L.spatial;
            for (std::size_t s = 0; s < L.spatial; ++s) {
                const T h = (xv[off + s] - running_mean[c]) * inv_std[c];
                xhat[off + s] = h;
                out[off + s] = gv[c] * h + bv[c];
            }
        }
    }
    const NodeId ix = x.id, ig = gamma.id, ib = beta.id;
    return x.graph->record(
        "batch_norm_eval", std::move(out), {ix, ig, ib},
        [L, ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& g, NodeId self) {
            const T* gy = g.grad(self).ptr();
            const T* gam = g.value(ig).ptr();
            const bool want_x = wants(g, ix), want_g = wants(g, ig), want_b = wants(g, ib);
            T* gx = want_x ? g.grad_buffer(ix).ptr() : nullptr;
            for (std::size_t c = 0; c < L.c; ++c) {
                T dg = T(0), db = T(0);
                const T k = gam[c] * inv_std[c];
                for (std::size_t n = 0; n < L.n; ++n) {
                    const std::size_t off = (n * L.c + c) * L.spatial;
                    if (want_b) db += K<T>().sum(L.spatial, gy + off);
                    if (want_g) dg += K<T>().dot(L.spatial, gy + off, xhat.ptr() + off);
                    if (want_x) K<T>().axpy(L.spatial, k, gy + off, gx + off);
                }
                if (want_g) g.grad_buffer(ig)[c] += dg;
                if (want_b) g.grad_buffer(ib)[c] += db;
            }
        });
}

template <typename T>
Var<T> relu(Var<T> x) {
    auto out = Tensor<T>::uninitialized(x.shape());
    K<T>().relu(out.size(), x.value().ptr(), out.ptr());
    const NodeId ix = x.id;
    return x.graph->record("relu", std::move(out), {ix}, [ix](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        Tensor<T>& gx = g.grad_buffer(ix);
        K<T>().relu_backward(gx.size(), g.value(ix).ptr(), g.grad(self).ptr(), gx.ptr());
    });
}

template <typename T>
Var<T> softmax(Var<T> x) {
    if (x.value().rank() != 2) bad_rank("softmax", x.shape(), "[N,K]");
    const std::size_t N = x.shape()[0], C = x.shape()[1];
    auto out = Tensor<T>::uninitialized(x.shape());
    for (std::size_t i = 0; i < N; ++i) {
        const T* row = x.value().ptr() + i * C;
        T* o = out.ptr() + i * C;
        T mx = row[0];
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
        T s = T(0);
        for (std::size_t j = 0; j < C; ++j) {
            o[j] = std::exp(row[j] - mx);
            s += o[j];
        }
        for (std::size_t j = 0; j < C; ++j) o[j] /= s;
    }
    const NodeId ix = x.id;
    return x.graph->record("softmax", std::move(out), {ix}, [=](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const T* y = g.value(self).ptr();
        const T* gy = g.grad(self).ptr();
        T* gx = g.grad_buffer(ix).ptr();
        for (std::size_t i = 0; i < N; ++i) {
            const T d = K<T>().dot(C, gy + i * C, y + i * C);
            for (std::size_t j = 0; j < C; ++j) gx[i * C + j] += y[i * C + j] * (gy[i * C + j] - d);
        }
    });
}

template <typename T>
Var<T> log_softmax(Var<T> x) {
    if (x.value().rank() != 2) bad_rank("log_softmax", x.shape(), "[N,K]");
    const std::size_t N = x.shape()[0], C = x.shape()[1];
    auto out = Tensor<T>::uninitialized(x.shape());
    for (std::size_t i = 0; i < N; ++i) {
        const T* row = x.value().ptr() + i * C;
        T* o = out.ptr() + i * C;
        T mx = row[0];
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
        T s = T(0);
        for (std::size_t j = 0; j < C; ++j) s += std::exp(row[j] - mx);
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < C; ++j) o[j] = row[j] - lse;
    }
    const NodeId ix = x.id;
    return x.graph->record("log_softmax", std::move(out), {ix}, [=](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const T* y = g.value(self).ptr();
        const T* gy = g.grad(self).ptr();
        T* gx = g.grad_buffer(ix).ptr();
        for (std::size_t i = 0; i < N; ++i) {
            const T s = K<T>().sum(C, gy + i * C);
            for (std::size_t j = 0; j < C; ++j) gx[i * C + j] += gy[i * C + j] - std::exp(y[i * C + j]) * s;
        }
    });
}

template <typename T>
Var<T> log(Var<T> x) {
    auto out = Tensor<T>::uninitialized(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.value()[i]);
    const NodeId ix = x.id;
    return x.graph->record("log", std::move(out), {ix}, [ix](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const Tensor<T>& xv = g.value(ix);
        const Tensor<T>& gy = g.grad(self);
        Tensor<T>& gx = g.grad_buffer(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] / xv[i];
    });
}

template <typename T>
Var<T> exp(Var<T> x) {
    auto out = Tensor<T>::uninitialized(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]);
    const NodeId ix = x.id;
    return x.graph->record("exp", std::move(out), {ix}, [ix](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        Tensor<T>& gx = g.grad_buffer(ix);
        K<T>().mul_acc(gx.size(), g.grad(self).ptr(), g.value(self).ptr(), gx.ptr());
    });
}

template <typename T>
Var<T> pow(Var<T> x, Scalar<T> exponent) {
    auto out = Tensor<T>::uninitialized(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(x.value()[i], exponent);
    const NodeId ix = x.id;
    return x.graph->record("pow", std::move(out), {ix}, [ix, exponent](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const Tensor<T>& xv = g.value(ix);
        const Tensor<T>& gy = g.grad(self);
        Tensor<T>& gx = g.grad_buffer(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += gy[i] * exponent * std::pow(xv[i], exponent - T(1));
        }
    });
}

template <typename T>
Var<T> sum(Var<T> x) {
    const T s = K<T>().sum(x.value().size(), x.value().ptr());
    const NodeId ix = x.id;
    return x.graph->record("sum", Tensor<T>::scalar(s), {ix}, [ix](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const T gy = g.grad(self)[0];
        for (T& v : g.grad_buffer(ix).data()) v += gy;
    });
}

template <typename T>
Var<T> mean(Var<T> x) {
    const std::size_t n = x.value().size();
    const T s = K<T>().sum(n, x.value().ptr()) / static_cast<T>(n);
    const NodeId ix = x.id;
    return x.graph->record("mean", Tensor<T>::scalar(s), {ix}, [ix, n](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const T gy = g.grad(self)[0] / static_cast<T>(n);
        for (T& v : g.grad_buffer(ix).data()) v += gy;
    });
}

template <typename T>
Var<T> sum_rows(Var<T> x) {
    if (x.value().rank() != 2) bad_rank("sum_rows", x.shape(), "[N,K]");
    const std::size_t N = x.shape()[0], C = x.shape()[1];
    auto out = Tensor<T>::uninitialized(Shape{N});
    for (std::size_t i = 0; i < N; ++i) out[i] = K<T>().sum(C, x.value().ptr() + i * C);
    const NodeId ix = x.id;
    return x.graph->record("sum_rows", std::move(out), {ix}, [=](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const T* gy = g.grad(self).ptr();
        T* gx = g.grad_buffer(ix).ptr();
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < C; ++j) gx[i * C + j] += gy[i];
    });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Graph<T>* graph = parts[0].graph;
    const Shape& first = parts[0].shape();
    Shape out_shape = first;
    out_shape[0] = 0;
    std::vector<NodeId> ids;
    std::vector<std::size_t> sizes;
    for (const Var<T>& p : parts) {
        same_graph("concat_rows", parts[0], p);
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
            mismatch("concat_rows", first, s);
        }
        out_shape[0] += s[0];
        ids.push_back(p.id);
        sizes.push_back(p.value().size());
    }
    auto out = Tensor<T>::uninitialized(out_shape);
    std::size_t off = 0;
    for (const Var<T>& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.ptr() + off);
        off += p.value().size();
    }
    return graph->record("concat_rows", std::move(out), ids, [ids, sizes](Graph<T>& g, NodeId self) {
        const T* gy = g.grad(self).ptr();
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            accumulate(g, ids[k], gy + off);
            off += sizes[k];
        }
    });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end) {
    const Shape& s = x.shape();
    if (s.empty() || begin >= end || end > s[0]) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_str(s));
    }
    const std::size_t row = x.value().size() / s[0];
    Shape out_shape = s;
    out_shape[0] = end - begin;
    auto out = Tensor<T>::uninitialized(out_shape);
    std::copy(x.value().ptr() + begin * row, x.value().ptr() + end * row, out.ptr());
    const NodeId ix = x.id;
    return x.graph->record("slice_rows", std::move(out), {ix}, [=](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const Tensor<T>& gy = g.grad(self);
        T* gx = g.grad_buffer(ix).ptr() + begin * row;
        K<T>().axpy(gy.size(), T(1), gy.ptr(), gx);
    });
}

template <typename T>
Var<T> pick(Var<T> x, std::span<const std::size_t> index) {
    if (x.value().rank() != 2) bad_rank("pick", x.shape(), "[N,K]");
    const std::size_t N = x.shape()[0], C = x.shape()[1];
    if (index.size() != N) mismatch("pick", x.shape(), Shape{index.size()});
    std::vector<std::size_t> idx(index.begin(), index.end());
    auto out = Tensor<T>::uninitialized(Shape{N});
    for (std::size_t i = 0; i < N; ++i) {
        if (idx[i] >= C) {
            throw ShapeError("pick: index " + std::to_string(idx[i]) + " out of range for shape " +
                             shape_str(x.shape()));
        }
        out[i] = x.value()[i * C + idx[i]];
    }
    const NodeId ix = x.id;
    return x.graph->record("pick", std::move(out), {ix}, [=](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const T* gy = g.grad(self).ptr();
        T* gx = g.grad_buffer(ix).ptr();
        for (std::size_t i = 0; i < N; ++i) gx[i * C + idx[i]] += gy[i];
    });
}

template <typename T>
Var<T> sign(Var<T> x) {
    auto out = Tensor<T>::uninitialized(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.value()[i];
        out[i] = v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
    }
    return x.graph->record_detached("sign", std::move(out), {x.id});
}

template <typename T>
Var<T> clamp(Var<T> x, Scalar<T> lo, Scalar<T> hi) {
    if (!(lo <= hi)) throw Error("clamp: lower bound exceeds upper bound");
    auto out = Tensor<T>::uninitialized(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.value()[i];
        out[i] = std::isnan(v) ? lo : std::min(std::max(v, lo), hi);
    }
    const NodeId ix = x.id;
    return x.graph->record("clamp", std::move(out), {ix}, [ix, lo, hi](Graph<T>& g, NodeId self) {
        if (!wants(g, ix)) return;
        const Tensor<T>& xv = g.value(ix);
        const Tensor<T>& gy = g.grad(self);
        Tensor<T>& gx = g.grad_buffer(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (xv[i] > lo && xv[i] < hi) gx[i] += gy[i];
        }
    });
}

template <typename T>
Var<T> where(const std::vector<bool>& mask, Var<T> a, Var<T> b) {
    same_graph("where", a, b);
    if (a.shape() != b.shape()) mismatch("where", a.shape(), b.shape());
    if (mask.size() != a.value().size()) mismatch("where", a.shape(), Shape{mask.size()});
    auto out = Tensor<T>::uninitialized(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] ? a.value()[i] : b.value()[i];
    const NodeId ia = a.id, ib = b.id;
    return a.graph->record("where", std::move(out), {ia, ib}, [mask, ia, ib](Graph<T>& g, NodeId self) {
        const Tensor<T>& gy = g.grad(self);
        if (wants(g, ia)) {
            Tensor<T>& ga = g.grad_buffer(ia);
            for (std::size_t i = 0; i < ga.size(); ++i) if (mask[i]) ga[i] += gy[i];
        }
        if (wants(g, ib)) {
            Tensor<T>& gb = g.grad_buffer(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) if (!mask[i]) gb[i] += gy[i];
        }
    });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    const NodeId ix = x.id;
    return x.graph->record("reshape", std::move(out), {ix}, [ix](Graph<T>& g, NodeId self) {
        accumulate(g, ix, g.grad(self).ptr());
    });
}

#define NSDESK_INSTANTIATE_OPS(T)                                                                   \
    template Var<T> add(Var<T>, Var<T>);                                                            \
    template Var<T> sub(Var<T>, Var<T>);                                                            \
    template Var<T> mul(Var<T>, Var<T>);                                                            \
    template Var<T> scale(Var<T>, T);                                                               \
    template Var<T> add_scalar(Var<T>, T);                                                          \
    template Var<T> add_channel(Var<T>, Var<T>);                                                    \
    template Var<T> matmul(Var<T>, Var<T>);                                                         \
    template Var<T> matmul_bt(Var<T>, Var<T>);                                                      \
    template Var<T> conv2d(Var<T>, Var<T>, Conv2dParams);                                           \
    template Var<T> global_avg_pool(Var<T>);                                                        \
    template Var<T> batch_norm_train(Var<T>, Var<T>, Var<T>, T, BatchNormStats<T>*);                \
    template Var<T> batch_norm_eval(Var<T>, Var<T>, Var<T>, const Tensor<T>&, const Tensor<T>&, T); \
    template Var<T> relu(Var<T>);                                                                   \
    template Var<T> softmax(Var<T>);                                                                \
    template Var<T> log_softmax(Var<T>);                                                            \
    template Var<T> log(Var<T>);                                                                    \
    template Var<T> exp(Var<T>);                                                                    \
    template Var<T> pow(Var<T>, T);                                                                 \
    template Var<T> sum(Var<T>);                                                                    \
    template Var<T> mean(Var<T>);                                                                   \
    template Var<T> sum_rows(Var<T>);                                                               \
    template Var<T> concat_rows(std::span<const Var<T>>);                                           \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                                   \
    template Var<T> pick(Var<T>, std::span<const std::size_t>);                                     \
    template Var<T> sign(Var<T>);                                                                   \
    template Var<T> clamp(Var<T>, T, T);                                                            \
    template Var<T> where(const std::vector<bool>&, Var<T>, Var<T>);                                \
    template Var<T> reshape(Var<T>, Shape);

NSDESK_INSTANTIATE_OPS(float)
NSDESK_INSTANTIATE_OPS(double)

}  // namespace nsdesk::ops
