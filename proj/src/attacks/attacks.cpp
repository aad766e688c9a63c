#include "nsdesk/attacks/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nsdesk/common/error.hpp"
#include "nsdesk/common/text.hpp"
#include "nsdesk/diffcore/ops.hpp"
#include "nsdesk/symlosses/symlosses.hpp"

namespace nsdesk::attack {

namespace {

// Largest T not above v.
template <typename T>
T round_down(double v) {
    T t = static_cast<T>(v);
    if (static_cast<double>(t) > v) {
        t = std::nextafter(t, -std::numeric_limits<T>::infinity());
    }
    return t;
}

// a + b rounded, and the exact error of that rounding (Knuth's TwoSum).
template <typename T>
std::pair<T, T> two_sum(T a, T b) {
    const T s = a + b;
    const T bb = s - a;
    const T err = (a - (s - bb)) + (b - bb);
    return {s, err};
}

template <typename T>
void check_images(const Tensor<T>& images, std::span<const std::size_t> labels, const char* who) {
    if (images.rank() != 4 || images.dim(0) != labels.size()) {
        throw ShapeError(std::string(who) + ": images " + shape_str(images.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
    }
}

}  // namespace

std::string_view kind_name(Kind kind) { return kind == Kind::fgsm ? "fgsm" : "pgd"; }

Kind parse_kind(std::string_view name) {
    if (name == "fgsm") return Kind::fgsm;
    if (name == "pgd") return Kind::pgd;
    throw ConfigError("unknown attack '" + std::string(name) + "' (expected fgsm or pgd)");
}

void AttackSpec::validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        throw ConfigError("attack: epsilon must lie in [0, 1], got " + text::format_double(epsilon));
    }
    if (!(clamp_lo < clamp_hi)) {
        throw ConfigError("attack: clamp range must satisfy lo < hi");
    }
    if (kind == Kind::pgd) {
        if (steps == 0) {
            throw ConfigError("attack: PGD needs at least one step");
        }
        if (!(step_size >= 0.0) || alpha() > epsilon) {
            throw ConfigError("attack: PGD step size " + text::format_double(alpha()) + " exceeds epsilon " +
                              text::format_double(epsilon));
        }
    }
}

std::string AttackSpec::describe() const {
    std::string s = std::string(kind_name(kind)) + " eps=" + text::format_double(epsilon);
    if (kind == Kind::pgd) {
        s += " steps=" + std::to_string(steps) + " alpha=" + text::format_double(alpha()) +
             " random_start=" + (random_start ? "1" : "0");
    }
    return s;
}

AttackSpec AttackSpec::fgsm(double epsilon) {
    AttackSpec s;
    s.kind = Kind::fgsm;
    s.epsilon = epsilon;
    s.steps = 1;
    s.random_start = false;
    return s;
}

AttackSpec AttackSpec::pgd(double epsilon, std::size_t steps, double step_size, bool random_start) {
    AttackSpec s;
    s.kind = Kind::pgd;
    s.epsilon = epsilon;
    s.steps = steps;
    s.step_size = step_size;
    s.random_start = random_start;
    return s;
}

double parse_epsilon(std::string_view text) {
    const std::string_view t = text::trim(text);
    const std::size_t slash = t.find('/');
    double v;
    if (slash == std::string_view::npos) {
        v = text::parse_double(t, "epsilon");
    } else {
        const double num = text::parse_double(text::trim(t.substr(0, slash)), "epsilon numerator");
        const double den = text::parse_double(text::trim(t.substr(slash + 1)), "epsilon denominator");
        if (den == 0.0) {
            throw ParseError("epsilon: zero denominator in '" + std::string(t) + "'");
        }
        v = num / den;
    }
    if (!(v >= 0.0 && v <= 1.0)) {
        throw ParseError("epsilon must lie in [0, 1], got '" + std::string(t) + "'");
    }
    return v;
}

template <typename T>
Tensor<T> input_gradient(const net::Model<T>& model, const Tensor<T>& images, std::span<const std::size_t> labels) {
    check_images(images, labels, "attack");
    Graph<T> g;
    const auto params = model.bind(g, false);
    const Var<T> x = g.input(images, true);
    const auto out = model.forward(g, params, x, net::Mode::eval);
    g.backward(sym::cross_entropy(out.logits, labels));
    Tensor<T> grad = x.grad();
    if (!grad.all_finite()) {
        throw NumericError("attack: non-finite input gradient");
    }
    return grad;
}

template <typename T>
void project(Tensor<T>& x, const Tensor<T>& origin, double epsilon, double lo, double hi) {
    if (x.shape() != origin.shape()) {
        throw ShapeError("project: " + shape_str(x.shape()) + " vs " + shape_str(origin.shape()));
    }
    const T e = round_down<T>(epsilon);
    const T box_lo = static_cast<T>(lo), box_hi = static_cast<T>(hi);
    constexpr T inf = std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T o = origin[i];
        auto [up, up_err] = two_sum(o, e);
        if (up_err < 0) up = std::nextafter(up, -inf);
        auto [down, down_err] = two_sum(o, -e);
        if (down_err > 0) down = std::nextafter(down, inf);
        const T v = std::isnan(x[i]) ? o : x[i];
        x[i] = std::clamp(std::clamp(v, down, up), box_lo, box_hi);
    }
}

namespace {

template <typename T>
void signed_step(Tensor<T>& x, const Tensor<T>& grad, T alpha) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T s = grad[i] > 0 ? T(1) : (grad[i] < 0 ? T(-1) : T(0));
        x[i] += alpha * s;
    }
}

}  // namespace

template <typename T>
Tensor<T> fgsm(const net::Model<T>& model, const Tensor<T>& images, std::span<const std::size_t> labels,
               double epsilon, double lo, double hi) {
    AttackSpec spec = AttackSpec::fgsm(epsilon);
    spec.clamp_lo = lo;
    spec.clamp_hi = hi;
    spec.validate();
    Tensor<T> x = images;
    signed_step(x, input_gradient(model, images, labels), round_down<T>(epsilon));
    project(x, images, epsilon, lo, hi);
    return x;
}

template <typename T>
Tensor<T> pgd(const net::Model<T>& model, const Tensor<T>& images, std::span<const std::size_t> labels,
              const AttackSpec& spec, Rng& rng) {
    spec.validate();
    if (spec.kind != Kind::pgd) {
        throw ConfigError("pgd: spec describes " + std::string(kind_name(spec.kind)));
    }
    check_images(images, labels, "pgd");
    Tensor<T> x = images;
    if (spec.random_start) {
        for (T& v : x.data()) {
            v += static_cast<T>(rng.uniform(-spec.epsilon, spec.epsilon));
        }
        project(x, images, spec.epsilon, spec.clamp_lo, spec.clamp_hi);
    }
    const T alpha = round_down<T>(spec.alpha());
    for (std::size_t k = 0; k < spec.steps; ++k) {
        signed_step(x, input_gradient(model, x, labels), alpha);
        project(x, images, spec.epsilon, spec.clamp_lo, spec.clamp_hi);
    }
    return x;
}

template <typename T>
Tensor<T> run(const net::Model<T>& model, const Tensor<T>& images, std::span<const std::size_t> labels,
              const AttackSpec& spec, std::uint64_t seed) {
    if (spec.kind == Kind::fgsm) {
        return fgsm(model, images, labels, spec.epsilon, spec.clamp_lo, spec.clamp_hi);
    }
    Rng rng(seed);
    return pgd(model, images, labels, spec, rng);
}

#define NSDESK_ATTACK_INSTANTIATE(T)                                                                               \
    template Tensor<T> input_gradient(const net::Model<T>&, const Tensor<T>&, std::span<const std::size_t>);      \
    template void project(Tensor<T>&, const Tensor<T>&, double, double, double);                                   \
    template Tensor<T> fgsm(const net::Model<T>&, const Tensor<T>&, std::span<const std::size_t>, double, double,  \
                            double);                                                                               \
    template Tensor<T> pgd(const net::Model<T>&, const Tensor<T>&, std::span<const std::size_t>,                   \
                           const AttackSpec&, Rng&);                                                               \
    template Tensor<T> run(const net::Model<T>&, const Tensor<T>&, std::span<const std::size_t>,                   \
                           const AttackSpec&, std::uint64_t);

NSDESK_ATTACK_INSTANTIATE(float)
NSDESK_ATTACK_INSTANTIATE(double)

}  // namespace nsdesk::attack
