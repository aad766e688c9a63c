#pragma once

// White-box L-infinity attacks on the class head. Gradients are taken with
// batchnorm in inference mode, so attacking never touches model state.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "nsdesk/common/rng.hpp"
#include "nsdesk/netcore/model.hpp"

namespace nsdesk::attack {

enum class Kind { fgsm, pgd };

std::string_view kind_name(Kind kind);
Kind parse_kind(std::string_view name);

inline constexpr double kDefaultEpsilon = 8.0 / 255.0;
inline constexpr std::size_t kDefaultPgdSteps = 10;

struct AttackSpec {
    Kind kind = Kind::pgd;
    double epsilon = kDefaultEpsilon;
    std::size_t steps = kDefaultPgdSteps;
    double step_size = 0.0;  // 0 selects epsilon / 4
    bool random_start = true;
    double clamp_lo = 0.0;
    double clamp_hi = 1.0;

    double alpha() const { return step_size > 0.0 ? step_size : epsilon / 4.0; }
    // Throws ConfigError unless 0 <= epsilon <= 1, lo < hi and, for PGD,
    // steps >= 1 and alpha <= epsilon.
    void validate() const;
    std::string describe() const;

    static AttackSpec fgsm(double epsilon);
    static AttackSpec pgd(double epsilon, std::size_t steps = kDefaultPgdSteps, double step_size = 0.0,
                          bool random_start = true);
};

// Accepts a decimal ("0.03137") or a fraction ("8/255").
double parse_epsilon(std::string_view text);

// Gradient of the batch-mean class cross-entropy with respect to the images,
// evaluated in inference mode.
template <typename T>
Tensor<T> input_gradient(const net::Model<T>& model, const Tensor<T>& images, std::span<const std::size_t> labels);

// Projects onto the intersection of the L-infinity ball of radius epsilon
// around `origin` and the [lo, hi] box. The ball bounds are rounded inward,
// so |result - origin| <= epsilon holds in exact arithmetic.
template <typename T>
void project(Tensor<T>& x, const Tensor<T>& origin, double epsilon, double lo, double hi);

template <typename T>
Tensor<T> fgsm(const net::Model<T>& model, const Tensor<T>& images, std::span<const std::size_t> labels,
               double epsilon, double lo = 0.0, double hi = 1.0);

// `rng` feeds the random start and is untouched when it is off.
template <typename T>
Tensor<T> pgd(const net::Model<T>& model, const Tensor<T>& images, std::span<const std::size_t> labels,
              const AttackSpec& spec, Rng& rng);

// Dispatches on spec.kind; PGD noise is drawn from Rng(seed).
template <typename T>
Tensor<T> run(const net::Model<T>& model, const Tensor<T>& images, std::span<const std::size_t> labels,
              const AttackSpec& spec, std::uint64_t seed);

}  // namespace nsdesk::attack
