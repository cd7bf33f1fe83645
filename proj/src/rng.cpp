#include "dsdm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dsdm {

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : engine_(seeded_engine(seed, stream)) {}

double Rng::uniform() {
    // 53 random mantissa bits, shifted off zero.
    for (;;) {
        const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        if (u > 0.0) return u;
    }
}

double Rng::normal(double mean, double sd) {
    std::normal_distribution<double> dist(mean, sd);
    return dist(engine_);
}

double Rng::gamma(double shape) {
    std::gamma_distribution<double> dist(shape, 1.0);
    return dist(engine_);
}

double Rng::log_gamma(double shape) {
    if (shape >= 1.0) return std::log(gamma(shape));
    // Gamma(a) = Gamma(a + 1) * U^(1/a)
    return std::log(gamma(shape + 1.0)) + std::log(uniform()) / shape;
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::size_t Rng::uniform_index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

std::size_t Rng::categorical_log(std::span<const double> log_weights) {
    const double max = *std::max_element(log_weights.begin(), log_weights.end());
    if (!(max > -std::numeric_limits<double>::infinity())) return log_weights.size();
    double total = 0.0;
    for (double lw : log_weights) total += std::exp(lw - max);
    double target = uniform() * total;
    for (std::size_t k = 0; k < log_weights.size(); ++k) {
        target -= std::exp(log_weights[k] - max);
        if (target <= 0.0) return k;
    }
    // Rounding can leave a sliver of mass; give it to the last positive entry.
    for (std::size_t k = log_weights.size(); k-- > 0;) {
        if (log_weights[k] > -std::numeric_limits<double>::infinity()) return k;
    }
    return log_weights.size();
}

}  // namespace dsdm
