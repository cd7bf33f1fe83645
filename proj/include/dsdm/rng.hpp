#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace dsdm {

// Splittable random source.
//
// Each (seed, stream) pair maps to an independent std::mt19937_64 whose state
// is filled through std::seed_seq from the four 32-bit halves of the pair.
// Chain m of a run uses stream m; salso restart r uses stream r; generator
// replicate r uses stream r. Reusing a pair reproduces the sequence exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    // Child generator for sub-task `stream`, independent of this one's state.
    static Rng split(std::uint64_t seed, std::uint64_t stream) { return Rng(seed, stream); }

    std::mt19937_64& engine() noexcept { return engine_; }

    // Uniform on the open interval (0, 1).
    double uniform();
    double normal(double mean, double sd);
    double gamma(double shape);
    // log of a Gamma(shape, 1) draw; stays finite for tiny shapes where the
    // draw itself would underflow to zero.
    double log_gamma(double shape);
    bool bernoulli(double p);
    std::size_t uniform_index(std::size_t n);

    // Draw an index with probability proportional to exp(log_weights[k]).
    // Returns log_weights.size() if every weight is -inf.
    std::size_t categorical_log(std::span<const double> log_weights);

private:
    std::mt19937_64 engine_;
};

}  // namespace dsdm
