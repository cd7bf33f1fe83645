#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dsdm/model.hpp"
#include "dsdm/rng.hpp"

namespace dsdm {

struct SamplerConfig {
    int n_iter = 10000;
    int burn_in = 5000;
    int thin = 1;
    std::uint64_t seed = 1;
    bool record_xi = false;
    // Check every ChainState invariant after each sweep (always on in debug builds).
    bool check_invariants = false;

    void validate() const;
    std::size_t n_retained() const noexcept {
        return static_cast<std::size_t>((n_iter - burn_in) / thin);
    }
};

struct DrawRecord {
    int iteration = 0;  // 1-based sweep number
    int n_active = 0;   // K
    int n_filled = 0;   // K+
    double log_density = 0.0;
    std::vector<int> alloc;       // 0-based; components [0, n_filled) non-empty
    std::vector<double> weights;  // normalized weights of the filled components
    std::vector<double> xi;       // n_filled x J, only when recording xi
};

struct PosteriorDraws {
    std::size_t n_samples = 0;
    std::size_t n_taxa = 0;
    std::vector<DrawRecord> records;
    double xi_acceptance_rate = 0.0;
    bool interrupted = false;

    bool has_xi() const noexcept { return !records.empty() && !records.front().xi.empty(); }
};

// Per-coordinate outcome of one ξ sweep, row-major over filled components.
struct XiAcceptance {
    std::size_t n_taxa = 0;
    std::vector<std::uint8_t> accepted;

    std::size_t proposals() const noexcept { return accepted.size(); }
    std::size_t accepts() const noexcept;
};

// Singleton start: every sample in component 1 with concentrations at the
// prior mean, every at-risk indicator set to 1, weight drawn Gamma(theta + N).
ChainState initialize(const CountMatrix& data, const Hyperparams& hyper, Rng& rng);

// log p(K | partition) for K = n_filled..k_max (entry K - n_filled):
//   log p(K) + log K!/(K - K+)! + lgamma(theta K) - lgamma(theta K + N)
std::vector<double> k_conditional_log_pmf(int n_filled, std::size_t n_samples, const Hyperparams& hyper);

// Metropolis-Hastings within Gibbs sampler with the telescoping update of K.
//
// Holds non-owning references to the data; the caller keeps it alive.
class Sampler {
public:
    Sampler(const CountMatrix& data, Hyperparams hyper, std::uint64_t seed, std::uint64_t stream = 0);
    Sampler(const CountMatrix& data, Hyperparams hyper, ChainState state, Rng rng);

    const ChainState& state() const noexcept { return state_; }
    // Direct access for tests; call invalidate() after external edits.
    ChainState& mutable_state() noexcept {
        caches_valid_ = false;
        return state_;
    }
    const Hyperparams& hyper() const noexcept { return hyper_; }
    Rng& rng() noexcept { return rng_; }

    // One full sweep in the fixed order
    //   γ, allocations, relabel, filled weights, ξ, K (+ empty refresh), weights.
    XiAcceptance sweep();

    void update_gamma();
    void update_allocations();
    int relabel_filled_first();
    void update_weights(bool filled_only = false);
    XiAcceptance update_xi();
    void update_k();

    // Unnormalized log p(c_i = k | rest) for k < K.
    std::vector<double> allocation_log_probs(std::size_t i) const;

    // log p(z, c, γ, ξ_filled | w, K) + log p(K): data term with multinomial
    // coefficients, ξ prior of the filled rows, allocation term, integrated
    // at-risk term (ZIDM only) and the K prior.
    double log_joint_density() const;

private:
    void refresh_caches();
    double conc_without(std::size_t i, std::size_t j) const;

    const CountMatrix& data_;
    Hyperparams hyper_;
    Rng rng_;
    ChainState state_;
    std::vector<double> log_k_prior_;

    struct Entry {
        std::uint32_t taxon;
        double count;
    };
    std::vector<std::vector<Entry>> nonzero_;  // positive cells per sample
    std::vector<double> depth_;

    bool caches_valid_ = false;
    std::vector<double> at_risk_per_taxon_;  // column sums of γ
    std::vector<double> conc_sum_;           // A_i over at-risk taxa of the sample's component
    std::vector<double> conc_term_;          // lgamma(A_i) - lgamma(A_i + n_i)
};

struct RunOptions {
    std::uint64_t stream = 0;
    // Polled after each sweep; returning true stops the run and keeps the
    // draws recorded so far.
    std::function<bool(int iteration)> should_stop;
};

PosteriorDraws run_chain(const CountMatrix& data, const Hyperparams& hyper, const SamplerConfig& config,
                         const RunOptions& options = {});

// Independent chains on separate threads; chain m uses RNG stream m.
std::vector<PosteriorDraws> run_chains(const CountMatrix& data, const Hyperparams& hyper,
                                       const SamplerConfig& config, int n_chains,
                                       const std::function<bool(int)>& should_stop = {});

}  // namespace dsdm
