#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace dsdm {

using Count = std::int64_t;

// N x J matrix of taxa counts, one row per sample. Row depths are kept in
// sync with the counts; columns with no reads are allowed.
class CountMatrix {
public:
    CountMatrix() = default;
    // Throws ValidationError on negative cells, ragged shape, N < 1 or J < 2.
    CountMatrix(std::size_t n_samples, std::size_t n_taxa, std::vector<Count> counts,
                std::vector<std::string> sample_ids = {}, std::vector<std::string> taxon_ids = {});

    static CountMatrix from_rows(const std::vector<std::vector<Count>>& rows);

    std::size_t n_samples() const noexcept { return n_samples_; }
    std::size_t n_taxa() const noexcept { return n_taxa_; }

    Count operator()(std::size_t i, std::size_t j) const noexcept { return counts_[i * n_taxa_ + j]; }
    std::span<const Count> row(std::size_t i) const noexcept {
        return {counts_.data() + i * n_taxa_, n_taxa_};
    }
    Count depth(std::size_t i) const noexcept { return depths_[i]; }
    std::span<const Count> depths() const noexcept { return depths_; }
    std::span<const Count> values() const noexcept { return counts_; }

    const std::vector<std::string>& sample_ids() const noexcept { return sample_ids_; }
    const std::vector<std::string>& taxon_ids() const noexcept { return taxon_ids_; }

    // Fraction of cells equal to zero.
    double zero_fraction() const noexcept;

private:
    std::size_t n_samples_ = 0;
    std::size_t n_taxa_ = 0;
    std::vector<Count> counts_;
    std::vector<Count> depths_;
    std::vector<std::string> sample_ids_;
    std::vector<std::string> taxon_ids_;
};

// Priors on the number of mixture components K. Every family is truncated to
// {1, ..., k_max} and renormalized there.
struct ZeroTruncBinomial {
    double pi_lambda = 0.5;  // per-component inclusion probability
};
struct TruncatedPoisson {
    double rate = 5.0;
};
struct Geometric {
    double p = 0.2;  // P(K = k) proportional to p (1 - p)^(k - 1)
};
// K - 1 ~ BNB(r, a, b):  Gamma(r + m) / (m! Gamma(r)) * B(a + r, b + m) / B(a, b).
struct BetaNegBinomial {
    double a = 4.0;
    double b = 3.0;
    double r = 1.0;
};

struct KPrior {
    std::variant<ZeroTruncBinomial, TruncatedPoisson, Geometric, BetaNegBinomial> family{ZeroTruncBinomial{}};
    int k_max = 10;

    void validate() const;
};

// Normalized log pmf over k = 1..k_max (entry k - 1).
std::vector<double> log_k_prior_table(const KPrior& prior);
// Throws ValidationError for k outside {1..k_max}.
double log_k_prior(int k, const KPrior& prior);

enum class ZeroInflation { ZIDM, DM };

struct Hyperparams {
    KPrior k_prior;
    double theta = 0.1;        // Dirichlet concentration of active weights
    double alpha_gamma = 1.0;  // Beta prior on per-taxon at-risk probability
    double beta_gamma = 1.0;
    double s = 200.0;          // pseudo read total behind the prior means
    double sigma2 = 10.0;      // prior variance of each log-concentration
    double sigma2_mh = 1.0;    // random-walk proposal variance
    std::vector<double> mu;    // prior mean of each log-concentration, length J
    ZeroInflation zero_inflation = ZeroInflation::ZIDM;

    int k_max() const noexcept { return k_prior.k_max; }
    // Throws ValidationError; checks mu against `n_taxa` when nonzero.
    void validate(std::size_t n_taxa = 0) const;
};

struct PriorMeans {
    std::vector<double> mu;
    // Taxa with no reads anywhere; their mean was replaced by a half-read
    // pseudo-abundance.
    std::vector<std::size_t> all_zero_taxa;
};

// mu_j = log(s * mean_i(z_ij / depth_i)), averaging over samples with
// positive depth. All-zero taxa use log(s * 0.5 / sum_i depth_i).
PriorMeans prior_means(const CountMatrix& data, double s);

// Dirichlet-multinomial log-probability of one sample restricted to its
// at-risk taxa, with the per-sample Dirichlet proportions integrated out.
//
//   log C(n; z) + lgamma(A) - lgamma(A + n) + sum_{j at risk} [lgamma(a_j + z_j) - lgamma(a_j)]
//
// with a_j = exp(xi_j) and A the sum of a_j over at-risk taxa. The
// multinomial coefficient cancels in every sampler ratio and may be omitted.
// A zero-depth row has probability one.
double log_dm_marginal(std::span<const Count> z, std::span<const std::uint8_t> at_risk,
                       std::span<const double> xi, bool include_coefficient = true);

// log n! - sum_j log z_j!
double log_multinomial_coefficient(std::span<const Count> z);

// exp(xi_j) / sum exp(xi), computed with a max shift.
std::vector<double> cluster_relative_abundance(std::span<const double> xi);

// Sum of independent Normal(mu_j, sigma2) log-densities.
double log_prior_xi(std::span<const double> xi, std::span<const double> mu, double sigma2);

// One state of the Markov chain. Components are 0-based internally; files
// and reports use 1-based labels.
//
// The per-sample relative abundances and the per-taxon at-risk probabilities
// are integrated out analytically and never stored. The inclusion indicators
// are implicit: component k is active iff k < n_active.
struct ChainState {
    std::size_t n_samples = 0;
    std::size_t n_taxa = 0;
    int capacity = 0;                   // k_max; rows allocated in xi/log_psi
    std::vector<int> alloc;             // component of each sample, in [0, n_active)
    std::vector<std::uint8_t> at_risk;  // N x J; 1 wherever the count is positive
    std::vector<double> xi;             // capacity x J log-concentrations
    std::vector<double> log_psi;        // capacity; log unnormalized weights
    int n_active = 1;                   // K
    int n_filled = 1;                   // K+, components [0, n_filled) are non-empty

    ChainState() = default;
    ChainState(std::size_t n_samples, std::size_t n_taxa, int capacity);

    std::span<double> xi_row(int k) noexcept { return {xi.data() + k * n_taxa, n_taxa}; }
    std::span<const double> xi_row(int k) const noexcept { return {xi.data() + k * n_taxa, n_taxa}; }
    std::span<std::uint8_t> at_risk_row(std::size_t i) noexcept { return {at_risk.data() + i * n_taxa, n_taxa}; }
    std::span<const std::uint8_t> at_risk_row(std::size_t i) const noexcept {
        return {at_risk.data() + i * n_taxa, n_taxa};
    }

    // Normalized weights of the n_active components.
    std::vector<double> weights() const;
    std::vector<int> cluster_sizes() const;  // length n_active

    // Throws NumericalError describing the first violated invariant.
    void check_invariants(const CountMatrix& data) const;
};

// Full-conditional log-odds of gamma_ij = 1 versus 0 for a zero count, with
// the Beta at-risk probability of taxon j integrated out.
double log_gamma_conditional_ratio(std::size_t i, std::size_t j, const ChainState& state,
                                   const CountMatrix& data, const Hyperparams& hyper);

// Log-density of the at-risk indicators with every pi_gamma_j integrated out.
double log_at_risk_marginal(std::span<const std::uint8_t> at_risk, std::size_t n_samples,
                            std::size_t n_taxa, const Hyperparams& hyper);

}  // namespace dsdm
