#include "dsdm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "dsdm/error.hpp"
#include "dsdm/numeric.hpp"

namespace dsdm {

CountMatrix::CountMatrix(std::size_t n_samples, std::size_t n_taxa, std::vector<Count> counts,
                         std::vector<std::string> sample_ids, std::vector<std::string> taxon_ids)
    : n_samples_(n_samples),
      n_taxa_(n_taxa),
      counts_(std::move(counts)),
      sample_ids_(std::move(sample_ids)),
      taxon_ids_(std::move(taxon_ids)) {
    if (n_samples_ < 1) throw ValidationError("count matrix needs at least one sample");
    if (n_taxa_ < 2) throw ValidationError("count matrix needs at least two taxa");
    if (counts_.size() != n_samples_ * n_taxa_) {
        throw ValidationError(fmt::format("count matrix has {} cells, expected {} x {}", counts_.size(),
                                          n_samples_, n_taxa_));
    }
    if (sample_ids_.empty()) {
        for (std::size_t i = 0; i < n_samples_; ++i) sample_ids_.push_back(fmt::format("S{}", i + 1));
    }
    if (taxon_ids_.empty()) {
        for (std::size_t j = 0; j < n_taxa_; ++j) taxon_ids_.push_back(fmt::format("T{}", j + 1));
    }
    if (sample_ids_.size() != n_samples_ || taxon_ids_.size() != n_taxa_) {
        throw ValidationError("count matrix label count does not match its shape");
    }
    depths_.assign(n_samples_, 0);
    for (std::size_t i = 0; i < n_samples_; ++i) {
        for (std::size_t j = 0; j < n_taxa_; ++j) {
            const Count c = counts_[i * n_taxa_ + j];
            if (c < 0) {
                throw ValidationError(fmt::format("negative count {} at row {}, column {}", c, i + 1, j + 1));
            }
            depths_[i] += c;
        }
    }
}

CountMatrix CountMatrix::from_rows(const std::vector<std::vector<Count>>& rows) {
    if (rows.empty()) throw ValidationError("count matrix needs at least one sample");
    const std::size_t n_taxa = rows.front().size();
    std::vector<Count> flat;
    flat.reserve(rows.size() * n_taxa);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != n_taxa) {
            throw ValidationError(fmt::format("ragged count matrix: row {} has {} cells, expected {}", i + 1,
                                              rows[i].size(), n_taxa));
        }
        flat.insert(flat.end(), rows[i].begin(), rows[i].end());
    }
    return CountMatrix(rows.size(), n_taxa, std::move(flat));
}

double CountMatrix::zero_fraction() const noexcept {
    const auto zeros = std::count(counts_.begin(), counts_.end(), Count{0});
    return static_cast<double>(zeros) / static_cast<double>(counts_.size());
}

void KPrior::validate() const {
    if (k_max < 1) throw ValidationError("k_max must be at least 1");
    std::visit(
        [](const auto& f) {
            using F = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<F, ZeroTruncBinomial>) {
                if (!(f.pi_lambda > 0.0 && f.pi_lambda < 1.0)) {
                    throw ValidationError("pi_lambda must lie in (0, 1)");
                }
            } else if constexpr (std::is_same_v<F, TruncatedPoisson>) {
                if (!(f.rate > 0.0)) throw ValidationError("Poisson rate must be positive");
            } else if constexpr (std::is_same_v<F, Geometric>) {
                if (!(f.p > 0.0 && f.p <= 1.0)) throw ValidationError("geometric p must lie in (0, 1]");
            } else {
                if (!(f.a > 0.0 && f.b > 0.0 && f.r > 0.0)) {
                    throw ValidationError("beta-negative-binomial parameters must be positive");
                }
            }
        },
        family);
}

std::vector<double> log_k_prior_table(const KPrior& prior) {
    prior.validate();
    std::vector<double> table(static_cast<std::size_t>(prior.k_max));
    for (int k = 1; k <= prior.k_max; ++k) {
        table[k - 1] = std::visit(
            [&](const auto& f) -> double {
                using F = std::decay_t<decltype(f)>;
                const double kd = k;
                if constexpr (std::is_same_v<F, ZeroTruncBinomial>) {
                    const double km = prior.k_max;
                    return log_binomial(km, kd) + kd * std::log(f.pi_lambda) +
                           (km - kd) * std::log1p(-f.pi_lambda);
                } else if constexpr (std::is_same_v<F, TruncatedPoisson>) {
                    return kd * std::log(f.rate) - std::lgamma(kd + 1.0);
                } else if constexpr (std::is_same_v<F, Geometric>) {
                    return std::log(f.p) + (f.p < 1.0 ? (kd - 1.0) * std::log1p(-f.p)
                                                      : (k == 1 ? 0.0 : -std::numeric_limits<double>::infinity()));
                } else {
                    const double m = kd - 1.0;
                    return std::lgamma(f.r + m) - std::lgamma(m + 1.0) - std::lgamma(f.r) +
                           log_beta(f.a + f.r, f.b + m) - log_beta(f.a, f.b);
                }
            },
            prior.family);
    }
    const double norm = log_sum_exp(table);
    for (double& v : table) v -= norm;
    return table;
}

double log_k_prior(int k, const KPrior& prior) {
    if (k < 1 || k > prior.k_max) {
        throw ValidationError(fmt::format("K = {} is outside the prior support 1..{}", k, prior.k_max));
    }
    return log_k_prior_table(prior)[k - 1];
}

void Hyperparams::validate(std::size_t n_taxa) const {
    k_prior.validate();
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(fmt::format("{} must be positive", name));
    };
    positive(theta, "theta");
    positive(alpha_gamma, "alpha_gamma");
    positive(beta_gamma, "beta_gamma");
    positive(s, "s");
    positive(sigma2, "sigma2");
    positive(sigma2_mh, "sigma2_mh");
    if (n_taxa != 0 && mu.size() != n_taxa) {
        throw ValidationError(fmt::format("prior mean has {} entries, data has {} taxa", mu.size(), n_taxa));
    }
    for (double m : mu) {
        if (!std::isfinite(m)) throw ValidationError("prior means must be finite");
    }
}

PriorMeans prior_means(const CountMatrix& data, double s) {
    const std::size_t n = data.n_samples();
    const std::size_t n_taxa = data.n_taxa();
    std::vector<double> mean_ra(n_taxa, 0.0);
    std::size_t used = 0;
    Count total_depth = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Count depth = data.depth(i);
        total_depth += depth;
        if (depth == 0) continue;
        ++used;
        for (std::size_t j = 0; j < n_taxa; ++j) mean_ra[j] += static_cast<double>(data(i, j)) / depth;
    }
    PriorMeans out;
    out.mu.resize(n_taxa);
    for (std::size_t j = 0; j < n_taxa; ++j) {
        double ra = 0.0;
        if (used == 0) {
            ra = 1.0 / static_cast<double>(n_taxa);
        } else if (mean_ra[j] > 0.0) {
            ra = mean_ra[j] / static_cast<double>(used);
        } else {
            ra = 0.5 / static_cast<double>(total_depth);
            out.all_zero_taxa.push_back(j);
        }
        out.mu[j] = std::log(s * ra);
    }
    return out;
}

double log_multinomial_coefficient(std::span<const Count> z) {
    double n = 0.0;
    double out = 0.0;
    for (Count c : z) {
        n += static_cast<double>(c);
        out -= std::lgamma(static_cast<double>(c) + 1.0);
    }
    return out + std::lgamma(n + 1.0);
}

double log_dm_marginal(std::span<const Count> z, std::span<const std::uint8_t> at_risk,
                       std::span<const double> xi, bool include_coefficient) {
    if (z.size() != at_risk.size() || z.size() != xi.size()) {
        throw ValidationError("log_dm_marginal: mismatched vector lengths");
    }
    double n = 0.0;
    double conc_total = 0.0;
    double taxa_terms = 0.0;
    bool any_at_risk = false;
    for (std::size_t j = 0; j < z.size(); ++j) {
        if (!at_risk[j]) {
            if (z[j] > 0) {
                throw ValidationError(
                    fmt::format("taxon {} has {} reads but is marked as a structural zero", j + 1, z[j]));
            }
            continue;
        }
        any_at_risk = true;
        const double a = std::exp(xi[j]);
        const double zj = static_cast<double>(z[j]);
        conc_total += a;
        n += zj;
        if (z[j] > 0) taxa_terms += std::lgamma(a + zj) - std::lgamma(a);
    }
    if (n == 0.0) return 0.0;
    if (!any_at_risk) throw ValidationError("sample has reads but no at-risk taxa");
    double out = std::lgamma(conc_total) - std::lgamma(conc_total + n) + taxa_terms;
    if (include_coefficient) out += log_multinomial_coefficient(z);
    return out;
}

std::vector<double> cluster_relative_abundance(std::span<const double> xi) {
    std::vector<double> out(xi.begin(), xi.end());
    if (out.empty()) return out;
    const double max = *std::max_element(out.begin(), out.end());
    double total = 0.0;
    for (double& v : out) {
        v = std::exp(v - max);
        total += v;
    }
    for (double& v : out) v /= total;
    return out;
}

double log_prior_xi(std::span<const double> xi, std::span<const double> mu, double sigma2) {
    const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * sigma2);
    double out = 0.0;
    for (std::size_t j = 0; j < xi.size(); ++j) {
        const double d = xi[j] - mu[j];
        out += log_norm - 0.5 * d * d / sigma2;
    }
    return out;
}

ChainState::ChainState(std::size_t n_samples_, std::size_t n_taxa_, int capacity_)
    : n_samples(n_samples_),
      n_taxa(n_taxa_),
      capacity(capacity_),
      alloc(n_samples_, 0),
      at_risk(n_samples_ * n_taxa_, 1),
      xi(static_cast<std::size_t>(capacity_) * n_taxa_, 0.0),
      log_psi(static_cast<std::size_t>(capacity_), 0.0) {}

std::vector<double> ChainState::weights() const {
    std::vector<double> w(log_psi.begin(), log_psi.begin() + n_active);
    const double norm = log_sum_exp(w);
    for (double& v : w) v = std::exp(v - norm);
    return w;
}

std::vector<int> ChainState::cluster_sizes() const {
    std::vector<int> sizes(static_cast<std::size_t>(n_active), 0);
    for (int c : alloc) ++sizes[c];
    return sizes;
}

void ChainState::check_invariants(const CountMatrix& data) const {
    auto fail = [](const std::string& what) { throw NumericalError("chain state invariant violated: " + what); };
    if (n_active < 1 || n_active > capacity) fail(fmt::format("K = {} outside 1..{}", n_active, capacity));
    if (n_filled < 1 || n_filled > n_active) fail(fmt::format("K+ = {} outside 1..K", n_filled));
    std::vector<int> sizes(static_cast<std::size_t>(capacity), 0);
    for (int c : alloc) {
        if (c < 0 || c >= n_active) fail(fmt::format("allocation {} outside 1..K", c + 1));
        ++sizes[c];
    }
    for (int k = 0; k < n_active; ++k) {
        if ((sizes[k] > 0) != (k < n_filled)) fail(fmt::format("component {} breaks filled-first order", k + 1));
        if (!std::isfinite(log_psi[k])) fail(fmt::format("weight of component {} is not positive", k + 1));
        for (double v : xi_row(k)) {
            if (!std::isfinite(v)) fail(fmt::format("non-finite concentration in component {}", k + 1));
        }
    }
    for (std::size_t i = 0; i < n_samples; ++i) {
        for (std::size_t j = 0; j < n_taxa; ++j) {
            if (data(i, j) > 0 && !at_risk[i * n_taxa + j]) {
                fail(fmt::format("positive count at ({}, {}) marked structural zero", i + 1, j + 1));
            }
        }
    }
}

double log_gamma_conditional_ratio(std::size_t i, std::size_t j, const ChainState& state,
                                   const CountMatrix& data, const Hyperparams& hyper) {
    if (data(i, j) > 0) {
        throw ValidationError(fmt::format("at-risk indicator ({}, {}) is fixed by a positive count", i + 1, j + 1));
    }
    const std::size_t n = state.n_samples;
    double others = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (r != i) others += state.at_risk[r * state.n_taxa + j];
    }
    const double prior_odds =
        std::log(hyper.alpha_gamma + others) - std::log(hyper.beta_gamma + static_cast<double>(n - 1) - others);

    std::vector<std::uint8_t> row(state.at_risk_row(i).begin(), state.at_risk_row(i).end());
    const auto xi = state.xi_row(state.alloc[i]);
    row[j] = 1;
    const double with = log_dm_marginal(data.row(i), row, xi, false);
    row[j] = 0;
    const double without = log_dm_marginal(data.row(i), row, xi, false);
    return prior_odds + with - without;
}

double log_at_risk_marginal(std::span<const std::uint8_t> at_risk, std::size_t n_samples, std::size_t n_taxa,
                            const Hyperparams& hyper) {
    double out = 0.0;
    const double base = log_beta(hyper.alpha_gamma, hyper.beta_gamma);
    for (std::size_t j = 0; j < n_taxa; ++j) {
        double ones = 0.0;
        for (std::size_t i = 0; i < n_samples; ++i) ones += at_risk[i * n_taxa + j];
        out += log_beta(hyper.alpha_gamma + ones, hyper.beta_gamma + static_cast<double>(n_samples) - ones) - base;
    }
    return out;
}

}  // namespace dsdm
