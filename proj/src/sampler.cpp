#include "dsdm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "dsdm/error.hpp"
#include "dsdm/numeric.hpp"

namespace dsdm {

void SamplerConfig::validate() const {
    if (n_iter < 1) throw ValidationError("n_iter must be positive");
    if (burn_in < 0 || burn_in >= n_iter) throw ValidationError("burn_in must lie in [0, n_iter)");
    if (thin < 1) throw ValidationError("thin must be at least 1");
}

std::size_t XiAcceptance::accepts() const noexcept {
    return static_cast<std::size_t>(std::count(accepted.begin(), accepted.end(), std::uint8_t{1}));
}

ChainState initialize(const CountMatrix& data, const Hyperparams& hyper, Rng& rng) {
    hyper.validate(data.n_taxa());
    ChainState state(data.n_samples(), data.n_taxa(), hyper.k_max());
    std::copy(hyper.mu.begin(), hyper.mu.end(), state.xi_row(0).begin());
    state.n_active = 1;
    state.n_filled = 1;
    state.log_psi[0] = rng.log_gamma(hyper.theta + static_cast<double>(data.n_samples()));
    return state;
}

std::vector<double> k_conditional_log_pmf(int n_filled, std::size_t n_samples, const Hyperparams& hyper) {
    const auto prior = log_k_prior_table(hyper.k_prior);
    const int k_max = hyper.k_max();
    if (n_filled < 1 || n_filled > k_max) {
        throw ValidationError(fmt::format("K+ = {} outside 1..{}", n_filled, k_max));
    }
    const double n = static_cast<double>(n_samples);
    std::vector<double> out;
    for (int k = n_filled; k <= k_max; ++k) {
        const double kd = k;
        out.push_back(prior[k - 1] + std::lgamma(kd + 1.0) - std::lgamma(kd - n_filled + 1.0) +
                      std::lgamma(hyper.theta * kd) - std::lgamma(hyper.theta * kd + n));
    }
    const double norm = log_sum_exp(out);
    for (double& v : out) v -= norm;
    return out;
}

Sampler::Sampler(const CountMatrix& data, Hyperparams hyper, std::uint64_t seed, std::uint64_t stream)
    : data_(data), hyper_(std::move(hyper)), rng_(seed, stream) {
    state_ = initialize(data_, hyper_, rng_);
    log_k_prior_ = log_k_prior_table(hyper_.k_prior);
    refresh_caches();
}

Sampler::Sampler(const CountMatrix& data, Hyperparams hyper, ChainState state, Rng rng)
    : data_(data), hyper_(std::move(hyper)), rng_(std::move(rng)), state_(std::move(state)) {
    hyper_.validate(data_.n_taxa());
    log_k_prior_ = log_k_prior_table(hyper_.k_prior);
    refresh_caches();
}

void Sampler::refresh_caches() {
    const std::size_t n = data_.n_samples();
    const std::size_t n_taxa = data_.n_taxa();
    if (nonzero_.size() != n) {
        nonzero_.assign(n, {});
        depth_.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n_taxa; ++j) {
                if (data_(i, j) > 0) {
                    nonzero_[i].push_back({static_cast<std::uint32_t>(j), static_cast<double>(data_(i, j))});
                }
            }
            depth_[i] = static_cast<double>(data_.depth(i));
        }
    }
    at_risk_per_taxon_.assign(n_taxa, 0.0);
    conc_sum_.assign(n, 0.0);
    conc_term_.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = state_.xi_row(state_.alloc[i]);
        const auto risk = state_.at_risk_row(i);
        double total = 0.0;
        for (std::size_t j = 0; j < n_taxa; ++j) {
            if (!risk[j]) continue;
            at_risk_per_taxon_[j] += 1.0;
            total += std::exp(xi[j]);
        }
        conc_sum_[i] = total;
        conc_term_[i] = depth_[i] > 0.0 ? std::lgamma(total) - std::lgamma(total + depth_[i]) : 0.0;
    }
    caches_valid_ = true;
}

// A_i minus the concentration of taxon j (if at risk), guarding against
// cancellation when that taxon dominates the sum.
double Sampler::conc_without(std::size_t i, std::size_t j) const {
    if (!state_.at_risk[i * state_.n_taxa + j]) return conc_sum_[i];
    const auto xi = state_.xi_row(state_.alloc[i]);
    const double a = std::exp(xi[j]);
    if (a <= 0.5 * conc_sum_[i]) return conc_sum_[i] - a;
    const auto risk = state_.at_risk_row(i);
    double total = 0.0;
    for (std::size_t t = 0; t < state_.n_taxa; ++t) {
        if (t != j && risk[t]) total += std::exp(xi[t]);
    }
    return total;
}

void Sampler::update_gamma() {
    if (hyper_.zero_inflation == ZeroInflation::DM) return;
    if (!caches_valid_) refresh_caches();
    const std::size_t n = data_.n_samples();
    const std::size_t n_taxa = data_.n_taxa();
    const double others_total = static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto xi = state_.xi_row(state_.alloc[i]);
        const double depth = depth_[i];
        for (std::size_t j = 0; j < n_taxa; ++j) {
            if (data_(i, j) > 0) continue;
            std::uint8_t& g = state_.at_risk[i * n_taxa + j];
            const double others = at_risk_per_taxon_[j] - g;
            double log_odds =
                std::log(hyper_.alpha_gamma + others) - std::log(hyper_.beta_gamma + others_total - others);
            const double a = std::exp(xi[j]);
            const double base = conc_without(i, j);
            double term_with = 0.0;
            double term_without = 0.0;
            if (depth > 0.0) {
                term_with = std::lgamma(base + a) - std::lgamma(base + a + depth);
                term_without = std::lgamma(base) - std::lgamma(base + depth);
                log_odds += term_with - term_without;
            }
            const std::uint8_t draw = rng_.bernoulli(sigmoid(log_odds)) ? 1 : 0;
            if (draw != g) {
                at_risk_per_taxon_[j] += draw ? 1.0 : -1.0;
                g = draw;
            }
            conc_sum_[i] = draw ? base + a : base;
            conc_term_[i] = draw ? term_with : term_without;
        }
    }
}

std::vector<double> Sampler::allocation_log_probs(std::size_t i) const {
    const int k_active = state_.n_active;
    const double norm = log_sum_exp(std::span<const double>(state_.log_psi.data(), k_active));
    const auto risk = state_.at_risk_row(i);
    std::vector<double> out(static_cast<std::size_t>(k_active));
    for (int k = 0; k < k_active; ++k) {
        out[k] = state_.log_psi[k] - norm + log_dm_marginal(data_.row(i), risk, state_.xi_row(k), false);
    }
    return out;
}

void Sampler::update_allocations() {
    const std::size_t n = data_.n_samples();
    const std::size_t n_taxa = data_.n_taxa();
    const int k_active = state_.n_active;
    const auto kk = static_cast<std::size_t>(k_active);

    // Taxon-major tables so the per-sample loops stream through memory.
    std::vector<double> conc(n_taxa * kk);
    std::vector<double> lg_conc(n_taxa * kk);
    for (int k = 0; k < k_active; ++k) {
        const auto xi = state_.xi_row(k);
        for (std::size_t j = 0; j < n_taxa; ++j) {
            conc[j * kk + k] = std::exp(xi[j]);
            lg_conc[j * kk + k] = std::lgamma(conc[j * kk + k]);
        }
    }
    std::vector<double> log_w(state_.log_psi.begin(), state_.log_psi.begin() + k_active);
    const double norm = log_sum_exp(log_w);
    for (double& v : log_w) v -= norm;

    std::vector<double> totals(kk);
    std::vector<double> logp(kk);
    for (std::size_t i = 0; i < n; ++i) {
        const double depth = depth_[i];
        std::copy(log_w.begin(), log_w.end(), logp.begin());
        if (depth > 0.0) {
            std::fill(totals.begin(), totals.end(), 0.0);
            const auto risk = state_.at_risk_row(i);
            for (std::size_t j = 0; j < n_taxa; ++j) {
                if (!risk[j]) continue;
                const double* row = &conc[j * kk];
                for (std::size_t k = 0; k < kk; ++k) totals[k] += row[k];
            }
            for (std::size_t k = 0; k < kk; ++k) logp[k] += std::lgamma(totals[k]) - std::lgamma(totals[k] + depth);
            for (const Entry& e : nonzero_[i]) {
                const double* a = &conc[e.taxon * kk];
                const double* lg = &lg_conc[e.taxon * kk];
                for (std::size_t k = 0; k < kk; ++k) logp[k] += std::lgamma(a[k] + e.count) - lg[k];
            }
        }
        const std::size_t pick = rng_.categorical_log(logp);
        if (pick >= kk) {
            throw NumericalError(fmt::format("sample {} has zero probability under every component", i + 1));
        }
        state_.alloc[i] = static_cast<int>(pick);
    }
    caches_valid_ = false;
}

int Sampler::relabel_filled_first() {
    const int k_active = state_.n_active;
    const auto sizes = state_.cluster_sizes();
    std::vector<int> order;
    for (int k = 0; k < k_active; ++k) {
        if (sizes[k] > 0) order.push_back(k);
    }
    const int n_filled = static_cast<int>(order.size());
    for (int k = 0; k < k_active; ++k) {
        if (sizes[k] == 0) order.push_back(k);
    }
    std::vector<int> new_label(static_cast<std::size_t>(k_active));
    for (int pos = 0; pos < k_active; ++pos) new_label[order[pos]] = pos;

    const std::size_t n_taxa = state_.n_taxa;
    std::vector<double> xi(state_.xi.size());
    std::vector<double> log_psi(state_.log_psi);
    for (int pos = 0; pos < k_active; ++pos) {
        const auto src = state_.xi_row(order[pos]);
        std::copy(src.begin(), src.end(), xi.begin() + pos * n_taxa);
        log_psi[pos] = state_.log_psi[order[pos]];
    }
    std::copy(state_.xi.begin() + k_active * n_taxa, state_.xi.end(), xi.begin() + k_active * n_taxa);
    state_.xi = std::move(xi);
    state_.log_psi = std::move(log_psi);
    for (int& c : state_.alloc) c = new_label[c];
    state_.n_filled = n_filled;
    return n_filled;
}

void Sampler::update_weights(bool filled_only) {
    const auto sizes = state_.cluster_sizes();
    const int upto = filled_only ? state_.n_filled : state_.n_active;
    for (int k = 0; k < upto; ++k) {
        state_.log_psi[k] = rng_.log_gamma(hyper_.theta + sizes[k]);
    }
}

XiAcceptance Sampler::update_xi() {
    if (!caches_valid_) refresh_caches();
    const std::size_t n_taxa = data_.n_taxa();
    const int n_filled = state_.n_filled;
    std::vector<std::vector<std::uint32_t>> members(static_cast<std::size_t>(n_filled));
    for (std::size_t i = 0; i < data_.n_samples(); ++i) {
        if (depth_[i] > 0.0) members[state_.alloc[i]].push_back(static_cast<std::uint32_t>(i));
    }
    const double sd = std::sqrt(hyper_.sigma2_mh);
    const double inv_two_var = 0.5 / hyper_.sigma2;

    XiAcceptance tally;
    tally.n_taxa = n_taxa;
    tally.accepted.assign(static_cast<std::size_t>(n_filled) * n_taxa, 0);
    std::vector<double> new_sum;
    std::vector<double> new_term;
    for (int k = 0; k < n_filled; ++k) {
        auto xi = state_.xi_row(k);
        const auto& mem = members[k];
        new_sum.resize(mem.size());
        new_term.resize(mem.size());
        for (std::size_t j = 0; j < n_taxa; ++j) {
            const double old_xi = xi[j];
            const double prop_xi = old_xi + sd * rng_.normal(0.0, 1.0);
            const double d_old = old_xi - hyper_.mu[j];
            const double d_new = prop_xi - hyper_.mu[j];
            double delta = (d_old * d_old - d_new * d_new) * inv_two_var;

            const double a_old = std::exp(old_xi);
            const double a_new = std::exp(prop_xi);
            const double lg_old = std::lgamma(a_old);
            const double lg_new = std::lgamma(a_new);
            for (std::size_t m = 0; m < mem.size(); ++m) {
                const std::size_t i = mem[m];
                if (!state_.at_risk[i * n_taxa + j]) {
                    new_sum[m] = conc_sum_[i];
                    new_term[m] = conc_term_[i];
                    continue;
                }
                const double total = conc_without(i, j) + a_new;
                const double term = std::lgamma(total) - std::lgamma(total + depth_[i]);
                new_sum[m] = total;
                new_term[m] = term;
                delta += term - conc_term_[i];
                const Count z = data_(i, j);
                if (z > 0) {
                    const double zd = static_cast<double>(z);
                    delta += std::lgamma(a_new + zd) - lg_new - std::lgamma(a_old + zd) + lg_old;
                }
            }
            if (std::log(rng_.uniform()) < delta) {
                xi[j] = prop_xi;
                for (std::size_t m = 0; m < mem.size(); ++m) {
                    conc_sum_[mem[m]] = new_sum[m];
                    conc_term_[mem[m]] = new_term[m];
                }
                tally.accepted[static_cast<std::size_t>(k) * n_taxa + j] = 1;
            }
        }
    }
    return tally;
}

void Sampler::update_k() {
    const auto log_pmf = k_conditional_log_pmf(state_.n_filled, data_.n_samples(), hyper_);
    const std::size_t pick = rng_.categorical_log(log_pmf);
    state_.n_active = state_.n_filled + static_cast<int>(pick);
    const double sd = std::sqrt(hyper_.sigma2);
    for (int k = state_.n_filled; k < state_.n_active; ++k) {
        auto xi = state_.xi_row(k);
        for (std::size_t j = 0; j < xi.size(); ++j) xi[j] = rng_.normal(hyper_.mu[j], sd);
        state_.log_psi[k] = rng_.log_gamma(hyper_.theta);
    }
}

XiAcceptance Sampler::sweep() {
    update_gamma();
    update_allocations();
    relabel_filled_first();
    update_weights(true);
    auto tally = update_xi();
    update_k();
    update_weights();
    return tally;
}

double Sampler::log_joint_density() const {
    const std::size_t n = data_.n_samples();
    const auto w = state_.weights();
    double out = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int c = state_.alloc[i];
        out += log_dm_marginal(data_.row(i), state_.at_risk_row(i), state_.xi_row(c), true);
        out += std::log(w[c]);
    }
    for (int k = 0; k < state_.n_filled; ++k) out += log_prior_xi(state_.xi_row(k), hyper_.mu, hyper_.sigma2);
    if (hyper_.zero_inflation == ZeroInflation::ZIDM) {
        out += log_at_risk_marginal(state_.at_risk, n, data_.n_taxa(), hyper_);
    }
    out += log_k_prior_[state_.n_active - 1];
    return out;
}

PosteriorDraws run_chain(const CountMatrix& data, const Hyperparams& hyper, const SamplerConfig& config,
                         const RunOptions& options) {
    config.validate();
    Sampler sampler(data, hyper, config.seed, options.stream);

    PosteriorDraws draws;
    draws.n_samples = data.n_samples();
    draws.n_taxa = data.n_taxa();
    draws.records.reserve(config.n_retained());
    std::size_t proposals = 0;
    std::size_t accepts = 0;
#ifndef NDEBUG
    const bool check = true;
#else
    const bool check = config.check_invariants;
#endif
    for (int it = 1; it <= config.n_iter; ++it) {
        const auto tally = sampler.sweep();
        proposals += tally.proposals();
        accepts += tally.accepts();
        if (check) sampler.state().check_invariants(data);
        if (it > config.burn_in && (it - config.burn_in) % config.thin == 0) {
            const ChainState& s = sampler.state();
            DrawRecord rec;
            rec.iteration = it;
            rec.n_active = s.n_active;
            rec.n_filled = s.n_filled;
            rec.log_density = sampler.log_joint_density();
            rec.alloc = s.alloc;
            const auto w = s.weights();
            rec.weights.assign(w.begin(), w.begin() + s.n_filled);
            if (config.record_xi) rec.xi.assign(s.xi.begin(), s.xi.begin() + s.n_filled * s.n_taxa);
            draws.records.push_back(std::move(rec));
        }
        if (options.should_stop && options.should_stop(it)) {
            draws.interrupted = it < config.n_iter;
            break;
        }
    }
    draws.xi_acceptance_rate = proposals > 0 ? static_cast<double>(accepts) / static_cast<double>(proposals) : 0.0;
    return draws;
}

std::vector<PosteriorDraws> run_chains(const CountMatrix& data, const Hyperparams& hyper,
                                       const SamplerConfig& config, int n_chains,
                                       const std::function<bool(int)>& should_stop) {
    if (n_chains < 1) throw ValidationError("need at least one chain");
    std::vector<PosteriorDraws> out(static_cast<std::size_t>(n_chains));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chains));
    std::vector<std::thread> workers;
    for (int m = 0; m < n_chains; ++m) {
        workers.emplace_back([&, m] {
            try {
                RunOptions opts;
                opts.stream = static_cast<std::uint64_t>(m);
                opts.should_stop = should_stop;
                out[m] = run_chain(data, hyper, config, opts);
            } catch (...) {
                errors[m] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

}  // namespace dsdm
