#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dsdm/error.hpp"
#include "dsdm/inference.hpp"
#include "dsdm/sampler.hpp"
#include "oracles.hpp"

using namespace dsdm;

namespace {

CountMatrix random_counts(Rng& rng, std::size_t n, std::size_t j, double zero_prob, int max_count) {
    std::vector<Count> v(n * j);
    for (auto& c : v) c = rng.bernoulli(zero_prob) ? 0 : static_cast<Count>(rng.uniform_index(max_count) + 1);
    return CountMatrix(n, j, std::move(v));
}

Hyperparams hyper_for(const CountMatrix& data, int k_max = 4) {
    Hyperparams h;
    h.k_prior.k_max = k_max;
    h.sigma2 = 1.0;
    h.mu = prior_means(data, 20.0).mu;
    return h;
}

// State with K components, random allocation, concentrations and at-risk
// indicators consistent with the counts.
ChainState random_state(const CountMatrix& data, int k, int capacity, Rng& rng) {
    ChainState s(data.n_samples(), data.n_taxa(), capacity);
    s.n_active = k;
    s.n_filled = k;
    for (std::size_t i = 0; i < data.n_samples(); ++i) s.alloc[i] = static_cast<int>(i % static_cast<std::size_t>(k));
    for (auto& x : s.xi) x = rng.normal(0.5, 1.0);
    for (int c = 0; c < capacity; ++c) s.log_psi[c] = rng.log_gamma(1.0);
    for (std::size_t i = 0; i < data.n_samples(); ++i) {
        for (std::size_t j = 0; j < data.n_taxa(); ++j) {
            s.at_risk[i * data.n_taxa() + j] = data(i, j) > 0 || rng.bernoulli(0.5) ? 1 : 0;
        }
    }
    return s;
}

double oracle_joint_gamma(const CountMatrix& data, const ChainState& s, const Hyperparams& h) {
    double out = 0.0;
    const std::size_t n = data.n_samples();
    const std::size_t jn = data.n_taxa();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::int64_t> z(data.row(i).begin(), data.row(i).end());
        std::vector<std::uint8_t> g(s.at_risk.begin() + i * jn, s.at_risk.begin() + (i + 1) * jn);
        std::vector<double> xi(s.xi_row(s.alloc[i]).begin(), s.xi_row(s.alloc[i]).end());
        out += oracle::zidm_log_pmf(z, g, xi);
    }
    for (std::size_t j = 0; j < jn; ++j) {
        std::vector<std::uint8_t> col;
        for (std::size_t i = 0; i < n; ++i) col.push_back(s.at_risk[i * jn + j]);
        out += oracle::beta_bernoulli_log(col, h.alpha_gamma, h.beta_gamma);
    }
    return out;
}

}  // namespace

TEST_CASE("gamma full conditional equals the joint ratio") {
    Rng rng(21);
    for (int rep = 0; rep < 20; ++rep) {
        const CountMatrix data = random_counts(rng, 5, 4, 0.5, 6);
        Hyperparams h = hyper_for(data);
        h.alpha_gamma = 0.5 + rng.uniform();
        h.beta_gamma = 0.5 + 2.0 * rng.uniform();
        ChainState s = random_state(data, 2, 4, rng);
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                if (data(i, j) > 0) {
                    CHECK_THROWS_AS(log_gamma_conditional_ratio(i, j, s, data, h), ValidationError);
                    continue;
                }
                ChainState on = s;
                ChainState off = s;
                on.at_risk[i * 4 + j] = 1;
                off.at_risk[i * 4 + j] = 0;
                // a sample with reads keeps at least one at-risk taxon
                const double expected = oracle_joint_gamma(data, on, h) - oracle_joint_gamma(data, off, h);
                CHECK(std::abs(log_gamma_conditional_ratio(i, j, s, data, h) - expected) < 1e-10);
            }
        }
    }
}

TEST_CASE("update_gamma samples the exact conditional of the indicators") {
    // Two zero cells; the pair (g1, g2) is checked against enumeration.
    const CountMatrix data = CountMatrix::from_rows({{4, 0, 2}, {3, 1, 0}});
    Hyperparams h = hyper_for(data, 2);
    Rng init(3);
    ChainState s = random_state(data, 1, 2, init);
    s.at_risk.assign(6, 1);
    Sampler sampler(data, h, s, Rng(4));

    std::vector<double> expected(4);
    for (int code = 0; code < 4; ++code) {
        ChainState t = s;
        t.at_risk[1] = code & 1;
        t.at_risk[5] = (code >> 1) & 1;
        expected[code] = oracle_joint_gamma(data, t, h);
    }
    const double norm = std::log(std::accumulate(expected.begin(), expected.end(), 0.0,
                                                 [](double a, double v) { return a + std::exp(v); }));
    for (double& v : expected) v = std::exp(v - norm);

    std::vector<double> observed(4, 0.0);
    for (int it = 0; it < 40000; ++it) {
        sampler.update_gamma();
        const auto& g = sampler.state().at_risk;
        observed[g[1] + 2 * g[5]] += 1.0;
    }
    CHECK(oracle::chi_square_p(observed, expected) > 0.001);
}

TEST_CASE("K conditional matches brute-force labeling enumeration") {
    for (int n = 1; n <= 4; ++n) {
        for (int k_max = 1; k_max <= 3; ++k_max) {
            for (double theta : {0.1, 1.0, 2.5}) {
                for (int fam = 0; fam < 4; ++fam) {
                    Hyperparams h;
                    h.theta = theta;
                    h.k_prior.k_max = k_max;
                    if (fam == 1) h.k_prior.family = TruncatedPoisson{1.5};
                    if (fam == 2) h.k_prior.family = Geometric{0.4};
                    if (fam == 3) h.k_prior.family = BetaNegBinomial{2.0, 3.0, 1.5};
                    const auto prior = log_k_prior_table(h.k_prior);
                    for (const auto& part : oracle::set_partitions(n)) {
                        const int k_plus = *std::max_element(part.begin(), part.end()) + 1;
                        if (k_plus > k_max) continue;
                        const auto brute = oracle::k_posterior_brute(part, prior, theta);
                        const auto pmf = k_conditional_log_pmf(k_plus, static_cast<std::size_t>(n), h);
                        for (int k = 1; k <= k_max; ++k) {
                            const double got = k < k_plus ? 0.0 : std::exp(pmf[k - k_plus]);
                            CHECK(std::abs(got - brute[k - 1]) < 1e-8);
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("update_k draws K from its conditional and refreshes empties from the prior") {
    Rng rng(8);
    const CountMatrix data = random_counts(rng, 6, 3, 0.2, 5);
    Hyperparams h = hyper_for(data, 6);
    h.theta = 0.5;
    h.sigma2 = 2.0;
    ChainState s = random_state(data, 2, 6, rng);
    Sampler sampler(data, h, s, Rng(9));
    const auto pmf = k_conditional_log_pmf(2, 6, h);
    std::vector<double> expected;
    for (double v : pmf) expected.push_back(std::exp(v));
    std::vector<double> observed(expected.size(), 0.0);
    double sum = 0.0;
    double sum_sq = 0.0;
    double draws = 0.0;
    for (int it = 0; it < 20000; ++it) {
        sampler.update_k();
        const auto& st = sampler.state();
        observed[st.n_active - 2] += 1.0;
        for (int k = 2; k < st.n_active; ++k) {
            const double d = st.xi_row(k)[1] - h.mu[1];
            sum += d;
            sum_sq += d * d;
            draws += 1.0;
        }
        CHECK(st.n_filled == 2);
    }
    CHECK(oracle::chi_square_p(observed, expected) > 0.001);
    REQUIRE(draws > 1000);
    CHECK(std::abs(sum / draws) < 4.0 * std::sqrt(2.0 / draws));
    CHECK(sum_sq / draws == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("xi random walk targets the concentration posterior") {
    // One component, two taxa; the marginal of xi_1 is integrated on a grid.
    const CountMatrix data = CountMatrix::from_rows({{3, 1}, {2, 2}, {0, 4}});
    Hyperparams h;
    h.k_prior.k_max = 1;
    h.sigma2 = 1.0;
    h.sigma2_mh = 1.5;
    h.mu = {0.3, -0.2};
    ChainState s(3, 2, 1);
    s.xi = h.mu;
    s.log_psi[0] = 0.0;
    Sampler sampler(data, h, s, Rng(12));

    const int grid = 600;
    const double lo = -6.0;
    const double hi = 6.0;
    const double step = (hi - lo) / grid;
    std::vector<double> marginal(grid, 0.0);
    std::vector<double> logd(static_cast<std::size_t>(grid) * grid);
    double max = -INFINITY;
    for (int a = 0; a < grid; ++a) {
        for (int b = 0; b < grid; ++b) {
            const std::vector<double> xi{lo + (a + 0.5) * step, lo + (b + 0.5) * step};
            double v = -0.5 * ((xi[0] - h.mu[0]) * (xi[0] - h.mu[0]) + (xi[1] - h.mu[1]) * (xi[1] - h.mu[1]));
            for (std::size_t i = 0; i < 3; ++i) {
                std::vector<std::int64_t> z(data.row(i).begin(), data.row(i).end());
                v += oracle::zidm_log_pmf(z, {1, 1}, xi);
            }
            logd[a * grid + b] = v;
            max = std::max(max, v);
        }
    }
    for (int a = 0; a < grid; ++a) {
        for (int b = 0; b < grid; ++b) marginal[a] += std::exp(logd[a * grid + b] - max);
    }
    const double total = std::accumulate(marginal.begin(), marginal.end(), 0.0);

    // 12 bins between fixed edges on the xi_1 axis
    const int bins = 12;
    std::vector<double> expected(bins, 0.0);
    for (int a = 0; a < grid; ++a) {
        const int b = std::clamp(static_cast<int>((a + 0.5) * bins / grid), 0, bins - 1);
        expected[b] += marginal[a] / total;
    }
    std::vector<double> observed(bins, 0.0);
    for (int it = 0; it < 60000; ++it) {
        sampler.update_xi();
        if (it % 15 == 14) {
            const double x = sampler.state().xi[0];
            const int b = std::clamp(static_cast<int>((x - lo) / (hi - lo) * bins), 0, bins - 1);
            observed[b] += 1.0;
        }
    }
    CHECK(oracle::chi_square_p(observed, expected) > 0.001);
}

TEST_CASE("vanishing proposal variance accepts every move") {
    Rng rng(2);
    const CountMatrix data = random_counts(rng, 8, 5, 0.3, 20);
    Hyperparams h = hyper_for(data);
    h.sigma2_mh = 1e-16;
    Sampler sampler(data, h, 1);
    std::size_t props = 0;
    std::size_t acc = 0;
    for (int it = 0; it < 50; ++it) {
        const auto t = sampler.update_xi();
        props += t.proposals();
        acc += t.accepts();
    }
    CHECK(static_cast<double>(acc) / static_cast<double>(props) > 0.99);
}

TEST_CASE("sweeps preserve every chain invariant") {
    Rng rng(30);
    for (auto zi : {ZeroInflation::ZIDM, ZeroInflation::DM}) {
        const CountMatrix data = random_counts(rng, 12, 6, 0.4, 30);
        Hyperparams h = hyper_for(data, 5);
        h.zero_inflation = zi;
        Sampler sampler(data, h, 17);
        for (int it = 0; it < 300; ++it) {
            sampler.sweep();
            REQUIRE_NOTHROW(sampler.state().check_invariants(data));
            const auto w = sampler.state().weights();
            CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0));
            CHECK(std::isfinite(sampler.log_joint_density()));
        }
        if (zi == ZeroInflation::DM) {
            const auto& g = sampler.state().at_risk;
            CHECK(std::all_of(g.begin(), g.end(), [](auto v) { return v == 1; }));
        }
    }
}

TEST_CASE("initial state is the singleton start") {
    Rng rng(1);
    const CountMatrix data = random_counts(rng, 5, 4, 0.5, 3);
    const Hyperparams h = hyper_for(data);
    Rng r(3);
    const ChainState s = initialize(data, h, r);
    CHECK(s.n_active == 1);
    CHECK(s.n_filled == 1);
    CHECK(std::all_of(s.alloc.begin(), s.alloc.end(), [](int c) { return c == 0; }));
    CHECK(std::all_of(s.at_risk.begin(), s.at_risk.end(), [](auto g) { return g == 1; }));
    for (std::size_t j = 0; j < 4; ++j) CHECK(s.xi_row(0)[j] == h.mu[j]);
}

TEST_CASE("relabeling moves filled components first and keeps their order") {
    Rng rng(4);
    const CountMatrix data = random_counts(rng, 4, 3, 0.0, 5);
    const Hyperparams h = hyper_for(data);
    ChainState s = random_state(data, 4, 4, rng);
    s.alloc = {3, 1, 3, 1};
    const std::vector<double> row1(s.xi_row(1).begin(), s.xi_row(1).end());
    const std::vector<double> row3(s.xi_row(3).begin(), s.xi_row(3).end());
    const double psi3 = s.log_psi[3];
    Sampler sampler(data, h, s, Rng(1));
    CHECK(sampler.relabel_filled_first() == 2);
    const auto& t = sampler.state();
    CHECK(t.alloc == std::vector<int>{1, 0, 1, 0});
    CHECK(std::equal(row1.begin(), row1.end(), t.xi_row(0).begin()));
    CHECK(std::equal(row3.begin(), row3.end(), t.xi_row(1).begin()));
    CHECK(t.log_psi[1] == psi3);
    CHECK_NOTHROW(t.check_invariants(data));
}

TEST_CASE("allocation probabilities combine weights and the at-risk likelihood") {
    Rng rng(6);
    const CountMatrix data = random_counts(rng, 3, 4, 0.3, 7);
    const Hyperparams h = hyper_for(data);
    const ChainState s = random_state(data, 3, 4, rng);
    Sampler sampler(data, h, s, Rng(1));
    const auto w = s.weights();
    for (std::size_t i = 0; i < 3; ++i) {
        const auto lp = sampler.allocation_log_probs(i);
        std::vector<std::int64_t> z(data.row(i).begin(), data.row(i).end());
        std::vector<std::uint8_t> g(s.at_risk_row(i).begin(), s.at_risk_row(i).end());
        const double coef = log_multinomial_coefficient(data.row(i));
        for (int k = 0; k < 3; ++k) {
            std::vector<double> xi(s.xi_row(k).begin(), s.xi_row(k).end());
            CHECK(lp[k] == doctest::Approx(std::log(w[k]) + oracle::zidm_log_pmf(z, g, xi) - coef).epsilon(1e-12));
        }
    }
}

TEST_CASE("chains are reproducible and independent of threading") {
    Rng rng(40);
    const CountMatrix data = random_counts(rng, 10, 5, 0.3, 15);
    const Hyperparams h = hyper_for(data);
    SamplerConfig cfg;
    cfg.n_iter = 60;
    cfg.burn_in = 20;
    cfg.thin = 2;
    cfg.seed = 99;
    cfg.record_xi = true;
    const auto a = run_chain(data, h, cfg);
    const auto b = run_chain(data, h, cfg);
    REQUIRE(a.records.size() == cfg.n_retained());
    for (std::size_t r = 0; r < a.records.size(); ++r) {
        CHECK(a.records[r].alloc == b.records[r].alloc);
        CHECK(a.records[r].xi == b.records[r].xi);
        CHECK(a.records[r].log_density == b.records[r].log_density);
        CHECK(a.records[r].iteration == 22 + 2 * static_cast<int>(r));
        CHECK(a.records[r].xi.size() == static_cast<std::size_t>(a.records[r].n_filled) * 5);
    }
    const auto many = run_chains(data, h, cfg, 3);
    RunOptions opt;
    opt.stream = 2;
    const auto third = run_chain(data, h, cfg, opt);
    CHECK(many[0].records.back().alloc == a.records.back().alloc);
    CHECK(many[2].records.back().xi == third.records.back().xi);
}

TEST_CASE("a stop request keeps the draws made so far") {
    Rng rng(41);
    const CountMatrix data = random_counts(rng, 6, 4, 0.3, 15);
    const Hyperparams h = hyper_for(data);
    SamplerConfig cfg;
    cfg.n_iter = 100;
    cfg.burn_in = 10;
    RunOptions opt;
    opt.should_stop = [](int it) { return it >= 30; };
    const auto d = run_chain(data, h, cfg, opt);
    CHECK(d.interrupted);
    CHECK(d.records.size() == 20);
}

TEST_CASE("sampler config validation") {
    SamplerConfig c;
    c.burn_in = c.n_iter;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c.burn_in = 0;
    c.thin = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("data-free chain reproduces the K prior") {
    // Zero-depth rows make the likelihood flat, so K follows its prior.
    const CountMatrix data(4, 2, std::vector<Count>(8, 0));
    Hyperparams h;
    h.k_prior.k_max = 6;
    h.k_prior.family = Geometric{0.35};
    h.mu = {0.0, 0.0};
    SamplerConfig cfg;
    cfg.n_iter = 60000;
    cfg.burn_in = 1000;
    cfg.thin = 5;
    const auto draws = run_chain(data, h, cfg);
    std::vector<double> observed(6, 0.0);
    for (const auto& r : draws.records) observed[r.n_active - 1] += 1.0;
    std::vector<double> expected;
    for (double v : log_k_prior_table(h.k_prior)) expected.push_back(std::exp(v));
    CHECK(oracle::chi_square_p(observed, expected) > 0.001);
}
