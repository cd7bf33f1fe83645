#include <doctest.h>

#include <cmath>
#include <map>

#include "dsdm/error.hpp"
#include "dsdm/newick.hpp"
#include "dsdm/simgen.hpp"
#include "oracles.hpp"

using namespace dsdm;

namespace {

// Chi-square of observed count vectors against the DM pmf with concentration a.
double dm_fit_p(const CountMatrix& m, double a) {
    const std::size_t j = m.n_taxa();
    std::map<std::vector<Count>, double> seen;
    for (std::size_t i = 0; i < m.n_samples(); ++i) seen[std::vector<Count>(m.row(i).begin(), m.row(i).end())] += 1.0;
    std::vector<double> observed;
    std::vector<double> expected;
    oracle::compositions(m.depth(0), j, [&](const std::vector<std::int64_t>& z) {
        const auto it = seen.find(std::vector<Count>(z.begin(), z.end()));
        observed.push_back(it == seen.end() ? 0.0 : it->second);
        expected.push_back(std::exp(oracle::dm_log_pmf(z, std::vector<double>(j, a))));
    });
    return oracle::chi_square_p(observed, expected);
}

}  // namespace

TEST_CASE("scenario presets have the documented geometry") {
    const auto s1 = scenario_preset(1);
    CHECK(s1.n_samples() == 100);
    CHECK(s1.j_noise + s1.j_signal == 100);
    const auto s4 = scenario_preset(4);
    CHECK(s4.j_noise + s4.j_signal == 250);
    const auto s5 = scenario_preset(5);
    CHECK(s5.n_samples() == 150);
    CHECK(s5.n_clusters() == 6);
    CHECK_THROWS_AS(scenario_preset(6), ValidationError);
    CHECK(scenario_target_zero_fraction(3) == 0.73);
}

TEST_CASE("signal blocks are as even as possible") {
    const auto b = signal_blocks(20, 6);
    const std::vector<std::pair<int, int>> expected{{0, 4}, {4, 8}, {8, 11}, {11, 14}, {14, 17}, {17, 20}};
    CHECK(b == expected);
}

TEST_CASE("generated scenario respects depths, blocks and reproducibility") {
    ScenarioSpec spec = scenario_preset(1);
    spec.at_risk_prob = 0.7;
    spec.seed = 4;
    const auto a = generate_scenario(spec);
    const auto b = generate_scenario(spec);
    CHECK(a.counts.values().size() == b.counts.values().size());
    CHECK(std::equal(a.counts.values().begin(), a.counts.values().end(), b.counts.values().begin()));
    CHECK(a.truth == b.truth);
    CHECK(a.truth.block_sizes() == std::vector<int>{50, 50});
    CHECK(a.zero_fraction == a.counts.zero_fraction());
    for (std::size_t i = 0; i < 100; ++i) {
        CHECK(a.counts.depth(i) == 5000);
        const int k = a.truth[i];
        for (int j = 80; j < 100; ++j) {
            const bool own_block = (j - 80) / 10 == k;
            if (!own_block) CHECK(a.counts(i, static_cast<std::size_t>(j)) == 0);
        }
    }
    spec.seed = 5;
    const auto c = generate_scenario(spec);
    CHECK_FALSE(std::equal(a.counts.values().begin(), a.counts.values().end(), c.counts.values().begin()));
}

TEST_CASE("fewer at-risk taxa mean more zeros") {
    ScenarioSpec spec = scenario_preset(1);
    double previous = -1.0;
    for (double p : {1.0, 0.8, 0.6, 0.4, 0.2}) {
        spec.at_risk_prob = p;
        double z = 0.0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            spec.seed = seed;
            z += generate_scenario(spec).zero_fraction;
        }
        CHECK(z / 5.0 > previous);
        previous = z / 5.0;
    }
}

TEST_CASE("calibration hits the scenario targets or names the floor") {
    for (int id = 1; id <= 5; ++id) {
        const auto spec = scenario_preset(id);
        const auto cal = calibrate_at_risk(spec, scenario_target_zero_fraction(id), 5);
        CHECK(std::abs(cal.achieved - scenario_target_zero_fraction(id)) <= 0.02);
        CHECK(cal.at_risk_prob > 0.0);
        CHECK(cal.at_risk_prob <= 1.0);
    }
    const auto spec = scenario_preset(1);
    CHECK_THROWS_AS(calibrate_at_risk(spec, 1.0, 3), ValidationError);
    try {
        calibrate_at_risk(spec, 0.01, 3);
        FAIL("unreachable target accepted");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("floor") != std::string::npos);
    }
}

TEST_CASE("noise taxa have equal means across true clusters") {
    ScenarioSpec spec = scenario_preset(1);
    spec.n_per_cluster = {5000, 5000};
    spec.at_risk_prob = 0.8;
    spec.seed = 10;
    const auto sim = generate_scenario(spec);
    // Welch statistics per noise taxon, summed as an approximate chi-square.
    double stat = 0.0;
    for (std::size_t j = 0; j < 80; ++j) {
        double sum[2] = {0, 0};
        double sq[2] = {0, 0};
        double n[2] = {0, 0};
        for (std::size_t i = 0; i < sim.counts.n_samples(); ++i) {
            const int k = sim.truth[i];
            const double v = static_cast<double>(sim.counts(i, j));
            sum[k] += v;
            sq[k] += v * v;
            n[k] += 1.0;
        }
        double se2 = 0.0;
        for (int k = 0; k < 2; ++k) se2 += (sq[k] / n[k] - (sum[k] / n[k]) * (sum[k] / n[k])) / (n[k] - 1.0);
        const double z = (sum[0] / n[0] - sum[1] / n[1]) / std::sqrt(se2);
        stat += z * z;
    }
    boost::math::chi_squared dist(80.0);
    CHECK(boost::math::cdf(boost::math::complement(dist, stat)) > 0.001);
}

TEST_CASE("star-tree DTM and the scenario generator both give the DM law") {
    const auto tree = star_tree({"a", "b", "c"});
    DtmSpec dtm;
    dtm.n_per_cluster = {10000};
    dtm.depth = 4;
    dtm.precision = 3.0;
    dtm.identical_clusters = true;
    dtm.seed = 7;
    const auto d = generate_dtm(tree, dtm);
    CHECK(dm_fit_p(d.counts, 1.0) > 0.001);

    ScenarioSpec spec;
    spec.n_per_cluster = {10000};
    spec.j_noise = 3;
    spec.j_signal = 0;
    spec.depth_noise = 4;
    spec.depth_signal = 0;
    spec.seed = 7;
    const auto s = generate_scenario(spec);
    CHECK(dm_fit_p(s.counts, 1.0) > 0.001);
}

TEST_CASE("DTM output shape and edge cases") {
    const auto tree = parse_newick("((a,b),(c,(d,e)));");
    DtmSpec spec;
    spec.n_per_cluster = {3, 4};
    spec.depth = 50;
    spec.at_risk_prob = 0.6;
    spec.seed = 2;
    const auto sim = generate_dtm(tree, spec);
    CHECK(sim.counts.n_samples() == 7);
    CHECK(sim.counts.taxon_ids() == std::vector<std::string>{"a", "b", "c", "d", "e"});
    CHECK(sim.truth.block_sizes() == std::vector<int>{3, 4});
    for (std::size_t i = 0; i < 7; ++i) CHECK(sim.counts.depth(i) == 50);
    const auto again = generate_dtm(tree, spec);
    CHECK(std::equal(sim.counts.values().begin(), sim.counts.values().end(), again.counts.values().begin()));

    spec.depth = 0;
    const auto empty = generate_dtm(tree, spec);
    CHECK(empty.zero_fraction == 1.0);
    spec.depth = 10;
    spec.precision = 0.0;
    CHECK_THROWS_AS(generate_dtm(tree, spec), ValidationError);
}
