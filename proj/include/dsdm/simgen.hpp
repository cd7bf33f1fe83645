#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dsdm/inference.hpp"
#include "dsdm/model.hpp"
#include "dsdm/newick.hpp"

namespace dsdm {

// Signal/noise compositional design.
//
// Every sample spreads depth_noise reads over the noise taxa and
// depth_signal reads over the signal block of its true cluster, each part
// with its own symmetric-Dirichlet composition drawn per sample. Each taxon
// of each sample is at risk with probability at_risk_prob; structural zeros
// are removed from the composition before the multinomial draw so the reads
// redistribute over the remaining at-risk taxa.
struct ScenarioSpec {
    std::vector<int> n_per_cluster{50, 50};
    int j_noise = 80;
    int j_signal = 20;
    Count depth_noise = 4000;
    Count depth_signal = 1000;
    double at_risk_prob = 1.0;
    std::uint64_t seed = 1;
    double noise_concentration = 1.0;
    double signal_concentration = 1.0;

    int n_clusters() const noexcept { return static_cast<int>(n_per_cluster.size()); }
    std::size_t n_samples() const noexcept;
    void validate() const;
};

// Fixed geometry of the five signal/noise scenarios; at_risk_prob is left at
// 1 and must be calibrated against scenario_target_zero_fraction(id).
ScenarioSpec scenario_preset(int id);
double scenario_target_zero_fraction(int id);

// [first, last) taxon ranges of each cluster's signal block, as even as
// possible with the remainder going to the lowest-index clusters.
std::vector<std::pair<int, int>> signal_blocks(int j_signal, int n_clusters);

struct SimulatedData {
    CountMatrix counts;
    Partition truth;
    double zero_fraction = 0.0;
};

SimulatedData generate_scenario(const ScenarioSpec& spec);

// Dirichlet-tree multinomial design. Cluster k splits the reads at each
// internal node with concentrations precision * q, where q is drawn
// Dirichlet(node split concentrations) per cluster, or equals the normalized
// node concentrations for every cluster when identical_clusters is set.
// Each sample draws its own split probabilities from those concentrations.
struct DtmSpec {
    std::vector<int> n_per_cluster{75, 75, 75, 75};
    Count depth = 2500;
    double at_risk_prob = 1.0;
    std::uint64_t seed = 1;
    double precision = 10.0;
    bool identical_clusters = false;

    void validate() const;
};

SimulatedData generate_dtm(const PhyloTree& tree, const DtmSpec& spec);

struct Calibration {
    double at_risk_prob = 1.0;
    double achieved = 0.0;  // Monte Carlo mean zero fraction at at_risk_prob
    double floor = 0.0;     // mean zero fraction with no structural zeros
};

// Bisection on at_risk_prob so the mean zero fraction over `replicates`
// generated data sets lands within 0.02 of the target. Replicate r uses RNG
// stream r of spec.seed for every candidate probability.
Calibration calibrate_at_risk(ScenarioSpec spec, double target_zero_fraction, int replicates);

}  // namespace dsdm
