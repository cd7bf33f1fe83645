#include "dsdm/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "dsdm/error.hpp"
#include "dsdm/rng.hpp"

namespace dsdm {

namespace {

constexpr int kMaskRetries = 1000;

std::vector<double> dirichlet(Rng& rng, std::span<const double> alpha) {
    std::vector<double> out(alpha.size());
    for (std::size_t c = 0; c < alpha.size(); ++c) out[c] = rng.log_gamma(alpha[c]);
    const double max = *std::max_element(out.begin(), out.end());
    double total = 0.0;
    for (double& v : out) {
        v = std::exp(v - max);
        total += v;
    }
    for (double& v : out) v /= total;
    return out;
}

// Multinomial draw by sequential conditional binomials. `weights` need not
// be normalized; entries with zero weight receive no reads.
void multinomial(Rng& rng, Count n, std::span<const double> weights, std::span<Count> out) {
    double remaining_mass = std::accumulate(weights.begin(), weights.end(), 0.0);
    Count remaining = n;
    for (std::size_t c = 0; c < weights.size(); ++c) {
        if (remaining == 0 || weights[c] <= 0.0) {
            out[c] = 0;
            continue;
        }
        const double p = std::min(1.0, weights[c] / remaining_mass);
        Count draw = remaining;
        if (p < 1.0) {
            std::binomial_distribution<Count> dist(remaining, p);
            draw = dist(rng.engine());
        }
        out[c] = draw;
        remaining -= draw;
        remaining_mass -= weights[c];
    }
    // Any reads left by rounding go to the last taxon with mass.
    if (remaining > 0) {
        for (std::size_t c = weights.size(); c-- > 0;) {
            if (weights[c] > 0.0) {
                out[c] += remaining;
                break;
            }
        }
    }
}

std::vector<std::string> numbered(const char* prefix, std::size_t n) {
    const int width = n >= 100 ? 3 : 2;
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= n; ++i) out.push_back(fmt::format("{}{:0{}}", prefix, i, width));
    return out;
}

std::vector<std::string> sample_names(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= n; ++i) out.push_back(fmt::format("sample{:03}", i));
    return out;
}

SimulatedData generate_scenario_stream(const ScenarioSpec& spec, std::uint64_t stream) {
    spec.validate();
    Rng rng(spec.seed, stream);
    const std::size_t n = spec.n_samples();
    const auto j_noise = static_cast<std::size_t>(spec.j_noise);
    const auto j_total = static_cast<std::size_t>(spec.j_noise + spec.j_signal);
    const auto blocks = signal_blocks(spec.j_signal, spec.n_clusters());

    std::vector<Count> counts(n * j_total, 0);
    std::vector<int> labels;
    std::vector<double> weights(j_total);
    std::vector<std::uint8_t> at_risk(j_total);
    const std::vector<double> noise_alpha(j_noise, spec.noise_concentration);

    std::size_t i = 0;
    for (int k = 0; k < spec.n_clusters(); ++k) {
        const auto [first, last] = blocks[k];
        const std::vector<double> signal_alpha(static_cast<std::size_t>(last - first), spec.signal_concentration);
        for (int rep = 0; rep < spec.n_per_cluster[k]; ++rep, ++i) {
            labels.push_back(k);
            std::fill(weights.begin(), weights.end(), 0.0);
            const auto noise = dirichlet(rng, noise_alpha);
            std::copy(noise.begin(), noise.end(), weights.begin());
            if (!signal_alpha.empty()) {
                const auto signal = dirichlet(rng, signal_alpha);
                std::copy(signal.begin(), signal.end(), weights.begin() + static_cast<std::ptrdiff_t>(j_noise) + first);
            }
            double noise_mass = 0.0;
            double signal_mass = 0.0;
            for (int attempt = 0;; ++attempt) {
                if (attempt == kMaskRetries) {
                    throw ValidationError(fmt::format(
                        "sample {}: every taxon stayed structurally zero after {} attempts", i + 1, kMaskRetries));
                }
                for (auto& g : at_risk) g = rng.bernoulli(spec.at_risk_prob) ? 1 : 0;
                noise_mass = 0.0;
                signal_mass = 0.0;
                for (std::size_t j = 0; j < j_total; ++j) {
                    if (!at_risk[j]) continue;
                    (j < j_noise ? noise_mass : signal_mass) += weights[j];
                }
                if (noise_mass > 0.0 || signal_mass > 0.0) break;
            }
            for (std::size_t j = 0; j < j_total; ++j) {
                if (!at_risk[j]) weights[j] = 0.0;
            }
            Count noise_reads = spec.depth_noise;
            Count signal_reads = spec.depth_signal;
            if (noise_mass == 0.0) {
                signal_reads += noise_reads;
                noise_reads = 0;
            } else if (signal_mass == 0.0) {
                noise_reads += signal_reads;
                signal_reads = 0;
            }
            std::span<Count> row(counts.data() + i * j_total, j_total);
            multinomial(rng, noise_reads, std::span<const double>(weights.data(), j_noise), row.first(j_noise));
            multinomial(rng, signal_reads, std::span<const double>(weights.data() + j_noise, j_total - j_noise),
                        row.subspan(j_noise));
        }
    }

    auto taxa = numbered("noise", j_noise);
    const auto signal_names = numbered("signal", j_total - j_noise);
    taxa.insert(taxa.end(), signal_names.begin(), signal_names.end());
    SimulatedData out{CountMatrix(n, j_total, std::move(counts), sample_names(n), std::move(taxa)), Partition(labels),
                      0.0};
    out.zero_fraction = out.counts.zero_fraction();
    return out;
}

double mean_zero_fraction(const ScenarioSpec& spec, int replicates) {
    double total = 0.0;
    for (int r = 0; r < replicates; ++r) {
        total += generate_scenario_stream(spec, static_cast<std::uint64_t>(r)).zero_fraction;
    }
    return total / replicates;
}

}  // namespace

std::size_t ScenarioSpec::n_samples() const noexcept {
    return static_cast<std::size_t>(std::accumulate(n_per_cluster.begin(), n_per_cluster.end(), 0));
}

void ScenarioSpec::validate() const {
    if (n_per_cluster.empty()) throw ValidationError("scenario needs at least one cluster");
    for (int nk : n_per_cluster) {
        if (nk < 1) throw ValidationError("every cluster needs at least one sample");
    }
    if (j_noise < 0 || j_signal < 0) throw ValidationError("taxon counts must be nonnegative");
    if (j_noise + j_signal < 2) throw ValidationError("scenario needs at least two taxa");
    if (j_signal > 0 && j_signal < n_clusters()) {
        throw ValidationError("need at least one signal taxon per cluster");
    }
    if (j_noise == 0 && depth_noise > 0) throw ValidationError("noise reads without noise taxa");
    if (j_signal == 0 && depth_signal > 0) throw ValidationError("signal reads without signal taxa");
    if (depth_noise < 0 || depth_signal < 0) throw ValidationError("depths must be nonnegative");
    if (!(at_risk_prob > 0.0 && at_risk_prob <= 1.0)) throw ValidationError("at_risk_prob must lie in (0, 1]");
    if (!(noise_concentration > 0.0 && signal_concentration > 0.0)) {
        throw ValidationError("Dirichlet concentrations must be positive");
    }
}

ScenarioSpec scenario_preset(int id) {
    ScenarioSpec spec;
    switch (id) {
        case 1:
        case 2:
        case 3:
            break;
        case 4:
            spec.j_noise = 200;
            spec.j_signal = 50;
            break;
        case 5:
            spec.n_per_cluster = {30, 30, 20, 20, 25, 25};
            break;
        default:
            throw ValidationError(fmt::format("unknown scenario {}; expected 1..5", id));
    }
    return spec;
}

double scenario_target_zero_fraction(int id) {
    switch (id) {
        case 1: return 0.28;
        case 2: return 0.51;
        case 3: return 0.73;
        case 4: return 0.54;
        case 5: return 0.50;
        default: throw ValidationError(fmt::format("unknown scenario {}; expected 1..5", id));
    }
}

std::vector<std::pair<int, int>> signal_blocks(int j_signal, int n_clusters) {
    std::vector<std::pair<int, int>> out;
    const int base = j_signal / n_clusters;
    const int extra = j_signal % n_clusters;
    int start = 0;
    for (int k = 0; k < n_clusters; ++k) {
        const int len = base + (k < extra ? 1 : 0);
        out.emplace_back(start, start + len);
        start += len;
    }
    return out;
}

SimulatedData generate_scenario(const ScenarioSpec& spec) { return generate_scenario_stream(spec, 0); }

void DtmSpec::validate() const {
    if (n_per_cluster.empty()) throw ValidationError("DTM design needs at least one cluster");
    for (int nk : n_per_cluster) {
        if (nk < 1) throw ValidationError("every cluster needs at least one sample");
    }
    if (depth < 0) throw ValidationError("depth must be nonnegative");
    if (!(at_risk_prob > 0.0 && at_risk_prob <= 1.0)) throw ValidationError("at_risk_prob must lie in (0, 1]");
    if (!(precision > 0.0)) throw ValidationError("precision must be positive");
}

SimulatedData generate_dtm(const PhyloTree& tree, const DtmSpec& spec) {
    spec.validate();
    Rng rng(spec.seed, 0);
    const auto& nodes = tree.nodes();
    const auto leaves = tree.leaves();
    const std::size_t j_total = leaves.size();
    const int n_clusters = static_cast<int>(spec.n_per_cluster.size());

    // concentrations[k][node] for internal nodes.
    std::vector<std::vector<std::vector<double>>> conc(static_cast<std::size_t>(n_clusters),
                                                       std::vector<std::vector<double>>(nodes.size()));
    for (int k = 0; k < n_clusters; ++k) {
        for (std::size_t v = 0; v < nodes.size(); ++v) {
            if (nodes[v].is_leaf()) continue;
            const auto& base = nodes[v].split_concentration;
            std::vector<double> q;
            if (spec.identical_clusters) {
                const double total = std::accumulate(base.begin(), base.end(), 0.0);
                for (double b : base) q.push_back(b / total);
            } else {
                q = dirichlet(rng, base);
            }
            for (double& x : q) x *= spec.precision;
            conc[k][v] = std::move(q);
        }
    }

    std::vector<int> leaf_index(nodes.size(), -1);
    for (std::size_t l = 0; l < leaves.size(); ++l) leaf_index[leaves[l]] = static_cast<int>(l);

    const std::size_t n = static_cast<std::size_t>(
        std::accumulate(spec.n_per_cluster.begin(), spec.n_per_cluster.end(), 0));
    std::vector<Count> counts(n * j_total, 0);
    std::vector<int> labels;
    std::vector<double> node_prob(nodes.size());
    std::vector<double> weights(j_total);
    std::vector<std::uint8_t> at_risk(j_total);
    std::size_t i = 0;
    for (int k = 0; k < n_clusters; ++k) {
        for (int rep = 0; rep < spec.n_per_cluster[k]; ++rep, ++i) {
            labels.push_back(k);
            node_prob[0] = 1.0;
            // Nodes are stored in preorder, so parents come before children.
            for (std::size_t v = 0; v < nodes.size(); ++v) {
                if (nodes[v].is_leaf()) {
                    weights[leaf_index[v]] = node_prob[v];
                    continue;
                }
                const auto split = dirichlet(rng, conc[k][v]);
                for (std::size_t c = 0; c < split.size(); ++c) node_prob[nodes[v].children[c]] = node_prob[v] * split[c];
            }
            for (int attempt = 0;; ++attempt) {
                if (attempt == kMaskRetries) {
                    throw ValidationError(fmt::format(
                        "sample {}: every taxon stayed structurally zero after {} attempts", i + 1, kMaskRetries));
                }
                double mass = 0.0;
                for (std::size_t j = 0; j < j_total; ++j) {
                    at_risk[j] = rng.bernoulli(spec.at_risk_prob) ? 1 : 0;
                    if (at_risk[j]) mass += weights[j];
                }
                if (mass > 0.0) break;
            }
            for (std::size_t j = 0; j < j_total; ++j) {
                if (!at_risk[j]) weights[j] = 0.0;
            }
            multinomial(rng, spec.depth, weights, std::span<Count>(counts.data() + i * j_total, j_total));
        }
    }
    SimulatedData out{CountMatrix(n, j_total, std::move(counts), sample_names(n), tree.leaf_labels()),
                      Partition(labels), 0.0};
    out.zero_fraction = out.counts.zero_fraction();
    return out;
}

Calibration calibrate_at_risk(ScenarioSpec spec, double target, int replicates) {
    if (replicates < 1) throw ValidationError("calibration needs at least one replicate");
    if (!(target < 1.0)) {
        throw ValidationError("a zero fraction of 1 is unreachable: every sample keeps at least one positive count");
    }
    constexpr double kTolerance = 0.02;
    Calibration out;
    spec.at_risk_prob = 1.0;
    out.floor = mean_zero_fraction(spec, replicates);
    if (target < out.floor - kTolerance) {
        throw ValidationError(fmt::format(
            "target zero fraction {:.3f} is below the sampling-zero floor {:.3f} reached with no structural zeros",
            target, out.floor));
    }
    if (target <= out.floor + kTolerance) {
        out.at_risk_prob = 1.0;
        out.achieved = out.floor;
        return out;
    }
    double lo = 1e-3;  // most zeros
    double hi = 1.0;   // fewest zeros
    spec.at_risk_prob = lo;
    const double ceiling = mean_zero_fraction(spec, replicates);
    if (ceiling < target - kTolerance) {
        throw ValidationError(fmt::format("target zero fraction {:.3f} exceeds the reachable maximum {:.3f}", target,
                                          ceiling));
    }
    double best_p = lo;
    double best_z = ceiling;
    for (int iter = 0; iter < 40; ++iter) {
        const double mid = 0.5 * (lo + hi);
        spec.at_risk_prob = mid;
        const double z = mean_zero_fraction(spec, replicates);
        if (std::abs(z - target) < std::abs(best_z - target)) {
            best_p = mid;
            best_z = z;
        }
        if (std::abs(z - target) < 1e-3) break;
        if (z > target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (std::abs(best_z - target) > kTolerance) {
        throw NumericalError(fmt::format("calibration stalled at zero fraction {:.3f} (target {:.3f})", best_z, target));
    }
    out.at_risk_prob = best_p;
    out.achieved = best_z;
    return out;
}

}  // namespace dsdm
