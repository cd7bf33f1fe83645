#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsdm/model.hpp"
#include "dsdm/sampler.hpp"

namespace dsdm {

// Hard clustering of N items. Labels are 0-based and canonical: blocks are
// numbered in order of first appearance.
class Partition {
public:
    Partition() = default;
    // Accepts any integer labels and canonicalizes them.
    explicit Partition(std::span<const int> labels);
    explicit Partition(const std::vector<int>& labels) : Partition(std::span<const int>(labels)) {}

    std::size_t size() const noexcept { return labels_.size(); }
    int n_blocks() const noexcept { return n_blocks_; }
    int operator[](std::size_t i) const noexcept { return labels_[i]; }
    const std::vector<int>& labels() const noexcept { return labels_; }
    std::vector<int> block_sizes() const;

    friend bool operator==(const Partition&, const Partition&) = default;

private:
    std::vector<int> labels_;
    int n_blocks_ = 0;
};

// Symmetric N x N matrix of posterior co-clustering frequencies.
class CoClusterMatrix {
public:
    CoClusterMatrix() = default;
    CoClusterMatrix(std::size_t n, std::vector<double> values);

    std::size_t size() const noexcept { return n_; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return values_[i * n_ + j]; }
    std::span<const double> row(std::size_t i) const noexcept { return {values_.data() + i * n_, n_}; }
    const std::vector<double>& values() const noexcept { return values_; }

private:
    std::size_t n_ = 0;
    std::vector<double> values_;
};

CoClusterMatrix coclustering(const PosteriorDraws& draws);
CoClusterMatrix coclustering(const std::vector<Partition>& partitions);

// Jensen lower bound of the posterior expected variation of information, in
// bits, including the term that depends only on the co-clustering matrix:
//
//   (1/N) sum_i [ log2 |b(i)| + log2 sum_j P_ij - 2 log2 sum_{j in b(i)} P_ij ]
double vi_lower_bound(const Partition& p, const CoClusterMatrix& probs);

struct SalsoOptions {
    int runs = 16;
    std::uint64_t seed = 1;
    // Upper limit on the number of blocks; 0 means no limit.
    int max_blocks = 0;
    // Full sweeps allowed per run before giving up on convergence.
    int max_sweeps = 1000;
};

struct SalsoResult {
    Partition partition;
    double objective = 0.0;  // vi_lower_bound of the returned partition
    int best_run = 0;
    // Objective after the initial allocation and after each improving phase
    // of the winning run; non-increasing.
    std::vector<double> trace;
};

// Randomized multi-start greedy minimization of vi_lower_bound. Run 0
// starts from a single block and run 1 from singletons (capped at
// max_blocks); every other run allocates items one at a time in a random
// order to the block that minimizes the bound over the items placed so far.
// Each run then repeats single-item reallocation sweeps, whole-block
// dissolve-and-reallocate moves and best-first pairwise block merges until
// none improves. Ties go to the lowest block index; across runs, to the
// lowest run index.
SalsoResult salso_search(const CoClusterMatrix& probs, const SalsoOptions& options = {});

// Hubert-Arabie adjusted Rand index. Throws ValidationError on length mismatch.
double adjusted_rand_index(const Partition& a, const Partition& b);

struct AbundanceSummary {
    std::vector<std::string> names;  // taxa or groups
    std::vector<double> mean;
    std::vector<double> lower;  // 2.5% quantile
    std::vector<double> upper;  // 97.5% quantile
};

// Per-draw relative abundance vectors of each partition block: for every
// retained draw, each block is matched to the component holding most of its
// members (ties to the heavier component, then the lower index).
// Result[b] is a draws x J row-major matrix. Requires draws with ξ.
std::vector<std::vector<double>> cluster_abundance_samples(const PosteriorDraws& draws, const Partition& p);

// Mean and central 95% interval of each block's abundance. With a taxon to
// group map the per-draw vectors are first summed within groups.
std::vector<AbundanceSummary> posterior_cluster_abundances(
    const PosteriorDraws& draws, const Partition& p, const std::vector<std::string>& taxon_ids,
    const std::optional<std::map<std::string, std::string>>& taxon_to_group = std::nullopt);

struct Diversity {
    int richness = 0;
    std::optional<double> shannon;  // missing for a zero-depth sample
};

Diversity diversity(std::span<const Count> z);

// Frequency of each K+ value among retained draws.
std::map<int, double> k_filled_frequencies(const PosteriorDraws& draws);
int k_filled_mode(const PosteriorDraws& draws);
// Default salso block limit: the largest K+ among the draws plus one.
int salso_block_cap(const PosteriorDraws& draws);

}  // namespace dsdm
