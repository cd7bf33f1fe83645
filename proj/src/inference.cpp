#include "dsdm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>
#include <unordered_map>

#include <fmt/format.h>

#include "dsdm/error.hpp"
#include "dsdm/rng.hpp"

namespace dsdm {

Partition::Partition(std::span<const int> labels) {
    std::unordered_map<int, int> remap;
    labels_.reserve(labels.size());
    for (int l : labels) {
        auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
        labels_.push_back(it->second);
    }
    n_blocks_ = static_cast<int>(remap.size());
}

std::vector<int> Partition::block_sizes() const {
    std::vector<int> sizes(static_cast<std::size_t>(n_blocks_), 0);
    for (int l : labels_) ++sizes[l];
    return sizes;
}

CoClusterMatrix::CoClusterMatrix(std::size_t n, std::vector<double> values) : n_(n), values_(std::move(values)) {
    if (values_.size() != n_ * n_) throw ValidationError("co-clustering matrix is not square");
}

namespace {

template <typename LabelsOf>
CoClusterMatrix cocluster_from(std::size_t n, std::size_t m, LabelsOf labels_of) {
    if (m == 0) throw ValidationError("co-clustering needs at least one draw");
    std::vector<double> counts(n * n, 0.0);
    for (std::size_t d = 0; d < m; ++d) {
        const auto& labels = labels_of(d);
        if (labels.size() != n) throw ValidationError("draws disagree on the number of items");
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (labels[i] == labels[j]) counts[i * n + j] += 1.0;
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < n; ++i) {
        counts[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            counts[i * n + j] *= inv;
            counts[j * n + i] = counts[i * n + j];
        }
    }
    return CoClusterMatrix(n, std::move(counts));
}

}  // namespace

CoClusterMatrix coclustering(const PosteriorDraws& draws) {
    return cocluster_from(draws.n_samples, draws.records.size(),
                          [&](std::size_t d) -> const std::vector<int>& { return draws.records[d].alloc; });
}

CoClusterMatrix coclustering(const std::vector<Partition>& partitions) {
    const std::size_t n = partitions.empty() ? 0 : partitions.front().size();
    return cocluster_from(n, partitions.size(),
                          [&](std::size_t d) -> const std::vector<int>& { return partitions[d].labels(); });
}

double vi_lower_bound(const Partition& p, const CoClusterMatrix& probs) {
    const std::size_t n = p.size();
    if (probs.size() != n) throw ValidationError("partition and co-clustering matrix sizes differ");
    if (n == 0) return 0.0;
    const auto sizes = p.block_sizes();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        double within = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row_sum += probs(i, j);
            if (p[i] == p[j]) within += probs(i, j);
        }
        total += std::log2(static_cast<double>(sizes[p[i]])) + std::log2(row_sum) - 2.0 * std::log2(within);
    }
    return total / static_cast<double>(n);
}

namespace {

inline double xlog2x(double x) { return x > 0.0 ? x * std::log2(x) : 0.0; }

// Greedy search state for one salso run. `within_[i * cap + b]` holds the sum
// of P(i, m) over members m currently placed in slot b.
class SalsoRun {
public:
    SalsoRun(const CoClusterMatrix& probs, int cap, Rng rng)
        : p_(probs),
          n_(probs.size()),
          cap_(cap),
          rng_(std::move(rng)),
          label_(n_, -1),
          size_(static_cast<std::size_t>(cap), 0),
          within_(n_ * static_cast<std::size_t>(cap), 0.0) {}

    enum class Start { OneBlock, Singletons, Sequential };

    double run(Start start, int max_sweeps, std::vector<double>& trace) {
        std::vector<std::size_t> order(n_);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng_.engine());
        for (std::size_t i : order) {
            if (start == Start::OneBlock) place(i, 0);
            else if (start == Start::Singletons) place(i, static_cast<int>(i) % cap_);
            else place(i, best_slot(i));
        }
        double current = objective();
        trace.push_back(current);

        for (int pass = 0; pass < max_sweeps; ++pass) {
            bool changed = false;
            // Single-item reallocation sweeps.
            for (int sweep = 0; sweep < max_sweeps; ++sweep) {
                bool moved = false;
                for (std::size_t i : order) {
                    const int from = label_[i];
                    remove(i);
                    const double stay = delta_add(i, from);
                    const int to = best_slot(i);
                    if (to != from && delta_add(i, to) < stay - kTol) {
                        place(i, to);
                        moved = true;
                    } else {
                        place(i, from);
                    }
                }
                if (!moved) break;
                changed = true;
                current = objective();
                trace.push_back(current);
            }
            // Zealous updates: dissolve a block and reallocate its members.
            for (int b = 0; b < cap_; ++b) {
                if (size_[b] == 0) continue;
                const std::vector<int> saved = label_;
                std::vector<std::size_t> members;
                for (std::size_t i = 0; i < n_; ++i) {
                    if (label_[i] == b) members.push_back(i);
                }
                for (std::size_t i : members) remove(i);
                std::shuffle(members.begin(), members.end(), rng_.engine());
                for (std::size_t i : members) place(i, best_slot(i));
                const double candidate = objective();
                if (candidate < current - kTol) {
                    current = candidate;
                    changed = true;
                    trace.push_back(current);
                } else {
                    restore(saved);
                }
            }
            // Pairwise merges, best first, until none improves.
            for (;;) {
                auto [a, b, delta] = best_merge();
                if (a < 0 || !(delta < -kTol)) break;
                for (std::size_t i = 0; i < n_; ++i) {
                    if (label_[i] == b) {
                        remove(i);
                        place(i, a);
                    }
                }
                current = objective();
                changed = true;
                trace.push_back(current);
            }
            if (!changed) break;
        }
        return current;
    }

    const std::vector<int>& labels() const noexcept { return label_; }

private:
    static constexpr double kTol = 1e-12;

    // Change in the search objective from adding unplaced item i to slot b.
    double delta_add(std::size_t i, int b) const {
        const double n = size_[b];
        double delta = xlog2x(n + 1.0) - xlog2x(n) - 2.0 * std::log2(within_[i * cap_ + b] + p_(i, i));
        if (size_[b] == 0) return delta;
        for (std::size_t m = 0; m < n_; ++m) {
            if (label_[m] != b) continue;
            const double w = within_[m * cap_ + b];
            delta -= 2.0 * (std::log2(w + p_(m, i)) - std::log2(w));
        }
        return delta;
    }

    // Lowest-delta merge of two open blocks; ties to the lowest pair.
    std::tuple<int, int, double> best_merge() const {
        std::tuple<int, int, double> best{-1, -1, std::numeric_limits<double>::infinity()};
        for (int a = 0; a < cap_; ++a) {
            if (size_[a] == 0) continue;
            for (int b = a + 1; b < cap_; ++b) {
                if (size_[b] == 0) continue;
                double delta = xlog2x(size_[a] + size_[b]) - xlog2x(size_[a]) - xlog2x(size_[b]);
                for (std::size_t m = 0; m < n_; ++m) {
                    if (label_[m] != a && label_[m] != b) continue;
                    const double own = within_[m * cap_ + label_[m]];
                    delta -= 2.0 * (std::log2(within_[m * cap_ + a] + within_[m * cap_ + b]) - std::log2(own));
                }
                if (delta < std::get<2>(best) - kTol) best = {a, b, delta};
            }
        }
        return best;
    }

    int open_blocks() const {
        return static_cast<int>(std::count_if(size_.begin(), size_.end(), [](int s) { return s > 0; }));
    }

    int best_slot(std::size_t i) const {
        int best = -1;
        double best_delta = std::numeric_limits<double>::infinity();
        const bool can_open = open_blocks() < cap_;
        bool tried_empty = false;
        for (int b = 0; b < cap_; ++b) {
            if (size_[b] == 0) {
                if (!can_open || tried_empty) continue;
                tried_empty = true;
            }
            const double d = delta_add(i, b);
            if (d < best_delta - kTol) {
                best_delta = d;
                best = b;
            }
        }
        return best;
    }

    void place(std::size_t i, int b) {
        label_[i] = b;
        ++size_[b];
        for (std::size_t m = 0; m < n_; ++m) within_[m * cap_ + b] += p_(m, i);
    }

    void remove(std::size_t i) {
        const int b = label_[i];
        label_[i] = -1;
        --size_[b];
        for (std::size_t m = 0; m < n_; ++m) within_[m * cap_ + b] -= p_(m, i);
        if (size_[b] == 0) {
            for (std::size_t m = 0; m < n_; ++m) within_[m * cap_ + b] = 0.0;
        }
    }

    void restore(const std::vector<int>& labels) {
        for (std::size_t i = 0; i < n_; ++i) {
            if (label_[i] >= 0) remove(i);
        }
        for (std::size_t i = 0; i < n_; ++i) place(i, labels[i]);
    }

    double objective() const {
        double out = 0.0;
        for (int b = 0; b < cap_; ++b) out += xlog2x(size_[b]);
        for (std::size_t i = 0; i < n_; ++i) out -= 2.0 * std::log2(within_[i * cap_ + label_[i]]);
        return out;
    }

    const CoClusterMatrix& p_;
    std::size_t n_;
    int cap_;
    Rng rng_;
    std::vector<int> label_;
    std::vector<int> size_;
    std::vector<double> within_;
};

}  // namespace

SalsoResult salso_search(const CoClusterMatrix& probs, const SalsoOptions& options) {
    if (options.runs < 1) throw ValidationError("salso needs at least one run");
    const std::size_t n = probs.size();
    if (n == 0) throw ValidationError("salso needs at least one item");
    int cap = options.max_blocks > 0 ? std::min<int>(options.max_blocks, static_cast<int>(n)) : static_cast<int>(n);

    SalsoResult best;
    double best_search = std::numeric_limits<double>::infinity();
    for (int r = 0; r < options.runs; ++r) {
        SalsoRun run(probs, cap, Rng(options.seed, static_cast<std::uint64_t>(r)));
        std::vector<double> trace;
        const auto start = r == 0 ? SalsoRun::Start::OneBlock
                           : r == 1 ? SalsoRun::Start::Singletons
                                    : SalsoRun::Start::Sequential;
        const double value = run.run(start, options.max_sweeps, trace);
        if (value < best_search - 1e-12) {
            best_search = value;
            best.partition = Partition(run.labels());
            best.best_run = r;
            best.trace = std::move(trace);
        }
    }
    best.objective = vi_lower_bound(best.partition, probs);
    // Report the trace on the same scale as the objective.
    double constant = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = probs.row(i);
        constant += std::log2(std::accumulate(row.begin(), row.end(), 0.0));
    }
    for (double& v : best.trace) v = (v + constant) / static_cast<double>(n);
    return best;
}

double adjusted_rand_index(const Partition& a, const Partition& b) {
    if (a.size() != b.size()) {
        throw ValidationError(fmt::format("partitions have different lengths ({} vs {})", a.size(), b.size()));
    }
    const std::size_t n = a.size();
    auto pairs = [](double x) { return 0.5 * x * (x - 1.0); };
    std::vector<double> table(static_cast<std::size_t>(a.n_blocks()) * b.n_blocks(), 0.0);
    for (std::size_t i = 0; i < n; ++i) table[static_cast<std::size_t>(a[i]) * b.n_blocks() + b[i]] += 1.0;
    double index = 0.0;
    for (double c : table) index += pairs(c);
    double sum_a = 0.0;
    for (int s : a.block_sizes()) sum_a += pairs(s);
    double sum_b = 0.0;
    for (int s : b.block_sizes()) sum_b += pairs(s);
    const double total = pairs(static_cast<double>(n));
    const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return a == b ? 1.0 : 0.0;
    return (index - expected) / (max_index - expected);
}

std::vector<std::vector<double>> cluster_abundance_samples(const PosteriorDraws& draws, const Partition& p) {
    if (!draws.has_xi()) throw ValidationError("abundance summaries need recorded concentrations");
    if (p.size() != draws.n_samples) throw ValidationError("partition and draws cover different samples");
    const std::size_t n_taxa = draws.n_taxa;
    const int n_blocks = p.n_blocks();
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n_blocks));
    for (auto& m : out) m.reserve(draws.records.size() * n_taxa);
    for (const auto& rec : draws.records) {
        std::vector<int> overlap(static_cast<std::size_t>(n_blocks) * rec.n_filled, 0);
        for (std::size_t i = 0; i < p.size(); ++i) ++overlap[static_cast<std::size_t>(p[i]) * rec.n_filled + rec.alloc[i]];
        for (int b = 0; b < n_blocks; ++b) {
            int best = 0;
            for (int k = 1; k < rec.n_filled; ++k) {
                const int ov = overlap[static_cast<std::size_t>(b) * rec.n_filled + k];
                const int best_ov = overlap[static_cast<std::size_t>(b) * rec.n_filled + best];
                if (ov > best_ov || (ov == best_ov && rec.weights[k] > rec.weights[best])) best = k;
            }
            const auto ra = cluster_relative_abundance(
                std::span<const double>(rec.xi.data() + static_cast<std::size_t>(best) * n_taxa, n_taxa));
            out[b].insert(out[b].end(), ra.begin(), ra.end());
        }
    }
    return out;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.size() == 1) return sorted.front();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

AbundanceSummary summarize_columns(const std::vector<double>& samples, std::size_t n_cols,
                                   std::vector<std::string> names) {
    const std::size_t rows = samples.size() / n_cols;
    AbundanceSummary out;
    out.names = std::move(names);
    std::vector<double> col(rows);
    for (std::size_t j = 0; j < n_cols; ++j) {
        double sum = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            col[r] = samples[r * n_cols + j];
            sum += col[r];
        }
        std::sort(col.begin(), col.end());
        out.mean.push_back(sum / static_cast<double>(rows));
        out.lower.push_back(quantile_sorted(col, 0.025));
        out.upper.push_back(quantile_sorted(col, 0.975));
    }
    return out;
}

}  // namespace

std::vector<AbundanceSummary> posterior_cluster_abundances(
    const PosteriorDraws& draws, const Partition& p, const std::vector<std::string>& taxon_ids,
    const std::optional<std::map<std::string, std::string>>& taxon_to_group) {
    if (taxon_ids.size() != draws.n_taxa) throw ValidationError("taxon ids do not match the draws");
    const auto samples = cluster_abundance_samples(draws, p);
    const std::size_t n_taxa = draws.n_taxa;
    std::vector<AbundanceSummary> out;
    if (!taxon_to_group) {
        for (const auto& s : samples) out.push_back(summarize_columns(s, n_taxa, taxon_ids));
        return out;
    }
    std::vector<std::string> groups;
    std::vector<std::size_t> group_of(n_taxa);
    for (std::size_t j = 0; j < n_taxa; ++j) {
        const auto it = taxon_to_group->find(taxon_ids[j]);
        if (it == taxon_to_group->end()) {
            throw ValidationError("taxon '" + taxon_ids[j] + "' has no group in the aggregation map");
        }
        auto pos = std::find(groups.begin(), groups.end(), it->second);
        group_of[j] = static_cast<std::size_t>(pos - groups.begin());
        if (pos == groups.end()) groups.push_back(it->second);
    }
    for (const auto& s : samples) {
        const std::size_t rows = s.size() / n_taxa;
        std::vector<double> agg(rows * groups.size(), 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n_taxa; ++j) agg[r * groups.size() + group_of[j]] += s[r * n_taxa + j];
        }
        out.push_back(summarize_columns(agg, groups.size(), groups));
    }
    return out;
}

Diversity diversity(std::span<const Count> z) {
    Diversity out;
    double depth = 0.0;
    for (Count c : z) {
        if (c > 0) {
            ++out.richness;
            depth += static_cast<double>(c);
        }
    }
    if (depth == 0.0) return out;
    double h = 0.0;
    for (Count c : z) {
        if (c > 0) {
            const double p = static_cast<double>(c) / depth;
            h -= p * std::log(p);
        }
    }
    out.shannon = std::max(h, 0.0);
    return out;
}

std::map<int, double> k_filled_frequencies(const PosteriorDraws& draws) {
    std::map<int, double> out;
    if (draws.records.empty()) return out;
    for (const auto& r : draws.records) out[r.n_filled] += 1.0;
    for (auto& [k, v] : out) v /= static_cast<double>(draws.records.size());
    return out;
}

int k_filled_mode(const PosteriorDraws& draws) {
    const auto freq = k_filled_frequencies(draws);
    if (freq.empty()) throw ValidationError("no draws to summarize");
    int mode = freq.begin()->first;
    double best = -1.0;
    for (const auto& [k, v] : freq) {
        if (v > best) {
            best = v;
            mode = k;
        }
    }
    return mode;
}

int salso_block_cap(const PosteriorDraws& draws) {
    if (draws.records.empty()) throw ValidationError("no draws to summarize");
    int k = 0;
    for (const auto& r : draws.records) k = std::max(k, r.n_filled);
    return k + 1;
}

}  // namespace dsdm
