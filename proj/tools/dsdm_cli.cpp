// dsdm: simulate, fit and summarize Dirichlet-multinomial mixtures of
// microbiome count tables.
//
// Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numerical failure.

#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "dsdm/config.hpp"
#include "dsdm/error.hpp"
#include "dsdm/inference.hpp"
#include "dsdm/io.hpp"
#include "dsdm/newick.hpp"
#include "dsdm/sampler.hpp"
#include "dsdm/simgen.hpp"

using namespace dsdm;
using nlohmann::ordered_json;

namespace {

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted.store(true); }

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> scenario;
    std::optional<int> chains;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON run configuration");
    cmd->add_option("--set", f.overrides, "Override a config key (KEY=VALUE), repeatable");
    cmd->add_option("--seed", f.seed, "Random seed");
    cmd->add_option("--scenario", f.scenario, "Simulation scenario: 1..5 or dtm");
    cmd->add_option("--chains", f.chains, "Number of independent chains");
    cmd->add_option("--out", f.out, "Output directory");
}

// Config file, then --set overrides in order, then the dedicated flags.
RunConfig resolve(const CommonFlags& f) {
    RunConfig c = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
    for (const auto& s : f.overrides) apply_override(c, s);
    if (f.seed) c.seed = *f.seed;
    if (f.scenario) c.scenario = *f.scenario;
    if (f.chains) c.chains = *f.chains;
    if (f.out) c.out = *f.out;
    c.validate();
    return c;
}

std::string num(double v) { return fmt::format("{}", v); }

void cmd_simulate(const RunConfig& c) {
    const fs::path out = c.out;
    SimulatedData sim;
    ordered_json extra = ordered_json::object();
    if (c.scenario == "dtm") {
        if (c.tree.empty()) throw ValidationError("scenario dtm needs a Newick tree (set the 'tree' key)");
        const PhyloTree tree = parse_newick(read_text(c.tree));
        const DtmSpec spec = c.dtm_spec();
        sim = generate_dtm(tree, spec);
        extra["at_risk_prob"] = spec.at_risk_prob;
    } else {
        ScenarioSpec spec = c.scenario_spec();
        if (c.at_risk_prob < 0.0) {
            const int id = std::stoi(c.scenario);
            const Calibration cal = calibrate_at_risk(spec, scenario_target_zero_fraction(id), c.calibration_replicates);
            spec.at_risk_prob = cal.at_risk_prob;
            extra["calibration"] = {{"target_zero_fraction", scenario_target_zero_fraction(id)},
                                    {"achieved_zero_fraction", cal.achieved},
                                    {"floor_zero_fraction", cal.floor}};
        }
        sim = generate_scenario(spec);
        extra["at_risk_prob"] = spec.at_risk_prob;
    }
    extra["n_samples"] = sim.counts.n_samples();
    extra["n_taxa"] = sim.counts.n_taxa();
    extra["n_clusters"] = sim.truth.n_blocks();
    extra["realized_zero_fraction"] = sim.zero_fraction;

    ensure_directory(out);
    write_text(out / "counts.csv", format_counts_csv(sim.counts));
    write_text(out / "labels.csv", format_labels_csv(sim.counts.sample_ids(), sim.truth));
    write_text(out / "manifest.json", format_manifest("simulate", c, extra));
    fmt::print(std::cerr, "simulate: {} x {} counts, {} clusters, zero fraction {:.3f}\n", sim.counts.n_samples(),
               sim.counts.n_taxa(), sim.truth.n_blocks(), sim.zero_fraction);
}

void cmd_fit(const RunConfig& c) {
    if (c.counts.empty()) throw ValidationError("fit needs a counts CSV (set the 'counts' key)");
    const CountMatrix data = read_counts_csv(c.counts);
    Hyperparams hyper = c.hyperparams();
    const PriorMeans pm = prior_means(data, hyper.s);
    hyper.mu = pm.mu;
    hyper.validate(data.n_taxa());
    for (std::size_t j : pm.all_zero_taxa) {
        fmt::print(std::cerr, "fit: taxon '{}' has no reads; using a half-read prior mean\n", data.taxon_ids()[j]);
    }

    const fs::path out = c.out;
    ensure_directory(out);
    std::signal(SIGINT, on_sigint);
    const auto start = std::chrono::steady_clock::now();
    const auto chains = run_chains(data, hyper, c.sampler_config(), c.chains,
                                   [](int) { return g_interrupted.load(); });
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    ordered_json extra = ordered_json::object();
    extra["n_samples"] = data.n_samples();
    extra["n_taxa"] = data.n_taxa();
    ordered_json acc = ordered_json::array();
    bool interrupted = false;
    for (const auto& ch : chains) {
        acc.push_back(ch.xi_acceptance_rate);
        interrupted = interrupted || ch.interrupted;
    }
    extra["xi_acceptance_rate"] = acc;
    extra["interrupted"] = interrupted;
    ordered_json zero_taxa = ordered_json::array();
    for (std::size_t j : pm.all_zero_taxa) zero_taxa.push_back(data.taxon_ids()[j]);
    extra["all_zero_taxa"] = zero_taxa;

    write_text(out / "draws.csv", format_draws_csv(chains));
    if (c.record_xi) write_text(out / "xi.bin", format_xi_sidecar(chains));
    write_text(out / "manifest.json", format_manifest("fit", c, extra));
    ordered_json timing = {{"wall_seconds", seconds}};
    write_text(out / "timing.json", timing.dump(2) + "\n");
    fmt::print(std::cerr, "fit: {} chain(s), {:.1f} s{}\n", chains.size(), seconds,
               interrupted ? " (interrupted; partial draws kept)" : "");
}

void cmd_summarize(const RunConfig& c) {
    if (c.draws.empty()) throw ValidationError("summarize needs the fit output directory (set the 'draws' key)");
    const fs::path fit_dir = c.draws;
    std::string counts_path = c.counts;
    if (counts_path.empty()) counts_path = config_from_manifest(read_text(fit_dir / "manifest.json")).counts;
    if (counts_path.empty()) throw ValidationError("summarize cannot locate the counts CSV");
    const CountMatrix data = read_counts_csv(counts_path);

    auto chains = parse_draws_csv(read_text(fit_dir / "draws.csv"), (fit_dir / "draws.csv").string());
    const bool with_xi = fs::exists(fit_dir / "xi.bin");
    if (with_xi) attach_xi_sidecar(read_text(fit_dir / "xi.bin"), chains);

    PosteriorDraws pooled;
    pooled.n_samples = chains.front().n_samples;
    pooled.n_taxa = data.n_taxa();
    for (std::size_t m = 0; m < chains.size(); ++m) {
        auto& recs = chains[m].records;
        if (static_cast<std::size_t>(c.summary_burn_in) >= recs.size()) {
            throw ValidationError(fmt::format("summary_burn_in {} leaves no draws in chain {} ({} available)",
                                              c.summary_burn_in, m + 1, recs.size()));
        }
        pooled.records.insert(pooled.records.end(), std::make_move_iterator(recs.begin() + c.summary_burn_in),
                              std::make_move_iterator(recs.end()));
    }
    if (pooled.n_samples != data.n_samples()) {
        throw ValidationError(fmt::format("draws cover {} samples but the counts CSV has {}", pooled.n_samples,
                                          data.n_samples()));
    }

    const CoClusterMatrix probs = coclustering(pooled);
    SalsoOptions salso = c.salso_options();
    if (salso.max_blocks == 0) salso.max_blocks = salso_block_cap(pooled);
    const SalsoResult best = salso_search(probs, salso);
    const Partition& p = best.partition;
    const auto& ids = data.sample_ids();

    const fs::path out = c.out;
    ensure_directory(out);
    write_text(out / "partition.csv", format_labels_csv(ids, p));

    std::vector<std::string> header{"sample_id"};
    header.insert(header.end(), ids.begin(), ids.end());
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        std::vector<std::string> r{ids[i]};
        for (double v : probs.row(i)) r.push_back(num(v));
        rows.push_back(std::move(r));
    }
    write_text(out / "coclustering.csv", format_table(header, rows));

    rows.clear();
    for (const auto& [k, f] : k_filled_frequencies(pooled)) rows.push_back({std::to_string(k), num(f)});
    write_text(out / "k_plus.csv", format_table({"k_plus", "frequency"}, rows));

    rows.clear();
    const auto sizes = p.block_sizes();
    for (std::size_t b = 0; b < sizes.size(); ++b) rows.push_back({std::to_string(b + 1), std::to_string(sizes[b])});
    write_text(out / "clusters.csv", format_table({"cluster", "size"}, rows));

    if (with_xi) {
        std::optional<std::map<std::string, std::string>> groups;
        if (!c.taxon_groups.empty()) groups = parse_taxon_groups(read_text(c.taxon_groups), c.taxon_groups);
        const auto summaries = posterior_cluster_abundances(pooled, p, data.taxon_ids(), groups);
        rows.clear();
        for (std::size_t b = 0; b < summaries.size(); ++b) {
            const auto& s = summaries[b];
            for (std::size_t t = 0; t < s.names.size(); ++t) {
                rows.push_back({std::to_string(b + 1), s.names[t], num(s.mean[t]), num(s.lower[t]), num(s.upper[t])});
            }
        }
        write_text(out / "abundance.csv",
                   format_table({"cluster", groups ? "group" : "taxon", "mean", "lower95", "upper95"}, rows));
    }

    rows.clear();
    for (std::size_t i = 0; i < data.n_samples(); ++i) {
        const Diversity d = diversity(data.row(i));
        rows.push_back({ids[i], std::to_string(d.richness), d.shannon ? num(*d.shannon) : "NA"});
    }
    write_text(out / "diversity.csv", format_table({"sample_id", "richness", "shannon"}, rows));

    ordered_json extra = {{"draws_used", pooled.records.size()},
                          {"n_blocks", p.n_blocks()},
                          {"vi_lower_bound", best.objective},
                          {"abundance_from_xi", with_xi}};
    write_text(out / "manifest.json", format_manifest("summarize", c, extra));
    fmt::print(std::cerr, "summarize: {} draws, {} clusters\n", pooled.records.size(), p.n_blocks());
}

void cmd_ari(const RunConfig& c) {
    if (c.labels.empty() || c.labels_b.empty()) throw ValidationError("ari needs two labels CSV files");
    const auto [a, b] = join_labels(read_labels_csv(c.labels), read_labels_csv(c.labels_b));
    fmt::print("{:.4f}\n", adjusted_rand_index(a, b));
}

void cmd_diversity(const RunConfig& c) {
    if (c.counts.empty()) throw ValidationError("diversity needs a counts CSV (set the 'counts' key)");
    const CountMatrix data = read_counts_csv(c.counts);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < data.n_samples(); ++i) {
        const Diversity d = diversity(data.row(i));
        rows.push_back({data.sample_ids()[i], std::to_string(d.richness), d.shannon ? num(*d.shannon) : "NA"});
    }
    const fs::path out = c.out;
    ensure_directory(out);
    write_text(out / "diversity.csv", format_table({"sample_id", "richness", "shannon"}, rows));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-inflated Dirichlet-multinomial mixture clustering of microbiome counts"};
    app.set_version_flag("--version", std::string(version()));
    app.require_subcommand(1);

    CommonFlags flags;
    std::string counts;
    std::string draws;
    std::string tree;
    std::vector<std::string> label_files;

    auto* sim = app.add_subcommand("simulate", "Generate a synthetic data set with known clusters");
    add_common(sim, flags);
    sim->add_option("--tree", tree, "Newick tree for --scenario dtm");

    auto* fit = app.add_subcommand("fit", "Run the MCMC sampler on a counts CSV");
    add_common(fit, flags);
    fit->add_option("counts", counts, "Counts CSV");

    auto* sum = app.add_subcommand("summarize", "Point partition, co-clustering and posterior tables");
    add_common(sum, flags);
    sum->add_option("draws", draws, "Fit output directory");
    sum->add_option("--counts", counts, "Counts CSV (default: the one recorded by fit)");

    auto* ari = app.add_subcommand("ari", "Adjusted Rand index between two labels CSV files");
    add_common(ari, flags);
    ari->add_option("labels", label_files, "Two labels CSV files")->expected(0, 2);

    auto* div = app.add_subcommand("diversity", "Per-sample richness and Shannon diversity");
    add_common(div, flags);
    div->add_option("counts", counts, "Counts CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig c = resolve(flags);
        if (!counts.empty()) c.counts = counts;
        if (!draws.empty()) c.draws = draws;
        if (!tree.empty()) c.tree = tree;
        if (label_files.size() == 2) {
            c.labels = label_files[0];
            c.labels_b = label_files[1];
        }
        if (*sim) cmd_simulate(c);
        else if (*fit) cmd_fit(c);
        else if (*sum) cmd_summarize(c);
        else if (*ari) cmd_ari(c);
        else if (*div) cmd_diversity(c);
        return 0;
    } catch (const ValidationError& e) {
        fmt::print(std::cerr, "error: {}\n", e.what());
        return 2;
    } catch (const IoError& e) {
        fmt::print(std::cerr, "error: {}\n", e.what());
        return 3;
    } catch (const NumericalError& e) {
        fmt::print(std::cerr, "numerical failure: {}\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        fmt::print(std::cerr, "error: {}\n", e.what());
        return 1;
    }
}
