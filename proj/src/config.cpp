#include "dsdm/config.hpp"

#include <charconv>
#include <set>

#include <fmt/format.h>

#include "dsdm/error.hpp"
#include "dsdm/io.hpp"

#ifndef DSDM_VERSION
#define DSDM_VERSION "0.0.0"
#endif

namespace dsdm {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view version() noexcept { return DSDM_VERSION; }

namespace {

// Single list of (key, member) pairs driving serialization, parsing and
// overrides. Order here is the order written to disk.
template <typename Config, typename F>
void for_each_field(Config& c, F&& f) {
    f("counts", c.counts);
    f("labels", c.labels);
    f("labels_b", c.labels_b);
    f("draws", c.draws);
    f("out", c.out);
    f("tree", c.tree);
    f("taxon_groups", c.taxon_groups);
    f("scenario", c.scenario);
    f("at_risk_prob", c.at_risk_prob);
    f("calibration_replicates", c.calibration_replicates);
    f("dtm_clusters", c.dtm_clusters);
    f("dtm_depth", c.dtm_depth);
    f("dtm_precision", c.dtm_precision);
    f("dtm_identical", c.dtm_identical);
    f("k_prior", c.k_prior);
    f("k_max", c.k_max);
    f("pi_lambda", c.pi_lambda);
    f("poisson_rate", c.poisson_rate);
    f("geometric_p", c.geometric_p);
    f("bnb_a", c.bnb_a);
    f("bnb_b", c.bnb_b);
    f("bnb_r", c.bnb_r);
    f("theta", c.theta);
    f("alpha_gamma", c.alpha_gamma);
    f("beta_gamma", c.beta_gamma);
    f("s", c.s);
    f("sigma2", c.sigma2);
    f("sigma2_mh", c.sigma2_mh);
    f("zero_inflation", c.zero_inflation);
    f("n_iter", c.n_iter);
    f("burn_in", c.burn_in);
    f("thin", c.thin);
    f("seed", c.seed);
    f("chains", c.chains);
    f("record_xi", c.record_xi);
    f("salso_runs", c.salso_runs);
    f("salso_max_blocks", c.salso_max_blocks);
    f("summary_burn_in", c.summary_burn_in);
}

template <typename T>
void read_field(const json& v, const char* key, T& out) {
    auto bad = [&] { return ValidationError(fmt::format("config key '{}' has the wrong type", key)); };
    if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw bad();
        out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw bad();
        out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw bad();
        out = v.get<double>();
    } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw bad();
        out = v.get<T>();
    } else {
        if (!v.is_number_integer()) throw bad();
        const auto x = v.get<std::int64_t>();
        if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) throw bad();
        out = static_cast<T>(x);
    }
}

template <typename T>
bool parse_scalar(std::string_view s, T& out) {
    if constexpr (std::is_same_v<T, std::string>) {
        out = std::string(s);
        return true;
    } else if constexpr (std::is_same_v<T, bool>) {
        if (s == "true" || s == "1") out = true;
        else if (s == "false" || s == "0") out = false;
        else return false;
        return true;
    } else {
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        return !s.empty() && ec == std::errc{} && ptr == s.data() + s.size();
    }
}

std::vector<int> parse_int_list(const std::string& text, const char* key) {
    std::vector<int> out;
    std::size_t p = 0;
    while (p <= text.size()) {
        const std::size_t comma = std::min(text.find(',', p), text.size());
        int v = 0;
        if (!parse_scalar(std::string_view(text).substr(p, comma - p), v) || v < 1) {
            throw ValidationError(fmt::format("config key '{}' must be a comma-separated list of positive integers", key));
        }
        out.push_back(v);
        p = comma + 1;
    }
    return out;
}

}  // namespace

KPrior RunConfig::k_prior_spec() const {
    KPrior prior;
    prior.k_max = k_max;
    if (k_prior == "binomial") prior.family = ZeroTruncBinomial{pi_lambda};
    else if (k_prior == "poisson") prior.family = TruncatedPoisson{poisson_rate};
    else if (k_prior == "geometric") prior.family = Geometric{geometric_p};
    else if (k_prior == "bnb") prior.family = BetaNegBinomial{bnb_a, bnb_b, bnb_r};
    else throw ValidationError(fmt::format("k_prior must be binomial, poisson, geometric or bnb, not '{}'", k_prior));
    return prior;
}

Hyperparams RunConfig::hyperparams() const {
    Hyperparams h;
    h.k_prior = k_prior_spec();
    h.theta = theta;
    h.alpha_gamma = alpha_gamma;
    h.beta_gamma = beta_gamma;
    h.s = s;
    h.sigma2 = sigma2;
    h.sigma2_mh = sigma2_mh;
    if (zero_inflation == "zidm") h.zero_inflation = ZeroInflation::ZIDM;
    else if (zero_inflation == "dm") h.zero_inflation = ZeroInflation::DM;
    else throw ValidationError(fmt::format("zero_inflation must be zidm or dm, not '{}'", zero_inflation));
    return h;
}

SamplerConfig RunConfig::sampler_config() const {
    SamplerConfig c;
    c.n_iter = n_iter;
    c.burn_in = burn_in;
    c.thin = thin;
    c.seed = seed;
    c.record_xi = record_xi;
    return c;
}

SalsoOptions RunConfig::salso_options() const {
    SalsoOptions o;
    o.runs = salso_runs;
    o.seed = seed;
    o.max_blocks = salso_max_blocks;
    return o;
}

ScenarioSpec RunConfig::scenario_spec() const {
    int id = 0;
    if (!parse_scalar(std::string_view(scenario), id) || id < 1 || id > 5) {
        throw ValidationError(fmt::format("scenario must be 1..5 or dtm, not '{}'", scenario));
    }
    ScenarioSpec spec = scenario_preset(id);
    spec.seed = seed;
    if (at_risk_prob >= 0.0) spec.at_risk_prob = at_risk_prob;
    return spec;
}

DtmSpec RunConfig::dtm_spec() const {
    DtmSpec spec;
    spec.n_per_cluster = parse_int_list(dtm_clusters, "dtm_clusters");
    spec.depth = dtm_depth;
    spec.precision = dtm_precision;
    spec.identical_clusters = dtm_identical;
    spec.at_risk_prob = at_risk_prob >= 0.0 ? at_risk_prob : 1.0;
    spec.seed = seed;
    return spec;
}

void RunConfig::validate() const {
    hyperparams().validate();
    sampler_config().validate();
    if (out.empty()) throw ValidationError("out must not be empty");
    if (chains < 1) throw ValidationError("chains must be at least 1");
    if (salso_runs < 1) throw ValidationError("salso_runs must be at least 1");
    if (salso_max_blocks < 0) throw ValidationError("salso_max_blocks must be non-negative");
    if (summary_burn_in < 0) throw ValidationError("summary_burn_in must be non-negative");
    if (calibration_replicates < 1) throw ValidationError("calibration_replicates must be at least 1");
    if (at_risk_prob > 1.0) throw ValidationError("at_risk_prob must not exceed 1");
    if (scenario == "dtm") {
        dtm_spec().validate();
    } else {
        scenario_spec().validate();
    }
}

ordered_json to_json(const RunConfig& config) {
    ordered_json j = ordered_json::object();
    for_each_field(config, [&](const char* key, const auto& value) { j[key] = value; });
    return j;
}

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    RunConfig config;
    std::set<std::string> known;
    for_each_field(config, [&](const char* key, auto& value) {
        known.insert(key);
        if (auto it = j.find(key); it != j.end()) read_field(*it, key, value);
    });
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) throw ValidationError(fmt::format("unknown config key '{}'", key));
    }
    return config;
}

RunConfig load_config(const std::string& path) {
    const std::string text = read_text(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(fmt::format("{}: {}", path, e.what()));
    }
    return config_from_json(j);
}

void apply_override(RunConfig& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ValidationError(fmt::format("override '{}' is not of the form key=value", assignment));
    }
    const std::string key(assignment.substr(0, eq));
    const std::string_view value = assignment.substr(eq + 1);
    bool found = false;
    for_each_field(config, [&](const char* name, auto& field) {
        if (key != name) return;
        found = true;
        if (!parse_scalar(value, field)) {
            throw ValidationError(fmt::format("override '{}': cannot parse '{}'", key, value));
        }
    });
    if (!found) throw ValidationError(fmt::format("unknown config key '{}'", key));
}

std::string format_manifest(const std::string& command, const RunConfig& config, const ordered_json& extra) {
    ordered_json m = ordered_json::object();
    m["tool"] = "dsdm";
    m["version"] = std::string(version());
    m["command"] = command;
    m["seed"] = config.seed;
    m["config"] = to_json(config);
    for (const auto& [key, value] : extra.items()) m[key] = value;
    return m.dump(2) + "\n";
}

RunConfig config_from_manifest(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(fmt::format("manifest: {}", e.what()));
    }
    if (!j.is_object() || !j.contains("config")) throw ValidationError("manifest has no config member");
    return config_from_json(j["config"]);
}

}  // namespace dsdm
