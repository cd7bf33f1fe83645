#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dsdm/inference.hpp"
#include "dsdm/model.hpp"
#include "dsdm/sampler.hpp"
#include "dsdm/simgen.hpp"

namespace dsdm {

std::string_view version() noexcept;

// Everything a subcommand needs, as one flat record. Paths are kept as
// given; empty means "not set". Defaults mirror the application study.
struct RunConfig {
    // files
    std::string counts;
    std::string labels;
    std::string labels_b;
    std::string draws;  // fit output directory read back by summarize
    std::string out = "out";
    std::string tree;
    std::string taxon_groups;

    // simulate
    std::string scenario = "1";
    double at_risk_prob = -1.0;  // negative: calibrate against the scenario's zero fraction
    int calibration_replicates = 20;
    std::string dtm_clusters = "75,75,75,75";
    std::int64_t dtm_depth = 2500;
    double dtm_precision = 10.0;
    bool dtm_identical = false;

    // model
    std::string k_prior = "binomial";  // binomial | poisson | geometric | bnb
    int k_max = 10;
    double pi_lambda = 0.5;
    double poisson_rate = 5.0;
    double geometric_p = 0.2;
    double bnb_a = 4.0;
    double bnb_b = 3.0;
    double bnb_r = 1.0;
    double theta = 0.1;
    double alpha_gamma = 1.0;
    double beta_gamma = 1.0;
    double s = 200.0;
    double sigma2 = 10.0;
    double sigma2_mh = 1.0;
    std::string zero_inflation = "zidm";  // zidm | dm

    // sampler
    int n_iter = 10000;
    int burn_in = 5000;
    int thin = 1;
    std::uint64_t seed = 1;
    int chains = 1;
    bool record_xi = false;

    // summarize
    int salso_runs = 16;
    int salso_max_blocks = 0;  // 0: largest K+ in the draws plus one
    int summary_burn_in = 0;  // extra leading draws per chain to discard

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

    // Re-validates every derived Hyperparams / SamplerConfig invariant.
    void validate() const;

    KPrior k_prior_spec() const;
    // mu is left empty; fill it from the data with prior_means.
    Hyperparams hyperparams() const;
    SamplerConfig sampler_config() const;
    SalsoOptions salso_options() const;
    ScenarioSpec scenario_spec() const;  // scenario "1".."5"
    DtmSpec dtm_spec() const;
};

nlohmann::ordered_json to_json(const RunConfig& config);
// Rejects unknown keys and values of the wrong type; does not validate.
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config(const std::string& path);
// Applies a `key=value` override, parsing value by the key's type.
void apply_override(RunConfig& config, std::string_view assignment);

// Manifest written next to every output set; reloading the `config` member
// yields the RunConfig that produced it.
std::string format_manifest(const std::string& command, const RunConfig& config,
                            const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());
RunConfig config_from_manifest(const std::string& text);

}  // namespace dsdm
