#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scen/editor.hpp"
#include "scen/train.hpp"

namespace scen {

class ConfigError : public Error {
   public:
    using Error::Error;
};

enum class DatasetMode { qa, text };

// What to generate. qa: templated facts split into edit / locality sets
// against the trained base. text: biography passages for the perplexity
// suite.
struct DatasetSpec {
    std::uint64_t seed = 7;
    std::size_t n_facts = 260;
    std::size_t n_rewrites = 3;
    std::size_t n_edit = 50;
    std::size_t n_loc = 200;
    std::size_t n_accurate = 20;
    std::size_t n_unrelated = 20;
};

struct SweepSpec {
    std::vector<double> thresholds;        // empty -> 0.60..0.70
    std::vector<std::size_t> layers;       // empty -> even layers + last
    std::vector<std::size_t> group_sizes = {1, 2, 4};
};

// Checks run by eval / sweep when asked to assert; negative disables a bound.
struct AssertSpec {
    double min_reliability = -1.0;
    double min_generality = -1.0;
    double min_locality = -1.0;
    bool threshold_trend = false;
    std::size_t trend_slack = 1;
};

struct ExperimentConfig {
    DatasetMode mode = DatasetMode::qa;
    std::string output_dir = "scen_out";
    ModelConfig model;
    std::size_t vocab_limit = 1024;
    TrainOptions train;
    DatasetSpec dataset;
    ScenConfig scen;
    SweepSpec sweeps;
    AssertSpec checks;

    void validate() const;
    // Every field, defaults included; parse_config(to_json()) == *this.
    std::string to_json() const;
};

// Missing keys keep their defaults; unknown keys, wrong types and invalid
// values raise ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

ExperimentConfig default_config();

}  // namespace scen
