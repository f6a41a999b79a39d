#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scen/metrics.hpp"

namespace scen {

struct SweepPoint {
    double value = 0.0;          // theta, layer index or group size
    std::size_t experts = 0;
    bool short_last_group = false;  // n not divisible by k
    double stepwise = 0.0;          // rows whose max activation is neuron i / k
    MetricsReport report;
};

struct SweepResult {
    std::string axis;  // theta | layer | group_size
    std::vector<SweepPoint> points;

    std::string to_json() const;
    // value,experts,reliability,generality,locality,unrouted,stepwise
    std::string to_csv() const;
};

// 0.60, 0.61, ..., 0.70
std::vector<double> default_theta_grid();
// Even layers plus the last one.
std::vector<std::size_t> default_sweep_layers(std::size_t n_layers);

// Re-scores one edited system at every threshold (no retraining: the
// threshold only enters routing).
SweepResult run_threshold_sweep(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode,
                                std::span<const EditSample> edits, std::span<const EditSample> loc,
                                std::span<const double> grid);

using SweepProgress = std::function<void(const SweepPoint&)>;

// A full sequential edit per layer with cfg otherwise unchanged.
SweepResult run_layer_sweep(const Checkpoint& ck, std::span<const EditSample> edits, std::span<const EditSample> loc,
                            const ScenConfig& cfg, std::span<const std::size_t> layers,
                            const SweepProgress& on_point = {});
// A full sequential edit per group size k; ceil(n / k) experts each.
SweepResult run_compression_sweep(const Checkpoint& ck, std::span<const EditSample> edits,
                                  std::span<const EditSample> loc, const ScenConfig& cfg,
                                  std::span<const std::size_t> group_sizes, const SweepProgress& on_point = {});

// Adjacent pairs moving against the expected direction.
std::size_t adjacent_inversions(std::span<const double> values, bool non_increasing);

struct TrendCheck {
    std::size_t reliability_inversions = 0;
    std::size_t generality_inversions = 0;
    std::size_t locality_inversions = 0;
    bool pass = false;
};
// Reliability and generality non-increasing, locality non-decreasing along
// the threshold axis, each with at most `slack` inversions.
TrendCheck threshold_trend(const SweepResult& r, std::size_t slack = 1);

}  // namespace scen
