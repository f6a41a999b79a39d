#include "scen/sweep.hpp"

#include <cstdio>

#include "json.hpp"

namespace scen {

namespace {

template <class T>
void require_strictly_increasing(std::span<const T> v, const char* what) {
    if (v.empty()) throw Error(std::string(what) + ": empty grid");
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (!(v[i - 1] < v[i])) throw Error(std::string(what) + ": grid points must be strictly increasing");
    }
}

SweepPoint edit_and_score(const Checkpoint& ck, std::span<const EditSample> edits, std::span<const EditSample> loc,
                          const ScenConfig& cfg, double value) {
    const EditRun run = sequential_edit(ck, edits, cfg);
    Evaluator ev(ck, run.system, cfg.neuron_input);
    SweepPoint p;
    p.value = value;
    p.experts = run.system.experts.size();
    p.short_last_group = edits.size() % cfg.group_size != 0;
    p.report = evaluate(ev, edits, loc, cfg.theta, false);
    const Tensor m = activation_matrix(run.system.bank, run.cache.matrix(ck.config.d_ffn));
    p.stepwise = stepwise_fraction(m, cfg.group_size);
    return p;
}

}  // namespace

std::vector<double> default_theta_grid() {
    std::vector<double> g;
    for (int i = 60; i <= 70; ++i) g.push_back(i / 100.0);
    return g;
}

std::vector<std::size_t> default_sweep_layers(std::size_t n_layers) {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < n_layers; l += 2) out.push_back(l);
    if (n_layers > 0 && out.back() != n_layers - 1) out.push_back(n_layers - 1);
    return out;
}

SweepResult run_threshold_sweep(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode,
                                std::span<const EditSample> edits, std::span<const EditSample> loc,
                                std::span<const double> grid) {
    require_strictly_increasing(grid, "threshold sweep");
    for (double t : grid) {
        if (!(t > 0.0 && t < 1.0)) throw Error("threshold sweep: theta must lie in (0, 1)");
    }
    Evaluator ev(ck, sys, mode);
    SweepResult r;
    r.axis = "theta";
    for (double t : grid) {
        SweepPoint p;
        p.value = t;
        p.experts = sys.experts.size();
        p.report = evaluate(ev, edits, loc, static_cast<float>(t), false);
        r.points.push_back(std::move(p));
    }
    return r;
}

SweepResult run_layer_sweep(const Checkpoint& ck, std::span<const EditSample> edits, std::span<const EditSample> loc,
                            const ScenConfig& cfg, std::span<const std::size_t> layers, const SweepProgress& on_point) {
    require_strictly_increasing(layers, "layer sweep");
    SweepResult r;
    r.axis = "layer";
    for (std::size_t l : layers) {
        ScenConfig c = cfg;
        c.layer = l;
        r.points.push_back(edit_and_score(ck, edits, loc, c, static_cast<double>(l)));
        if (on_point) on_point(r.points.back());
    }
    return r;
}

SweepResult run_compression_sweep(const Checkpoint& ck, std::span<const EditSample> edits,
                                  std::span<const EditSample> loc, const ScenConfig& cfg,
                                  std::span<const std::size_t> group_sizes, const SweepProgress& on_point) {
    require_strictly_increasing(group_sizes, "compression sweep");
    SweepResult r;
    r.axis = "group_size";
    for (std::size_t k : group_sizes) {
        ScenConfig c = cfg;
        c.group_size = k;
        r.points.push_back(edit_and_score(ck, edits, loc, c, static_cast<double>(k)));
        if (on_point) on_point(r.points.back());
    }
    return r;
}

std::size_t adjacent_inversions(std::span<const double> values, bool non_increasing) {
    std::size_t n = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (non_increasing ? values[i] > values[i - 1] : values[i] < values[i - 1]) ++n;
    }
    return n;
}

TrendCheck threshold_trend(const SweepResult& r, std::size_t slack) {
    std::vector<double> rel, gen, loc;
    for (const SweepPoint& p : r.points) {
        rel.push_back(p.report.reliability.percent);
        gen.push_back(p.report.generality.percent);
        loc.push_back(p.report.locality.percent);
    }
    TrendCheck t;
    t.reliability_inversions = adjacent_inversions(rel, true);
    t.generality_inversions = adjacent_inversions(gen, true);
    t.locality_inversions = adjacent_inversions(loc, false);
    t.pass = t.reliability_inversions <= slack && t.generality_inversions <= slack && t.locality_inversions <= slack;
    return t;
}

std::string SweepResult::to_json() const {
    nlohmann::ordered_json j;
    j["axis"] = axis;
    auto pts = nlohmann::ordered_json::array();
    for (const SweepPoint& p : points) {
        nlohmann::ordered_json q;
        q["value"] = p.value;
        q["experts"] = p.experts;
        q["short_last_group"] = p.short_last_group;
        q["stepwise"] = p.stepwise;
        q["report"] = nlohmann::ordered_json::parse(p.report.to_json());
        pts.push_back(std::move(q));
    }
    j["points"] = std::move(pts);
    return j.dump(2) + "\n";
}

std::string SweepResult::to_csv() const {
    std::string out = axis + ",experts,reliability,generality,locality,unrouted,stepwise\n";
    char buf[256];
    for (const SweepPoint& p : points) {
        std::snprintf(buf, sizeof buf, "%g,%zu,%.4f,%.4f,%.4f,%.4f,%.4f\n", p.value, p.experts,
                      p.report.reliability.percent, p.report.generality.percent, p.report.locality.percent,
                      p.report.locality.unrouted_percent, p.stepwise);
        out += buf;
    }
    return out;
}

}  // namespace scen
