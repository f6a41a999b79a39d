#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scen/autodiff.hpp"
#include "scen/gradcheck.hpp"
#include "scen/rng.hpp"

namespace gradcases {

using namespace scen;

inline Tensor random_tensor(RngStream& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
    Tensor t(r, c);
    for (float& v : t.data) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
    return t;
}

// Random inputs in [-2,2] kept at least `gap` away from a kink at zero.
inline Tensor random_away_from_zero(RngStream& rng, std::size_t r, std::size_t c, double gap) {
    Tensor t = random_tensor(rng, r, c);
    for (float& v : t.data) {
        while (std::abs(v) < gap) v = static_cast<float>(-2.0 + 4.0 * rng.uniform());
    }
    return t;
}

// Projects an op output onto fixed random weights so every output element
// contributes to the scalar being differentiated.
inline Var project(Graph& g, Var y, const Tensor& w) { return g.sum(g.mul(y, g.constant(w))); }

struct OpCase {
    std::string name;
    std::size_t rows, cols;
    double kink_gap;  // 0 for smooth ops
    ScalarGraphFn build;
};

constexpr double kEps = 1e-2;

// One case per primitive (and per differentiable input where it matters).
struct PrimitiveCases {
    RngStream wr{11, 1};
    Tensor w34 = random_tensor(wr, 3, 4, -1, 1);
    Tensor w35 = random_tensor(wr, 3, 5, -1, 1);
    Tensor w53 = random_tensor(wr, 5, 3, -1, 1);
    Tensor w54 = random_tensor(wr, 5, 4, -1, 1);
    Tensor w64 = random_tensor(wr, 6, 4, -1, 1);
    Tensor w74 = random_tensor(wr, 7, 4, -1, 1);
    Tensor w24 = random_tensor(wr, 2, 4, -1, 1);
    Tensor other34 = random_tensor(wr, 3, 4);
    Tensor mat45 = random_tensor(wr, 4, 5, -1, 1);
    Tensor mat23 = random_tensor(wr, 2, 3, -1, 1);
    Tensor gain = random_tensor(wr, 1, 4, 0.5, 1.5);
    Tensor bias = random_tensor(wr, 1, 4, -0.5, 0.5);
    Tensor kv64 = random_tensor(wr, 6, 4);
    Tensor q54 = random_tensor(wr, 5, 4);
    std::vector<int> ids{2, 0, 2, 3, 1};
    std::vector<int> targets{4, -1, 0};
    std::vector<std::size_t> picks{2, 0, 2};
    std::vector<std::size_t> two_segments{4, 2};
    std::vector<std::size_t> one_segment{5};

    std::vector<OpCase> cases;

    PrimitiveCases(const PrimitiveCases&) = delete;  // the cases capture this
    PrimitiveCases() {
        cases = {
            {"matmul_lhs", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.matmul(x, g.constant(mat45)), w35); }},
            {"matmul_rhs", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.matmul(g.constant(mat23), x), w24); }},
            {"add", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.add(x, g.constant(other34)), w34); }},
            {"sub", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.sub(g.constant(other34), x), w34); }},
            {"mul", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.mul(x, g.constant(other34)), w34); }},
            {"add_row_bias", 1, 4, 0, [&](Graph& g, Var x) { return project(g, g.add_row(g.constant(other34), x), w34); }},
            {"scale", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.scale(x, -1.7f), w34); }},
            {"add_scalar", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.add_scalar(x, 0.3f), w34); }},
            {"exp", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.exp(g.scale(x, 0.5f)), w34); }},
            {"sigmoid", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.sigmoid(x), w34); }},
            {"relu", 3, 4, 0.05, [&](Graph& g, Var x) { return project(g, g.relu(x), w34); }},
            {"gelu", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.gelu(x), w34); }},
            // kinks at +-1.5 are avoided by shifting the sample away from them
            {"clamp", 3, 4, 0.05, [&](Graph& g, Var x) { return project(g, g.clamp(g.scale(x, 1.3f), -1.5f, 1.5f), w34); }},
            {"softmax_rows", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.softmax_rows(x), w34); }},
            {"layer_norm_x", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.layer_norm(x, g.constant(gain), g.constant(bias)), w34); }},
            {"layer_norm_gain", 1, 4, 0, [&](Graph& g, Var x) { return project(g, g.layer_norm(g.constant(other34), x, g.constant(bias)), w34); }},
            {"layer_norm_bias", 1, 4, 0, [&](Graph& g, Var x) { return project(g, g.layer_norm(g.constant(other34), g.constant(gain), x), w34); }},
            {"embedding", 4, 3, 0, [&](Graph& g, Var x) { return project(g, g.embedding(x, ids), w53); }},
            {"cross_entropy", 3, 5, 0, [&](Graph& g, Var x) { return g.cross_entropy(x, targets); }},
            {"concat_rows", 2, 4, 0, [&](Graph& g, Var x) { const std::vector<Var> parts{x, g.constant(other34), x}; return project(g, g.concat_rows(parts), w74); }},
            {"select_rows", 3, 4, 0, [&](Graph& g, Var x) { return project(g, g.select_rows(x, picks), w34); }},
            {"mean", 3, 4, 0, [&](Graph& g, Var x) { return g.mean(g.mul(x, x)); }},
            {"sum", 3, 4, 0, [&](Graph& g, Var x) { return g.sum(g.mul(x, g.constant(w34))); }},
            {"causal_attention_q", 6, 4, 0, [&](Graph& g, Var x) {
                 return project(g, g.causal_attention(x, g.constant(kv64), g.constant(kv64), 2, two_segments), w64); }},
            {"causal_attention_kv", 5, 4, 0, [&](Graph& g, Var x) {
                 return project(g, g.causal_attention(g.constant(q54), x, g.scale(x, 0.5f), 2, one_segment), w54); }},
    };
    }

    // Worst relative error over `trials` random points.
    double worst(const OpCase& c, int trials) const {
        RngStream rng(100, std::hash<std::string>{}(c.name));
        double w = 0.0;
        for (int trial = 0; trial < trials; ++trial) {
            Tensor point = c.kink_gap > 0 ? random_away_from_zero(rng, c.rows, c.cols, c.kink_gap)
                                          : random_tensor(rng, c.rows, c.cols);
            if (c.name == "clamp") {
                for (float& v : point.data) {
                    while (std::abs(std::abs(1.3f * v) - 1.5f) < 0.05f) v = static_cast<float>(-2.0 + 4.0 * rng.uniform());
                }
            }
            w = std::max(w, finite_diff_check(c.build, point, kEps).max_rel_error);
        }
        return w;
    }
};

}  // namespace gradcases
