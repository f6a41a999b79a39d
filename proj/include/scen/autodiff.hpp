#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scen/tensor.hpp"

namespace scen {

using ParamId = std::size_t;
using GradMap = std::map<ParamId, Tensor>;

// Handle to a node of a Graph. Only meaningful for the graph that created it.
struct Var {
    std::uint32_t id = 0;
};

enum class Nonlinearity : std::uint8_t { relu = 0, gelu = 1 };

// Tape of operations recorded in execution order, so node inputs always
// precede the node. Leaves are either trainable parameters (identified by a
// caller-chosen ParamId) or frozen values; gradient flows only along nodes
// that depend on at least one trainable leaf, so frozen subgraphs cost no
// backward work and never receive gradient.
//
// Borrowed leaves reference caller storage, which must outlive the graph.
class Graph {
   public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    Var constant(Tensor value);
    Var frozen(const Tensor& value);
    Var parameter(ParamId id, const Tensor& value);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }
    std::string_view op_name(Var v) const;

    // ---- primitives ----
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var add_row(Var a, Var bias);  // bias is 1 x cols(a), added to every row
    Var scale(Var a, float s);
    Var add_scalar(Var a, float s);
    Var clamp(Var a, float lo, float hi);
    Var exp(Var a);
    Var sigmoid(Var a);
    Var relu(Var a);
    Var gelu(Var a);
    Var activation(Var a, Nonlinearity kind);
    Var softmax_rows(Var a);
    Var layer_norm(Var x, Var gain, Var bias, float eps = 1e-5f);
    Var embedding(Var table, std::span<const int> ids);
    // Mean token cross-entropy over rows whose target is >= 0; rows with a
    // negative target are ignored. Accumulates in double.
    Var cross_entropy(Var logits, std::span<const int> targets);
    Var concat_rows(std::span<const Var> parts);
    Var select_rows(Var a, std::span<const std::size_t> rows);
    Var mean(Var a);
    Var sum(Var a);
    // Multi-head causal self-attention over packed sequences: rows are split
    // into consecutive segments and a row attends only to rows at or before
    // it within its own segment.
    Var causal_attention(Var q, Var k, Var v, std::size_t n_heads, std::span<const std::size_t> segment_lengths);

    // Reverse sweep from a 1x1 loss. Returns gradients for trainable leaves
    // only, keyed by ParamId (summed if a ParamId was bound more than once).
    // `context` is prepended to the non-finite-loss error message.
    GradMap backward(Var loss, std::string_view context = {});

   private:
    using BackwardFn = std::function<void(Graph&, std::uint32_t)>;

    struct Node {
        const char* op = "";
        Tensor owned;
        const Tensor* borrowed = nullptr;
        std::vector<std::uint32_t> inputs;
        std::optional<ParamId> param;
        bool needs_grad = false;
        BackwardFn backward;
        Tensor grad;
        // op-specific saved state (probabilities, normalisers, ...)
        std::vector<float> saved;
        std::vector<std::size_t> index;
    };

    const Tensor& val(std::uint32_t id) const;
    Tensor& grad(std::uint32_t id);
    bool wants(std::uint32_t id) const { return nodes_[id].needs_grad; }
    Var push(const char* op, Tensor out, std::vector<std::uint32_t> inputs, BackwardFn fn);
    Node& node(Var v) { return nodes_.at(v.id); }
    void check(Var v) const;

    std::vector<Node> nodes_;
};

}  // namespace scen
