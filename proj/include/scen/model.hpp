#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "scen/autodiff.hpp"
#include "scen/tokenizer.hpp"

namespace scen {

// Only the pre-norm variant exists; the value is still written to the
// checkpoint header so files are self-describing.
enum class NormPlacement : std::uint8_t { pre_norm = 0 };

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_ffn = 256;  // FNN intermediate width h
    std::size_t max_seq_len = 32;
    Nonlinearity nonlinearity = Nonlinearity::gelu;
    NormPlacement norm = NormPlacement::pre_norm;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, wk, wv, wo;  // d_model x d_model
    Tensor ln2_gain, ln2_bias;
    Tensor w_up;    // d_model x d_ffn
    Tensor w_down;  // d_ffn x d_model
};

struct ModelWeights {
    Tensor tok_emb;  // vocab x d_model
    Tensor pos_emb;  // max_seq_len x d_model
    std::vector<LayerWeights> layers;
    Tensor lnf_gain, lnf_bias;
    Tensor w_out;  // d_model x vocab

    // Canonical order used for parameter ids, initialisation streams and the
    // checkpoint blob: tok_emb, pos_emb, then per layer ln1_gain, ln1_bias,
    // wq, wk, wv, wo, ln2_gain, ln2_bias, w_up, w_down, then lnf_gain,
    // lnf_bias, w_out.
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
};

struct Checkpoint {
    ModelConfig config;
    Tokenizer tokenizer;
    ModelWeights weights;

    // Fresh model. Matrices and embeddings are N(0, 0.02^2) (residual output
    // projections additionally scaled by 1/sqrt(2 n_layers)); gains are 1 and
    // biases 0. Element e of tensor i draws CounterRng(seed, i).normal(e).
    static Checkpoint init(ModelConfig config, Tokenizer tokenizer);
};

// Substitutes `w_down` for layer `layer`'s W_down in a forward pass.
struct FnnOverride {
    std::size_t layer = 0;
    const Tensor* w_down = nullptr;
};

struct TapRequest {
    std::size_t layer = 0;
};

// FNN input of `layer` at the last position: x_att is what the FNN sub-block
// receives (after attention, residual add and the pre-FNN norm); `up` is
// x_att W_up and `hidden` is the nonlinearity applied to `up`.
struct TapResult {
    std::size_t layer = 0;
    std::size_t position = 0;
    std::vector<float> x_att;
    std::vector<float> up;
    std::vector<float> hidden;
};

struct ForwardOutput {
    Tensor logits;  // tokens x vocab
    std::optional<TapResult> tap;
};

// Builds the transformer on a Graph. Every weight is bound either frozen or
// as a parameter whose id is its index in ModelWeights::tensors().
class TransformerGraph {
   public:
    enum class Bind { frozen, trainable };
    struct FnnInput {
        Var x_att, up, hidden;
    };

    TransformerGraph(Graph& g, const Checkpoint& ck, Bind bind = Bind::frozen);

    Var embed(std::span<const TokenId> tokens, std::span<const std::size_t> segments);
    Var attention(std::size_t layer, Var x);  // x + Attn(LN1(x))
    FnnInput fnn_input(std::size_t layer, Var x);
    Var fnn_output(Var x, Var hidden, Var w_down) { return g_.add(x, g_.matmul(hidden, w_down)); }
    Var logits(Var x);
    Var weight(const Tensor& t);

    // Segments used by attention; set by embed() or explicitly for graphs
    // that resume from cached intermediate activations.
    void set_segments(std::vector<std::size_t> segments) { segments_ = std::move(segments); }

   private:
    Graph& g_;
    const Checkpoint& ck_;
    Bind bind_;
    std::map<const Tensor*, ParamId> ids_;
    std::vector<std::size_t> segments_;
};

ForwardOutput forward(const Checkpoint& ck, std::span<const TokenId> tokens,
                      const std::optional<FnnOverride>& fnn_override = std::nullopt,
                      const std::optional<TapRequest>& tap = std::nullopt);

// [BOS] + encode(text)
std::vector<TokenId> prompt_tokens(const Tokenizer& tok, std::string_view text);

// Argmax decoding (ties -> lowest id) until EOS or max_new tokens. The
// returned answer excludes EOS.
std::vector<TokenId> greedy_decode(const Checkpoint& ck, std::span<const TokenId> context, std::size_t max_new,
                                   const std::optional<FnnOverride>& fnn_override = std::nullopt);

// exp(mean next-token NLL) over positions 1..n-1 of `tokens`.
double perplexity(const Checkpoint& ck, std::span<const TokenId> tokens,
                  const std::optional<FnnOverride>& fnn_override = std::nullopt);

std::size_t argmax_lowest(std::span<const float> row);

// Greedy answer to a text prompt, detokenised and whitespace-normalised.
// Decoding runs until EOS or the sequence limit.
std::string greedy_answer(const Checkpoint& ck, std::string_view prompt,
                          const std::optional<FnnOverride>& fnn_override = std::nullopt);

}  // namespace scen
