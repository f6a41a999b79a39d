#include "scen/model.hpp"

#include <cmath>

#include "scen/rng.hpp"

namespace scen {

void ModelConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v < 1) throw Error(std::string("model config: ") + name + " must be >= 1");
    };
    positive(vocab_size, "vocab_size");
    positive(d_model, "d_model");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(d_ffn, "d_ffn");
    positive(max_seq_len, "max_seq_len");
    if (d_model % n_heads != 0) throw Error("model config: d_model must be divisible by n_heads");
    if (nonlinearity != Nonlinearity::relu && nonlinearity != Nonlinearity::gelu) {
        throw Error("model config: unknown nonlinearity");
    }
}

std::vector<Tensor*> ModelWeights::tensors() {
    std::vector<Tensor*> out{&tok_emb, &pos_emb};
    for (LayerWeights& l : layers) {
        for (Tensor* t : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.wk, &l.wv, &l.wo, &l.ln2_gain, &l.ln2_bias, &l.w_up,
                          &l.w_down}) {
            out.push_back(t);
        }
    }
    out.insert(out.end(), {&lnf_gain, &lnf_bias, &w_out});
    return out;
}

std::vector<const Tensor*> ModelWeights::tensors() const {
    auto mut = const_cast<ModelWeights*>(this)->tensors();
    return std::vector<const Tensor*>(mut.begin(), mut.end());
}

Checkpoint Checkpoint::init(ModelConfig config, Tokenizer tokenizer) {
    if (config.vocab_size == 0) config.vocab_size = tokenizer.size();
    config.validate();
    if (config.vocab_size < tokenizer.size()) throw Error("model config: vocab_size smaller than tokenizer");

    Checkpoint ck;
    ck.config = config;
    ck.tokenizer = std::move(tokenizer);
    const std::size_t d = config.d_model, h = config.d_ffn, v = config.vocab_size;
    ModelWeights& w = ck.weights;
    w.tok_emb = Tensor(v, d);
    w.pos_emb = Tensor(config.max_seq_len, d);
    w.layers.resize(config.n_layers);
    for (LayerWeights& l : w.layers) {
        l.ln1_gain = Tensor(1, d, 1.0f);
        l.ln1_bias = Tensor(1, d);
        l.wq = Tensor(d, d);
        l.wk = Tensor(d, d);
        l.wv = Tensor(d, d);
        l.wo = Tensor(d, d);
        l.ln2_gain = Tensor(1, d, 1.0f);
        l.ln2_bias = Tensor(1, d);
        l.w_up = Tensor(d, h);
        l.w_down = Tensor(h, d);
    }
    w.lnf_gain = Tensor(1, d, 1.0f);
    w.lnf_bias = Tensor(1, d);
    w.w_out = Tensor(d, v);

    const double std_base = 0.02;
    const double std_resid = std_base / std::sqrt(2.0 * static_cast<double>(config.n_layers));
    auto tensors = w.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        Tensor* t = tensors[i];
        if (t->rows == 1) continue;  // gains and biases keep their constants
        bool resid = false;
        for (LayerWeights& l : w.layers) resid = resid || t == &l.wo || t == &l.w_down;
        const double s = resid ? std_resid : std_base;
        const CounterRng rng(config.seed, i);
        for (std::size_t e = 0; e < t->size(); ++e) t->data[e] = static_cast<float>(s * rng.normal(e));
    }
    return ck;
}

// ---------------------------------------------------------------- graph builder

TransformerGraph::TransformerGraph(Graph& g, const Checkpoint& ck, Bind bind) : g_(g), ck_(ck), bind_(bind) {
    if (bind_ == Bind::trainable) {
        const auto ts = ck_.weights.tensors();
        for (std::size_t i = 0; i < ts.size(); ++i) ids_[ts[i]] = i;
    }
}

Var TransformerGraph::weight(const Tensor& t) {
    if (bind_ == Bind::trainable) {
        auto it = ids_.find(&t);
        if (it != ids_.end()) return g_.parameter(it->second, t);
    }
    return g_.frozen(t);
}

Var TransformerGraph::embed(std::span<const TokenId> tokens, std::span<const std::size_t> segments) {
    segments_.assign(segments.begin(), segments.end());
    std::vector<int> positions;
    positions.reserve(tokens.size());
    for (std::size_t len : segments) {
        if (len > ck_.config.max_seq_len) {
            throw ShapeError("embed", "sequence length " + std::to_string(len),
                             "max_seq_len " + std::to_string(ck_.config.max_seq_len));
        }
        for (std::size_t p = 0; p < len; ++p) positions.push_back(static_cast<int>(p));
    }
    if (positions.size() != tokens.size()) {
        throw ShapeError("embed", "tokens[" + std::to_string(tokens.size()) + "]",
                         "segments sum " + std::to_string(positions.size()));
    }
    const ModelWeights& w = ck_.weights;
    return g_.add(g_.embedding(weight(w.tok_emb), tokens), g_.embedding(weight(w.pos_emb), positions));
}

Var TransformerGraph::attention(std::size_t layer, Var x) {
    const LayerWeights& l = ck_.weights.layers.at(layer);
    const Var n = g_.layer_norm(x, weight(l.ln1_gain), weight(l.ln1_bias));
    const Var q = g_.matmul(n, weight(l.wq));
    const Var k = g_.matmul(n, weight(l.wk));
    const Var v = g_.matmul(n, weight(l.wv));
    const Var a = g_.causal_attention(q, k, v, ck_.config.n_heads, segments_);
    return g_.add(x, g_.matmul(a, weight(l.wo)));
}

TransformerGraph::FnnInput TransformerGraph::fnn_input(std::size_t layer, Var x) {
    const LayerWeights& l = ck_.weights.layers.at(layer);
    FnnInput f;
    f.x_att = g_.layer_norm(x, weight(l.ln2_gain), weight(l.ln2_bias));
    f.up = g_.matmul(f.x_att, weight(l.w_up));
    f.hidden = g_.activation(f.up, ck_.config.nonlinearity);
    return f;
}

Var TransformerGraph::logits(Var x) {
    const ModelWeights& w = ck_.weights;
    return g_.matmul(g_.layer_norm(x, weight(w.lnf_gain), weight(w.lnf_bias)), weight(w.w_out));
}

// ---------------------------------------------------------------- inference

ForwardOutput forward(const Checkpoint& ck, std::span<const TokenId> tokens,
                      const std::optional<FnnOverride>& fnn_override, const std::optional<TapRequest>& tap) {
    const std::size_t n_layers = ck.config.n_layers;
    if (tokens.empty()) throw Error("forward: empty token sequence");
    if (tokens.size() > ck.config.max_seq_len) {
        throw Error("forward: " + std::to_string(tokens.size()) + " tokens exceed max_seq_len " +
                    std::to_string(ck.config.max_seq_len));
    }
    if (fnn_override) {
        if (fnn_override->layer >= n_layers) {
            throw Error("forward: override layer " + std::to_string(fnn_override->layer) + " out of range");
        }
        const Tensor& base = ck.weights.layers[fnn_override->layer].w_down;
        if (fnn_override->w_down == nullptr || !fnn_override->w_down->same_shape(base)) {
            throw ShapeError("forward override", base.shape_str(),
                             fnn_override->w_down ? fnn_override->w_down->shape_str() : "null");
        }
    }
    if (tap && tap->layer >= n_layers) throw Error("forward: tap layer " + std::to_string(tap->layer) + " out of range");

    Graph g;
    TransformerGraph tg(g, ck);
    const std::size_t segment[] = {tokens.size()};
    Var x = tg.embed(tokens, segment);
    ForwardOutput out;
    for (std::size_t l = 0; l < n_layers; ++l) {
        x = tg.attention(l, x);
        const auto f = tg.fnn_input(l, x);
        const bool swap = fnn_override && fnn_override->layer == l;
        const Var w_down = swap ? g.frozen(*fnn_override->w_down) : tg.weight(ck.weights.layers[l].w_down);
        if (tap && tap->layer == l) {
            const std::size_t last = tokens.size() - 1;
            TapResult r;
            r.layer = l;
            r.position = last;
            auto copy_row = [&](Var v) {
                auto row = g.value(v).row(last);
                return std::vector<float>(row.begin(), row.end());
            };
            r.x_att = copy_row(f.x_att);
            r.up = copy_row(f.up);
            r.hidden = copy_row(f.hidden);
            out.tap = std::move(r);
        }
        x = tg.fnn_output(x, f.hidden, w_down);
    }
    out.logits = g.value(tg.logits(x));
    return out;
}

std::vector<TokenId> prompt_tokens(const Tokenizer& tok, std::string_view text) {
    std::vector<TokenId> ids{Tokenizer::kBos};
    const Encoding e = tok.encode(text);
    ids.insert(ids.end(), e.ids.begin(), e.ids.end());
    return ids;
}

std::size_t argmax_lowest(std::span<const float> row) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) best = i;
    }
    return best;
}

std::vector<TokenId> greedy_decode(const Checkpoint& ck, std::span<const TokenId> context, std::size_t max_new,
                                   const std::optional<FnnOverride>& fnn_override) {
    std::vector<TokenId> seq(context.begin(), context.end());
    std::vector<TokenId> answer;
    for (std::size_t step = 0; step < max_new && seq.size() < ck.config.max_seq_len; ++step) {
        const ForwardOutput out = forward(ck, seq, fnn_override);
        const auto next = static_cast<TokenId>(argmax_lowest(out.logits.row(out.logits.rows - 1)));
        if (next == Tokenizer::kEos) break;
        answer.push_back(next);
        seq.push_back(next);
    }
    return answer;
}

double perplexity(const Checkpoint& ck, std::span<const TokenId> tokens,
                  const std::optional<FnnOverride>& fnn_override) {
    if (tokens.size() < 2) throw Error("perplexity: need at least 2 tokens, got " + std::to_string(tokens.size()));
    const ForwardOutput out = forward(ck, tokens, fnn_override);
    double nll = 0.0;
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
        auto row = out.logits.row(i);
        double mx = row[0];
        for (float v : row) mx = std::max(mx, static_cast<double>(v));
        double z = 0.0;
        for (float v : row) z += std::exp(static_cast<double>(v) - mx);
        nll += std::log(z) + mx - row[static_cast<std::size_t>(tokens[i + 1])];
    }
    return std::exp(nll / static_cast<double>(tokens.size() - 1));
}

std::string greedy_answer(const Checkpoint& ck, std::string_view prompt,
                          const std::optional<FnnOverride>& fnn_override) {
    const auto ctx = prompt_tokens(ck.tokenizer, prompt);
    const std::size_t room = ck.config.max_seq_len - std::min(ck.config.max_seq_len, ctx.size());
    return normalize_space(ck.tokenizer.decode(greedy_decode(ck, ctx, room, fnn_override)));
}

}  // namespace scen
