#include "scen/train.hpp"

#include <cmath>
#include <numeric>

#include "scen/optim.hpp"
#include "scen/rng.hpp"

namespace scen {

namespace {

TrainExample make_example(const Tokenizer& tok, const std::string& prompt, const std::string& answer,
                          bool loss_on_prompt) {
    TrainExample ex;
    ex.tokens = prompt_tokens(tok, prompt);
    ex.answer_start = loss_on_prompt ? 1 : ex.tokens.size();
    const Encoding a = tok.encode(answer);
    ex.tokens.insert(ex.tokens.end(), a.ids.begin(), a.ids.end());
    ex.tokens.push_back(Tokenizer::kEos);
    return ex;
}

float scheduled_lr(const TrainOptions& o, std::size_t step) {
    if (step < o.warmup_steps) return o.lr * static_cast<float>(step + 1) / static_cast<float>(o.warmup_steps);
    const std::size_t span = o.steps > o.warmup_steps ? o.steps - o.warmup_steps : 1;
    const double progress = static_cast<double>(step - o.warmup_steps) / static_cast<double>(span);
    const double cosine = 0.5 * (1.0 + std::cos(3.141592653589793 * std::min(1.0, progress)));
    return static_cast<float>(o.lr * (o.final_lr_fraction + (1.0 - o.final_lr_fraction) * cosine));
}

}  // namespace

std::vector<TrainExample> qa_examples(const Tokenizer& tok, std::span<const EditSample> samples, bool with_rewrites) {
    std::vector<TrainExample> out;
    for (const EditSample& s : samples) {
        out.push_back(make_example(tok, s.prompt, s.answer, false));
        if (!with_rewrites) continue;
        for (const std::string& r : s.rewrites) out.push_back(make_example(tok, r, s.answer, false));
    }
    return out;
}

std::vector<TrainExample> text_examples(const Tokenizer& tok, std::span<const EditSample> samples) {
    std::vector<TrainExample> out;
    for (const EditSample& s : samples) out.push_back(make_example(tok, s.prompt, s.answer, true));
    return out;
}

PackedBatch pack(std::span<const TrainExample* const> examples) {
    PackedBatch b;
    for (const TrainExample* ex : examples) {
        const std::size_t n = ex->tokens.size();
        b.tokens.insert(b.tokens.end(), ex->tokens.begin(), ex->tokens.end());
        b.segments.push_back(n);
        for (std::size_t i = 0; i < n; ++i) {
            const bool scored = i + 1 < n && i + 1 >= ex->answer_start;
            b.targets.push_back(scored ? ex->tokens[i + 1] : -1);
        }
    }
    return b;
}

TrainReport train_model(Checkpoint& ck, std::span<const TrainExample> examples, const TrainOptions& opts) {
    if (examples.empty()) throw Error("train: empty corpus");
    for (const TrainExample& ex : examples) {
        if (ex.tokens.size() > ck.config.max_seq_len) {
            throw Error("train: example of " + std::to_string(ex.tokens.size()) + " tokens exceeds max_seq_len");
        }
    }

    std::map<ParamId, Tensor*> params;
    const auto tensors = ck.weights.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) params[i] = tensors[i];

    Adam adam(AdamHyper{opts.lr});
    std::vector<std::size_t> order(examples.size());
    std::size_t cursor = order.size();  // forces a shuffle on the first step
    std::size_t epoch = 0;
    const std::size_t batch = std::min(opts.batch_size, examples.size());

    TrainReport report;
    std::vector<const TrainExample*> picked;
    for (std::size_t step = 0; step < opts.steps; ++step) {
        picked.clear();
        while (picked.size() < batch) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                RngStream(opts.seed, 1000 + epoch++).shuffle(order);
                cursor = 0;
            }
            picked.push_back(&examples[order[cursor++]]);
        }
        const PackedBatch b = pack(picked);

        Graph g;
        TransformerGraph tg(g, ck, TransformerGraph::Bind::trainable);
        Var x = tg.embed(b.tokens, b.segments);
        for (std::size_t l = 0; l < ck.config.n_layers; ++l) {
            x = tg.attention(l, x);
            const auto f = tg.fnn_input(l, x);
            x = tg.fnn_output(x, f.hidden, tg.weight(ck.weights.layers[l].w_down));
        }
        const Var loss = g.cross_entropy(tg.logits(x), b.targets);
        const float lv = g.value(loss).item();
        GradMap grads;
        try {
            grads = g.backward(loss, "train step " + std::to_string(step));
        } catch (const NonFiniteError& e) {
            throw TrainingDiverged(step, e.what());
        }
        adam.set_lr(scheduled_lr(opts, step));
        adam.step(params, grads);

        if (step == 0) report.initial_loss = lv;
        report.final_loss = lv;
        report.losses.push_back(lv);
        if (opts.log_every > 0 && opts.on_log && (step % opts.log_every == 0 || step + 1 == opts.steps)) {
            opts.on_log(step, lv);
        }
    }
    report.steps = opts.steps;
    return report;
}

BaseTrainResult train_base(const Tokenizer& tokenizer, std::span<const EditSample> qa_corpus,
                           std::span<const EditSample> text_corpus, ModelConfig config, const TrainOptions& opts) {
    config.vocab_size = tokenizer.size();
    BaseTrainResult res{Checkpoint::init(config, tokenizer), {}};
    std::vector<TrainExample> examples = qa_examples(tokenizer, qa_corpus, true);
    const auto text = text_examples(tokenizer, text_corpus);
    examples.insert(examples.end(), text.begin(), text.end());
    res.report = train_model(res.checkpoint, examples, opts);
    return res;
}

}  // namespace scen
