#include "scen/editor.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "scen/train.hpp"

namespace scen {

namespace {

constexpr float kExpClamp = 30.0f;

void require_known_words(const Tokenizer& tok, const EditSample& s) {
    for (const std::string* text : {&s.prompt, &s.answer}) {
        const Encoding e = tok.encode(*text);
        if (e.has_unknown()) {
            throw VocabularyMismatch("sample '" + s.id + "' uses " + std::to_string(e.unknown) +
                                     " word(s) outside the checkpoint vocabulary");
        }
    }
}

// Layer-`layer` state of packed sequences: the residual stream entering the
// FNN sub-block and the FNN hidden activations.
struct PrefixState {
    Tensor residual;
    Tensor hidden;
};

PrefixState run_prefix(const Checkpoint& ck, std::span<const TokenId> tokens, std::span<const std::size_t> segments,
                       std::size_t layer) {
    Graph g;
    TransformerGraph tg(g, ck);
    Var x = tg.embed(tokens, segments);
    for (std::size_t l = 0; l < layer; ++l) {
        x = tg.attention(l, x);
        const auto f = tg.fnn_input(l, x);
        x = tg.fnn_output(x, f.hidden, tg.weight(ck.weights.layers[l].w_down));
    }
    x = tg.attention(layer, x);
    const auto f = tg.fnn_input(layer, x);
    return {g.value(x), g.value(f.hidden)};
}

float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

}  // namespace

void ScenConfig::validate() const {
    if (!(alpha >= 0.0f) || !(beta >= 0.0f)) throw Error("scen config: alpha and beta must be >= 0");
    if (!(m > 0.0f)) throw Error("scen config: m must be > 0");
    if (!(theta > 0.0f && theta < 1.0f)) throw Error("scen config: theta must lie in (0, 1)");
    if (group_size < 1) throw Error("scen config: group_size must be >= 1");
    if (!(expert.lr > 0.0f) || !(neuron.lr > 0.0f)) throw Error("scen config: learning rates must be > 0");
    if (neuron_input != NeuronInput::pre_activation && neuron_input != NeuronInput::post_activation) {
        throw Error("scen config: unknown neuron_input mode");
    }
}

void ScenConfig::validate_for(const ModelConfig& model) const {
    validate();
    if (layer >= model.n_layers) {
        throw Error("scen config: layer " + std::to_string(layer) + " out of range for a " +
                    std::to_string(model.n_layers) + "-layer model");
    }
}

std::vector<float> capture_fnn_input(const Checkpoint& ck, std::span<const TokenId> tokens, std::size_t layer,
                                     NeuronInput mode) {
    if (tokens.empty()) throw Error("capture_fnn_input: empty prompt");
    if (layer >= ck.config.n_layers) throw Error("capture_fnn_input: layer " + std::to_string(layer) + " out of range");
    if (tokens.size() > ck.config.max_seq_len) throw Error("capture_fnn_input: prompt exceeds max_seq_len");
    Graph g;
    TransformerGraph tg(g, ck);
    const std::size_t seg[] = {tokens.size()};
    Var x = tg.embed(tokens, seg);
    for (std::size_t l = 0; l < layer; ++l) {
        x = tg.attention(l, x);
        const auto f = tg.fnn_input(l, x);
        x = tg.fnn_output(x, f.hidden, tg.weight(ck.weights.layers[l].w_down));
    }
    x = tg.attention(layer, x);
    const auto f = tg.fnn_input(layer, x);
    const auto row = g.value(mode == NeuronInput::post_activation ? f.hidden : f.up).row(tokens.size() - 1);
    return {row.begin(), row.end()};
}

std::vector<float> capture_fnn_input(const Checkpoint& ck, const std::string& prompt, std::size_t layer,
                                     NeuronInput mode) {
    if (normalize_space(prompt).empty()) throw Error("capture_fnn_input: empty prompt");
    return capture_fnn_input(ck, prompt_tokens(ck.tokenizer, prompt), layer, mode);
}

// ------------------------------------------------------------ stage 1

ExpertRecord train_expert(const Checkpoint& ck, std::span<const EditSample> samples, const ScenConfig& cfg,
                          std::size_t index) {
    cfg.validate_for(ck.config);
    if (samples.empty()) throw Error("train_expert: no samples");
    for (const EditSample& s : samples) {
        validate(s);
        require_known_words(ck.tokenizer, s);
    }
    const std::size_t layer = cfg.layer;

    ExpertRecord rec;
    rec.index = index;
    rec.layer = layer;
    rec.w_down = ck.weights.layers[layer].w_down;
    for (const EditSample& s : samples) rec.member_ids.push_back(s.id);

    const auto examples = qa_examples(ck.tokenizer, samples, false);
    std::vector<const TrainExample*> ptrs;
    for (const TrainExample& e : examples) {
        if (e.tokens.size() > ck.config.max_seq_len) throw Error("train_expert: sample '" + samples[ptrs.size()].id + "' too long");
        ptrs.push_back(&e);
    }
    const PackedBatch batch = pack(ptrs);
    // Everything below the swapped matrix is frozen, so it is computed once.
    const PrefixState prefix = run_prefix(ck, batch.tokens, batch.segments, layer);

    AdamMoments moments;
    const AdamHyper hyper{cfg.expert.lr};
    for (std::size_t step = 0;; ++step) {
        Graph g;
        TransformerGraph tg(g, ck);
        tg.set_segments(batch.segments);
        Var x = tg.fnn_output(g.frozen(prefix.residual), g.frozen(prefix.hidden), g.parameter(0, rec.w_down));
        for (std::size_t l = layer + 1; l < ck.config.n_layers; ++l) {
            x = tg.attention(l, x);
            const auto f = tg.fnn_input(l, x);
            x = tg.fnn_output(x, f.hidden, tg.weight(ck.weights.layers[l].w_down));
        }
        const Var loss = g.cross_entropy(tg.logits(x), batch.targets);
        rec.final_loss = g.value(loss).item();
        if (!std::isfinite(rec.final_loss)) {
            throw NonFiniteError("expert " + std::to_string(index) + " step " + std::to_string(step) +
                                 ": non-finite loss");
        }
        if (step == cfg.expert.max_steps || rec.final_loss < cfg.expert.target_loss) break;
        const GradMap grads = g.backward(loss, "expert " + std::to_string(index) + " step " + std::to_string(step));
        const Tensor& gw = grads.at(0);
        if (cfg.expert.optimizer == TrainOptimizer::adam) {
            adam_step(rec.w_down, gw, moments, hyper);
        } else {
            for (std::size_t i = 0; i < gw.size(); ++i) rec.w_down.data[i] -= cfg.expert.lr * gw.data[i];
        }
        rec.steps = step + 1;
    }

    rec.success = true;
    const FnnOverride ov{layer, &rec.w_down};
    for (const EditSample& s : samples) {
        if (greedy_answer(ck, s.prompt, ov) != normalize_space(s.answer)) rec.success = false;
    }
    return rec;
}

// ------------------------------------------------------------ stage 2

double indexing_loss(double a_t, std::span<const double> negatives, double alpha, double beta, double m) {
    auto check = [](double a) {
        // closed range: a float sigmoid saturates to exactly 0 or 1
        if (!(a >= 0.0 && a <= 1.0)) throw Error("indexing_loss: activation " + std::to_string(a) + " outside [0, 1]");
    };
    auto cexp = [](double v) { return std::exp(std::clamp(v, -double{kExpClamp}, double{kExpClamp})); };
    check(a_t);
    double loss = cexp(-a_t);
    if (negatives.empty()) return loss;
    double dis = 0.0, margin = 0.0;
    for (double a : negatives) {
        check(a);
        dis += cexp(a + alpha);
        margin += cexp(a - a_t + beta);
    }
    const double n = static_cast<double>(negatives.size());
    return loss + m * (dis / n + margin / n);
}

Var indexing_loss_graph(Graph& g, Var w, const Tensor& positives, const Tensor& negatives, const ScenConfig& cfg) {
    auto cexp = [&](Var v) { return g.exp(g.clamp(v, -kExpClamp, kExpClamp)); };
    const Var a_t = g.mean(g.sigmoid(g.matmul(g.frozen(positives), w)));
    const Var activate = cexp(g.scale(a_t, -1.0f));
    if (negatives.rows == 0) return activate;
    const Var a_neg = g.sigmoid(g.matmul(g.frozen(negatives), w));
    const Var disactivate = g.mean(cexp(g.add_scalar(a_neg, cfg.alpha)));
    const Var a_t_rows = g.matmul(g.constant(Tensor(negatives.rows, 1, 1.0f)), a_t);
    const Var margin = g.mean(cexp(g.add_scalar(g.sub(a_neg, a_t_rows), cfg.beta)));
    return g.add(activate, g.scale(g.add(disactivate, margin), cfg.m));
}

void NegativeCache::append(const std::string& id, std::vector<float> vec) {
    if (!u.empty() && vec.size() != u.front().size()) {
        throw ShapeError("negative cache", "[1x" + std::to_string(u.front().size()) + "]",
                         "[1x" + std::to_string(vec.size()) + "]");
    }
    ids.push_back(id);
    u.push_back(std::move(vec));
}

Tensor NegativeCache::matrix(std::size_t h) const {
    Tensor out(u.size(), h);
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (u[i].size() != h) throw ShapeError("negative cache", "[1x" + std::to_string(h) + "]", "[1x" + std::to_string(u[i].size()) + "]");
        std::copy(u[i].begin(), u[i].end(), out.row(i).begin());
    }
    return out;
}

NeuronRecord train_indexing_neuron(const Tensor& positives, const NegativeCache& cache, const ScenConfig& cfg,
                                   std::size_t index, float rival) {
    cfg.validate();
    if (positives.rows == 0) throw Error("train_indexing_neuron: no positive vectors");
    const std::size_t h = positives.cols;
    const Tensor negatives = cache.matrix(h);

    Tensor w(h, 1);
    AdamMoments moments;
    const AdamHyper hyper{cfg.neuron.lr};
    NeuronRecord rec;
    rec.index = index;
    auto activations = [&](const Tensor& x) {
        // per-row sigmoid(x_i . w), matching routing
        Tensor row(1, h, w.data);
        std::vector<float> out;
        for (std::size_t i = 0; i < x.rows; ++i) out.push_back(neuron_activations(row, x.row(i))[0]);
        return out;
    };
    for (std::size_t step = 0;; ++step) {
        Graph g;
        const Var loss = indexing_loss_graph(g, g.parameter(0, w), positives, negatives, cfg);
        rec.loss = g.value(loss).item();
        if (!std::isfinite(rec.loss)) {
            throw NonFiniteError("neuron " + std::to_string(index) + " step " + std::to_string(step) +
                                 ": non-finite loss");
        }
        if (step == cfg.neuron.max_steps) break;
        if (cfg.neuron.stop_activation > 0.0f) {
            const auto pos = activations(positives);
            const auto neg = activations(negatives);
            double a_t = 0.0;
            for (float a : pos) a_t += a;
            a_t /= static_cast<double>(pos.size());
            const float max_neg = neg.empty() ? 0.0f : *std::max_element(neg.begin(), neg.end());
            if (a_t >= cfg.neuron.stop_activation && max_neg <= 1.0f - cfg.neuron.stop_activation &&
                a_t >= rival + cfg.neuron.stop_margin) {
                break;
            }
        }
        const GradMap grads = g.backward(loss, "neuron " + std::to_string(index) + " step " + std::to_string(step));
        const Tensor& gw = grads.at(0);
        if (cfg.neuron.optimizer == TrainOptimizer::adam) {
            adam_step(w, gw, moments, hyper);
        } else {
            for (std::size_t i = 0; i < h; ++i) w.data[i] -= cfg.neuron.lr * gw.data[i];
        }
        rec.steps = step + 1;
    }
    rec.w = w.data;

    Tensor row(1, h, rec.w);
    double a_sum = 0.0;
    for (std::size_t i = 0; i < positives.rows; ++i) a_sum += neuron_activations(row, positives.row(i))[0];
    rec.a_t = static_cast<float>(a_sum / static_cast<double>(positives.rows));
    for (std::size_t i = 0; i < negatives.rows; ++i) {
        rec.max_negative = std::max(rec.max_negative, neuron_activations(row, negatives.row(i))[0]);
    }
    rec.success = rec.a_t > cfg.theta && rec.a_t > rec.max_negative;
    return rec;
}

NeuronBank merge_neurons(std::span<const NeuronRecord> records, std::size_t layer, float theta) {
    NeuronBank bank;
    bank.layer = layer;
    bank.theta = theta;
    if (records.empty()) return bank;
    const std::size_t h = records.front().w.size();
    bank.rows = Tensor(records.size(), h);
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].w.size() != h) {
            throw ShapeError("merge_neurons", "[1x" + std::to_string(h) + "]",
                             "[1x" + std::to_string(records[i].w.size()) + "]");
        }
        std::copy(records[i].w.begin(), records[i].w.end(), bank.rows.row(i).begin());
    }
    return bank;
}

std::vector<float> neuron_activations(const Tensor& rows, std::span<const float> u) {
    if (rows.rows > 0 && rows.cols != u.size()) {
        throw ShapeError("neuron_activations", rows.shape_str(), "[1x" + std::to_string(u.size()) + "]");
    }
    std::vector<float> out(rows.rows);
    for (std::size_t i = 0; i < rows.rows; ++i) {
        const float* w = rows.data.data() + i * rows.cols;
        float z = 0.0f;
        for (std::size_t j = 0; j < u.size(); ++j) z += w[j] * u[j];
        out[i] = sigmoid(z);
    }
    return out;
}

RoutingDecision decide(std::vector<float> activations, float theta) {
    RoutingDecision d;
    d.theta = theta;
    d.activations = std::move(activations);
    if (d.activations.empty()) return d;
    const std::size_t best = argmax_lowest(d.activations);
    d.max_activation = d.activations[best];
    if (d.max_activation > theta) d.chosen = best;
    return d;
}

RoutingDecision route(const Checkpoint& ck, const std::string& prompt, const NeuronBank& bank, NeuronInput mode) {
    if (bank.size() == 0) return decide({}, bank.theta);
    const auto u = capture_fnn_input(ck, prompt, bank.layer, mode);
    return decide(neuron_activations(bank.rows, u), bank.theta);
}

// ------------------------------------------------------------ edited system

void check_integrity(const Checkpoint& ck, const EditedSystem& sys) {
    if (sys.bank.size() != sys.experts.size()) {
        throw IntegrityError("bank has " + std::to_string(sys.bank.size()) + " neurons but there are " +
                             std::to_string(sys.experts.size()) + " experts");
    }
    if (sys.bank.size() == 0) return;
    if (sys.bank.layer >= ck.config.n_layers) throw IntegrityError("bank layer out of range");
    if (sys.bank.h() != ck.config.d_ffn) throw IntegrityError("bank width differs from the model's d_ffn");
    const Tensor& base = ck.weights.layers[sys.bank.layer].w_down;
    for (std::size_t i = 0; i < sys.experts.size(); ++i) {
        const ExpertRecord& e = sys.experts[i];
        if (e.index != i) throw IntegrityError("expert at position " + std::to_string(i) + " has index " + std::to_string(e.index));
        if (e.layer != sys.bank.layer) throw IntegrityError("expert " + std::to_string(i) + " edits a different layer");
        if (!e.w_down.same_shape(base)) throw IntegrityError("expert " + std::to_string(i) + " has shape " + e.w_down.shape_str());
    }
}

namespace {

std::optional<FnnOverride> chosen_override(const EditedSystem& sys, const RoutingDecision& d) {
    if (!d.chosen) return std::nullopt;
    if (*d.chosen >= sys.experts.size()) {
        throw IntegrityError("routing chose expert " + std::to_string(*d.chosen) + " but only " +
                             std::to_string(sys.experts.size()) + " exist");
    }
    return FnnOverride{sys.bank.layer, &sys.experts[*d.chosen].w_down};
}

}  // namespace

EditedAnswer edited_generate(const Checkpoint& ck, const std::string& prompt, const EditedSystem& sys,
                             NeuronInput mode) {
    EditedAnswer out;
    out.routing = route(ck, prompt, sys.bank, mode);
    out.answer = greedy_answer(ck, prompt, chosen_override(sys, out.routing));
    return out;
}

Tensor edited_logits(const Checkpoint& ck, const std::string& prompt, const EditedSystem& sys, NeuronInput mode) {
    const RoutingDecision d = route(ck, prompt, sys.bank, mode);
    return forward(ck, prompt_tokens(ck.tokenizer, prompt), chosen_override(sys, d)).logits;
}

double edited_perplexity(const Checkpoint& ck, const std::string& prompt, const std::string& continuation,
                         const EditedSystem& sys, NeuronInput mode) {
    const RoutingDecision d = route(ck, prompt, sys.bank, mode);
    auto tokens = prompt_tokens(ck.tokenizer, prompt);
    const Encoding c = ck.tokenizer.encode(continuation);
    tokens.insert(tokens.end(), c.ids.begin(), c.ids.end());
    tokens.push_back(Tokenizer::kEos);
    return perplexity(ck, tokens, chosen_override(sys, d));
}

EditRun sequential_edit(const Checkpoint& ck, std::span<const EditSample> edits, const ScenConfig& cfg,
                        const std::function<void(const EditLogEntry&)>& on_step) {
    cfg.validate_for(ck.config);
    for (const EditSample& s : edits) {
        validate(s);
        require_known_words(ck.tokenizer, s);
    }
    const std::size_t h = ck.config.d_ffn;
    EditRun run;
    for (std::size_t start = 0, step = 0; start < edits.size(); start += cfg.group_size, ++step) {
        const auto group = edits.subspan(start, std::min(cfg.group_size, edits.size() - start));

        Tensor positives(group.size(), h);
        for (std::size_t i = 0; i < group.size(); ++i) {
            const auto u = capture_fnn_input(ck, group[i].prompt, cfg.layer, cfg.neuron_input);
            std::copy(u.begin(), u.end(), positives.row(i).begin());
        }
        ExpertRecord expert = train_expert(ck, group, cfg, step);
        float rival = 0.0f;
        if (!run.neurons.empty()) {
            const NeuronBank so_far = merge_neurons(run.neurons, cfg.layer, cfg.theta);
            for (std::size_t i = 0; i < positives.rows; ++i) {
                for (float a : neuron_activations(so_far.rows, positives.row(i))) rival = std::max(rival, a);
            }
        }
        NeuronRecord neuron = train_indexing_neuron(positives, run.cache, cfg, step, rival);
        neuron.member_ids = expert.member_ids;

        EditLogEntry entry;
        entry.step = step;
        entry.sample_ids = expert.member_ids;
        entry.expert_loss = expert.final_loss;
        entry.expert_steps = expert.steps;
        entry.neuron_loss = neuron.loss;
        entry.a_t = neuron.a_t;
        entry.max_negative = neuron.max_negative;
        entry.rival = rival;
        entry.negatives = run.cache.size();
        entry.expert_success = expert.success;
        entry.neuron_success = neuron.success;

        for (std::size_t i = 0; i < group.size(); ++i) {
            const auto row = positives.row(i);
            run.cache.append(group[i].id, std::vector<float>(row.begin(), row.end()));
        }
        run.system.experts.push_back(std::move(expert));
        run.neurons.push_back(std::move(neuron));
        run.log.push_back(entry);
        if (on_step) on_step(entry);
    }
    run.system.bank = merge_neurons(run.neurons, cfg.layer, cfg.theta);
    check_integrity(ck, run.system);
    return run;
}

std::string edit_log_jsonl(std::span<const EditLogEntry> log) {
    std::string out;
    for (const EditLogEntry& e : log) {
        nlohmann::ordered_json j;
        j["step"] = e.step;
        j["sample_ids"] = e.sample_ids;
        j["expert_loss"] = e.expert_loss;
        j["expert_steps"] = e.expert_steps;
        j["neuron_loss"] = e.neuron_loss;
        j["a_t"] = e.a_t;
        j["max_negative_activation"] = e.max_negative;
        j["rival_activation"] = e.rival;
        j["negatives"] = e.negatives;
        j["expert_success"] = e.expert_success;
        j["neuron_success"] = e.neuron_success;
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace scen
