#include "scen/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"

namespace scen {

Evaluator::Evaluator(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode)
    : ck_(ck), sys_(sys), mode_(mode) {
    check_integrity(ck, sys);
}

RoutingDecision Evaluator::routing(const std::string& prompt, float theta) {
    if (sys_.bank.size() == 0) return decide({}, theta);
    auto it = activations_.find(prompt);
    if (it == activations_.end()) {
        const auto u = capture_fnn_input(ck_, prompt, sys_.bank.layer, mode_);
        it = activations_.emplace(prompt, neuron_activations(sys_.bank.rows, u)).first;
    }
    return decide(it->second, theta);
}

std::string Evaluator::answer(const std::string& prompt, std::optional<std::size_t> chosen) {
    const long key = chosen ? static_cast<long>(*chosen) : -1;
    auto it = answers_.find({prompt, key});
    if (it != answers_.end()) return it->second;
    std::optional<FnnOverride> o;
    if (chosen) {
        if (*chosen >= sys_.experts.size()) throw IntegrityError("routing chose a missing expert");
        o = FnnOverride{sys_.bank.layer, &sys_.experts[*chosen].w_down};
    }
    std::string a = greedy_answer(ck_, prompt, o);
    answers_.emplace(std::make_pair(prompt, key), a);
    return a;
}

void MetricScore::add(bool ok) {
    ++count;
    if (ok) ++correct;
    vacuous = false;
    percent = 100.0 * static_cast<double>(correct) / static_cast<double>(count);
}

namespace {

bool score_one(Evaluator& ev, const std::string& set, const std::string& id, const std::string& prompt,
               const std::string& expected, float theta, std::vector<SampleDetail>* detail, RoutingDecision* out) {
    RoutingDecision d = ev.routing(prompt, theta);
    const std::string a = ev.answer(prompt, d.chosen);
    const bool ok = a == normalize_space(expected);
    if (detail) {
        detail->push_back({set, id, prompt, normalize_space(expected), a, d.chosen, d.max_activation, ok});
    }
    if (out) *out = std::move(d);
    return ok;
}

}  // namespace

MetricScore eval_reliability(Evaluator& ev, std::span<const EditSample> edits, float theta,
                             std::vector<SampleDetail>* detail) {
    MetricScore s;
    for (const EditSample& e : edits) s.add(score_one(ev, "reliability", e.id, e.prompt, e.answer, theta, detail, nullptr));
    return s;
}

MetricScore eval_generality(Evaluator& ev, std::span<const EditSample> edits, float theta, std::size_t max_rewrites,
                            std::size_t* excluded, std::vector<SampleDetail>* detail) {
    MetricScore s;
    std::size_t skipped = 0;
    for (const EditSample& e : edits) {
        if (e.rewrites.empty()) {
            ++skipped;
            continue;
        }
        const std::size_t n = std::min(max_rewrites, e.rewrites.size());
        for (std::size_t i = 0; i < n; ++i) {
            s.add(score_one(ev, "generality", e.id, e.rewrites[i], e.answer, theta, detail, nullptr));
        }
    }
    if (excluded) *excluded = skipped;
    return s;
}

LocalityScore eval_locality(Evaluator& ev, std::span<const EditSample> loc, float theta,
                            std::vector<SampleDetail>* detail) {
    LocalityScore s;
    for (const EditSample& l : loc) {
        RoutingDecision d;
        const std::string base = ev.base_answer(l.prompt);
        s.add(score_one(ev, "locality", l.id, l.prompt, base, theta, detail, &d));
        if (!d.chosen) ++s.unrouted;
    }
    if (s.count > 0) s.unrouted_percent = 100.0 * static_cast<double>(s.unrouted) / static_cast<double>(s.count);
    return s;
}

PplScore mean_perplexity(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode,
                         std::span<const EditSample> texts) {
    PplScore s;
    double total = 0.0;
    for (const EditSample& t : texts) {
        // BOS and EOS never count toward the length
        const std::size_t n = ck.tokenizer.encode(t.prompt).ids.size() + ck.tokenizer.encode(t.answer).ids.size();
        if (n < 2) {
            ++s.skipped;
            continue;
        }
        total += edited_perplexity(ck, t.prompt, t.answer, sys, mode);
        ++s.count;
    }
    if (s.count > 0) s.mean = total / static_cast<double>(s.count);
    return s;
}

PplTriple eval_ppl_suite(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode,
                         std::span<const EditSample> edited, std::span<const EditSample> accurate,
                         std::span<const EditSample> unrelated) {
    return {mean_perplexity(ck, sys, mode, edited), mean_perplexity(ck, sys, mode, accurate),
            mean_perplexity(ck, sys, mode, unrelated)};
}

ZeroFootprint check_zero_footprint(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode,
                                   std::span<const EditSample> queries) {
    ZeroFootprint z;
    for (const EditSample& q : queries) {
        if (route(ck, q.prompt, sys.bank, mode).chosen) continue;
        ++z.unrouted;
        const Tensor base = forward(ck, prompt_tokens(ck.tokenizer, q.prompt)).logits;
        if (bit_equal(edited_logits(ck, q.prompt, sys, mode), base)) ++z.identical;
    }
    return z;
}

MetricsReport evaluate(Evaluator& ev, std::span<const EditSample> edits, std::span<const EditSample> loc,
                       float theta, bool with_detail) {
    MetricsReport r;
    r.theta = theta;
    std::vector<SampleDetail>* d = with_detail ? &r.detail : nullptr;
    r.reliability = eval_reliability(ev, edits, theta, d);
    r.generality = eval_generality(ev, edits, theta, kGeneralityRewrites, &r.generality_excluded, d);
    r.locality = eval_locality(ev, loc, theta, d);
    return r;
}

namespace {

nlohmann::ordered_json score_json(const MetricScore& s) {
    nlohmann::ordered_json j;
    j["percent"] = s.percent;
    j["correct"] = s.correct;
    j["count"] = s.count;
    j["vacuous"] = s.vacuous;
    return j;
}

nlohmann::ordered_json ppl_json(const PplScore& p) {
    return {{"mean", p.mean}, {"count", p.count}, {"skipped", p.skipped}};
}

}  // namespace

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["theta"] = theta;
    j["reliability"] = score_json(reliability);
    j["generality"] = score_json(generality);
    j["generality"]["excluded_without_rewrites"] = generality_excluded;
    j["locality"] = score_json(locality);
    j["locality"]["unrouted"] = locality.unrouted;
    j["locality"]["unrouted_percent"] = locality.unrouted_percent;
    if (ppl) {
        j["ppl"] = {{"edited", ppl_json(ppl->edited)},
                    {"accurate", ppl_json(ppl->accurate)},
                    {"unrelated", ppl_json(ppl->unrelated)}};
    }
    j["config"] = nlohmann::ordered_json::parse(config_json);
    auto rows = nlohmann::ordered_json::array();
    for (const SampleDetail& s : detail) {
        nlohmann::ordered_json row;
        row["set"] = s.set;
        row["id"] = s.id;
        row["prompt"] = s.prompt;
        row["expected"] = s.expected;
        row["answer"] = s.answer;
        row["chosen"] = s.chosen ? nlohmann::ordered_json(*s.chosen) : nlohmann::ordered_json(nullptr);
        row["max_activation"] = s.max_activation;
        row["correct"] = s.correct;
        rows.push_back(std::move(row));
    }
    j["detail"] = std::move(rows);
    return j.dump(2) + "\n";
}

Tensor activation_matrix(const NeuronBank& bank, const Tensor& vectors) {
    if (bank.size() > 0 && vectors.rows > 0 && vectors.cols != bank.h()) {
        throw ShapeError("activation_matrix", bank.rows.shape_str(), vectors.shape_str());
    }
    Tensor m(vectors.rows, bank.size());
    for (std::size_t i = 0; i < vectors.rows; ++i) {
        const auto a = neuron_activations(bank.rows, vectors.row(i));
        std::copy(a.begin(), a.end(), m.row(i).begin());
    }
    return m;
}

std::string matrix_csv(const Tensor& m) {
    std::string out;
    char buf[32];
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out += ',';
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(m(i, j)));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

double stepwise_fraction(const Tensor& m, std::size_t k) {
    if (k == 0) throw Error("stepwise_fraction: k must be >= 1");
    if (m.rows == 0) return 1.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < m.rows; ++i) {
        if (m.cols > 0 && argmax_lowest(m.row(i)) == i / k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(m.rows);
}

Tensor capture_prompts(const Checkpoint& ck, std::span<const EditSample> samples, std::size_t layer,
                       NeuronInput mode) {
    Tensor out(samples.size(), ck.config.d_ffn);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto u = capture_fnn_input(ck, samples[i].prompt, layer, mode);
        std::copy(u.begin(), u.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace scen
