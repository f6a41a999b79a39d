#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "fixtures.hpp"
#include "scen/checkpoint.hpp"
#include "scen/config.hpp"
#include "scen/io_util.hpp"
#include "scen/knowledge_base.hpp"
#include "scen/metrics.hpp"
#include "scen/sweep.hpp"

using namespace scen;
namespace fs = std::filesystem;

namespace {

ScenConfig tiny_scen() {
    ScenConfig c;
    c.layer = 1;
    c.expert.lr = 5e-3f;
    c.expert.target_loss = 0.05f;
    c.expert.max_steps = 200;
    return c;
}

struct Edited {
    EditSplit split;
    EditRun run;
};

const Edited& tiny_edited() {
    static const Edited e = [] {
        const auto& w = fixtures::tiny_world();
        Edited out;
        out.split = split_edit_loc(w.base, w.facts, 3, 8, 1);
        out.run = sequential_edit(w.base, out.split.edit, tiny_scen());
        return out;
    }();
    return e;
}

fs::path temp_dir() {
    const fs::path p = fs::temp_directory_path() / "scen_test_eval";
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("synthetic facts") {
    const FactDataset a = gen_synthetic_facts(4, 30, 3);
    const FactDataset b = gen_synthetic_facts(4, 30, 3);
    CHECK(to_jsonl(a.facts) == to_jsonl(b.facts));
    CHECK(to_jsonl(a.facts) != to_jsonl(gen_synthetic_facts(5, 30, 3).facts));
    std::set<std::string> subjects_and_answers;
    for (const EditSample& f : a.facts) {
        CHECK(f.rewrites.size() == 3);
        CHECK(f.prompt.rfind("[INST] ", 0) == 0);
        subjects_and_answers.insert(f.answer);
    }
    CHECK(subjects_and_answers.size() == a.facts.size());
    CHECK(gen_synthetic_facts(4, 10, 4).facts[0].rewrites.size() == 4);
    CHECK_THROWS(gen_synthetic_facts(4, 9, 3));
    CHECK_THROWS(gen_synthetic_facts(4, 30, 2));
    CHECK_THROWS(check_vocab_fits(a.words, 10));
    CHECK_NOTHROW(check_vocab_fits(a.words, 4096));
}

TEST_CASE("edit / locality split") {
    const auto& w = fixtures::tiny_world();
    const EditSplit s = split_edit_loc(w.base, w.facts, 3, 8, 1);
    REQUIRE(s.edit.size() == 3);
    std::set<std::string> edit_prompts;
    for (std::size_t i = 0; i < s.edit.size(); ++i) {
        CHECK(s.edit[i].answer != s.edit_base_answers[i]);
        CHECK(greedy_answer(w.base, s.edit[i].prompt) != s.edit[i].answer);
        edit_prompts.insert(s.edit[i].prompt);
    }
    for (const EditSample& l : s.loc) {
        CHECK(edit_prompts.count(l.prompt) == 0);
        CHECK(greedy_answer(w.base, l.prompt) == normalize_space(l.answer));
    }
}

TEST_CASE("biographies") {
    const BioDataset d = gen_synthetic_bios(2, 3, 4, 5);
    CHECK(d.trained.size() == 12);
    CHECK(d.edited.size() == 3);
    CHECK(d.accurate.size() == 4);
    CHECK(d.unrelated.size() == 5);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(d.trained[i].prompt == d.edited[i].prompt);
        CHECK(d.trained[i].answer != d.edited[i].answer);
    }
}

TEST_CASE("metrics on an empty system") {
    const auto& w = fixtures::tiny_world();
    const EditedSystem empty;
    Evaluator ev(w.base, empty, NeuronInput::post_activation);
    const MetricScore none = eval_reliability(ev, {}, 0.65f);
    CHECK(none.vacuous);
    CHECK(none.percent == 100.0);
    const LocalityScore loc = eval_locality(ev, w.facts.facts, 0.65f);
    CHECK(loc.percent == 100.0);
    CHECK(loc.unrouted == loc.count);

    std::vector<EditSample> no_rewrites = {w.facts.facts[0]};
    no_rewrites[0].rewrites.clear();
    std::size_t excluded = 0;
    const MetricScore gen = eval_generality(ev, no_rewrites, 0.65f, 3, &excluded);
    CHECK(excluded == 1);
    CHECK(gen.count == 0);

    const PplScore base = mean_perplexity(w.base, empty, NeuronInput::post_activation, w.facts.facts);
    double sum = 0.0;
    for (const EditSample& f : w.facts.facts) {
        auto t = prompt_tokens(w.base.tokenizer, f.prompt);
        const auto a = w.base.tokenizer.encode(f.answer).ids;
        t.insert(t.end(), a.begin(), a.end());
        t.push_back(Tokenizer::kEos);
        sum += perplexity(w.base, t);
    }
    CHECK(base.mean == sum / static_cast<double>(w.facts.facts.size()));
    const std::vector<EditSample> tiny = {{"x", "", "x", {}}};
    CHECK(mean_perplexity(w.base, empty, NeuronInput::post_activation, tiny).skipped == 1);
}

TEST_CASE("metrics on an edited system") {
    const auto& w = fixtures::tiny_world();
    const Edited& e = tiny_edited();
    Evaluator ev(w.base, e.run.system, NeuronInput::post_activation);
    const MetricsReport r = evaluate(ev, e.split.edit, e.split.loc, 0.65f);
    CHECK(r.reliability.count == 3);
    CHECK(r.generality.count == 9);
    CHECK(r.detail.size() == r.reliability.count + r.generality.count + r.locality.count);
    std::size_t correct = 0;
    for (const SampleDetail& d : r.detail) correct += d.correct;
    CHECK(correct == r.reliability.correct + r.generality.correct + r.locality.correct);
    CHECK(r.locality.percent >= r.locality.unrouted_percent);

    const ZeroFootprint z = check_zero_footprint(w.base, e.run.system, NeuronInput::post_activation, e.split.loc);
    CHECK(z.identical == z.unrouted);

    // a rewrite identical to the prompt routes identically
    std::vector<EditSample> echo = {e.split.edit[0]};
    echo[0].rewrites = {echo[0].prompt};
    CHECK(eval_generality(ev, echo, 0.65f, 3).correct == eval_reliability(ev, echo, 0.65f).correct);

    // theta limits
    CHECK(evaluate(ev, e.split.edit, e.split.loc, 0.999999f, false).locality.unrouted == e.split.loc.size());
    CHECK(evaluate(ev, e.split.edit, e.split.loc, 1e-6f, false).locality.unrouted == 0);

    CHECK(r.to_json() == evaluate(ev, e.split.edit, e.split.loc, 0.65f).to_json());
}

TEST_CASE("activation matrix") {
    const auto& w = fixtures::tiny_world();
    const Edited& e = tiny_edited();
    const Tensor cached = e.run.cache.matrix(w.base.config.d_ffn);
    const Tensor m = activation_matrix(e.run.system.bank, cached);
    CHECK(m.rows == 3);
    CHECK(m.cols == 3);
    for (float v : m.data) CHECK((v > 0.0f && v < 1.0f));
    // column j depends only on neuron j
    for (std::size_t j = 0; j < 3; ++j) {
        NeuronBank one;
        one.rows = Tensor(1, w.base.config.d_ffn);
        std::copy(e.run.system.bank.rows.row(j).begin(), e.run.system.bank.rows.row(j).end(), one.rows.data.begin());
        const Tensor col = activation_matrix(one, cached);
        for (std::size_t i = 0; i < 3; ++i) CHECK(col(i, 0) == m(i, j));
    }
    CHECK(bit_equal(capture_prompts(w.base, e.split.edit, 1, NeuronInput::post_activation), cached));
    CHECK_THROWS_AS(activation_matrix(e.run.system.bank, Tensor(2, 5)), ShapeError);

    const Tensor stair(4, 2, std::vector<float>{0.9f, 0.1f, 0.8f, 0.2f, 0.1f, 0.7f, 0.6f, 0.5f});
    CHECK(stepwise_fraction(stair, 2) == 0.75);
    CHECK(matrix_csv(Tensor(1, 2, std::vector<float>{0.5f, 0.25f})) == "0.5,0.25\n");
}

TEST_CASE("sweep helpers") {
    const std::vector<double> down = {5, 4, 4, 3};
    const std::vector<double> bumpy = {5, 6, 4, 5};
    CHECK(adjacent_inversions(down, true) == 0);
    CHECK(adjacent_inversions(bumpy, true) == 2);
    CHECK(adjacent_inversions(down, false) == 2);
    const auto grid = default_theta_grid();
    CHECK(grid.size() == 11);
    CHECK(grid.front() == 0.60);
    CHECK(grid.back() == 0.70);
    CHECK(default_sweep_layers(4) == std::vector<std::size_t>{0, 2, 3});
    CHECK(default_sweep_layers(5) == std::vector<std::size_t>{0, 2, 4});
}

TEST_CASE("sweeps on the tiny model") {
    const auto& w = fixtures::tiny_world();
    const Edited& e = tiny_edited();
    const auto grid = default_theta_grid();
    const SweepResult t = run_threshold_sweep(w.base, e.run.system, NeuronInput::post_activation, e.split.edit,
                                              e.split.loc, grid);
    CHECK(t.points.size() == 11);
    CHECK(t.to_csv().find("theta,experts") == 0);
    const std::vector<double> unordered = {0.7, 0.6};
    CHECK_THROWS(run_threshold_sweep(w.base, e.run.system, NeuronInput::post_activation, e.split.edit, e.split.loc,
                                     unordered));

    const std::vector<std::size_t> ks = {1, 2};
    const SweepResult c = run_compression_sweep(w.base, e.split.edit, e.split.loc, tiny_scen(), ks);
    CHECK(c.points[0].experts == 3);
    CHECK(c.points[1].experts == 2);
    CHECK_FALSE(c.points[0].short_last_group);
    CHECK(c.points[1].short_last_group);

    const std::vector<std::size_t> layers = {0, 1};
    const SweepResult l = run_layer_sweep(w.base, e.split.edit, e.split.loc, tiny_scen(), layers);
    CHECK(l.points.size() == 2);
    for (const SweepPoint& p : l.points) CHECK(p.report.reliability.count == 3);
}

TEST_CASE("knowledge base") {
    const auto& w = fixtures::tiny_world();
    const Edited& e = tiny_edited();
    const KnowledgeBase kb = make_kb(w.base, e.run.system, NeuronInput::post_activation);
    const std::string bytes = serialize_kb(kb);
    CHECK(bytes.substr(0, 6) == "SCENKB");

    const KnowledgeBase back = deserialize_kb(bytes);
    CHECK(serialize_kb(back) == bytes);
    CHECK_NOTHROW(check_kb_matches(back, w.base));
    for (const EditSample& s : e.split.edit) {
        CHECK(route(w.base, s.prompt, back.system.bank, back.mode).activations ==
              route(w.base, s.prompt, e.run.system.bank, NeuronInput::post_activation).activations);
    }

    const fs::path p = temp_dir() / "kb.scenkb";
    save_kb(p, kb);
    CHECK(read_file(p) == bytes);
    CHECK(serialize_kb(load_kb_for(p, w.base)) == bytes);

    Checkpoint other = w.base;
    other.weights.w_out.data[0] += 1.0f;
    CHECK_THROWS_AS(check_kb_matches(back, other), IntegrityError);

    CHECK_THROWS_WITH_AS(deserialize_kb(""), doctest::Contains("no experts"), FormatError);
    CHECK_THROWS_AS(deserialize_kb("SCENKX" + bytes.substr(6)), FormatError);
    CHECK_THROWS_AS(deserialize_kb(bytes.substr(0, bytes.size() - 1)), FormatError);

    const KnowledgeBase none = make_kb(w.base, EditedSystem{}, NeuronInput::post_activation);
    const KnowledgeBase none_back = deserialize_kb(serialize_kb(none));
    CHECK(none_back.system.experts.empty());
    CHECK_NOTHROW(check_kb_matches(none_back, w.base));
}

TEST_CASE("experiment config") {
    const ExperimentConfig d = parse_config("{}");
    CHECK(d.scen.theta == doctest::Approx(0.65));
    CHECK(parse_config(d.to_json()).to_json() == d.to_json());

    const ExperimentConfig c = parse_config(R"({"mode": "text", "scen": {"theta": 0.6, "neuron": {"lr": 0.2}}})");
    CHECK(c.mode == DatasetMode::text);
    CHECK(c.scen.theta == doctest::Approx(0.6));
    CHECK(c.scen.neuron.lr == doctest::Approx(0.2));

    CHECK_THROWS_WITH_AS(parse_config(R"({"bogus": 1})"), doctest::Contains("bogus"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"scen": {"expert": {"lrr": 1}}})"), doctest::Contains("config.scen.expert.lrr"),
                         ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"scen": {"theta": "high"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"scen": {"theta": 1.5}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"scen": {"layer": 7}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"train": {"steps": -1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config("{"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("threshold trend test") {
    SweepResult r;
    r.axis = "theta";
    const double rel[] = {100, 98, 99, 97, 95};
    const double loc[] = {80, 85, 84, 90, 95};
    for (int i = 0; i < 5; ++i) {
        SweepPoint p;
        p.value = 0.6 + 0.01 * i;
        p.report.reliability.percent = rel[i];
        p.report.generality.percent = rel[i];
        p.report.locality.percent = loc[i];
        r.points.push_back(p);
    }
    CHECK(threshold_trend(r, 1).pass);
    CHECK_FALSE(threshold_trend(r, 0).pass);
    r.points[4].report.reliability.percent = 99.5;
    const TrendCheck t = threshold_trend(r, 1);
    CHECK(t.reliability_inversions == 2);
    CHECK_FALSE(t.pass);
}
