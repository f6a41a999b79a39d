#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "scen/checkpoint.hpp"
#include "scen/editor.hpp"
#include "scen/gradcheck.hpp"
#include "scen/rng.hpp"

using namespace scen;

namespace {

ScenConfig tiny_scen() {
    ScenConfig c;
    c.layer = 1;
    c.expert.lr = 5e-3f;
    c.expert.target_loss = 0.05f;
    c.expert.max_steps = 200;
    return c;
}

Tensor random_tensor(RngStream& rng, std::size_t r, std::size_t c, double scale) {
    Tensor t(r, c);
    for (float& v : t.data) v = static_cast<float>(scale * (2.0 * rng.uniform() - 1.0));
    return t;
}

// Edit targets: every fact relabelled with the next fact's answer.
std::vector<EditSample> relabelled(std::size_t n) {
    const auto& facts = fixtures::tiny_world().facts.facts;
    std::vector<EditSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        EditSample e = facts[i];
        e.id = "e" + std::to_string(i);
        e.answer = facts[(i + 1) % facts.size()].answer;
        out.push_back(e);
    }
    return out;
}

}  // namespace

TEST_CASE("indexing loss closed forms") {
    CHECK(indexing_loss(1.0, {}, 0.7, 0.3, 1.0) == doctest::Approx(0.36787944117144233).epsilon(1e-12));
    CHECK(indexing_loss(0.0, {}, 0.7, 0.3, 1.0) == 1.0);

    const std::vector<double> neg = {0.1};
    const long double oracle = expl(-0.9L) + expl(0.8L) + expl(-0.5L);
    CHECK(std::abs(indexing_loss(0.9, neg, 0.7, 0.3, 1.0) - static_cast<double>(oracle)) < 1e-12);

    // m weighs the two locality terms; means divide by the negative count
    const std::vector<double> two = {0.2, 0.4};
    const double expect = std::exp(-0.5) + 2.0 * ((std::exp(0.9) + std::exp(1.1)) / 2 + (std::exp(0.0) + std::exp(0.2)) / 2);
    CHECK(indexing_loss(0.5, two, 0.7, 0.3, 2.0) == doctest::Approx(expect).epsilon(1e-12));

    CHECK_THROWS_AS(indexing_loss(1.5, {}, 0.7, 0.3, 1.0), Error);
    const std::vector<double> bad = {-0.1};
    CHECK_THROWS_AS(indexing_loss(0.5, bad, 0.7, 0.3, 1.0), Error);
}

TEST_CASE("indexing loss decreases in a_t and increases in every negative") {
    for (int i = 1; i < 20; ++i) {
        const double a = i / 20.0, b = (i + 1) / 20.0;
        const std::vector<double> n = {0.3, 0.6};
        CHECK(indexing_loss(b, n, 0.7, 0.3, 1.0) < indexing_loss(a, n, 0.7, 0.3, 1.0));
        const std::vector<double> lo = {a, 0.6}, hi = {b, 0.6};
        CHECK(indexing_loss(0.5, hi, 0.7, 0.3, 1.0) > indexing_loss(0.5, lo, 0.7, 0.3, 1.0));
    }
}

TEST_CASE("graph loss matches the scalar loss and its gradient matches finite differences") {
    RngStream rng(5, 0);
    ScenConfig cfg;
    const Tensor pos = random_tensor(rng, 2, 8, 1.0);
    const Tensor neg = random_tensor(rng, 3, 8, 1.0);
    const Tensor w = random_tensor(rng, 8, 1, 0.5);

    auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    auto act = [&](const Tensor& x, std::size_t i) {
        double z = 0.0;
        for (std::size_t j = 0; j < 8; ++j) z += double(x(i, j)) * w.data[j];
        return sig(z);
    };
    const double a_t = (act(pos, 0) + act(pos, 1)) / 2.0;
    const std::vector<double> a_neg = {act(neg, 0), act(neg, 1), act(neg, 2)};
    Graph g;
    const double graph = g.value(indexing_loss_graph(g, g.constant(w), pos, neg, cfg)).item();
    CHECK(graph == doctest::Approx(indexing_loss(a_t, a_neg, 0.7, 0.3, 1.0)).epsilon(1e-5));

    const auto r = finite_diff_check(
        [&](Graph& gg, Var x) { return indexing_loss_graph(gg, x, pos, neg, cfg); }, w, 1e-2);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("routing decisions") {
    RoutingDecision d = decide({0.2f, 0.9f, 0.7f}, 0.65f);
    REQUIRE(d.chosen);
    CHECK(*d.chosen == 1);
    CHECK(d.max_activation == 0.9f);
    CHECK_FALSE(decide({0.2f, 0.65f, 0.5f}, 0.65f).chosen);
    CHECK(*decide({0.9f, 0.9f}, 0.65f).chosen == 0);
    CHECK_FALSE(decide({}, 0.65f).chosen);
}

TEST_CASE("merge is row concatenation") {
    NeuronRecord a, b;
    a.w = {1.0f, 0.0f, -1.0f};
    b.w = {0.5f, 2.0f, 0.0f};
    const std::vector<NeuronRecord> one = {a};
    CHECK(merge_neurons(one, 1, 0.65f).rows.rows == 1);

    const std::vector<NeuronRecord> both = {a, b};
    const NeuronBank bank = merge_neurons(both, 1, 0.65f);
    const std::vector<float> u = {0.3f, -0.2f, 0.1f};
    const auto acts = neuron_activations(bank.rows, u);
    CHECK(acts[0] == neuron_activations(Tensor(1, 3, a.w), u)[0]);
    CHECK(acts[1] == neuron_activations(Tensor(1, 3, b.w), u)[0]);

    NeuronRecord c;
    c.w = {1.0f};
    const std::vector<NeuronRecord> mixed = {a, c};
    CHECK_THROWS_AS(merge_neurons(mixed, 1, 0.65f), ShapeError);

    // appending a row below the current maximum keeps the decision
    NeuronRecord weak;
    weak.w = {-3.0f, 0.0f, 0.0f};
    const std::vector<NeuronRecord> three = {a, b, weak};
    CHECK(decide(neuron_activations(merge_neurons(three, 1, 0.65f).rows, u), 0.1f).chosen ==
          decide(acts, 0.1f).chosen);
}

TEST_CASE("capture_fnn_input") {
    const Checkpoint& ck = fixtures::tiny_world().base;
    const std::string p = fixtures::tiny_world().facts.facts[0].prompt;
    const auto u = capture_fnn_input(ck, p, 1, NeuronInput::post_activation);
    CHECK(u.size() == ck.config.d_ffn);
    CHECK(u == capture_fnn_input(ck, p, 1, NeuronInput::post_activation));
    CHECK(u != capture_fnn_input(ck, p, 1, NeuronInput::pre_activation));
    CHECK_THROWS_AS(capture_fnn_input(ck, "  ", 1, NeuronInput::post_activation), Error);

    // weights above the layer do not matter
    Checkpoint changed = ck;
    changed.weights.layers[1].w_down.data[0] += 1.0f;
    changed.weights.w_out.data[0] += 1.0f;
    CHECK(u == capture_fnn_input(changed, p, 1, NeuronInput::post_activation));
}

TEST_CASE("expert training") {
    const Checkpoint& ck = fixtures::tiny_world().base;
    const std::string before = serialize_checkpoint(ck);
    const auto edits = relabelled(1);

    SUBCASE("zero steps returns the base W_down") {
        ScenConfig cfg = tiny_scen();
        cfg.expert.max_steps = 0;
        const ExpertRecord r = train_expert(ck, edits, cfg);
        CHECK(r.steps == 0);
        CHECK(bit_equal(r.w_down, ck.weights.layers[1].w_down));
        CHECK_FALSE(r.success);
    }
    SUBCASE("trained expert answers the new target and the base is untouched") {
        const ExpertRecord r = train_expert(ck, edits, tiny_scen(), 4);
        CHECK(r.index == 4);
        CHECK(r.member_ids == std::vector<std::string>{"e0"});
        CHECK(r.success);
        CHECK(greedy_answer(ck, edits[0].prompt, FnnOverride{1, &r.w_down}) == normalize_space(edits[0].answer));
        CHECK(serialize_checkpoint(ck) == before);
    }
    SUBCASE("unknown words are rejected") {
        EditSample s = edits[0];
        s.answer = "qqqq";
        const std::vector<EditSample> bad = {s};
        CHECK_THROWS_AS(train_expert(ck, bad, tiny_scen()), VocabularyMismatch);
    }
}

TEST_CASE("first neuron has only the activate term and fires") {
    RngStream rng(9, 0);
    const Tensor pos = random_tensor(rng, 1, 16, 1.0);
    ScenConfig cfg;
    cfg.neuron.stop_activation = 0.0f;
    cfg.neuron.max_steps = 300;
    const NeuronRecord r = train_indexing_neuron(pos, NegativeCache{}, cfg);
    CHECK(r.a_t > 0.9f);
    CHECK(r.max_negative == 0.0f);
    CHECK(r.success);
    CHECK(r.loss == doctest::Approx(std::exp(-r.a_t)).epsilon(1e-4));
}

TEST_CASE("stop rule") {
    RngStream rng(10, 0);
    const Tensor pos = random_tensor(rng, 1, 16, 1.0);
    NegativeCache cache;
    const Tensor n = random_tensor(rng, 2, 16, 1.0);
    cache.append("n0", {n.row(0).begin(), n.row(0).end()});
    cache.append("n1", {n.row(1).begin(), n.row(1).end()});
    ScenConfig cfg;
    cfg.neuron.stop_activation = 0.8f;
    const NeuronRecord r = train_indexing_neuron(pos, cache, cfg);
    CHECK(r.steps < cfg.neuron.max_steps);
    CHECK(r.a_t >= 0.8f);
    CHECK(r.max_negative <= 0.2f + 1e-6f);

    const NeuronRecord rival = train_indexing_neuron(pos, cache, cfg, 0, 0.95f);
    CHECK(rival.a_t >= 0.95f);
}

TEST_CASE("sequential edit") {
    const Checkpoint& ck = fixtures::tiny_world().base;
    const std::string before = serialize_checkpoint(ck);
    ScenConfig cfg = tiny_scen();
    const auto edits = relabelled(3);

    std::vector<std::size_t> negatives;
    const EditRun run = sequential_edit(ck, edits, cfg, [&](const EditLogEntry& e) { negatives.push_back(e.negatives); });
    CHECK(negatives == std::vector<std::size_t>{0, 1, 2});
    CHECK(run.system.bank.size() == 3);
    CHECK(run.system.experts.size() == 3);
    CHECK(run.cache.size() == 3);
    CHECK(run.cache.ids == std::vector<std::string>{"e0", "e1", "e2"});
    CHECK(serialize_checkpoint(ck) == before);

    SUBCASE("earlier rows are unchanged by later edits") {
        const auto first_two = std::span<const EditSample>(edits).first(2);
        const EditRun shorter = sequential_edit(ck, first_two, cfg);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(std::equal(shorter.system.bank.rows.row(i).begin(), shorter.system.bank.rows.row(i).end(),
                             run.system.bank.rows.row(i).begin()));
            CHECK(bit_equal(shorter.system.experts[i].w_down, run.system.experts[i].w_down));
        }
    }
    SUBCASE("replay is deterministic") {
        const EditRun again = sequential_edit(ck, edits, cfg);
        CHECK(bit_equal(again.system.bank.rows, run.system.bank.rows));
        CHECK(edit_log_jsonl(again.log) == edit_log_jsonl(run.log));
    }
    SUBCASE("edited prompts route to their expert and answer the new target") {
        for (std::size_t i = 0; i < edits.size(); ++i) {
            const EditedAnswer a = edited_generate(ck, edits[i].prompt, run.system, cfg.neuron_input);
            CHECK(a.routing.chosen == std::optional<std::size_t>(i));
            CHECK(a.answer == normalize_space(edits[i].answer));
        }
    }
    SUBCASE("grouped editing") {
        ScenConfig g = cfg;
        g.group_size = 2;
        const EditRun grouped = sequential_edit(ck, edits, g);
        CHECK(grouped.system.experts.size() == 2);
        CHECK(grouped.system.experts[0].member_ids == std::vector<std::string>{"e0", "e1"});
        CHECK(grouped.log[1].negatives == 2);
    }
}

TEST_CASE("empty system and unrouted queries behave exactly like the base") {
    const Checkpoint& ck = fixtures::tiny_world().base;
    const EditedSystem empty;
    for (const EditSample& f : fixtures::tiny_world().facts.facts) {
        const EditedAnswer a = edited_generate(ck, f.prompt, empty, NeuronInput::post_activation);
        CHECK_FALSE(a.routing.chosen);
        CHECK(a.answer == greedy_answer(ck, f.prompt));
        CHECK(bit_equal(edited_logits(ck, f.prompt, empty, NeuronInput::post_activation),
                        forward(ck, prompt_tokens(ck.tokenizer, f.prompt)).logits));
    }
}

TEST_CASE("integrity") {
    const Checkpoint& ck = fixtures::tiny_world().base;
    EditedSystem sys;
    NeuronRecord n;
    n.w.assign(ck.config.d_ffn, 0.0f);
    const std::vector<NeuronRecord> rows = {n};
    sys.bank = merge_neurons(rows, 1, 0.65f);
    CHECK_THROWS_AS(check_integrity(ck, sys), IntegrityError);

    ExpertRecord e;
    e.layer = 1;
    e.w_down = ck.weights.layers[1].w_down;
    sys.experts.push_back(e);
    CHECK_NOTHROW(check_integrity(ck, sys));
    sys.experts[0].w_down = Tensor(2, 2);
    CHECK_THROWS_AS(check_integrity(ck, sys), IntegrityError);
}

TEST_CASE("config validation") {
    ScenConfig c;
    c.theta = 1.0f;
    CHECK_THROWS(c.validate());
    c = ScenConfig{};
    c.group_size = 0;
    CHECK_THROWS(c.validate());
    c = ScenConfig{};
    c.m = 0.0f;
    CHECK_THROWS(c.validate());
    c = ScenConfig{};
    c.layer = 9;
    CHECK_THROWS(c.validate_for(fixtures::tiny_config()));
}
