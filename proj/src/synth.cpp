#include "scen/synth.hpp"

#include <algorithm>
#include <set>

#include "scen/rng.hpp"

namespace scen {

namespace {

struct Relation {
    const char* name;
    std::vector<std::string> templates;  // "S" marks the subject slot
};

const std::vector<Relation>& relations() {
    static const std::vector<Relation> rels = {
        {"capital",
         {"what is the capital of S ?", "which city is the capital of S ?", "the capital city of S is called what ?",
          "name the capital of S .", "S has which city as its capital ?"}},
        {"language",
         {"what language is spoken in S ?", "which language do people in S speak ?",
          "the main language of S is what ?", "name the language of S .", "in S people speak which language ?"}},
        {"founder",
         {"who founded S ?", "S was founded by whom ?", "who is the founder of S ?", "name the founder of S .",
          "the person who founded S is who ?"}},
        {"river",
         {"which river flows through S ?", "what river runs through S ?", "the river that crosses S is what ?",
          "name the river of S .", "through S flows which river ?"}},
        {"currency",
         {"what currency is used in S ?", "which money do people in S use ?", "the currency of S is what ?",
          "name the currency of S .", "in S people pay with which currency ?"}},
        {"sport",
         {"what sport is popular in S ?", "which sport do people in S love ?", "the favourite sport of S is what ?",
          "name the sport of S .", "in S the most loved sport is which ?"}},
        {"animal",
         {"what is the national animal of S ?", "which animal is the symbol of S ?",
          "the animal that represents S is what ?", "name the national animal of S .",
          "S has which animal as its symbol ?"}},
        {"colour",
         {"what colour is the flag of S ?", "which colour does the flag of S have ?",
          "the flag of S has what colour ?", "name the flag colour of S .", "S flies a flag of which colour ?"}},
    };
    return rels;
}

std::string wrap(const std::string& tmpl, const std::string& subject) {
    std::string out = "[INST]";
    std::size_t i = 0;
    while (i < tmpl.size()) {
        std::size_t j = tmpl.find(' ', i);
        if (j == std::string::npos) j = tmpl.size();
        const std::string w = tmpl.substr(i, j - i);
        out += ' ';
        out += (w == "S") ? subject : w;
        i = j + 1;
    }
    out += " [/INST]";
    return out;
}

// Pronounceable unique pseudo-words.
class WordMaker {
   public:
    WordMaker(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}

    std::string make(std::set<std::string>& taken, std::size_t syllables) {
        static const char* onset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "st", "gl"};
        static const char* vowel[] = {"a", "e", "i", "o", "u", "ai", "ou"};
        for (;;) {
            std::string w;
            for (std::size_t s = 0; s < syllables; ++s) {
                w += onset[rng_.below(std::size(onset))];
                w += vowel[rng_.below(std::size(vowel))];
            }
            if (rng_.uniform() < 0.5) w += "n";
            if (taken.insert(w).second) return w;
        }
    }

   private:
    RngStream rng_;
};

void add_words(std::set<std::string>& into, const std::string& text) {
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = text.find(' ', i);
        if (j == std::string::npos) j = text.size();
        if (j > i) into.insert(text.substr(i, j - i));
        i = j + 1;
    }
}

}  // namespace

FactDataset gen_synthetic_facts(std::uint64_t seed, std::size_t n_facts, std::size_t n_rewrites) {
    if (n_facts < 10) throw Error("gen_synthetic_facts: n_facts must be >= 10");
    if (n_rewrites < 3 || n_rewrites > 4) throw Error("gen_synthetic_facts: n_rewrites must be in [3, 4]");
    const auto& rels = relations();

    std::set<std::string> taken;
    for (const Relation& r : rels) {
        for (const std::string& t : r.templates) add_words(taken, wrap(t, "S"));
    }
    WordMaker maker(seed, 1);
    RngStream rng(seed, 2);

    // Every fact has its own subject word and its own object word: a shared
    // subject or object makes the last prompt token's representation
    // (nearly) coincide across facts. The relation's pool is the set of
    // objects of its facts, so counterfactual targets stay type-consistent.
    FactDataset ds;
    ds.relation_objects.resize(rels.size());
    for (std::size_t i = 0; i < n_facts; ++i) {
        const std::size_t r = rng.below(rels.size());
        const std::string subject = maker.make(taken, 3);
        const Relation& rel = rels[r];
        EditSample f;
        f.id = "fact-" + std::to_string(i);
        f.prompt = wrap(rel.templates[0], subject);
        for (std::size_t k = 1; k <= n_rewrites; ++k) f.rewrites.push_back(wrap(rel.templates[k], subject));
        f.answer = maker.make(taken, 2);
        ds.relation_objects[r].push_back(f.answer);
        ds.facts.push_back(std::move(f));
        ds.relation.push_back(r);
    }
    ds.words.assign(taken.begin(), taken.end());
    return ds;
}

EditSplit split_edit_loc(const Checkpoint& base, const FactDataset& data, std::size_t n_edit, std::size_t n_loc,
                         std::uint64_t seed) {
    if (n_edit > data.facts.size()) throw Error("split_edit_loc: n_edit exceeds dataset size");
    EditSplit split;
    RngStream rng(seed, 3);
    std::vector<std::string> base_answers;
    for (const EditSample& f : data.facts) {
        base_answers.push_back(greedy_answer(base, f.prompt));
        if (base_answers.back() == normalize_space(f.answer)) ++split.memorized;
    }
    for (std::size_t i = 0; i < n_edit; ++i) {
        EditSample e = data.facts[i];
        e.id = "edit-" + std::to_string(i);
        std::vector<std::string> candidates;
        for (const std::string& o : data.relation_objects[data.relation[i]]) {
            if (o != base_answers[i] && o != normalize_space(data.facts[i].answer)) candidates.push_back(o);
        }
        if (candidates.empty()) {
            // relation with a single fact: borrow any other object
            for (const auto& pool : data.relation_objects) {
                for (const std::string& o : pool) {
                    if (o != base_answers[i] && o != normalize_space(data.facts[i].answer)) candidates.push_back(o);
                }
            }
        }
        const std::string target = candidates[rng.below(candidates.size())];
        e.answer = target;
        split.edit.push_back(std::move(e));
        split.edit_base_answers.push_back(base_answers[i]);
    }
    for (std::size_t i = n_edit; i < data.facts.size() && split.loc.size() < n_loc; ++i) {
        if (base_answers[i] != normalize_space(data.facts[i].answer)) continue;
        EditSample l = data.facts[i];
        l.id = "loc-" + std::to_string(i);
        split.loc.push_back(std::move(l));
    }
    return split;
}

BioDataset gen_synthetic_bios(std::uint64_t seed, std::size_t n_edit, std::size_t n_accurate, std::size_t n_unrelated) {
    std::set<std::string> taken;
    const std::string bio_prefix = "this is a passage about S .";
    const std::string bio_body = "S was born in P and worked as a J . S loved T .";
    const std::string other_prefix = "a short note on the N :";
    const std::string other_body = "the N was A and the M was B .";
    for (const std::string& t : {bio_prefix, bio_body, other_prefix, other_body}) add_words(taken, t);

    WordMaker maker(seed, 4);
    auto pool = [&](std::size_t n, std::size_t syl) {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < n; ++i) out.push_back(maker.make(taken, syl));
        return out;
    };
    const auto places = pool(10, 2);
    const auto jobs = pool(10, 2);
    const auto things = pool(10, 2);
    const auto nouns = pool(12, 2);
    const auto adjs = pool(12, 1);
    RngStream rng(seed, 5);
    auto pick = [&](const std::vector<std::string>& v) { return v[rng.below(v.size())]; };
    auto fill = [](std::string s, const std::vector<std::pair<std::string, std::string>>& subs) {
        std::string out;
        std::size_t i = 0;
        while (i < s.size()) {
            std::size_t j = s.find(' ', i);
            if (j == std::string::npos) j = s.size();
            std::string w = s.substr(i, j - i);
            for (const auto& [k, v] : subs) {
                if (w == k) w = v;
            }
            if (!out.empty()) out += ' ';
            out += w;
            i = j + 1;
        }
        return out;
    };

    BioDataset ds;
    const std::size_t n_bios = n_edit + n_accurate;
    for (std::size_t i = 0; i < n_bios; ++i) {
        const std::string person = maker.make(taken, 3);
        const std::string p = pick(places), j = pick(jobs), t = pick(things);
        EditSample truth;
        truth.prompt = fill(bio_prefix, {{"S", person}});
        truth.answer = fill(bio_body, {{"S", person}, {"P", p}, {"J", j}, {"T", t}});
        if (i < n_edit) {
            std::string wp, wj, wt;
            do wp = pick(places); while (wp == p);
            do wj = pick(jobs); while (wj == j);
            do wt = pick(things); while (wt == t);
            EditSample wrong = truth;
            wrong.id = "bio-w-" + std::to_string(i);
            wrong.answer = fill(bio_body, {{"S", person}, {"P", wp}, {"J", wj}, {"T", wt}});
            ds.trained.push_back(wrong);
            truth.id = "bio-e-" + std::to_string(i);
            ds.edited.push_back(std::move(truth));
        } else {
            truth.id = "bio-a-" + std::to_string(i - n_edit);
            ds.trained.push_back(truth);
            ds.accurate.push_back(std::move(truth));
        }
    }
    for (std::size_t i = 0; i < n_unrelated; ++i) {
        const std::string n = pick(nouns);
        std::string m;
        do m = pick(nouns); while (m == n);
        EditSample s;
        s.id = "text-" + std::to_string(i);
        s.prompt = fill(other_prefix, {{"N", n}});
        s.answer = fill(other_body, {{"N", n}, {"A", pick(adjs)}, {"M", m}, {"B", pick(adjs)}});
        ds.trained.push_back(s);
        ds.unrelated.push_back(std::move(s));
    }
    ds.words.assign(taken.begin(), taken.end());
    return ds;
}

void check_vocab_fits(const std::vector<std::string>& words, std::size_t vocab_limit) {
    const std::size_t needed = words.size() + Tokenizer::kNumSpecial;
    if (needed > vocab_limit) {
        throw Error("dataset vocabulary of " + std::to_string(needed) + " tokens overflows model vocab limit " +
                    std::to_string(vocab_limit));
    }
}

}  // namespace scen
