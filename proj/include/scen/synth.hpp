#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scen/checkpoint.hpp"
#include "scen/dataset.hpp"

namespace scen {

// Templated subject-relation-object facts. Every fact carries the main
// question template as its prompt and `n_rewrites` paraphrase templates of
// the same question as rewrites. Prompts are wrapped in [INST] ... [/INST].
struct FactDataset {
    std::vector<EditSample> facts;
    std::vector<std::size_t> relation;                     // per fact
    std::vector<std::vector<std::string>> relation_objects;  // answer pool per relation
    std::vector<std::string> words;                        // every word the generator can emit
};

// Deterministic per seed. Requires n_facts >= 10 and 3 <= n_rewrites <= 4.
FactDataset gen_synthetic_facts(std::uint64_t seed, std::size_t n_facts, std::size_t n_rewrites);

// Edit / locality split against a trained base model.
//   edit: the first n_edit facts, relabelled with a different object of the
//         same relation than the base model's answer (counterfactual target);
//   loc:  subsequent facts the base model answers exactly right, up to n_loc.
struct EditSplit {
    std::vector<EditSample> edit;
    std::vector<EditSample> loc;
    std::vector<std::string> edit_base_answers;
    std::size_t memorized = 0;  // facts the base answers correctly
};
EditSplit split_edit_loc(const Checkpoint& base, const FactDataset& data, std::size_t n_edit, std::size_t n_loc,
                         std::uint64_t seed);

// Biography-style running text for the perplexity suite:
//   trained:   what the base model is trained on (first n_edit carry wrong
//              details, the rest are the accurate texts);
//   edited:    corrected versions of the first n_edit texts (edit targets);
//   accurate:  texts trained with correct details, never edited;
//   unrelated: other running text, also trained.
struct BioDataset {
    std::vector<EditSample> trained;
    std::vector<EditSample> edited;
    std::vector<EditSample> accurate;
    std::vector<EditSample> unrelated;
    std::vector<std::string> words;
};
BioDataset gen_synthetic_bios(std::uint64_t seed, std::size_t n_edit, std::size_t n_accurate, std::size_t n_unrelated);

// Throws when the words plus special tokens would not fit `vocab_limit`.
void check_vocab_fits(const std::vector<std::string>& words, std::size_t vocab_limit);

}  // namespace scen
