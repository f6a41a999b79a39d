#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace scen {

using TokenId = int;

struct Encoding {
    std::vector<TokenId> ids;
    std::size_t unknown = 0;  // number of words mapped to the UNK id

    bool has_unknown() const { return unknown > 0; }
};

// Word-level tokenizer over a closed vocabulary. Words are maximal runs of
// non-space characters; the first four ids are reserved specials.
class Tokenizer {
   public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kUnk = 1;
    static constexpr TokenId kBos = 2;
    static constexpr TokenId kEos = 3;
    static constexpr std::size_t kNumSpecial = 4;

    Tokenizer();
    // `words` excludes the specials; order is preserved.
    explicit Tokenizer(std::vector<std::string> words);

    // Vocabulary from every distinct word of `texts`, sorted bytewise so the
    // result does not depend on text order.
    static Tokenizer build(std::span<const std::string> texts);

    Encoding encode(std::string_view text) const;
    // Specials other than UNK are dropped; words are joined by single spaces.
    std::string decode(std::span<const TokenId> ids) const;

    std::size_t size() const { return vocab_.size(); }
    const std::string& word(TokenId id) const { return vocab_.at(static_cast<std::size_t>(id)); }
    // Vocabulary words in id order, specials excluded.
    std::vector<std::string> words() const;

   private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, TokenId> index_;
};

// Whitespace-normalised form: single spaces, no leading/trailing space.
std::string normalize_space(std::string_view text);

}  // namespace scen
