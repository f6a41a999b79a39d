#include "scen/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "scen/tensor.hpp"

namespace scen {

namespace {

const char* const kSpecials[Tokenizer::kNumSpecial] = {"<pad>", "<unk>", "<bos>", "<eos>"};

template <class Fn>
void for_each_word(std::string_view text, Fn&& fn) {
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) fn(text.substr(i, j - i));
        i = j;
    }
}

}  // namespace

Tokenizer::Tokenizer() : Tokenizer(std::vector<std::string>{}) {}

Tokenizer::Tokenizer(std::vector<std::string> words) {
    vocab_.assign(std::begin(kSpecials), std::end(kSpecials));
    for (std::string& w : words) vocab_.push_back(std::move(w));
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        if (!index_.emplace(vocab_[i], static_cast<TokenId>(i)).second) {
            throw FormatError("tokenizer: duplicate vocabulary entry '" + vocab_[i] + "'");
        }
    }
}

Tokenizer Tokenizer::build(std::span<const std::string> texts) {
    std::set<std::string> words;
    for (const std::string& t : texts) for_each_word(t, [&](std::string_view w) { words.emplace(w); });
    for (const char* s : kSpecials) words.erase(s);
    return Tokenizer(std::vector<std::string>(words.begin(), words.end()));
}

Encoding Tokenizer::encode(std::string_view text) const {
    Encoding out;
    for_each_word(text, [&](std::string_view w) {
        auto it = index_.find(std::string(w));
        if (it == index_.end()) {
            out.ids.push_back(kUnk);
            ++out.unknown;
        } else {
            out.ids.push_back(it->second);
        }
    });
    return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
        if (id == kPad || id == kBos || id == kEos) continue;
        if (!out.empty()) out.push_back(' ');
        out += word(id);
    }
    return out;
}

std::vector<std::string> Tokenizer::words() const {
    return std::vector<std::string>(vocab_.begin() + kNumSpecial, vocab_.end());
}

std::string normalize_space(std::string_view text) {
    std::string out;
    for_each_word(text, [&](std::string_view w) {
        if (!out.empty()) out.push_back(' ');
        out.append(w);
    });
    return out;
}

}  // namespace scen
