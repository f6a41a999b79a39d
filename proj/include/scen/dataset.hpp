#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace scen {

// One edit unit (also the record type of every corpus file): a prompt, the
// answer it should produce, and paraphrases of the prompt sharing that answer.
struct EditSample {
    std::string id;
    std::string prompt;
    std::string answer;
    std::vector<std::string> rewrites;

    bool operator==(const EditSample&) const = default;
};

// Throws FormatError when the prompt or answer is empty.
void validate(const EditSample& s);

// Line-delimited JSON: one {"id","prompt","answer","rewrites"} object per line.
std::string to_jsonl(const std::vector<EditSample>& samples);
std::vector<EditSample> parse_jsonl(const std::string& text, const std::string& source = "jsonl");

std::vector<EditSample> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const std::vector<EditSample>& samples);

}  // namespace scen
