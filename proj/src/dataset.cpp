#include "scen/dataset.hpp"

#include <sstream>

#include "json.hpp"
#include "scen/io_util.hpp"

namespace scen {

using nlohmann::json;

void validate(const EditSample& s) {
    if (s.prompt.empty()) throw FormatError("sample '" + s.id + "': empty prompt");
    if (s.answer.empty()) throw FormatError("sample '" + s.id + "': empty answer");
}

std::string to_jsonl(const std::vector<EditSample>& samples) {
    std::string out;
    for (const EditSample& s : samples) {
        json j;
        j["id"] = s.id;
        j["prompt"] = s.prompt;
        j["answer"] = s.answer;
        j["rewrites"] = s.rewrites;
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

std::vector<EditSample> parse_jsonl(const std::string& text, const std::string& source) {
    std::vector<EditSample> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(where + ": " + e.what());
        }
        if (!j.is_object()) throw FormatError(where + ": expected an object");
        for (const auto& [key, _] : j.items()) {
            if (key != "id" && key != "prompt" && key != "answer" && key != "rewrites") {
                throw FormatError(where + ": unknown field '" + key + "'");
            }
        }
        EditSample s;
        try {
            s.id = j.at("id").get<std::string>();
            s.prompt = j.at("prompt").get<std::string>();
            s.answer = j.at("answer").get<std::string>();
            if (j.contains("rewrites")) s.rewrites = j.at("rewrites").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
        validate(s);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<EditSample> load_jsonl(const std::filesystem::path& path) {
    return parse_jsonl(read_file(path), path.string());
}

void save_jsonl(const std::filesystem::path& path, const std::vector<EditSample>& samples) {
    write_file_atomic(path, to_jsonl(samples));
}

}  // namespace scen
