#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scen/editor.hpp"

namespace scen {

// Answers and routing of one edited system. Activations are computed once
// per prompt and answers once per (prompt, chosen expert), so re-scoring at
// another threshold only decodes pairs not seen before.
class Evaluator {
   public:
    Evaluator(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode);

    RoutingDecision routing(const std::string& prompt, float theta);
    std::string answer(const std::string& prompt, std::optional<std::size_t> chosen);
    std::string base_answer(const std::string& prompt) { return answer(prompt, std::nullopt); }

    const Checkpoint& checkpoint() const { return ck_; }
    const EditedSystem& system() const { return sys_; }
    NeuronInput mode() const { return mode_; }

   private:
    const Checkpoint& ck_;
    const EditedSystem& sys_;
    NeuronInput mode_;
    std::map<std::string, std::vector<float>> activations_;
    std::map<std::pair<std::string, long>, std::string> answers_;
};

struct SampleDetail {
    std::string set;  // reliability | generality | locality
    std::string id;
    std::string prompt;
    std::string expected;
    std::string answer;
    std::optional<std::size_t> chosen;
    float max_activation = 0.0f;
    bool correct = false;
};

struct MetricScore {
    std::size_t correct = 0;
    std::size_t count = 0;
    double percent = 100.0;
    bool vacuous = true;  // count == 0, reported as 100

    void add(bool ok);
};

struct LocalityScore : MetricScore {
    std::size_t unrouted = 0;
    double unrouted_percent = 100.0;
};

// Exact match after whitespace normalisation, every edited prompt.
MetricScore eval_reliability(Evaluator& ev, std::span<const EditSample> edits, float theta,
                             std::vector<SampleDetail>* detail = nullptr);
// First `max_rewrites` rewrites of every edited sample; samples without
// rewrites are skipped and counted in `excluded`.
MetricScore eval_generality(Evaluator& ev, std::span<const EditSample> edits, float theta, std::size_t max_rewrites,
                            std::size_t* excluded = nullptr, std::vector<SampleDetail>* detail = nullptr);
// Edited answer equals the base model's answer.
LocalityScore eval_locality(Evaluator& ev, std::span<const EditSample> loc, float theta,
                            std::vector<SampleDetail>* detail = nullptr);

struct PplScore {
    double mean = 0.0;
    std::size_t count = 0;
    std::size_t skipped = 0;  // sequences shorter than 2 tokens
};

struct PplTriple {
    PplScore edited, accurate, unrelated;
};

// Mean perplexity of prompt + answer + EOS, the FNN chosen by routing on the
// prompt (the base FNN for an empty system).
PplScore mean_perplexity(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode,
                         std::span<const EditSample> texts);
PplTriple eval_ppl_suite(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode,
                         std::span<const EditSample> edited, std::span<const EditSample> accurate,
                         std::span<const EditSample> unrelated);

struct ZeroFootprint {
    std::size_t unrouted = 0;
    std::size_t identical = 0;  // unrouted queries whose logits match the base bit for bit
};
ZeroFootprint check_zero_footprint(const Checkpoint& ck, const EditedSystem& sys, NeuronInput mode,
                                   std::span<const EditSample> queries);

struct MetricsReport {
    float theta = 0.0f;
    MetricScore reliability;
    MetricScore generality;
    std::size_t generality_excluded = 0;
    LocalityScore locality;
    std::optional<PplTriple> ppl;
    std::string config_json = "{}";  // echo of the producing config
    std::vector<SampleDetail> detail;

    std::string to_json() const;
};

inline constexpr std::size_t kGeneralityRewrites = 3;

MetricsReport evaluate(Evaluator& ev, std::span<const EditSample> edits, std::span<const EditSample> loc,
                       float theta, bool with_detail = true);

// Entry (i, j): activation of neuron j on row i of `vectors`.
Tensor activation_matrix(const NeuronBank& bank, const Tensor& vectors);
std::string matrix_csv(const Tensor& m);
// Fraction of rows whose maximum (ties -> lowest column) is column i / k.
double stepwise_fraction(const Tensor& m, std::size_t k);
// Neuron inputs of every sample's prompt, one row each.
Tensor capture_prompts(const Checkpoint& ck, std::span<const EditSample> samples, std::size_t layer,
                       NeuronInput mode);

}  // namespace scen
