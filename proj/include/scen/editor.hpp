#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scen/checkpoint.hpp"
#include "scen/dataset.hpp"
#include "scen/optim.hpp"

namespace scen {

// An edit sample uses words the checkpoint's tokenizer does not know.
class VocabularyMismatch : public Error {
   public:
    using Error::Error;
};

enum class NeuronInput { pre_activation = 0, post_activation = 1 };

enum class TrainOptimizer { sgd = 0, adam = 1 };

struct ExpertTrainConfig {
    TrainOptimizer optimizer = TrainOptimizer::adam;
    float lr = 2e-4f;
    std::size_t max_steps = 600;
    float target_loss = 0.3f;  // stop early once the mean CE falls below
};

struct NeuronTrainConfig {
    TrainOptimizer optimizer = TrainOptimizer::sgd;
    float lr = 0.1f;
    std::size_t max_steps = 3000;
    // Stop once a_t >= stop_activation, every negative is <= 1 -
    // stop_activation and a_t beats the rival activation by stop_margin;
    // stop_activation 0 trains for max_steps.
    float stop_activation = 0.8f;
    float stop_margin = 0.0f;
};

struct ScenConfig {
    std::size_t layer = 3;
    float alpha = 0.7f;
    float beta = 0.3f;
    float m = 1.0f;
    float theta = 0.65f;
    NeuronInput neuron_input = NeuronInput::post_activation;
    ExpertTrainConfig expert;
    NeuronTrainConfig neuron;
    std::size_t group_size = 1;

    void validate() const;
    void validate_for(const ModelConfig& model) const;  // also checks the layer index
};

// Neuron input u for the last token of `tokens`: x_att W_up, passed through
// the nonlinearity in post_activation mode. Runs layers 0..layer-1 and the
// attention block of `layer` only.
std::vector<float> capture_fnn_input(const Checkpoint& ck, std::span<const TokenId> tokens, std::size_t layer,
                                     NeuronInput mode);
std::vector<float> capture_fnn_input(const Checkpoint& ck, const std::string& prompt, std::size_t layer,
                                     NeuronInput mode);

// ------------------------------------------------------------ stage 1

struct ExpertRecord {
    std::size_t index = 0;
    std::size_t layer = 0;
    Tensor w_down;  // h x d_model
    std::vector<std::string> member_ids;
    std::size_t steps = 0;
    float final_loss = 0.0f;
    bool success = false;
};

// Clones the base W_down of cfg.layer and trains only that clone on the
// answer tokens (+EOS) of every sample, gradients flowing through the frozen
// layers above. Success means greedy decoding with the clone reproduces every
// member's answer.
ExpertRecord train_expert(const Checkpoint& ck, std::span<const EditSample> samples, const ScenConfig& cfg,
                          std::size_t index = 0);

// ------------------------------------------------------------ stage 2

// exp(-a_t) + m * (mean_i exp(a_i + alpha) + mean_i exp(a_i - a_t + beta)),
// only the first term when `negatives` is empty. Exponent arguments are
// clamped to [-30, 30]. Every activation must lie in [0, 1].
double indexing_loss(double a_t, std::span<const double> negatives, double alpha, double beta, double m);

// The same loss on a graph. `w` is an h x 1 column, `positives` holds the
// group's cached vectors (a_t is their mean activation) and `negatives` the
// earlier groups' vectors, one per row.
Var indexing_loss_graph(Graph& g, Var w, const Tensor& positives, const Tensor& negatives, const ScenConfig& cfg);

struct NeuronRecord {
    std::size_t index = 0;
    std::vector<float> w;  // length h
    std::vector<std::string> member_ids;
    float loss = 0.0f;
    std::size_t steps = 0;
    float a_t = 0.0f;
    float max_negative = 0.0f;  // 0 when there are no negatives
    bool success = false;       // a_t > theta and a_t > every negative
};

// Cached neuron inputs of all earlier edit samples.
struct NegativeCache {
    std::vector<std::string> ids;
    std::vector<std::vector<float>> u;

    std::size_t size() const { return u.size(); }
    void append(const std::string& id, std::vector<float> vec);
    Tensor matrix(std::size_t h) const;  // size() x h
};

// Trains w_t from zero; only w_t is a parameter. `rival` is the highest
// activation an already trained neuron gives any of the positives (the
// activation w_t must beat for its samples to route to it).
NeuronRecord train_indexing_neuron(const Tensor& positives, const NegativeCache& cache, const ScenConfig& cfg,
                                   std::size_t index = 0, float rival = 0.0f);

struct NeuronBank {
    std::size_t layer = 0;
    float theta = 0.65f;
    Tensor rows;  // t x h

    std::size_t size() const { return rows.rows; }
    std::size_t h() const { return rows.cols; }
};

NeuronBank merge_neurons(std::span<const NeuronRecord> records, std::size_t layer, float theta);

struct RoutingDecision {
    std::vector<float> activations;
    float max_activation = 0.0f;
    std::optional<std::size_t> chosen;
    float theta = 0.0f;
};

// sigmoid(row_i . u) for every bank row.
std::vector<float> neuron_activations(const Tensor& rows, std::span<const float> u);
// argmax if the maximum exceeds theta (ties -> lowest index), else unrouted.
RoutingDecision decide(std::vector<float> activations, float theta);
RoutingDecision route(const Checkpoint& ck, const std::string& prompt, const NeuronBank& bank,
                      NeuronInput mode);

// ------------------------------------------------------------ edited system

struct EditedSystem {
    NeuronBank bank;
    std::vector<ExpertRecord> experts;
};

// Fails with IntegrityError when bank rows and experts disagree.
void check_integrity(const Checkpoint& ck, const EditedSystem& sys);

struct EditedAnswer {
    std::string answer;
    RoutingDecision routing;
};

// Routes once on the prompt's last token and decodes with the chosen FNN
// held fixed; unrouted queries run the base model unchanged.
EditedAnswer edited_generate(const Checkpoint& ck, const std::string& prompt, const EditedSystem& sys,
                             NeuronInput mode);

// Logits over the prompt tokens with the FNN chosen by routing on the prompt.
Tensor edited_logits(const Checkpoint& ck, const std::string& prompt, const EditedSystem& sys, NeuronInput mode);

// Perplexity of prompt + continuation, with the FNN chosen by routing on
// the prompt.
double edited_perplexity(const Checkpoint& ck, const std::string& prompt, const std::string& continuation,
                         const EditedSystem& sys, NeuronInput mode);

struct EditLogEntry {
    std::size_t step = 0;
    std::vector<std::string> sample_ids;
    float expert_loss = 0.0f;
    std::size_t expert_steps = 0;
    float neuron_loss = 0.0f;
    float a_t = 0.0f;
    float max_negative = 0.0f;
    float rival = 0.0f;  // highest earlier-neuron activation on the group
    std::size_t negatives = 0;
    bool expert_success = false;
    bool neuron_success = false;
};

struct EditRun {
    EditedSystem system;
    std::vector<NeuronRecord> neurons;
    NegativeCache cache;
    std::vector<EditLogEntry> log;
};

// Edits in order, cfg.group_size samples per expert (the last group may be
// smaller). Each group's vectors join the negative cache only after its own
// neuron has been trained. `on_step` sees every log entry as it is produced.
EditRun sequential_edit(const Checkpoint& ck, std::span<const EditSample> edits, const ScenConfig& cfg,
                        const std::function<void(const EditLogEntry&)>& on_step = {});

std::string edit_log_jsonl(std::span<const EditLogEntry> log);

}  // namespace scen
