#pragma once

#include <functional>
#include <span>
#include <vector>

#include "scen/dataset.hpp"
#include "scen/model.hpp"

namespace scen {

// A token sequence with next-token loss applied to predictions of
// tokens[answer_start..]. BOS is tokens[0].
struct TrainExample {
    std::vector<TokenId> tokens;
    std::size_t answer_start = 1;
};

// One example per prompt ([BOS] prompt answer [EOS]); loss on answer + EOS.
// With `with_rewrites`, each rewrite contributes an example with the same answer.
std::vector<TrainExample> qa_examples(const Tokenizer& tok, std::span<const EditSample> samples, bool with_rewrites);
// Running text ([BOS] prompt answer [EOS]); loss on every token after BOS.
std::vector<TrainExample> text_examples(const Tokenizer& tok, std::span<const EditSample> samples);

// Packs examples into one graph input: concatenated tokens, per-example
// segment lengths and per-row targets (-1 where no loss applies).
struct PackedBatch {
    std::vector<TokenId> tokens;
    std::vector<std::size_t> segments;
    std::vector<int> targets;
};
PackedBatch pack(std::span<const TrainExample* const> examples);

struct TrainOptions {
    std::size_t steps = 3000;
    std::size_t batch_size = 32;
    float lr = 3e-3f;
    std::size_t warmup_steps = 100;
    float final_lr_fraction = 0.1f;  // cosine decay floor
    std::uint64_t seed = 1;
    // Called every `log_every` steps (0 disables) with (step, loss).
    std::size_t log_every = 0;
    std::function<void(std::size_t, float)> on_log;
};

struct TrainReport {
    std::size_t steps = 0;
    float initial_loss = 0.0f;
    float final_loss = 0.0f;
    std::vector<float> losses;
};

class TrainingDiverged : public Error {
   public:
    TrainingDiverged(std::size_t step, const std::string& what) : Error(what), step_(step) {}
    std::size_t step() const { return step_; }

   private:
    std::size_t step_;
};

// Trains every weight of `ck` in place with Adam on shuffled mini-batches.
TrainReport train_model(Checkpoint& ck, std::span<const TrainExample> examples, const TrainOptions& opts);

struct BaseTrainResult {
    Checkpoint checkpoint;
    TrainReport report;
};

// Fresh model over `tokenizer`, trained on the QA corpus (prompts and
// rewrites) plus optional running text.
BaseTrainResult train_base(const Tokenizer& tokenizer, std::span<const EditSample> qa_corpus,
                           std::span<const EditSample> text_corpus, ModelConfig config, const TrainOptions& opts);

}  // namespace scen
