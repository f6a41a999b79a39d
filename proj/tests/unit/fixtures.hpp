#pragma once

#include "scen/synth.hpp"
#include "scen/train.hpp"

namespace fixtures {

inline scen::ModelConfig tiny_config() {
    scen::ModelConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ffn = 32;
    c.max_seq_len = 24;
    c.seed = 3;
    return c;
}

struct TinyWorld {
    scen::FactDataset facts;
    scen::Checkpoint base;
};

// A 12-fact model trained once per test binary.
inline const TinyWorld& tiny_world() {
    static const TinyWorld w = [] {
        TinyWorld t;
        t.facts = scen::gen_synthetic_facts(11, 12, 3);
        const scen::Tokenizer tok = scen::Tokenizer::build(t.facts.words);
        scen::TrainOptions o;
        o.steps = 300;
        o.batch_size = 16;
        o.warmup_steps = 20;
        o.lr = 1e-2f;
        t.base = scen::train_base(tok, t.facts.facts, {}, tiny_config(), o).checkpoint;
        return t;
    }();
    return w;
}

}  // namespace fixtures
