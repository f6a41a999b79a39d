#include "scen/config.hpp"

#include <charconv>
#include <set>

#include "json.hpp"

#include "scen/io_util.hpp"

namespace scen {

namespace {

// shortest decimal that reads back as the same float, so 0.7f prints as 0.7
double tidy(float v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::strtod(std::string(buf, r.ptr).c_str(), nullptr);
}

using json = nlohmann::ordered_json;

// Reads an object field by field and rejects whatever is left over.
class Section {
   public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(path_ + "." + k + ": unknown key");
        }
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) throw ConfigError("");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            out = v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong type (" + std::string(v.type_name()) + ")");
        }
    }

    template <class T>
    void list(const char* key, std::vector<T>& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        if (!v.is_array()) throw ConfigError(path_ + "." + key + ": expected a list");
        out.clear();
        for (const json& e : v) {
            if (!e.is_number() || (std::is_integral_v<T> && (!e.is_number_integer() || e.get<long long>() < 0))) {
                throw ConfigError(path_ + "." + key + ": bad list element " + e.dump());
            }
            out.push_back(e.get<T>());
        }
    }

    template <class F>
    void child(const char* key, F&& f) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        Section s(j_.at(key), path_ + "." + key);
        f(s);
    }

    // String field mapped onto an enum through `names`.
    template <class E>
    void choice(const char* key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
        std::string s;
        bool present = j_.contains(key);
        get(key, s);
        if (!present) return;
        for (const auto& [n, e] : names) {
            if (s == n) {
                out = e;
                return;
            }
        }
        throw ConfigError(path_ + "." + key + ": unknown value '" + s + "'");
    }

   private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

const std::initializer_list<std::pair<const char*, TrainOptimizer>> kOptimizers = {{"sgd", TrainOptimizer::sgd},
                                                                                    {"adam", TrainOptimizer::adam}};

const char* name_of(TrainOptimizer o) { return o == TrainOptimizer::sgd ? "sgd" : "adam"; }
const char* name_of(NeuronInput n) { return n == NeuronInput::pre_activation ? "pre_activation" : "post_activation"; }
const char* name_of(Nonlinearity n) { return n == Nonlinearity::relu ? "relu" : "gelu"; }
const char* name_of(DatasetMode m) { return m == DatasetMode::qa ? "qa" : "text"; }

}  // namespace

ExperimentConfig default_config() { return ExperimentConfig{}; }

void ExperimentConfig::validate() const {
    try {
        ModelConfig m = model;
        m.vocab_size = std::max<std::size_t>(m.vocab_size, Tokenizer::kNumSpecial + 1);
        m.validate();
        scen.validate();
        if (scen.layer >= model.n_layers) throw Error("scen.layer must be < model.n_layers");
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (vocab_limit <= Tokenizer::kNumSpecial) throw ConfigError("vocab_limit too small");
    if (train.steps == 0 || train.batch_size == 0) throw ConfigError("train.steps and train.batch_size must be > 0");
    if (!(train.lr > 0.0f)) throw ConfigError("train.lr must be > 0");
    if (!(train.final_lr_fraction >= 0.0f && train.final_lr_fraction <= 1.0f)) {
        throw ConfigError("train.final_lr_fraction must lie in [0, 1]");
    }
    if (mode == DatasetMode::qa) {
        if (dataset.n_facts < 10) throw ConfigError("dataset.n_facts must be >= 10");
        if (dataset.n_rewrites < 3 || dataset.n_rewrites > 4) throw ConfigError("dataset.n_rewrites must be 3 or 4");
        if (dataset.n_edit == 0 || dataset.n_edit >= dataset.n_facts) {
            throw ConfigError("dataset.n_edit must be in [1, n_facts)");
        }
    } else if (dataset.n_edit == 0) {
        throw ConfigError("dataset.n_edit must be >= 1");
    }
    for (double t : sweeps.thresholds) {
        if (!(t > 0.0 && t < 1.0)) throw ConfigError("sweeps.thresholds must lie in (0, 1)");
    }
    for (std::size_t l : sweeps.layers) {
        if (l >= model.n_layers) throw ConfigError("sweeps.layers entry out of range");
    }
    for (std::size_t k : sweeps.group_sizes) {
        if (k == 0) throw ConfigError("sweeps.group_sizes entries must be >= 1");
    }
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    {
        Section root(j, "config");
        root.choice("mode", c.mode, {{"qa", DatasetMode::qa}, {"text", DatasetMode::text}});
        root.get("output_dir", c.output_dir);
        root.get("vocab_limit", c.vocab_limit);
        root.child("model", [&](Section& s) {
            s.get("d_model", c.model.d_model);
            s.get("n_layers", c.model.n_layers);
            s.get("n_heads", c.model.n_heads);
            s.get("d_ffn", c.model.d_ffn);
            s.get("max_seq_len", c.model.max_seq_len);
            s.choice("nonlinearity", c.model.nonlinearity, {{"relu", Nonlinearity::relu}, {"gelu", Nonlinearity::gelu}});
            s.get("seed", c.model.seed);
        });
        root.child("train", [&](Section& s) {
            s.get("steps", c.train.steps);
            s.get("batch_size", c.train.batch_size);
            s.get("lr", c.train.lr);
            s.get("warmup_steps", c.train.warmup_steps);
            s.get("final_lr_fraction", c.train.final_lr_fraction);
            s.get("seed", c.train.seed);
            s.get("log_every", c.train.log_every);
        });
        root.child("dataset", [&](Section& s) {
            s.get("seed", c.dataset.seed);
            s.get("n_facts", c.dataset.n_facts);
            s.get("n_rewrites", c.dataset.n_rewrites);
            s.get("n_edit", c.dataset.n_edit);
            s.get("n_loc", c.dataset.n_loc);
            s.get("n_accurate", c.dataset.n_accurate);
            s.get("n_unrelated", c.dataset.n_unrelated);
        });
        root.child("scen", [&](Section& s) {
            s.get("layer", c.scen.layer);
            s.get("alpha", c.scen.alpha);
            s.get("beta", c.scen.beta);
            s.get("m", c.scen.m);
            s.get("theta", c.scen.theta);
            s.choice("neuron_input", c.scen.neuron_input,
                     {{"pre_activation", NeuronInput::pre_activation}, {"post_activation", NeuronInput::post_activation}});
            s.get("group_size", c.scen.group_size);
            s.child("expert", [&](Section& e) {
                e.choice("optimizer", c.scen.expert.optimizer, kOptimizers);
                e.get("lr", c.scen.expert.lr);
                e.get("max_steps", c.scen.expert.max_steps);
                e.get("target_loss", c.scen.expert.target_loss);
            });
            s.child("neuron", [&](Section& n) {
                n.choice("optimizer", c.scen.neuron.optimizer, kOptimizers);
                n.get("lr", c.scen.neuron.lr);
                n.get("max_steps", c.scen.neuron.max_steps);
                n.get("stop_activation", c.scen.neuron.stop_activation);
                n.get("stop_margin", c.scen.neuron.stop_margin);
            });
        });
        root.child("sweeps", [&](Section& s) {
            s.list("thresholds", c.sweeps.thresholds);
            s.list("layers", c.sweeps.layers);
            s.list("group_sizes", c.sweeps.group_sizes);
        });
        root.child("assert", [&](Section& s) {
            s.get("min_reliability", c.checks.min_reliability);
            s.get("min_generality", c.checks.min_generality);
            s.get("min_locality", c.checks.min_locality);
            s.get("threshold_trend", c.checks.threshold_trend);
            s.get("trend_slack", c.checks.trend_slack);
        });
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return parse_config(text);
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["mode"] = name_of(mode);
    j["output_dir"] = output_dir;
    j["vocab_limit"] = vocab_limit;
    j["model"] = {{"d_model", model.d_model},         {"n_layers", model.n_layers},
                  {"n_heads", model.n_heads},         {"d_ffn", model.d_ffn},
                  {"max_seq_len", model.max_seq_len}, {"nonlinearity", name_of(model.nonlinearity)},
                  {"seed", model.seed}};
    j["train"] = {{"steps", train.steps},
                  {"batch_size", train.batch_size},
                  {"lr", tidy(train.lr)},
                  {"warmup_steps", train.warmup_steps},
                  {"final_lr_fraction", tidy(train.final_lr_fraction)},
                  {"seed", train.seed},
                  {"log_every", train.log_every}};
    j["dataset"] = {{"seed", dataset.seed},         {"n_facts", dataset.n_facts}, {"n_rewrites", dataset.n_rewrites},
                    {"n_edit", dataset.n_edit},     {"n_loc", dataset.n_loc},     {"n_accurate", dataset.n_accurate},
                    {"n_unrelated", dataset.n_unrelated}};
    j["scen"] = {{"layer", scen.layer},
                 {"alpha", tidy(scen.alpha)},
                 {"beta", tidy(scen.beta)},
                 {"m", tidy(scen.m)},
                 {"theta", tidy(scen.theta)},
                 {"neuron_input", name_of(scen.neuron_input)},
                 {"group_size", scen.group_size},
                 {"expert",
                  {{"optimizer", name_of(scen.expert.optimizer)},
                   {"lr", tidy(scen.expert.lr)},
                   {"max_steps", scen.expert.max_steps},
                   {"target_loss", tidy(scen.expert.target_loss)}}},
                 {"neuron",
                  {{"optimizer", name_of(scen.neuron.optimizer)},
                   {"lr", tidy(scen.neuron.lr)},
                   {"max_steps", scen.neuron.max_steps},
                   {"stop_activation", tidy(scen.neuron.stop_activation)},
                   {"stop_margin", tidy(scen.neuron.stop_margin)}}}};
    j["sweeps"] = {{"thresholds", sweeps.thresholds}, {"layers", sweeps.layers}, {"group_sizes", sweeps.group_sizes}};
    j["assert"] = {{"min_reliability", checks.min_reliability},
                   {"min_generality", checks.min_generality},
                   {"min_locality", checks.min_locality},
                   {"threshold_trend", checks.threshold_trend},
                   {"trend_slack", checks.trend_slack}};
    return j.dump(2) + "\n";
}

}  // namespace scen
