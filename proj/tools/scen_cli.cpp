// scen: train a toy base model, edit it sequentially, evaluate and sweep.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "scen/config.hpp"
#include "scen/io_util.hpp"
#include "scen/knowledge_base.hpp"
#include "scen/metrics.hpp"
#include "scen/sweep.hpp"
#include "scen/synth.hpp"

using namespace scen;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kBadConfig = 2, kDiverged = 3, kMismatch = 4, kAssertFailed = 5 };

struct AssertFailed : Error {
    using Error::Error;
};

struct Common {
    std::string config_path;
    std::string out_dir;
    std::optional<float> theta;
    std::optional<std::size_t> layer;
    std::optional<std::size_t> group_size;
    bool assert_checks = false;
};

ExperimentConfig resolve(const Common& c) {
    if (c.config_path.empty()) throw ConfigError("--config is required");
    if (!fs::exists(c.config_path)) throw ConfigError("config file not found: " + c.config_path);
    ExperimentConfig cfg = load_config(c.config_path);
    if (const char* env = std::getenv("SCEN_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
    if (!c.out_dir.empty()) cfg.output_dir = c.out_dir;
    if (c.theta) cfg.scen.theta = *c.theta;
    if (c.layer) cfg.scen.layer = *c.layer;
    if (c.group_size) cfg.scen.group_size = *c.group_size;
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    return cfg;
}

void write_out(const ExperimentConfig& cfg, const std::string& name, const std::string& bytes) {
    write_file_atomic(fs::path(cfg.output_dir) / name, bytes);
}

void print(const json& j) { std::cout << j.dump() << std::endl; }

json score(const MetricScore& s) { return {{"percent", s.percent}, {"correct", s.correct}, {"count", s.count}}; }

// -------------------------------------------------------------- commands

int cmd_train_base(const Common& common) {
    const ExperimentConfig cfg = resolve(common);
    TrainOptions opts = cfg.train;
    if (opts.log_every > 0) {
        opts.on_log = [](std::size_t step, float loss) { std::cerr << "step " << step << " loss " << loss << "\n"; };
    }
    json summary;
    if (cfg.mode == DatasetMode::qa) {
        const FactDataset ds = gen_synthetic_facts(cfg.dataset.seed, cfg.dataset.n_facts, cfg.dataset.n_rewrites);
        check_vocab_fits(ds.words, cfg.vocab_limit);
        const Tokenizer tok = Tokenizer::build(ds.words);
        BaseTrainResult r = train_base(tok, ds.facts, {}, cfg.model, opts);
        const EditSplit split =
            split_edit_loc(r.checkpoint, ds, cfg.dataset.n_edit, cfg.dataset.n_loc, cfg.dataset.seed);
        write_out(cfg, "base.ckpt", serialize_checkpoint(r.checkpoint));
        write_out(cfg, "facts.jsonl", to_jsonl(ds.facts));
        write_out(cfg, "edit.jsonl", to_jsonl(split.edit));
        write_out(cfg, "loc.jsonl", to_jsonl(split.loc));
        summary["memorized"] = split.memorized;
        summary["facts"] = ds.facts.size();
        summary["edit"] = split.edit.size();
        summary["loc"] = split.loc.size();
        summary["train"] = {{"steps", r.report.steps},
                            {"initial_loss", r.report.initial_loss},
                            {"final_loss", r.report.final_loss}};
        summary["fingerprint"] = hex64(fingerprint(r.checkpoint));
    } else {
        const BioDataset ds = gen_synthetic_bios(cfg.dataset.seed, cfg.dataset.n_edit, cfg.dataset.n_accurate,
                                                 cfg.dataset.n_unrelated);
        check_vocab_fits(ds.words, cfg.vocab_limit);
        const Tokenizer tok = Tokenizer::build(ds.words);
        BaseTrainResult r = train_base(tok, {}, ds.trained, cfg.model, opts);
        write_out(cfg, "base.ckpt", serialize_checkpoint(r.checkpoint));
        write_out(cfg, "edit.jsonl", to_jsonl(ds.edited));
        write_out(cfg, "accurate.jsonl", to_jsonl(ds.accurate));
        write_out(cfg, "unrelated.jsonl", to_jsonl(ds.unrelated));
        summary["edit"] = ds.edited.size();
        summary["accurate"] = ds.accurate.size();
        summary["unrelated"] = ds.unrelated.size();
        summary["train"] = {{"steps", r.report.steps},
                            {"initial_loss", r.report.initial_loss},
                            {"final_loss", r.report.final_loss}};
        summary["fingerprint"] = hex64(fingerprint(r.checkpoint));
    }
    summary["config"] = json::parse(cfg.to_json());
    write_out(cfg, "train_report.json", summary.dump(2) + "\n");
    summary.erase("config");
    print(summary);
    return kOk;
}

struct EditArgs {
    std::string checkpoint, dataset;
};

int cmd_edit(const Common& common, const EditArgs& a) {
    const ExperimentConfig cfg = resolve(common);
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const std::vector<EditSample> edits = load_jsonl(a.dataset);
    std::size_t expert_ok = 0, neuron_ok = 0;
    const EditRun run = sequential_edit(ck, edits, cfg.scen, [&](const EditLogEntry& e) {
        expert_ok += e.expert_success;
        neuron_ok += e.neuron_success;
    });
    save_kb(fs::path(cfg.output_dir) / "kb.scenkb", make_kb(ck, run.system, cfg.scen.neuron_input));
    write_out(cfg, "edit_log.jsonl", edit_log_jsonl(run.log));
    print({{"samples", edits.size()},
           {"steps", run.log.size()},
           {"experts", run.system.experts.size()},
           {"expert_success", expert_ok},
           {"neuron_success", neuron_ok}});
    return kOk;
}

struct EvalArgs {
    std::string checkpoint, kb, edits, loc, accurate, unrelated;
};

void check_bound(const char* what, double value, double bound, std::vector<std::string>& failures) {
    if (bound >= 0.0 && value < bound) {
        failures.push_back(std::string(what) + " " + std::to_string(value) + " < " + std::to_string(bound));
    }
}

int cmd_eval(const Common& common, const EvalArgs& a) {
    const ExperimentConfig cfg = resolve(common);
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    KnowledgeBase kb = load_kb_for(a.kb, ck);
    if (common.theta) kb.system.bank.theta = cfg.scen.theta;
    const float theta = kb.system.bank.theta;
    const std::vector<EditSample> edits = a.edits.empty() ? std::vector<EditSample>{} : load_jsonl(a.edits);
    const std::vector<EditSample> loc = a.loc.empty() ? std::vector<EditSample>{} : load_jsonl(a.loc);

    Evaluator ev(ck, kb.system, kb.mode);
    MetricsReport report = evaluate(ev, edits, loc, theta);
    json summary;
    if (cfg.mode == DatasetMode::text) {
        const auto accurate = a.accurate.empty() ? std::vector<EditSample>{} : load_jsonl(a.accurate);
        const auto unrelated = a.unrelated.empty() ? std::vector<EditSample>{} : load_jsonl(a.unrelated);
        report.ppl = eval_ppl_suite(ck, kb.system, kb.mode, edits, accurate, unrelated);
        const PplTriple base = eval_ppl_suite(ck, EditedSystem{}, kb.mode, edits, accurate, unrelated);
        summary["ppl"] = {{"edited", report.ppl->edited.mean},
                          {"accurate", report.ppl->accurate.mean},
                          {"unrelated", report.ppl->unrelated.mean}};
        summary["ppl_base"] = {{"edited", base.edited.mean},
                               {"accurate", base.accurate.mean},
                               {"unrelated", base.unrelated.mean}};
    }
    json echo = json::parse(cfg.to_json());
    echo["kb_theta"] = theta;
    report.config_json = echo.dump();
    write_out(cfg, "metrics.json", report.to_json());

    summary["theta"] = theta;
    summary["reliability"] = score(report.reliability);
    summary["generality"] = score(report.generality);
    summary["locality"] = score(report.locality);
    summary["locality"]["unrouted"] = report.locality.unrouted;
    print(summary);

    if (common.assert_checks) {
        std::vector<std::string> failures;
        check_bound("reliability", report.reliability.percent, cfg.checks.min_reliability, failures);
        check_bound("generality", report.generality.percent, cfg.checks.min_generality, failures);
        check_bound("locality", report.locality.percent, cfg.checks.min_locality, failures);
        if (!failures.empty()) {
            std::string msg = "assertion failed:";
            for (const auto& f : failures) msg += " " + f + ";";
            throw AssertFailed(msg);
        }
    }
    return kOk;
}

struct SweepArgs {
    std::string axis;
    std::string checkpoint, kb, edits, loc;
};

int cmd_sweep(const Common& common, const SweepArgs& a) {
    const ExperimentConfig cfg = resolve(common);
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const std::vector<EditSample> edits = load_jsonl(a.edits);
    const std::vector<EditSample> loc = a.loc.empty() ? std::vector<EditSample>{} : load_jsonl(a.loc);
    auto progress = [](const SweepPoint& p) {
        std::cerr << "point " << p.value << " reliability " << p.report.reliability.percent << "\n";
    };
    SweepResult r;
    if (a.axis == "threshold") {
        if (a.kb.empty()) throw ConfigError("sweep threshold needs --kb");
        const KnowledgeBase kb = load_kb_for(a.kb, ck);
        const std::vector<double> grid = cfg.sweeps.thresholds.empty() ? default_theta_grid() : cfg.sweeps.thresholds;
        r = run_threshold_sweep(ck, kb.system, kb.mode, edits, loc, grid);
    } else if (a.axis == "layer") {
        const std::vector<std::size_t> layers =
            cfg.sweeps.layers.empty() ? default_sweep_layers(ck.config.n_layers) : cfg.sweeps.layers;
        for (std::size_t l : layers) {
            if (l >= ck.config.n_layers) throw ConfigError("sweeps.layers entry exceeds the checkpoint's layers");
        }
        r = run_layer_sweep(ck, edits, loc, cfg.scen, layers, progress);
    } else {
        r = run_compression_sweep(ck, edits, loc, cfg.scen, cfg.sweeps.group_sizes, progress);
    }
    const std::string stem = "sweep_" + a.axis;
    write_out(cfg, stem + ".json", r.to_json());
    write_out(cfg, stem + ".csv", r.to_csv());
    std::cout << r.to_csv();

    if (common.assert_checks && a.axis == "threshold" && cfg.checks.threshold_trend) {
        const TrendCheck t = threshold_trend(r, cfg.checks.trend_slack);
        if (!t.pass) {
            throw AssertFailed("threshold trend failed: inversions reliability " +
                               std::to_string(t.reliability_inversions) + ", generality " +
                               std::to_string(t.generality_inversions) + ", locality " +
                               std::to_string(t.locality_inversions));
        }
    }
    return kOk;
}

struct ExportArgs {
    std::string checkpoint, kb, edits;
};

int cmd_export_activations(const Common& common, const ExportArgs& a) {
    const ExperimentConfig cfg = resolve(common);
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const KnowledgeBase kb = load_kb_for(a.kb, ck);
    const std::vector<EditSample> edits = load_jsonl(a.edits);
    const Tensor m = activation_matrix(kb.system.bank, capture_prompts(ck, edits, kb.system.bank.layer, kb.mode));
    write_out(cfg, "activations.csv", matrix_csv(m));
    print({{"rows", m.rows}, {"cols", m.cols}, {"stepwise", stepwise_fraction(m, cfg.scen.group_size)}});
    return kOk;
}

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("-c,--config", c.config_path, "experiment config (JSON)");
    sub->add_option("-o,--out-dir", c.out_dir, "output directory (overrides config and SCEN_OUTPUT_DIR)");
    sub->add_option("--theta", c.theta, "routing threshold override");
    sub->add_option("--layer", c.layer, "edited layer override");
    sub->add_option("--group-size", c.group_size, "samples per expert override");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential model editing with per-edit experts and indexing neurons"};
    app.require_subcommand(1);
    Common common;
    EditArgs edit_args;
    EvalArgs eval_args;
    SweepArgs sweep_args;
    ExportArgs export_args;

    auto* train = app.add_subcommand("train-base", "train the base model and write the dataset splits");
    add_common(train, common);

    auto* edit = app.add_subcommand("edit", "sequentially edit a checkpoint into a knowledge base");
    add_common(edit, common);
    edit->add_option("--checkpoint", edit_args.checkpoint, "base model checkpoint")->required();
    edit->add_option("--dataset", edit_args.dataset, "edit samples (JSONL)")->required();

    auto* eval = app.add_subcommand("eval", "score an edited system");
    add_common(eval, common);
    eval->add_option("--checkpoint", eval_args.checkpoint, "base model checkpoint")->required();
    eval->add_option("--kb", eval_args.kb, "knowledge base written by edit")->required();
    eval->add_option("--edits", eval_args.edits, "edit samples (JSONL)");
    eval->add_option("--loc", eval_args.loc, "locality prompts (JSONL)");
    eval->add_option("--accurate", eval_args.accurate, "accurate texts for perplexity (JSONL)");
    eval->add_option("--unrelated", eval_args.unrelated, "unrelated texts for perplexity (JSONL)");
    eval->add_flag("--assert", common.assert_checks, "exit 5 when a configured bound fails");

    auto* sweep = app.add_subcommand("sweep", "sweep one axis (threshold|layer|compression)");
    add_common(sweep, common);
    sweep->add_option("axis", sweep_args.axis, "sweep axis")->required()->check(CLI::IsMember({"threshold", "layer", "compression"}));
    sweep->add_option("--checkpoint", sweep_args.checkpoint, "base model checkpoint")->required();
    sweep->add_option("--kb", sweep_args.kb, "knowledge base written by edit");
    sweep->add_option("--edits", sweep_args.edits, "edit samples (JSONL)")->required();
    sweep->add_option("--loc", sweep_args.loc, "locality prompts (JSONL)");
    sweep->add_flag("--assert", common.assert_checks, "exit 5 when the threshold trend test fails");

    auto* exp = app.add_subcommand("export-activations", "write the activation matrix of the edit samples");
    add_common(exp, common);
    exp->add_option("--checkpoint", export_args.checkpoint, "base model checkpoint")->required();
    exp->add_option("--kb", export_args.kb, "knowledge base written by edit")->required();
    exp->add_option("--edits", export_args.edits, "edit samples (JSONL)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kBadConfig;
    }

    try {
        if (*train) return cmd_train_base(common);
        if (*edit) return cmd_edit(common, edit_args);
        if (*eval) return cmd_eval(common, eval_args);
        if (*sweep) return cmd_sweep(common, sweep_args);
        if (*exp) return cmd_export_activations(common, export_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kBadConfig;
    } catch (const TrainingDiverged& e) {
        std::cerr << "training diverged at step " << e.step() << ": " << e.what() << "\n";
        return kDiverged;
    } catch (const VocabularyMismatch& e) {
        std::cerr << "checkpoint/dataset mismatch: " << e.what() << "\n";
        return kMismatch;
    } catch (const IntegrityError& e) {
        std::cerr << "mismatch: " << e.what() << "\n";
        return kMismatch;
    } catch (const AssertFailed& e) {
        std::cerr << e.what() << "\n";
        return kAssertFailed;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
