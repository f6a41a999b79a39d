#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "scen/checkpoint.hpp"
#include "scen/config.hpp"
#include "scen/editor.hpp"
#include "scen/io_util.hpp"
#include "scen/knowledge_base.hpp"
#include "scen/metrics.hpp"
#include "scen/synth.hpp"

namespace py = pybind11;
using namespace scen;

namespace {

py::dict sample_dict(const EditSample& s) {
    py::dict d;
    d["id"] = s.id;
    d["prompt"] = s.prompt;
    d["answer"] = s.answer;
    d["rewrites"] = s.rewrites;
    return d;
}

py::dict routing_dict(const RoutingDecision& r) {
    py::dict d;
    d["activations"] = r.activations;
    d["max_activation"] = r.max_activation;
    d["chosen"] = r.chosen ? py::cast(*r.chosen) : py::none();
    d["theta"] = r.theta;
    return d;
}

}  // namespace

PYBIND11_MODULE(_scen, m) {
    m.doc() = "Sequential model editing: toy transformer, per-edit experts and indexing neurons";

    py::register_exception<Error>(m, "ScenError");

    m.def(
        "indexing_loss",
        [](double a_t, const std::vector<double>& neg, double alpha, double beta, double m_) {
            return indexing_loss(a_t, neg, alpha, beta, m_);
        },
        py::arg("a_t"), py::arg("negatives"), py::arg("alpha") = 0.7,
          py::arg("beta") = 0.3, py::arg("m") = 1.0);
    m.def(
        "decide",
        [](std::vector<float> acts, float theta) { return routing_dict(decide(std::move(acts), theta)); },
        py::arg("activations"), py::arg("theta"));

    m.def(
        "gen_synthetic_facts",
        [](std::uint64_t seed, std::size_t n_facts, std::size_t n_rewrites) {
            py::list out;
            for (const EditSample& s : gen_synthetic_facts(seed, n_facts, n_rewrites).facts) out.append(sample_dict(s));
            return out;
        },
        py::arg("seed"), py::arg("n_facts"), py::arg("n_rewrites") = 3);

    m.def(
        "normalize_config", [](const std::string& text) { return parse_config(text).to_json(); }, py::arg("text"),
        "Validate a config and return it with every default filled in.");

    py::class_<Checkpoint>(m, "Checkpoint")
        .def_static("load", &load_checkpoint, py::arg("path"))
        .def_property_readonly("fingerprint", [](const Checkpoint& c) { return hex64(fingerprint(c)); })
        .def_property_readonly("n_layers", [](const Checkpoint& c) { return c.config.n_layers; })
        .def_property_readonly("d_ffn", [](const Checkpoint& c) { return c.config.d_ffn; })
        .def_property_readonly("vocab_size", [](const Checkpoint& c) { return c.config.vocab_size; })
        .def("greedy_answer", [](const Checkpoint& c, const std::string& p) { return greedy_answer(c, p); },
             py::arg("prompt"))
        .def(
            "fnn_input",
            [](const Checkpoint& c, const std::string& p, std::size_t layer, bool post) {
                return capture_fnn_input(c, p, layer, post ? NeuronInput::post_activation : NeuronInput::pre_activation);
            },
            py::arg("prompt"), py::arg("layer"), py::arg("post_activation") = true);

    py::class_<KnowledgeBase>(m, "KnowledgeBase")
        .def_static("load", &load_kb_for, py::arg("path"), py::arg("checkpoint"))
        .def_property_readonly("experts", [](const KnowledgeBase& kb) { return kb.system.experts.size(); })
        .def_property_readonly("layer", [](const KnowledgeBase& kb) { return kb.system.bank.layer; })
        .def_property(
            "theta", [](const KnowledgeBase& kb) { return kb.system.bank.theta; },
            [](KnowledgeBase& kb, float t) {
                if (!(t > 0.0f && t < 1.0f)) throw Error("theta must lie in (0, 1)");
                kb.system.bank.theta = t;
            })
        .def(
            "route",
            [](const KnowledgeBase& kb, const Checkpoint& c, const std::string& p) {
                return routing_dict(route(c, p, kb.system.bank, kb.mode));
            },
            py::arg("checkpoint"), py::arg("prompt"))
        .def(
            "generate",
            [](const KnowledgeBase& kb, const Checkpoint& c, const std::string& p) {
                const EditedAnswer a = edited_generate(c, p, kb.system, kb.mode);
                return py::make_tuple(a.answer, routing_dict(a.routing));
            },
            py::arg("checkpoint"), py::arg("prompt"));
}
