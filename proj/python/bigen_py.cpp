#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "bigen/cli.hpp"
#include "bigen/corpus.hpp"
#include "bigen/knowledge_bank.hpp"
#include "bigen/metrics.hpp"
#include "bigen/retrieval.hpp"
#include "bigen/text.hpp"

namespace py = pybind11;
using namespace bigen;

namespace {

py::dict report_dict(const metrics::MetricReport& r) {
    py::dict d;
    for (const auto& [k, v] : r.fields()) d[py::str(k)] = v;
    return d;
}

}  // namespace

PYBIND11_MODULE(_bigen, m) {
    m.doc() = "Bindings for the BiGen report generation core";

    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
    py::register_exception<NumericalFault>(m, "NumericalFault", PyExc_ArithmeticError);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the bigen command line in process; returns (exit_code, stdout, stderr).");

    py::class_<CorpusConfig>(m, "CorpusConfig")
        .def(py::init<>())
        .def_readwrite("seed", &CorpusConfig::seed)
        .def_readwrite("n_cases", &CorpusConfig::n_cases)
        .def_readwrite("tissue_count", &CorpusConfig::tissue_count)
        .def_readwrite("patches_min", &CorpusConfig::patches_min)
        .def_readwrite("patches_max", &CorpusConfig::patches_max)
        .def_readwrite("dim", &CorpusConfig::dim);

    py::class_<Case>(m, "Case")
        .def_readonly("case_id", &Case::case_id)
        .def_readonly("patient_id", &Case::patient_id)
        .def_readonly("report", &Case::report)
        .def_readonly("grid_rows", &Case::grid_rows)
        .def_readonly("grid_cols", &Case::grid_cols)
        .def_readonly("tissue_ids", &Case::tissue_ids)
        .def_property_readonly("patch_count", &Case::patch_count);

    py::class_<Corpus>(m, "Corpus")
        .def_readonly("cases", &Corpus::cases)
        .def_readonly("config", &Corpus::config)
        .def("entity_dictionary", [](const Corpus& c) { return c.atlas.entity_dictionary(); })
        .def("save", [](const Corpus& c, const std::filesystem::path& p) { save_corpus(p, c); });
    m.def("generate_corpus", &generate_corpus, py::arg("config"));
    m.def("load_corpus", &load_corpus, py::arg("path"));

    py::class_<Splits>(m, "Splits")
        .def_readonly("train", &Splits::train)
        .def_readonly("val", &Splits::val)
        .def_readonly("test", &Splits::test);
    m.def(
        "split_dataset", [](const Corpus& c, std::uint64_t seed) { return split_dataset(c.cases, seed); },
        py::arg("corpus"), py::arg("seed"));

    py::class_<KnowledgeBank>(m, "KnowledgeBank")
        .def_property_readonly("dim", &KnowledgeBank::dim)
        .def_property_readonly("sentences", &KnowledgeBank::sentences)
        .def("__len__", &KnowledgeBank::size)
        .def("row", [](const KnowledgeBank& b, std::size_t i) {
            if (i >= b.size()) throw py::index_error("bank row out of range");
            const auto r = b.row(i);
            return std::vector<float>(r.begin(), r.end());
        });
    m.def(
        "build_bank",
        [](const Corpus& c, const Splits& s) { return build_bank(c, s, "train", SentenceEmbedder(c)); },
        py::arg("corpus"), py::arg("splits"), "Builds the sentence bank from the training split.");
    m.def("save_bank", &save_bank, py::arg("path"), py::arg("bank"));
    m.def(
        "load_bank", [](const std::filesystem::path& p) { return load_bank(p); }, py::arg("path"));
    m.def("split_sentences", &split_sentences, py::arg("report"));

    m.def("selection_count", &selection_count, py::arg("patch_count"), py::arg("k"));
    m.def(
        "select_top_k", [](const std::vector<double>& a, double k) { return select_top_k(a, k); }, py::arg("attention"),
        py::arg("k"));
    m.def(
        "partition_regions",
        [](const std::vector<float>& e, std::size_t dim, int size) { return partition_regions(e, dim, size); },
        py::arg("embeddings"), py::arg("dim"), py::arg("m"));
    m.def(
        "retrieve_all",
        [](const std::vector<float>& emb, std::size_t dim, const std::vector<double>& attention,
           const KnowledgeBank& bank, double k, int region, int v) {
            const auto rk = retrieve_all(emb, dim, attention, bank, {k, region, v});
            py::list regions;
            for (const auto& r : rk.regions) {
                py::dict d;
                d["indices"] = r.indices;
                d["similarities"] = r.similarities;
                d["feature"] = r.feature;
                regions.append(d);
            }
            py::dict out;
            out["selected_patches"] = rk.selected_patches;
            out["features"] = rk.features;
            out["regions"] = regions;
            return out;
        },
        py::arg("embeddings"), py::arg("dim"), py::arg("attention"), py::arg("bank"), py::arg("k") = 0.4,
        py::arg("m") = 20, py::arg("v") = 3);

    m.def("tokenize", &text::tokenize, py::arg("text"));
    m.def("words", &text::words, py::arg("text"));

    m.def("bleu", &metrics::bleu, py::arg("candidates"), py::arg("references"), py::arg("n") = 4);
    m.def("rouge_l", &metrics::rouge_l, py::arg("candidates"), py::arg("references"));
    m.def("meteor_simplified", &metrics::meteor_simplified, py::arg("candidates"), py::arg("references"));
    m.def("fact_ent_simplified", &metrics::fact_ent, py::arg("candidates"), py::arg("references"),
          py::arg("dictionary"));
    m.def(
        "her2_metrics",
        [](const metrics::Texts& c, const metrics::Texts& r) {
            const auto h = metrics::her2_metrics(c, r);
            py::dict d;
            d["precision"] = h.precision;
            d["recall"] = h.recall;
            d["f1"] = h.f1;
            d["tp"] = h.tp;
            d["fp"] = h.fp;
            d["fn"] = h.fn;
            d["tn"] = h.tn;
            return d;
        },
        py::arg("candidates"), py::arg("references"));
    m.def(
        "evaluate",
        [](const metrics::Texts& c, const metrics::Texts& r, const std::vector<std::string>& dict) {
            return report_dict(metrics::evaluate(c, r, dict));
        },
        py::arg("candidates"), py::arg("references"), py::arg("dictionary"));
}
