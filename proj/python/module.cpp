#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cellgraph/cli.hpp"
#include "cellgraph/dimred.hpp"
#include "cellgraph/error.hpp"
#include "cellgraph/experiment.hpp"
#include "cellgraph/features.hpp"
#include "cellgraph/grand.hpp"
#include "cellgraph/graph.hpp"
#include "cellgraph/metrics.hpp"
#include "cellgraph/radiomics.hpp"
#include "cellgraph/split.hpp"
#include "cellgraph/synthgen.hpp"

namespace py = pybind11;
using namespace cellgraph;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

py::dict table_to_dict(const CellTable& t) {
    const auto n = Eigen::Index(t.rows.size());
    RowMatrix x(n, Eigen::Index(t.n_features()));
    std::vector<std::string> sample_id;
    std::vector<std::uint32_t> cell_id;
    std::vector<int> label;
    std::vector<double> cx, cy;
    for (Eigen::Index i = 0; i < n; ++i) {
        const CellRow& r = t.rows[std::size_t(i)];
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = r.features[std::size_t(j)];
        sample_id.push_back(r.sample_id);
        cell_id.push_back(r.cell_id);
        label.push_back(r.label);
        cx.push_back(r.cx);
        cy.push_back(r.cy);
    }
    py::dict d;
    d["feature_names"] = t.feature_names;
    d["sample_id"] = sample_id;
    d["cell_id"] = cell_id;
    d["label"] = label;
    d["cx"] = cx;
    d["cy"] = cy;
    d["features"] = x;
    return d;
}

CellTable extract(const std::string& manifest, const std::string& kind, const std::string& pooling, int levels) {
    const Dataset ds = load_dataset(manifest);
    std::vector<CellTable> tables;
    for (const Sample& s : ds.samples) {
        if (kind == "expression") {
            tables.push_back(expression_profile(s, pooling == "median" ? Pooling::median : Pooling::mean));
        } else if (kind == "radiomics") {
            radiomics::RadiomicsConfig cfg;
            cfg.levels = levels;
            tables.push_back(radiomics::radiomic_feature_table(s, cfg).table);
        } else {
            throw Error("unknown feature type '" + kind + "'");
        }
    }
    CellTable t = concat_tables(tables);
    t.sort();
    return t;
}

CellGraph graph_from_edges(std::size_t n, const std::vector<std::array<std::uint32_t, 2>>& edges) {
    CellGraph g;
    g.n_nodes = n;
    for (const auto& e : edges) g.edges.push_back({e[0], e[1], 1.0});
    g.check();
    return g;
}

py::dict metrics_dict(const Metrics& m) {
    py::dict d;
    d["accuracy"] = m.accuracy;
    d["precision"] = m.precision;
    d["recall"] = m.recall;
    d["f1"] = m.f1;
    d["roc_auc"] = m.roc_auc;
    d["tp"] = m.tp;
    d["fp"] = m.fp;
    d["fn"] = m.fn;
    d["tn"] = m.tn;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cell-graph classification of multiplexed tissue images";
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

    m.def(
        "write_synthetic_dataset",
        [](const std::string& out_dir, const std::string& config_json) {
            const SynthConfig cfg = config_json.empty() ? SynthConfig{} : synth_config_from_json(config_json);
            return write_synthetic_dataset(cfg, out_dir).string();
        },
        py::arg("out_dir"), py::arg("config_json") = "", "Writes a synthetic dataset and returns the manifest path.");

    m.def(
        "extract_features",
        [](const std::string& manifest, const std::string& kind, const std::string& pooling, int levels) {
            return table_to_dict(extract(manifest, kind, pooling, levels));
        },
        py::arg("manifest"), py::arg("kind") = "expression", py::arg("pooling") = "mean", py::arg("levels") = 16);

    m.def(
        "knn_graph",
        [](const RowMatrix& x, int k, const std::string& metric) {
            const CellGraph g = knn_feature_graph(x, k, metric_from_string(metric));
            std::vector<std::array<std::uint32_t, 2>> out;
            out.reserve(g.edges.size());
            for (const Edge& e : g.edges) out.push_back({e.src, e.dst});
            return out;
        },
        py::arg("features"), py::arg("k") = 5, py::arg("metric") = "euclidean",
        "Directed (src, dst) pairs, k per node.");

    m.def(
        "propagate",
        [](std::size_t n, const std::vector<std::array<std::uint32_t, 2>>& edges, const RowMatrix& x, int k) {
            return RowMatrix(propagate(normalize_adjacency(graph_from_edges(n, edges)), x, k));
        },
        py::arg("n_nodes"), py::arg("edges"), py::arg("x"), py::arg("k") = 8);

    m.def(
        "reduce",
        [](const RowMatrix& x, const std::string& method, int dim, std::uint64_t seed) {
            ReductionConfig cfg;
            cfg.method = reduction_from_string(method);
            cfg.dim = dim;
            cfg.seed = seed;
            return RowMatrix(reduce(x, cfg).coords);
        },
        py::arg("x"), py::arg("method") = "pca", py::arg("dim") = 2, py::arg("seed") = 0);

    m.def(
        "stratified_split",
        [](const std::vector<int>& labels, std::array<double, 3> ratios, std::uint64_t seed) {
            const SplitMasks s = stratified_split(labels, ratios, seed);
            return py::make_tuple(s.train_idx(), s.val_idx(), s.test_idx());
        },
        py::arg("labels"), py::arg("ratios") = std::array<double, 3>{0.7, 0.1, 0.2}, py::arg("seed") = 0,
        "Index lists (train, val, test).");

    m.def(
        "compute_metrics",
        [](const std::vector<int>& y, const std::vector<double>& prob, double threshold) {
            return metrics_dict(compute_metrics(y, prob, threshold));
        },
        py::arg("y_true"), py::arg("prob_pos"), py::arg("threshold") = 0.5);

    m.def(
        "run_experiment",
        [](const std::string& config_json, const std::string& out_dir) {
            const ExperimentConfig cfg = experiment_config_from_json(config_json.empty() ? "{}" : config_json);
            ExperimentReport report;
            {
                py::gil_scoped_release release;
                report = run_experiment(cfg, out_dir);
            }
            return encode_report_json(report);
        },
        py::arg("config_json") = "", py::arg("out_dir") = "", "Runs the grid and returns report.json text.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command line in-process; returns (exit_code, stdout, stderr).");
}
