#include "cellgraph/cli.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>

#include "CLI11.hpp"
#include "cellgraph/baselines.hpp"
#include "cellgraph/error.hpp"
#include "cellgraph/experiment.hpp"
#include "cellgraph/io.hpp"
#include "cellgraph/parallel.hpp"
#include "cellgraph/radiomics.hpp"
#include "json.hpp"

namespace cellgraph {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDefaultSeed = 42;

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// `sample_id,cell_id,class_label`. A feature table CSV is accepted as well.
std::map<std::pair<std::string, std::uint32_t>, int> read_labels(const fs::path& path) {
    const std::string text = io::read_file(path);
    const auto lines = io::split_lines(text);
    std::map<std::pair<std::string, std::uint32_t>, int> out;
    if (!lines.empty() && lines[0].rfind("cell_id,sample_id,", 0) == 0) {
        for (const auto& r : parse_cell_table_csv(text).rows) out[{r.sample_id, r.cell_id}] = r.label;
        return out;
    }
    if (lines.empty() || lines[0] != "sample_id,cell_id,class_label") {
        throw Error("labels file " + path.string() + ": expected header 'sample_id,cell_id,class_label'");
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = io::split_csv_line(lines[i]);
        if (f.size() != 3) throw Error("labels file " + path.string() + ": line " + std::to_string(i + 1) + " malformed");
        try {
            out[{f[0], std::uint32_t(std::stoul(f[1]))}] = std::stoi(f[2]);
        } catch (const std::exception&) {
            throw Error("labels file " + path.string() + ": line " + std::to_string(i + 1) + " malformed");
        }
    }
    return out;
}

std::string encode_pooled_labels(const CellTable& t) {
    std::string out = "sample_id,cell_id,class_label\n";
    for (const auto& r : t.rows) out += r.sample_id + "," + std::to_string(r.cell_id) + "," + std::to_string(r.label) + "\n";
    return out;
}

void attach_labels(CellTable& t, const fs::path& labels_path) {
    const auto labels = read_labels(labels_path);
    for (auto& r : t.rows) {
        auto it = labels.find({r.sample_id, r.cell_id});
        r.label = it == labels.end() ? kUnlabeled : it->second;
    }
}

std::vector<int> labels_of(const CellTable& t) {
    std::vector<int> y;
    for (const auto& r : t.rows) y.push_back(r.label);
    return y;
}

SplitMasks make_split(const ExperimentConfig& cfg, const CellTable& t) {
    const auto y = labels_of(t);
    const std::uint64_t seed = derive_seed(cfg.seed, "split");
    if (!cfg.sample_level_split) return stratified_split(y, cfg.split_ratios, seed);
    std::vector<std::string> sids;
    for (const auto& r : t.rows) sids.push_back(r.sample_id);
    return sample_level_split(y, sids, cfg.split_ratios, seed);
}

Metrics test_metrics(const CellTable& t, const SplitMasks& split, const Matrix& probs, double threshold) {
    std::vector<int> y;
    std::vector<double> p;
    for (std::size_t i : split.test_idx()) {
        y.push_back(t.rows[i].label);
        p.push_back(probs(Eigen::Index(i), 1));
    }
    return compute_metrics(y, p, threshold);
}

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
    unsigned threads = 0;

    std::uint64_t seed_or(std::uint64_t fallback) const { return seed ? *seed : fallback; }
    const std::string& require_out(const char* stage) const {
        if (out.empty()) throw CLI::RequiredError(std::string("--out is required for ") + stage);
        return out;
    }
};

ExperimentConfig load_experiment_config(const Globals& g) {
    ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : experiment_config_from_json(io::read_file(g.config));
    cfg.seed = g.seed_or(g.config.empty() ? kDefaultSeed : cfg.seed);
    return cfg;
}

const std::vector<std::string> kMetricNames{"accuracy", "precision", "recall", "f1", "roc_auc"};

}  // namespace

std::string render_bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                                 const std::vector<double>& values) {
    if (labels.size() != values.size()) throw Error("bar chart: label and value counts differ");
    const double bar = 22.0, gap = 8.0, left = 56.0, top = 40.0, plot_h = 240.0, label_h = 190.0;
    const double width = left + double(labels.size()) * (bar + gap) + 24.0;
    const double height = top + plot_h + label_h;
    const char* palette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"};
    std::map<std::string, int> colour_of;

    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) + "\" height=\"" +
                    fmt("%.0f", height) + "\" viewBox=\"0 0 " + fmt("%.0f", width) + " " + fmt("%.0f", height) +
                    "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + fmt("%.1f", width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         xml_escape(title) + "</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t * 0.25, y = top + plot_h * (1.0 - v);
        s += "<line x1=\"" + fmt("%.1f", left) + "\" y1=\"" + fmt("%.1f", y) + "\" x2=\"" + fmt("%.1f", width - 16) +
             "\" y2=\"" + fmt("%.1f", y) + "\" stroke=\"#dddddd\"/>\n";
        s += "<text x=\"" + fmt("%.1f", left - 6) + "\" y=\"" + fmt("%.1f", y + 4) + "\" text-anchor=\"end\">" +
             fmt("%.2f", v) + "</text>\n";
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double x = left + gap / 2 + double(i) * (bar + gap);
        // Colour by the last dash-separated token (the model in grid labels).
        const std::string key = labels[i].substr(labels[i].rfind('-') == std::string::npos ? 0 : labels[i].rfind('-') + 1);
        const int colour = colour_of.emplace(key, int(colour_of.size()) % 6).first->second;
        const double v = values[i];
        if (std::isfinite(v)) {
            const double h = plot_h * std::clamp(v, 0.0, 1.0);
            s += "<rect x=\"" + fmt("%.1f", x) + "\" y=\"" + fmt("%.2f", top + plot_h - h) + "\" width=\"" +
                 fmt("%.1f", bar) + "\" height=\"" + fmt("%.2f", h) + "\" fill=\"" + palette[colour] + "\"><title>" +
                 xml_escape(labels[i]) + ": " + fmt("%.4f", v) + "</title></rect>\n";
        } else {
            s += "<text x=\"" + fmt("%.1f", x + bar / 2) + "\" y=\"" + fmt("%.1f", top + plot_h - 4) +
                 "\" text-anchor=\"middle\" fill=\"#999999\">n/a</text>\n";
        }
        const double lx = x + bar / 2, ly = top + plot_h + 8;
        s += "<text x=\"" + fmt("%.1f", lx) + "\" y=\"" + fmt("%.1f", ly) + "\" text-anchor=\"end\" transform=\"rotate(-60 " +
             fmt("%.1f", lx) + " " + fmt("%.1f", ly) + ")\">" + xml_escape(labels[i]) + "</text>\n";
    }
    s += "<line x1=\"" + fmt("%.1f", left) + "\" y1=\"" + fmt("%.1f", top + plot_h) + "\" x2=\"" +
         fmt("%.1f", width - 16) + "\" y2=\"" + fmt("%.1f", top + plot_h) + "\" stroke=\"black\"/>\n";
    s += "</svg>\n";
    return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cell classification from multiplexed tissue images: feature extraction, graph building, "
                 "dimensionality reduction, graph and tabular models, experiment grid.",
                 "cellgraph"};
    app.fallthrough();
    app.require_subcommand(1, 1);
    app.footer(
        "Stages: synth -> extract -> graph / reduce -> train / baseline -> evaluate; "
        "experiment runs the whole grid and report renders its tables and charts.");

    Globals g;
    app.add_option("--seed", g.seed, "Root seed; every stage derives its sub-seeds from it");
    app.add_option("--config", g.config, "JSON config (synth: dataset parameters; others: experiment config)");
    app.add_option("--out", g.out, "Output path (file or directory, depending on the stage)");
    app.add_option("--threads", g.threads, "Worker threads, 0 = all cores")->default_val(0);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic multiplex dataset (images, masks, labels)");
    std::optional<int> n_samples, n_cells, image_size, n_channels;
    synth->add_option("--samples", n_samples, "Number of samples");
    synth->add_option("--cells", n_cells, "Cells per sample");
    synth->add_option("--size", image_size, "Image side length in pixels");
    synth->add_option("--channels", n_channels, "Antigen channels");

    // extract
    auto* extract = app.add_subcommand("extract", "Per-cell feature table (expression or radiomics) from a dataset");
    std::string dataset_path, feature_type = "expression", pooling = "mean", labels_out;
    int levels = 16;
    extract->add_option("--dataset", dataset_path, "Dataset directory or manifest.json")->required();
    extract->add_option("--features", feature_type, "expression | radiomics")
        ->check(CLI::IsMember({"expression", "radiomics"}));
    extract->add_option("--pooling", pooling, "Expression pooling: mean | median")->check(CLI::IsMember({"mean", "median"}));
    extract->add_option("--levels", levels, "Radiomics gray levels")->check(CLI::Range(2, 4096));
    extract->add_option("--labels-out", labels_out, "Also write pooled labels (sample_id,cell_id,class_label)");

    // graph
    auto* graph = app.add_subcommand("graph", "kNN cell graph (feature similarity or spatial) as an edge list");
    std::string features_path, kind = "feature", metric = "euclidean";
    int k = 5;
    graph->add_option("--features", features_path, "Feature table CSV")->required();
    graph->add_option("--kind", kind, "feature | spatial")->check(CLI::IsMember({"feature", "spatial"}));
    graph->add_option("--k", k, "Neighbours per node")->check(CLI::PositiveNumber);
    graph->add_option("--metric", metric, "euclidean | cosine")->check(CLI::IsMember({"euclidean", "cosine"}));

    // reduce
    auto* reduce_cmd = app.add_subcommand("reduce", "Dimensionality reduction (pca, tsne, umap) of a feature table");
    std::string method;
    std::optional<int> dim, neighbors;
    std::optional<double> perplexity;
    bool no_standardize = false;
    reduce_cmd->add_option("--features", features_path, "Feature table CSV")->required();
    reduce_cmd->add_option("--method", method, "pca | tsne | umap")->required()->check(CLI::IsMember({"pca", "tsne", "umap"}));
    reduce_cmd->add_option("--dim", dim, "Output dimension");
    reduce_cmd->add_option("--perplexity", perplexity, "tSNE perplexity");
    reduce_cmd->add_option("--neighbors", neighbors, "UMAP neighbours");
    reduce_cmd->add_flag("--no-standardize", no_standardize, "Skip z-scoring the columns first");

    // train
    auto* train = app.add_subcommand("train", "Train GRAND on a graph and feature table; writes model and predictions");
    std::string graph_path, labels_path;
    std::optional<int> epochs, hidden;
    std::optional<double> lr;
    train->add_option("--graph", graph_path, "Edge list from `graph`")->required();
    train->add_option("--features", features_path, "Feature table CSV (node order = edge list order)")->required();
    train->add_option("--labels", labels_path, "Labels CSV (sample_id,cell_id,class_label) or a feature table")
        ->required();
    train->add_option("--epochs", epochs, "Maximum epochs");
    train->add_option("--hidden", hidden, "Hidden units");
    train->add_option("--lr", lr, "Learning rate");

    // baseline
    auto* baseline = app.add_subcommand("baseline", "Train a tabular baseline (random_forest | gradient_boosting)");
    std::string model_name = "random_forest";
    baseline->add_option("--features", features_path, "Feature table CSV")->required();
    baseline->add_option("--labels", labels_path, "Labels CSV or a feature table")->required();
    baseline->add_option("--model", model_name, "random_forest | gradient_boosting")
        ->check(CLI::IsMember({"random_forest", "gradient_boosting"}));

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Metrics from a predictions CSV");
    std::string predictions_path, split_name = "test";
    double threshold = 0.5;
    evaluate->add_option("--predictions", predictions_path, "predictions.csv from train, baseline or experiment")
        ->required();
    evaluate->add_option("--split", split_name, "train | val | test | all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    evaluate->add_option("--threshold", threshold, "Positive-class probability threshold")->check(CLI::Range(0.0, 1.0));

    // experiment
    app.add_subcommand("experiment", "Run the feature x reduction x model grid; writes report.json and table1.csv");

    // report
    auto* report = app.add_subcommand("report", "Render table1.csv and one bar-chart SVG per metric from report.json");
    std::string report_path;
    report->add_option("--report", report_path, "report.json from `experiment`")->required();

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp&) {
        // Help for the subcommand that asked for it, if any.
        const CLI::App* target = &app;
        for (const auto* sub : app.get_subcommands()) target = sub;
        out << target->help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "cellgraph: " << e.what() << "\nRun with --help for usage.\n";
        return kExitUsage;
    }

    const CLI::App* sub = app.get_subcommands().front();
    const std::string stage = sub->get_name();
    const unsigned saved_threads = num_threads();
    try {
        set_num_threads(g.threads);
        if (stage == "synth") {
            SynthConfig sc = g.config.empty() ? SynthConfig{} : synth_config_from_json(io::read_file(g.config));
            if (g.seed) sc.seed = *g.seed;
            if (n_samples) sc.n_samples = *n_samples;
            if (n_samples && sc.n_melanoma > sc.n_samples) sc.n_melanoma = sc.n_samples;
            if (n_cells) sc.cells_per_sample = *n_cells;
            if (image_size) sc.image_size = *image_size;
            if (n_channels) sc.n_channels = *n_channels;
            sc.check();
            const fs::path manifest = write_synthetic_dataset(sc, g.require_out("synth"));
            out << manifest.string() << "\n";
        } else if (stage == "extract") {
            const fs::path dst = g.require_out("extract");
            const Dataset ds = load_dataset(dataset_path);
            std::vector<CellTable> parts(ds.samples.size());
            std::vector<std::size_t> n_warn(ds.samples.size(), 0);
            radiomics::RadiomicsConfig rc;
            rc.levels = levels;
            parallel_for(parts.size(), [&](std::size_t s) {
                if (feature_type == "expression") {
                    parts[s] = expression_profile(ds.samples[s], pooling == "mean" ? Pooling::mean : Pooling::median);
                } else {
                    auto r = radiomics::radiomic_feature_table(ds.samples[s], rc);
                    n_warn[s] = r.warnings.size();
                    parts[s] = std::move(r.table);
                }
            });
            const CellTable table = concat_tables(parts);
            io::write_file_atomic(dst, encode_cell_table_csv(table));
            if (!labels_out.empty()) io::write_file_atomic(labels_out, encode_pooled_labels(table));
            const std::size_t warnings = std::accumulate(n_warn.begin(), n_warn.end(), std::size_t(0));
            if (warnings) err << "extract: " << warnings << " degenerate texture regions written as NaN\n";
            out << table.rows.size() << " cells, " << table.n_features() << " features\n";
        } else if (stage == "graph") {
            const fs::path dst = g.require_out("graph");
            CellTable t = read_cell_table_csv(features_path);
            t.sort();
            const TrainingGraph tg = assemble_training_graph({t}, graph_kind_from_string(kind), k, metric_from_string(metric));
            for (const auto& w : tg.graph.warnings) err << "graph: " << w << "\n";
            io::write_file_atomic(dst, encode_edge_list(tg.graph));
            out << tg.graph.n_nodes << " nodes, " << tg.graph.edges.size() << " edges\n";
        } else if (stage == "reduce") {
            const fs::path dst = g.require_out("reduce");
            ExperimentConfig ec = load_experiment_config(g);
            CellTable t = read_cell_table_csv(features_path);
            t.sort();
            Matrix x = table_features(t);
            if (!no_standardize) {
                std::vector<std::size_t> all(t.rows.size());
                std::iota(all.begin(), all.end(), 0);
                x = ZScore::fit(x, all).apply(x);
            }
            ReductionConfig rc = ec.reduction;
            rc.method = reduction_from_string(method);
            if (dim) {
                rc.dim = *dim;
                rc.tsne.dim = *dim;
            }
            if (perplexity) rc.tsne.perplexity = *perplexity;
            if (neighbors) rc.umap.n_neighbors = *neighbors;
            rc.seed = derive_seed(ec.seed, "reduce:" + method);
            const Embedding e = reduce(x, rc);
            CellTable r;
            for (Eigen::Index j = 0; j < e.coords.cols(); ++j) r.feature_names.push_back(method + "_" + std::to_string(j));
            for (std::size_t i = 0; i < t.rows.size(); ++i) {
                CellRow row = t.rows[i];
                row.features.assign(e.coords.row(Eigen::Index(i)).data(),
                                    e.coords.row(Eigen::Index(i)).data() + e.coords.cols());
                r.rows.push_back(std::move(row));
            }
            io::write_file_atomic(dst, encode_cell_table_csv(r));
            out << r.rows.size() << " x " << r.n_features() << " embedding\n";
        } else if (stage == "train" || stage == "baseline") {
            const fs::path dir = g.require_out(stage.c_str());
            ExperimentConfig ec = load_experiment_config(g);
            CellTable t = read_cell_table_csv(features_path);
            t.sort();
            attach_labels(t, labels_path);
            const SplitMasks split = make_split(ec, t);
            const Matrix raw = table_features(t);
            const Matrix x = ZScore::fit(raw, split.train_idx()).apply(raw);
            const std::vector<int> y = labels_of(t);
            Matrix probs;
            if (stage == "train") {
                const CellGraph cg = parse_edge_list(io::read_file(graph_path));
                if (cg.n_nodes != t.rows.size()) {
                    throw Error("graph has " + std::to_string(cg.n_nodes) + " nodes but the feature table has " +
                                std::to_string(t.rows.size()) + " rows");
                }
                GrandConfig gc = ec.grand;
                if (epochs) gc.max_epochs = *epochs;
                if (hidden) gc.hidden_dim = *hidden;
                if (lr) gc.learning_rate = *lr;
                gc.seed = derive_seed(ec.seed, "train");
                const NormAdj adj = normalize_adjacency(cg);
                const GrandModel model = train_grand(adj, x, y, split, gc);
                probs = predict_grand(model, adj, x).probs;
                save_grand_checkpoint(model, dir / "model.grnd");
                io::write_file_atomic(dir / "history.csv", encode_history_csv(model.history));
            } else {
                std::vector<std::size_t> tr = split.train_idx();
                Matrix xt(Eigen::Index(tr.size()), x.cols());
                std::vector<int> yt;
                for (std::size_t r = 0; r < tr.size(); ++r) {
                    xt.row(Eigen::Index(r)) = x.row(Eigen::Index(tr[r]));
                    yt.push_back(y[tr[r]]);
                }
                TabularModel model;
                if (model_name == "random_forest") {
                    ForestConfig fc = ec.forest;
                    fc.seed = derive_seed(ec.seed, "baseline");
                    model = train_random_forest(xt, yt, fc);
                } else {
                    BoostConfig bc = ec.boost;
                    bc.seed = derive_seed(ec.seed, "baseline");
                    model = train_gradient_boosting(xt, yt, bc);
                }
                probs = predict_tabular(model, x);
                save_tabular_model(model, dir / "model.bin");
            }
            const Metrics m = test_metrics(t, split, probs, ec.threshold);
            io::write_file_atomic(dir / "predictions.csv", encode_predictions_csv(t, split, probs));
            io::write_file_atomic(dir / "metrics.json", encode_metrics_json(m));
            out << "test f1 " << io::format_double(m.f1) << ", accuracy " << io::format_double(m.accuracy) << "\n";
        } else if (stage == "evaluate") {
            const auto lines = io::split_lines(io::read_file(predictions_path));
            if (lines.empty() || lines[0] != "sample_id,cell_id,label,split,prob_1") {
                throw Error("predictions file " + predictions_path + ": unexpected header");
            }
            std::vector<int> y;
            std::vector<double> p;
            for (std::size_t i = 1; i < lines.size(); ++i) {
                const auto f = io::split_csv_line(lines[i]);
                if (f.size() != 5) throw Error("predictions file " + predictions_path + ": line " + std::to_string(i + 1) + " malformed");
                const int label = std::stoi(f[2]);
                if (label < 0 || (split_name != "all" && f[3] != split_name)) continue;
                y.push_back(label);
                p.push_back(io::parse_double(f[4]));
            }
            if (y.empty()) throw Error("no labelled rows in split '" + split_name + "'");
            const Metrics m = compute_metrics(y, p, threshold);
            for (const auto& w : m.warnings) err << "evaluate: " << w << "\n";
            const std::string text = encode_metrics_json(m);
            if (g.out.empty()) out << text;
            else io::write_file_atomic(g.out, text);
        } else if (stage == "experiment") {
            if (g.config.empty()) throw CLI::RequiredError("--config is required for experiment");
            const fs::path dir = g.require_out("experiment");
            ExperimentConfig ec = load_experiment_config(g);
            if (g.threads) ec.threads = g.threads;
            const ExperimentReport rep = run_experiment(ec, dir);
            std::size_t failed = 0;
            for (const auto& c : rep.cells) {
                if (!c.ok) {
                    ++failed;
                    err << "experiment: cell " << c.name() << " failed: " << c.reason << "\n";
                }
            }
            out << rep.cells.size() << " cells, " << failed << " failed; report at " << (dir / "report.json").string()
                << "\n";
        } else if (stage == "report") {
            const fs::path dir = g.require_out("report");
            json doc;
            try {
                doc = json::parse(io::read_file(report_path));
            } catch (const json::exception& e) {
                throw Error("report " + report_path + " is not valid JSON: " + e.what());
            }
            if (!doc.contains("cells") || !doc["cells"].is_array()) throw Error("report " + report_path + " has no cells");
            std::vector<std::string> names;
            std::map<std::string, std::vector<double>> series;
            std::string csv = "feature_type,reduction,model,status";
            for (const auto& m : kMetricNames) csv += "," + m;
            csv += "\n";
            for (const auto& c : doc["cells"]) {
                const std::string ft = c.value("feature_type", ""), red = c.value("reduction", ""),
                                  mod = c.value("model", ""), status = c.value("status", "failed");
                names.push_back(ft + "-" + red + "-" + mod);
                csv += ft + "," + red + "," + mod + "," + status;
                for (const auto& m : kMetricNames) {
                    double v = std::nan("");
                    if (c.contains("metrics") && c["metrics"].contains(m) && c["metrics"][m].is_number()) {
                        v = c["metrics"][m].get<double>();
                    }
                    series[m].push_back(v);
                    csv += "," + io::format_double(v);
                }
                csv += "\n";
            }
            io::write_file_atomic(dir / "table1.csv", csv);
            for (const auto& m : kMetricNames) {
                io::write_file_atomic(dir / (m + ".svg"), render_bar_chart_svg(m, names, series[m]));
            }
            out << names.size() << " cells rendered to " << dir.string() << "\n";
        }
    } catch (const CLI::ParseError& e) {
        set_num_threads(saved_threads);
        err << "cellgraph " << stage << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        set_num_threads(saved_threads);
        err << "cellgraph " << stage << ": error: " << e.what() << "\n";
        return kExitFailure;
    }
    set_num_threads(saved_threads);
    return kExitOk;
}

int run_cli(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace cellgraph
