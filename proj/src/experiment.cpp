#include "cellgraph/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>

#include "cellgraph/error.hpp"
#include "cellgraph/io.hpp"
#include "cellgraph/parallel.hpp"
#include "cellgraph/radiomics.hpp"
#include "cellgraph/random.hpp"
#include "json.hpp"

namespace cellgraph {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kFeatureTypes{"expression", "radiomics"};
const std::vector<std::string> kReductions{"none", "pca", "tsne", "umap"};
const std::vector<std::string> kModels{"grand_feature_graph", "grand_spatial_graph", "random_forest",
                                       "gradient_boosting"};

bool is_grand(const std::string& model) { return model.rfind("grand_", 0) == 0; }

std::string space_key(const std::string& model) { return is_grand(model) ? "grand" : model; }

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Reads optional keys from a JSON object and rejects unknown ones.
class Reader {
public:
    Reader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
        if (!obj_.is_object()) throw Error(where_ + ": expected a JSON object");
    }

    template <typename T>
    void opt(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = obj_.find(key);
        if (it == obj_.end()) return;
        try {
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw Error(where_ + ": bad value for '" + key + "': " + e.what());
        }
    }

    const json* sub(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void done() const {
        for (const auto& [key, v] : obj_.items()) {
            if (!seen_.count(key)) throw Error(where_ + ": unknown key '" + key + "'");
        }
    }

private:
    const json& obj_;
    std::string where_;
    std::set<std::string> seen_;
};

ParamKind param_kind_from_string(const std::string& s) {
    if (s == "uniform") return ParamKind::uniform;
    if (s == "log_uniform") return ParamKind::log_uniform;
    if (s == "integer") return ParamKind::integer;
    if (s == "categorical") return ParamKind::categorical;
    throw Error("unknown parameter kind '" + s + "'");
}

std::string to_string(ParamKind k) {
    switch (k) {
        case ParamKind::uniform: return "uniform";
        case ParamKind::log_uniform: return "log_uniform";
        case ParamKind::integer: return "integer";
        case ParamKind::categorical: return "categorical";
    }
    return "uniform";
}

ordered_json metrics_json(const Metrics& m) {
    auto num = [](double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); };
    ordered_json j;
    j["accuracy"] = num(m.accuracy);
    j["precision"] = num(m.precision);
    j["recall"] = num(m.recall);
    j["f1"] = num(m.f1);
    j["roc_auc"] = num(m.roc_auc);
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["fn"] = m.fn;
    j["tn"] = m.tn;
    return j;
}

ordered_json cell_json(const CellResult& c) {
    ordered_json j;
    j["feature_type"] = c.feature_type;
    j["reduction"] = c.reduction;
    j["model"] = c.model;
    j["status"] = c.ok ? "ok" : "failed";
    if (!c.ok) j["reason"] = c.reason;
    if (c.ok) {
        j["metrics"] = metrics_json(c.metrics);
        j["val_f1"] = c.val_f1;
    }
    if (c.n_trials > 0) {
        j["n_trials"] = c.n_trials;
        ordered_json p = ordered_json::object();
        for (const auto& [k, v] : c.params) p[k] = v;
        j["params"] = p;
    }
    if (!c.warnings.empty()) j["warnings"] = c.warnings;
    return j;
}

// Everything a grid cell needs, computed once and shared read-only.
struct Prepared {
    std::vector<CellTable> tables;  // per feature type, node order
    std::vector<std::string> table_errors;
    std::vector<int> labels;
    std::vector<std::array<double, 2>> centroids;
    std::vector<std::string> sample_ids;
    SplitMasks split;
    std::vector<std::size_t> train_idx, val_idx, test_idx;
};

struct Outcome {
    Metrics val;
    Metrics test;
    Matrix probs;  // all nodes
    std::string history_csv;
};

std::vector<int> gather(const std::vector<int>& v, const std::vector<std::size_t>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v[i]);
    return out;
}

std::vector<double> gather_col(const Matrix& m, const std::vector<std::size_t>& idx, Eigen::Index col) {
    std::vector<double> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(m(Eigen::Index(i), col));
    return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(Eigen::Index(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(Eigen::Index(r)) = m.row(Eigen::Index(idx[r]));
    return out;
}

}  // namespace

ZScore ZScore::fit(const Matrix& x, std::span<const std::size_t> rows) {
    ZScore z;
    const auto p = std::size_t(x.cols());
    z.mean.assign(p, 0.0);
    z.scale.assign(p, 1.0);
    for (std::size_t j = 0; j < p; ++j) {
        double sum = 0.0;
        std::size_t n = 0;
        for (auto i : rows) {
            const double v = x(Eigen::Index(i), Eigen::Index(j));
            if (std::isfinite(v)) {
                sum += v;
                ++n;
            }
        }
        if (n == 0) continue;
        const double mean = sum / double(n);
        double ss = 0.0;
        for (auto i : rows) {
            const double v = x(Eigen::Index(i), Eigen::Index(j));
            if (std::isfinite(v)) ss += (v - mean) * (v - mean);
        }
        const double sd = std::sqrt(ss / double(n));
        z.mean[j] = mean;
        if (sd > 1e-12 * std::max(1.0, std::abs(mean))) z.scale[j] = sd;
    }
    return z;
}

Matrix ZScore::apply(const Matrix& x) const {
    if (std::size_t(x.cols()) != mean.size()) throw Error("z-score: column count mismatch");
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double v = (x(i, j) - mean[std::size_t(j)]) / scale[std::size_t(j)];
            out(i, j) = std::isfinite(v) ? v : 0.0;
        }
    }
    return out;
}

ReducedUse reduced_use_from_string(const std::string& s) {
    if (s == "both") return ReducedUse::both;
    if (s == "graph") return ReducedUse::graph;
    if (s == "nodes") return ReducedUse::nodes;
    throw Error("unknown reduced-feature use '" + s + "' (expected both, graph or nodes)");
}

std::string to_string(ReducedUse u) {
    switch (u) {
        case ReducedUse::both: return "both";
        case ReducedUse::graph: return "graph";
        case ReducedUse::nodes: return "nodes";
    }
    return "both";
}

std::map<std::string, SearchSpace> ExperimentConfig::default_search_spaces() {
    return {
        {"grand",
         {{"learning_rate", ParamKind::log_uniform, 1e-3, 5e-2, {}},
          {"drop_rate", ParamKind::uniform, 0.1, 0.7, {}},
          {"temperature", ParamKind::uniform, 0.1, 1.0, {}},
          {"consistency_weight", ParamKind::log_uniform, 0.1, 2.0, {}},
          {"hidden_dim", ParamKind::integer, 16, 64, {}},
          {"prop_order", ParamKind::integer, 2, 10, {}}}},
        {"random_forest",
         {{"n_trees", ParamKind::integer, 50, 300, {}},
          {"max_depth", ParamKind::integer, 3, 12, {}},
          {"min_leaf", ParamKind::integer, 1, 10, {}}}},
        {"gradient_boosting",
         {{"n_rounds", ParamKind::integer, 50, 400, {}},
          {"max_depth", ParamKind::integer, 2, 6, {}},
          {"learning_rate", ParamKind::log_uniform, 0.01, 0.3, {}}}},
    };
}

void ExperimentConfig::check() const {
    auto check_list = [](const std::vector<std::string>& got, const std::vector<std::string>& allowed,
                         const char* what) {
        if (got.empty()) throw Error(std::string("experiment config: '") + what + "' is empty");
        std::set<std::string> seen;
        for (const auto& g : got) {
            if (std::find(allowed.begin(), allowed.end(), g) == allowed.end()) {
                throw Error(std::string("experiment config: unknown ") + what + " '" + g + "'");
            }
            if (!seen.insert(g).second) throw Error(std::string("experiment config: duplicate ") + what + " '" + g + "'");
        }
    };
    check_list(feature_types, kFeatureTypes, "feature_types");
    check_list(reductions, kReductions, "reductions");
    check_list(models, kModels, "models");
    if (dataset.empty()) synth.check();
    if (radiomics_levels < 2) throw Error("experiment config: radiomics_levels must be >= 2");
    if (reduction.dim < 1) throw Error("experiment config: reduction dim must be >= 1");
    if (graph_k < 1) throw Error("experiment config: graph k must be >= 1");
    grand.check();
    forest.check();
    boost.check();
    double sum = 0.0;
    for (double r : split_ratios) {
        if (!(r >= 0.0)) throw Error("experiment config: split ratios must be non-negative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("experiment config: split ratios must sum to 1");
    if (!(threshold > 0.0 && threshold < 1.0)) throw Error("experiment config: threshold must be in (0, 1)");
    if (search_budget < 0) throw Error("experiment config: search budget must be >= 0");
    for (const auto& [key, space] : search_spaces) {
        if (key != "grand" && key != "random_forest" && key != "gradient_boosting") {
            throw Error("experiment config: unknown search space '" + key + "'");
        }
        check_space(space);
    }
}

ExperimentConfig experiment_config_from_json(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(std::string("experiment config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c;
    Reader r(doc, "experiment config");
    r.opt("dataset", c.dataset);
    if (const json* s = r.sub("synth")) c.synth = synth_config_from_json(s->dump());
    r.opt("seed", c.seed);
    r.opt("threads", c.threads);
    r.opt("feature_types", c.feature_types);
    r.opt("reductions", c.reductions);
    r.opt("models", c.models);
    std::string pooling = c.pooling == Pooling::mean ? "mean" : "median";
    r.opt("pooling", pooling);
    if (pooling == "mean") c.pooling = Pooling::mean;
    else if (pooling == "median") c.pooling = Pooling::median;
    else throw Error("experiment config: pooling must be mean or median");
    r.opt("radiomics_levels", c.radiomics_levels);
    std::string use = to_string(c.reduced_use);
    r.opt("reduced_use", use);
    c.reduced_use = reduced_use_from_string(use);
    r.opt("threshold", c.threshold);

    if (const json* s = r.sub("reduction")) {
        Reader rr(*s, "reduction");
        rr.opt("dim", c.reduction.dim);
        if (const json* t = rr.sub("tsne")) {
            Reader tr(*t, "reduction.tsne");
            tr.opt("dim", c.reduction.tsne.dim);
            tr.opt("perplexity", c.reduction.tsne.perplexity);
            tr.opt("n_iters", c.reduction.tsne.n_iters);
            tr.opt("learning_rate", c.reduction.tsne.learning_rate);
            tr.opt("early_exaggeration", c.reduction.tsne.early_exaggeration);
            tr.opt("exaggeration_iters", c.reduction.tsne.exaggeration_iters);
            tr.done();
        }
        if (const json* u = rr.sub("umap")) {
            Reader ur(*u, "reduction.umap");
            ur.opt("n_neighbors", c.reduction.umap.n_neighbors);
            ur.opt("min_dist", c.reduction.umap.min_dist);
            ur.opt("spread", c.reduction.umap.spread);
            ur.opt("n_epochs", c.reduction.umap.n_epochs);
            ur.opt("learning_rate", c.reduction.umap.learning_rate);
            ur.opt("negative_sample_rate", c.reduction.umap.negative_sample_rate);
            ur.done();
        }
        rr.done();
    }
    if (const json* s = r.sub("graph")) {
        Reader gr(*s, "graph");
        gr.opt("k", c.graph_k);
        std::string metric = to_string(c.graph_metric);
        gr.opt("metric", metric);
        c.graph_metric = metric_from_string(metric);
        gr.done();
    }
    if (const json* s = r.sub("grand")) {
        Reader gr(*s, "grand");
        auto& g = c.grand;
        gr.opt("drop_rate", g.drop_rate);
        gr.opt("prop_order", g.prop_order);
        gr.opt("n_augmentations", g.n_augmentations);
        gr.opt("temperature", g.temperature);
        gr.opt("consistency_weight", g.consistency_weight);
        gr.opt("hidden_dim", g.hidden_dim);
        gr.opt("input_dropout", g.input_dropout);
        gr.opt("hidden_dropout", g.hidden_dropout);
        gr.opt("learning_rate", g.learning_rate);
        gr.opt("weight_decay", g.weight_decay);
        gr.opt("max_epochs", g.max_epochs);
        gr.opt("patience", g.patience);
        gr.opt("detach_sharpened_target", g.detach_sharpened_target);
        gr.done();
    }
    if (const json* s = r.sub("random_forest")) {
        Reader fr(*s, "random_forest");
        fr.opt("n_trees", c.forest.n_trees);
        fr.opt("max_depth", c.forest.max_depth);
        fr.opt("min_leaf", c.forest.min_leaf);
        fr.opt("features_per_split", c.forest.features_per_split);
        fr.opt("bootstrap", c.forest.bootstrap);
        fr.done();
    }
    if (const json* s = r.sub("gradient_boosting")) {
        Reader br(*s, "gradient_boosting");
        br.opt("n_rounds", c.boost.n_rounds);
        br.opt("max_depth", c.boost.max_depth);
        br.opt("learning_rate", c.boost.learning_rate);
        br.opt("min_leaf", c.boost.min_leaf);
        br.done();
    }
    if (const json* s = r.sub("split")) {
        Reader sr(*s, "split");
        sr.opt("ratios", c.split_ratios);
        std::string level = c.sample_level_split ? "sample" : "cell";
        sr.opt("level", level);
        if (level != "cell" && level != "sample") throw Error("split: level must be cell or sample");
        c.sample_level_split = level == "sample";
        sr.done();
    }
    if (const json* s = r.sub("search")) {
        Reader sr(*s, "search");
        sr.opt("budget", c.search_budget);
        if (const json* sp = sr.sub("spaces")) {
            if (!sp->is_object()) throw Error("search.spaces: expected an object");
            for (const auto& [model, params] : sp->items()) {
                if (!params.is_array()) throw Error("search.spaces." + model + ": expected an array");
                SearchSpace space;
                for (const auto& p : params) {
                    Reader pr(p, "search.spaces." + model);
                    ParamSpec spec;
                    std::string kind = "uniform";
                    pr.opt("name", spec.name);
                    pr.opt("kind", kind);
                    pr.opt("lo", spec.lo);
                    pr.opt("hi", spec.hi);
                    pr.opt("choices", spec.choices);
                    pr.done();
                    spec.kind = param_kind_from_string(kind);
                    space.push_back(std::move(spec));
                }
                c.search_spaces[model] = std::move(space);
            }
        }
        sr.done();
    }
    r.done();
    c.check();
    return c;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
    ordered_json j;
    j["dataset"] = c.dataset;
    j["synth"] = ordered_json::parse(synth_config_to_json(c.synth));
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["feature_types"] = c.feature_types;
    j["reductions"] = c.reductions;
    j["models"] = c.models;
    j["pooling"] = c.pooling == Pooling::mean ? "mean" : "median";
    j["radiomics_levels"] = c.radiomics_levels;
    j["reduced_use"] = to_string(c.reduced_use);
    j["threshold"] = c.threshold;
    ordered_json red;
    red["dim"] = c.reduction.dim;
    red["tsne"] = {{"dim", c.reduction.tsne.dim},
                   {"perplexity", c.reduction.tsne.perplexity},
                   {"n_iters", c.reduction.tsne.n_iters},
                   {"learning_rate", c.reduction.tsne.learning_rate},
                   {"early_exaggeration", c.reduction.tsne.early_exaggeration},
                   {"exaggeration_iters", c.reduction.tsne.exaggeration_iters}};
    red["umap"] = {{"n_neighbors", c.reduction.umap.n_neighbors},
                   {"min_dist", c.reduction.umap.min_dist},
                   {"spread", c.reduction.umap.spread},
                   {"n_epochs", c.reduction.umap.n_epochs},
                   {"learning_rate", c.reduction.umap.learning_rate},
                   {"negative_sample_rate", c.reduction.umap.negative_sample_rate}};
    j["reduction"] = red;
    j["graph"] = {{"k", c.graph_k}, {"metric", to_string(c.graph_metric)}};
    const auto& g = c.grand;
    j["grand"] = {{"drop_rate", g.drop_rate},
                  {"prop_order", g.prop_order},
                  {"n_augmentations", g.n_augmentations},
                  {"temperature", g.temperature},
                  {"consistency_weight", g.consistency_weight},
                  {"hidden_dim", g.hidden_dim},
                  {"input_dropout", g.input_dropout},
                  {"hidden_dropout", g.hidden_dropout},
                  {"learning_rate", g.learning_rate},
                  {"weight_decay", g.weight_decay},
                  {"max_epochs", g.max_epochs},
                  {"patience", g.patience},
                  {"detach_sharpened_target", g.detach_sharpened_target}};
    j["random_forest"] = {{"n_trees", c.forest.n_trees},
                          {"max_depth", c.forest.max_depth},
                          {"min_leaf", c.forest.min_leaf},
                          {"features_per_split", c.forest.features_per_split},
                          {"bootstrap", c.forest.bootstrap}};
    j["gradient_boosting"] = {{"n_rounds", c.boost.n_rounds},
                              {"max_depth", c.boost.max_depth},
                              {"learning_rate", c.boost.learning_rate},
                              {"min_leaf", c.boost.min_leaf}};
    j["split"] = {{"ratios", c.split_ratios}, {"level", c.sample_level_split ? "sample" : "cell"}};
    ordered_json spaces = ordered_json::object();
    for (const auto& [model, space] : c.search_spaces) {
        ordered_json arr = ordered_json::array();
        for (const auto& p : space) {
            ordered_json pj;
            pj["name"] = p.name;
            pj["kind"] = to_string(p.kind);
            if (p.kind == ParamKind::categorical) {
                pj["choices"] = p.choices;
            } else {
                pj["lo"] = p.lo;
                pj["hi"] = p.hi;
            }
            arr.push_back(pj);
        }
        spaces[model] = arr;
    }
    j["search"] = {{"budget", c.search_budget}, {"spaces", spaces}};
    return j.dump(2) + "\n";
}

void apply_params(GrandConfig& cfg, const ParamValues& params) {
    for (const auto& [k, v] : params) {
        if (k == "drop_rate") cfg.drop_rate = v;
        else if (k == "prop_order") cfg.prop_order = int(std::lround(v));
        else if (k == "n_augmentations") cfg.n_augmentations = int(std::lround(v));
        else if (k == "temperature") cfg.temperature = v;
        else if (k == "consistency_weight") cfg.consistency_weight = v;
        else if (k == "hidden_dim") cfg.hidden_dim = int(std::lround(v));
        else if (k == "input_dropout") cfg.input_dropout = v;
        else if (k == "hidden_dropout") cfg.hidden_dropout = v;
        else if (k == "learning_rate") cfg.learning_rate = v;
        else if (k == "weight_decay") cfg.weight_decay = v;
        else throw Error("grand: parameter '" + k + "' is not searchable");
    }
}

void apply_params(ForestConfig& cfg, const ParamValues& params) {
    for (const auto& [k, v] : params) {
        if (k == "n_trees") cfg.n_trees = int(std::lround(v));
        else if (k == "max_depth") cfg.max_depth = int(std::lround(v));
        else if (k == "min_leaf") cfg.min_leaf = int(std::lround(v));
        else if (k == "features_per_split") cfg.features_per_split = int(std::lround(v));
        else throw Error("random_forest: parameter '" + k + "' is not searchable");
    }
}

void apply_params(BoostConfig& cfg, const ParamValues& params) {
    for (const auto& [k, v] : params) {
        if (k == "n_rounds") cfg.n_rounds = int(std::lround(v));
        else if (k == "max_depth") cfg.max_depth = int(std::lround(v));
        else if (k == "learning_rate") cfg.learning_rate = v;
        else if (k == "min_leaf") cfg.min_leaf = int(std::lround(v));
        else throw Error("gradient_boosting: parameter '" + k + "' is not searchable");
    }
}

const CellResult* ExperimentReport::find(const std::string& feature_type, const std::string& reduction,
                                         const std::string& model) const {
    for (const auto& c : cells) {
        if (c.feature_type == feature_type && c.reduction == reduction && c.model == model) return &c;
    }
    return nullptr;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.check();
    const auto t_start = std::chrono::steady_clock::now();
    const unsigned saved_threads = num_threads();
    if (cfg.threads > 0) set_num_threads(cfg.threads);
    struct Restore {
        unsigned n;
        ~Restore() { set_num_threads(n); }
    } restore{saved_threads};

    ExperimentReport report;
    report.config = cfg;

    // Dataset.
    auto t0 = std::chrono::steady_clock::now();
    Dataset dataset = cfg.dataset.empty() ? generate_synthetic_dataset(cfg.synth).dataset : load_dataset(cfg.dataset);
    report.timings["dataset"] = elapsed(t0);

    // Per-sample feature extraction for every requested feature type.
    Prepared prep;
    const std::size_t n_ft = cfg.feature_types.size();
    const std::size_t n_samples = dataset.samples.size();
    prep.tables.resize(n_ft);
    prep.table_errors.resize(n_ft);
    t0 = std::chrono::steady_clock::now();
    {
        std::vector<CellTable> parts(n_ft * n_samples);
        std::vector<std::vector<std::string>> part_warn(n_ft * n_samples);
        std::vector<std::string> part_err(n_ft * n_samples);
        radiomics::RadiomicsConfig rcfg;
        rcfg.levels = cfg.radiomics_levels;
        parallel_for(parts.size(), [&](std::size_t t) {
            const std::size_t f = t / n_samples, s = t % n_samples;
            const Sample& sample = dataset.samples[s];
            try {
                if (cfg.feature_types[f] == "expression") {
                    parts[t] = expression_profile(sample, cfg.pooling);
                } else {
                    auto r = radiomics::radiomic_feature_table(sample, rcfg);
                    parts[t] = std::move(r.table);
                    if (!r.warnings.empty()) {
                        part_warn[t].push_back(std::to_string(r.warnings.size()) +
                                               " degenerate texture regions in sample " + sample.stack.sample_id);
                    }
                }
            } catch (const std::exception& e) {
                part_err[t] = e.what();
            }
        });
        for (std::size_t f = 0; f < n_ft; ++f) {
            std::vector<CellTable> per_sample;
            for (std::size_t s = 0; s < n_samples; ++s) {
                const std::size_t t = f * n_samples + s;
                if (!part_err[t].empty() && prep.table_errors[f].empty()) prep.table_errors[f] = part_err[t];
                for (auto& w : part_warn[t]) report.warnings.push_back(cfg.feature_types[f] + ": " + w);
                per_sample.push_back(std::move(parts[t]));
            }
            if (prep.table_errors[f].empty()) {
                try {
                    prep.tables[f] = concat_tables(per_sample);
                } catch (const std::exception& e) {
                    prep.table_errors[f] = e.what();
                }
            }
        }
    }
    report.timings["features"] = elapsed(t0);

    // Node order, labels and split come from the first successfully extracted table.
    const CellTable* nodes = nullptr;
    for (std::size_t f = 0; f < n_ft; ++f) {
        if (prep.table_errors[f].empty()) {
            nodes = &prep.tables[f];
            break;
        }
    }
    if (!nodes) throw Error("experiment: feature extraction failed: " + prep.table_errors[0]);
    for (std::size_t f = 0; f < n_ft; ++f) {
        if (!prep.table_errors[f].empty() || &prep.tables[f] == nodes) continue;
        bool same = prep.tables[f].rows.size() == nodes->rows.size();
        for (std::size_t i = 0; same && i < nodes->rows.size(); ++i) {
            same = prep.tables[f].rows[i].cell_id == nodes->rows[i].cell_id &&
                   prep.tables[f].rows[i].sample_id == nodes->rows[i].sample_id;
        }
        if (!same) prep.table_errors[f] = "node order differs from the other feature tables";
    }
    for (const auto& r : nodes->rows) {
        if (r.label > 1) throw Error("experiment: only binary labels (0, 1) are supported");
        prep.labels.push_back(r.label);
        prep.centroids.push_back({r.cx, r.cy});
        prep.sample_ids.push_back(r.sample_id);
    }
    const std::uint64_t split_seed = derive_seed(cfg.seed, "split");
    prep.split = cfg.sample_level_split ? sample_level_split(prep.labels, prep.sample_ids, cfg.split_ratios, split_seed)
                                        : stratified_split(prep.labels, cfg.split_ratios, split_seed);
    prep.train_idx = prep.split.train_idx();
    prep.val_idx = prep.split.val_idx();
    prep.test_idx = prep.split.test_idx();
    if (prep.train_idx.empty() || prep.test_idx.empty()) throw Error("experiment: empty train or test split");
    report.n_nodes = prep.labels.size();
    report.n_labeled = std::size_t(std::count_if(prep.labels.begin(), prep.labels.end(), [](int l) { return l >= 0; }));
    report.n_train = prep.train_idx.size();
    report.n_val = prep.val_idx.size();
    report.n_test = prep.test_idx.size();

    // Standardise, then reduce, per (feature type, reduction).
    std::vector<Matrix> standardised(n_ft);
    for (std::size_t f = 0; f < n_ft; ++f) {
        if (!prep.table_errors[f].empty()) continue;
        const Matrix raw = table_features(prep.tables[f]);
        standardised[f] = ZScore::fit(raw, prep.train_idx).apply(raw);
    }
    const std::size_t n_red = cfg.reductions.size();
    std::vector<Matrix> reduced(n_ft * n_red);
    std::vector<std::string> reduce_err(n_ft * n_red);
    std::vector<double> reduce_time(n_ft * n_red, 0.0);
    parallel_for(reduced.size(), [&](std::size_t t) {
        const std::size_t f = t / n_red, r = t % n_red;
        if (!prep.table_errors[f].empty()) {
            reduce_err[t] = "feature extraction failed: " + prep.table_errors[f];
            return;
        }
        const auto t1 = std::chrono::steady_clock::now();
        try {
            ReductionConfig rc = cfg.reduction;
            rc.method = reduction_from_string(cfg.reductions[r]);
            rc.seed = derive_seed(cfg.seed, "reduce:" + cfg.feature_types[f] + ":" + cfg.reductions[r]);
            reduced[t] = rc.method == ReductionMethod::none ? standardised[f] : reduce(standardised[f], rc).coords;
        } catch (const std::exception& e) {
            reduce_err[t] = std::string("reduction failed: ") + e.what();
        }
        reduce_time[t] = elapsed(t1);
    });
    for (std::size_t t = 0; t < reduced.size(); ++t) {
        report.timings["reduce:" + cfg.feature_types[t / n_red] + ":" + cfg.reductions[t % n_red]] = reduce_time[t];
    }

    // Spatial graph is shared by every spatial cell.
    NormAdj spatial_adj;
    std::string spatial_err;
    std::vector<std::string> spatial_warn;
    if (std::find(cfg.models.begin(), cfg.models.end(), "grand_spatial_graph") != cfg.models.end()) {
        try {
            CellGraph g = spatial_knn_graph(prep.centroids, prep.sample_ids, cfg.graph_k);
            spatial_warn = g.warnings;
            spatial_adj = normalize_adjacency(g);
        } catch (const std::exception& e) {
            spatial_err = e.what();
        }
    }

    // Grid cells.
    const std::size_t n_model = cfg.models.size();
    report.cells.resize(n_ft * n_red * n_model);
    std::vector<Outcome> outcomes(report.cells.size());
    std::vector<std::string> trials_csv(report.cells.size());
    std::vector<double> cell_time(report.cells.size(), 0.0);
    const std::vector<int> y_val = gather(prep.labels, prep.val_idx);
    const std::vector<int> y_test = gather(prep.labels, prep.test_idx);

    parallel_for(report.cells.size(), [&](std::size_t c) {
        const std::size_t fr = c / n_model, m = c % n_model;
        const std::size_t f = fr / n_red, r = fr % n_red;
        CellResult& cell = report.cells[c];
        cell.feature_type = cfg.feature_types[f];
        cell.reduction = cfg.reductions[r];
        cell.model = cfg.models[m];
        const auto t1 = std::chrono::steady_clock::now();
        try {
            if (!reduce_err[fr].empty()) throw Error(reduce_err[fr]);
            const bool reduced_nodes = cfg.reduced_use != ReducedUse::graph;
            const bool reduced_graph = cfg.reduced_use != ReducedUse::nodes;
            const Matrix& x_nodes = reduced_nodes ? reduced[fr] : standardised[f];
            const std::uint64_t cell_seed = derive_seed(cfg.seed, cell.name());

            std::function<Outcome(const ParamValues&, std::uint64_t)> fit;
            NormAdj feature_adj;
            if (cell.model == "grand_feature_graph") {
                CellGraph g = knn_feature_graph(reduced_graph ? reduced[fr] : standardised[f], cfg.graph_k,
                                                cfg.graph_metric);
                feature_adj = normalize_adjacency(g);
            } else if (cell.model == "grand_spatial_graph") {
                if (!spatial_err.empty()) throw Error("spatial graph failed: " + spatial_err);
                cell.warnings = spatial_warn;
            }
            const NormAdj& adj = cell.model == "grand_spatial_graph" ? spatial_adj : feature_adj;

            if (is_grand(cell.model)) {
                fit = [&](const ParamValues& p, std::uint64_t seed) {
                    GrandConfig gc = cfg.grand;
                    apply_params(gc, p);
                    gc.seed = seed;
                    const GrandModel model = train_grand(adj, x_nodes, prep.labels, prep.split, gc);
                    Outcome o;
                    o.probs = predict_grand(model, adj, x_nodes).probs;
                    o.history_csv = encode_history_csv(model.history);
                    return o;
                };
            } else {
                const Matrix x_train = gather_rows(x_nodes, prep.train_idx);
                const std::vector<int> y_train = gather(prep.labels, prep.train_idx);
                fit = [&, x_train, y_train](const ParamValues& p, std::uint64_t seed) {
                    TabularModel model;
                    if (cell.model == "random_forest") {
                        ForestConfig fc = cfg.forest;
                        apply_params(fc, p);
                        fc.seed = seed;
                        model = train_random_forest(x_train, y_train, fc);
                    } else {
                        BoostConfig bc = cfg.boost;
                        apply_params(bc, p);
                        bc.seed = seed;
                        model = train_gradient_boosting(x_train, y_train, bc);
                    }
                    Outcome o;
                    o.probs = predict_tabular(model, x_nodes);
                    return o;
                };
            }
            auto evaluate = [&](Outcome& o) {
                if (!prep.val_idx.empty()) o.val = compute_metrics(y_val, gather_col(o.probs, prep.val_idx, 1), cfg.threshold);
                o.test = compute_metrics(y_test, gather_col(o.probs, prep.test_idx, 1), cfg.threshold);
            };

            const std::uint64_t model_seed = derive_seed(cell_seed, "model");
            Outcome best;
            if (cfg.search_budget > 0) {
                auto it = cfg.search_spaces.find(space_key(cell.model));
                const SearchSpace space = it == cfg.search_spaces.end() ? SearchSpace{} : it->second;
                if (prep.val_idx.empty()) throw Error("hyperparameter search needs a validation split");
                std::vector<Outcome> seen;
                const SearchResult sr = hyperparameter_search(
                    space,
                    [&](const ParamValues& p) {
                        Outcome o = fit(p, model_seed);
                        evaluate(o);
                        seen.push_back(std::move(o));
                        return seen.back().val.f1;
                    },
                    cfg.search_budget, derive_seed(cell_seed, "search"));
                // Trials that threw never reached `seen`; map the winner back by counting successes.
                std::size_t ok_before = 0;
                for (std::size_t t = 0; t < sr.best; ++t) ok_before += sr.trials[t].error.empty();
                if (!sr.best_trial().error.empty()) throw Error("every search trial failed: " + sr.best_trial().error);
                best = std::move(seen[ok_before]);
                cell.params = sr.best_trial().params;
                cell.n_trials = int(sr.trials.size());
                std::string csv = "trial,score,error";
                for (const auto& p : space) csv += "," + p.name;
                csv += "\n";
                for (std::size_t t = 0; t < sr.trials.size(); ++t) {
                    const auto& tr = sr.trials[t];
                    csv += std::to_string(t) + "," + io::format_double(tr.score) + ",\"" + tr.error + "\"";
                    for (const auto& p : space) csv += "," + io::format_double(tr.params.at(p.name));
                    csv += "\n";
                }
                trials_csv[c] = std::move(csv);
            } else {
                best = fit({}, model_seed);
                evaluate(best);
            }
            cell.val_f1 = best.val.f1;
            cell.metrics = best.test;
            for (const auto& w : best.test.warnings) cell.warnings.push_back(w);
            outcomes[c] = std::move(best);
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.reason = e.what();
        }
        cell_time[c] = elapsed(t1);
    });
    for (std::size_t c = 0; c < report.cells.size(); ++c) report.timings["cell:" + report.cells[c].name()] = cell_time[c];
    report.timings["total"] = elapsed(t_start);

    if (!out_dir.empty()) {
        io::write_file_atomic(out_dir / "report.json", encode_report_json(report));
        io::write_file_atomic(out_dir / "table1.csv", encode_table1_csv(report));
        ordered_json tj = ordered_json::object();
        for (const auto& [k, v] : report.timings) tj[k] = v;
        io::write_file_atomic(out_dir / "timings.json", tj.dump(2) + "\n");
        for (std::size_t c = 0; c < report.cells.size(); ++c) {
            const CellResult& cell = report.cells[c];
            const auto dir = out_dir / "runs" / cell.name();
            io::write_file_atomic(dir / "result.json", cell_json(cell).dump(2) + "\n");
            if (!cell.ok) continue;
            io::write_file_atomic(dir / "predictions.csv", encode_predictions_csv(*nodes, prep.split, outcomes[c].probs));
            if (!outcomes[c].history_csv.empty()) io::write_file_atomic(dir / "history.csv", outcomes[c].history_csv);
            if (!trials_csv[c].empty()) io::write_file_atomic(dir / "trials.csv", trials_csv[c]);
        }
    }
    return report;
}

std::string encode_report_json(const ExperimentReport& report) {
    ordered_json j;
    j["seed"] = report.config.seed;
    j["config"] = ordered_json::parse(experiment_config_to_json(report.config));
    j["config"].erase("threads");  // results do not depend on it
    j["n_nodes"] = report.n_nodes;
    j["n_labeled"] = report.n_labeled;
    j["split"] = {{"train", report.n_train}, {"val", report.n_val}, {"test", report.n_test}};
    ordered_json cells = ordered_json::array();
    for (const auto& c : report.cells) cells.push_back(cell_json(c));
    j["cells"] = cells;
    j["warnings"] = report.warnings;
    return j.dump(2) + "\n";
}

std::string encode_table1_csv(const ExperimentReport& report) {
    std::string out = "feature_type,reduction,model,status,accuracy,precision,recall,f1,roc_auc\n";
    for (const auto& c : report.cells) {
        out += c.feature_type + "," + c.reduction + "," + c.model + "," + (c.ok ? "ok" : "failed");
        for (double v : {c.metrics.accuracy, c.metrics.precision, c.metrics.recall, c.metrics.f1, c.metrics.roc_auc}) {
            out += "," + (c.ok ? io::format_double(v) : std::string("nan"));
        }
        out += "\n";
    }
    return out;
}

std::string encode_predictions_csv(const CellTable& table, const SplitMasks& split, const Matrix& probs) {
    std::string out = "sample_id,cell_id,label,split,prob_1\n";
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        const char* s = split.train[i] ? "train" : split.val[i] ? "val" : split.test[i] ? "test" : "none";
        out += r.sample_id + "," + std::to_string(r.cell_id) + "," + std::to_string(r.label) + "," + s + "," +
               io::format_double(probs(Eigen::Index(i), 1)) + "\n";
    }
    return out;
}

std::string encode_metrics_json(const Metrics& m) { return metrics_json(m).dump(2) + "\n"; }

}  // namespace cellgraph
