#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cellgraph/baselines.hpp"
#include "cellgraph/dataset.hpp"
#include "cellgraph/dimred.hpp"
#include "cellgraph/features.hpp"
#include "cellgraph/grand.hpp"
#include "cellgraph/graph.hpp"
#include "cellgraph/matrix.hpp"
#include "cellgraph/metrics.hpp"
#include "cellgraph/search.hpp"
#include "cellgraph/split.hpp"
#include "cellgraph/synthgen.hpp"

namespace cellgraph {

/// Column statistics from the training rows only. Non-finite values are
/// ignored when fitting; zero-variance columns keep scale 1.
struct ZScore {
    std::vector<double> mean;
    std::vector<double> scale;

    static ZScore fit(const Matrix& x, std::span<const std::size_t> rows);
    /// (x - mean) / scale; non-finite results become 0.
    Matrix apply(const Matrix& x) const;
};

/// Which inputs receive the reduced features: the kNN graph construction,
/// the node features, or both. Untouched inputs use the standardised features.
enum class ReducedUse { both, graph, nodes };
ReducedUse reduced_use_from_string(const std::string& s);
std::string to_string(ReducedUse u);

struct ExperimentConfig {
    std::string dataset;  // manifest or directory; empty generates `synth` in memory
    SynthConfig synth;
    std::uint64_t seed = 42;
    unsigned threads = 0;  // 0 leaves the current setting

    std::vector<std::string> feature_types{"expression", "radiomics"};
    std::vector<std::string> reductions{"none", "pca", "tsne", "umap"};
    std::vector<std::string> models{"grand_feature_graph", "grand_spatial_graph", "random_forest",
                                    "gradient_boosting"};

    Pooling pooling = Pooling::mean;
    int radiomics_levels = 16;
    ReductionConfig reduction;
    ReducedUse reduced_use = ReducedUse::both;
    int graph_k = 5;
    Metric graph_metric = Metric::euclidean;
    GrandConfig grand;
    ForestConfig forest;
    BoostConfig boost;

    std::array<double, 3> split_ratios{0.7, 0.1, 0.2};
    bool sample_level_split = false;
    double threshold = 0.5;

    int search_budget = 0;  // 0 trains each model once with the configured values
    std::map<std::string, SearchSpace> search_spaces = default_search_spaces();

    static std::map<std::string, SearchSpace> default_search_spaces();
    void check() const;
};

ExperimentConfig experiment_config_from_json(const std::string& json_text);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

struct CellResult {
    std::string feature_type;
    std::string reduction;
    std::string model;
    bool ok = false;
    std::string reason;  // failure message when !ok
    Metrics metrics;     // test split
    double val_f1 = 0.0;
    ParamValues params;  // search winner; empty without search
    int n_trials = 0;
    std::vector<std::string> warnings;

    std::string name() const { return feature_type + "-" + reduction + "-" + model; }
};

struct ExperimentReport {
    ExperimentConfig config;
    std::size_t n_nodes = 0;
    std::size_t n_labeled = 0;
    std::size_t n_train = 0, n_val = 0, n_test = 0;
    std::vector<CellResult> cells;  // grid order: feature type, reduction, model
    std::vector<std::string> warnings;
    std::map<std::string, double> timings;  // seconds; kept out of report.json

    const CellResult* find(const std::string& feature_type, const std::string& reduction,
                           const std::string& model) const;
};

/// Runs the requested grid. When `out_dir` is non-empty it receives
/// report.json, table1.csv, timings.json and runs/<cell>/ artifacts.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {});

std::string encode_report_json(const ExperimentReport& report);
std::string encode_table1_csv(const ExperimentReport& report);

// `sample_id,cell_id,label,split,prob_1`, one line per node.
std::string encode_predictions_csv(const CellTable& table, const SplitMasks& split, const Matrix& probs);
std::string encode_metrics_json(const Metrics& m);

// Search-parameter application, exposed for the stage commands.
void apply_params(GrandConfig& cfg, const ParamValues& params);
void apply_params(ForestConfig& cfg, const ParamValues& params);
void apply_params(BoostConfig& cfg, const ParamValues& params);

}  // namespace cellgraph
