#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cellgraph/graph.hpp"
#include "cellgraph/matrix.hpp"
#include "cellgraph/random.hpp"
#include "cellgraph/split.hpp"

namespace cellgraph {

struct GrandConfig {
    double drop_rate = 0.5;       // DropNode probability
    int prop_order = 8;           // K
    int n_augmentations = 4;      // S
    double temperature = 0.5;     // sharpening T
    double consistency_weight = 1.0;
    int hidden_dim = 32;
    double input_dropout = 0.5;
    double hidden_dropout = 0.5;
    double learning_rate = 1e-2;
    double weight_decay = 5e-4;
    int max_epochs = 300;
    int patience = 50;
    bool detach_sharpened_target = true;  // no gradient through the sharpened mean
    std::uint64_t seed = 0;

    void check() const;
};

/// Two-layer MLP: softmax(relu(X W1 + b1) W2 + b2).
struct GrandParams {
    Matrix w1;  // f x h
    Vector b1;  // h
    Matrix w2;  // h x c
    Vector b2;  // c

    static GrandParams zeros(int n_features, int hidden, int n_classes);
    /// Glorot-uniform weights, zero biases.
    static GrandParams glorot(int n_features, int hidden, int n_classes, Rng& rng);

    bool operator==(const GrandParams&) const = default;
};

struct EpochRecord {
    int epoch = 0;
    double total = 0.0;
    double supervised = 0.0;
    double consistency = 0.0;
    double val_f1 = 0.0;
    double val_loss = 0.0;
};

struct GrandModel {
    GrandConfig config;
    GrandParams params;
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    int n_classes = 2;
};

struct Prediction {
    Matrix probs;             // n x c, rows on the simplex
    std::vector<int> labels;  // argmax, ties to the lower class
};

/// Row i scaled by mask[i] / (1 - drop_rate).
Matrix drop_node(const Matrix& x, double drop_rate, std::span<const std::uint8_t> mask);
/// Draws the Bernoulli(1 - drop_rate) keep mask from `rng`.
Matrix drop_node(const Matrix& x, double drop_rate, Rng& rng);

/// (1/(K+1)) sum_{k=0..K} Â^k X by repeated sparse products.
Matrix propagate(const NormAdj& adj, const Matrix& x, int k);

Matrix mlp_forward(const GrandParams& params, const Matrix& x);

std::vector<double> sharpen(std::span<const double> p, double temperature);

struct LossParts {
    double total = 0.0;
    double supervised = 0.0;
    double consistency = 0.0;
};

/// Loss over S output matrices. Supervised term: mean cross-entropy over
/// train nodes, averaged over S. Consistency: mean over all nodes of
/// (1/S) sum_s ||sharpen(mean_s p_s) - p_s||^2.
LossParts grand_loss(const std::vector<Matrix>& outputs, std::span<const int> labels,
                     std::span<const std::size_t> train_idx, double consistency_weight, double temperature);

/// One augmentation's fixed randomness: the MLP input (already DropNode'd,
/// propagated and input-dropped) and the hidden dropout multipliers (empty
/// for none).
struct AugmentedInput {
    Matrix features;
    Matrix hidden_mask;
};

/// Loss of the MLP over fixed augmentations, with the analytic gradient
/// written to `grad` when non-null. `detach_target` treats the sharpened
/// mean as a constant.
LossParts grand_objective(const GrandParams& params, const std::vector<AugmentedInput>& inputs,
                          std::span<const int> labels, std::span<const std::size_t> train_idx,
                          double consistency_weight, double temperature, bool detach_target, GrandParams* grad);

/// Transductive training on the whole graph. Labels < 0 are unlabelled;
/// only nodes in `split.train` contribute to the supervised term. Early stop
/// on validation F1 (class 1 positive) returns the best snapshot.
GrandModel train_grand(const NormAdj& adj, const Matrix& x, std::span<const int> labels, const SplitMasks& split,
                       const GrandConfig& cfg);

/// Inference without DropNode or dropout; a single propagation pass.
Prediction predict_grand(const GrandModel& model, const NormAdj& adj, const Matrix& x);

/// Argmax per row, ties to the lower index.
std::vector<int> argmax_rows(const Matrix& probs);

// Checkpoint: "GRND1", u32 features/hidden/classes/prop_order, then W1, b1,
// W2, b2 as little-endian f64.
std::string encode_grand_checkpoint(const GrandModel& model);
GrandModel decode_grand_checkpoint(const std::string& bytes);
void save_grand_checkpoint(const GrandModel& model, const std::filesystem::path& path);
GrandModel load_grand_checkpoint(const std::filesystem::path& path);

std::string encode_history_csv(const std::vector<EpochRecord>& history);

}  // namespace cellgraph
