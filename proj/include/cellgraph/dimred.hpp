#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cellgraph/matrix.hpp"

namespace cellgraph {

enum class ReductionMethod { none, pca, tsne, umap };

ReductionMethod reduction_from_string(const std::string& s);
std::string to_string(ReductionMethod m);

struct Embedding {
    Matrix coords;  // n x d
    std::string method;
    std::map<std::string, double> params;
};

struct PcaResult {
    Embedding embedding;
    Matrix components;                // d x p, orthonormal rows
    Vector mean;                      // p
    Vector explained_variance_ratio;  // d, non-increasing
};

/// Projection onto the top-d principal axes. Each component's
/// largest-magnitude entry is made positive.
PcaResult pca(const Matrix& x, int d);

struct TsneConfig {
    int dim = 2;
    double perplexity = 30.0;
    int n_iters = 1000;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
    int kl_every = 10;  // objective logging interval
    std::uint64_t seed = 0;
};

struct TsneResult {
    Embedding embedding;
    std::vector<double> kl;    // KL(P||Q) at the logged iterations
    std::vector<int> kl_iters;  // iteration index of each kl entry; the last is n_iters
};

/// Conditional affinities p_{j|i} (rows sum to 1, zero diagonal), each row
/// calibrated so that 2^H(P_i) matches the perplexity.
Matrix tsne_conditional_p(const Matrix& x, double perplexity);

/// Symmetrised joint affinities (P + P^T) / 2n.
Matrix tsne_joint_p(const Matrix& x, double perplexity);

TsneResult tsne(const Matrix& x, const TsneConfig& cfg);

struct UmapConfig {
    int dim = 2;
    int n_neighbors = 15;
    double min_dist = 0.1;
    double spread = 1.0;
    int n_epochs = 200;
    double learning_rate = 1.0;
    int negative_sample_rate = 5;
    std::uint64_t seed = 0;
};

struct FuzzyEdge {
    std::uint32_t i = 0;
    std::uint32_t j = 0;
    double w = 0.0;
};

/// Fuzzy a+b-ab union of two membership strengths.
double fuzzy_union(double a, double b);

/// Directed kNN memberships exp(-max(0, d - rho_i) / sigma_i), one list per
/// point, ordered by neighbour distance.
std::vector<std::vector<FuzzyEdge>> umap_memberships(const Matrix& x, int n_neighbors);

/// Symmetrised fuzzy graph, both directions stored, sorted by (i, j).
std::vector<FuzzyEdge> umap_fuzzy_graph(const Matrix& x, int n_neighbors);

/// Least-squares fit of 1/(1 + a x^(2b)) to the min_dist / spread target curve.
std::pair<double, double> umap_fit_ab(double spread, double min_dist);

Embedding umap(const Matrix& x, const UmapConfig& cfg);

struct ReductionConfig {
    ReductionMethod method = ReductionMethod::none;
    int dim = 16;
    TsneConfig tsne;
    UmapConfig umap;
    std::uint64_t seed = 0;
};

/// Dispatches to the chosen method. `none` returns the input unchanged. PCA and
/// UMAP use `dim` (PCA capped at the input width); tSNE uses `tsne.dim`.
Embedding reduce(const Matrix& x, const ReductionConfig& cfg);

}  // namespace cellgraph
