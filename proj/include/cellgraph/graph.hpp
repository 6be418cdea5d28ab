#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cellgraph/dataset.hpp"
#include "cellgraph/matrix.hpp"

namespace cellgraph {

struct Edge {
    std::uint32_t src = 0;
    std::uint32_t dst = 0;
    double weight = 1.0;

    bool operator==(const Edge&) const = default;
};

struct NodeKey {
    std::string sample_id;
    std::uint32_t cell_id = 0;

    bool operator==(const NodeKey&) const = default;
};

/// Directed weighted graph over cells. Self-loops are never stored.
struct CellGraph {
    std::size_t n_nodes = 0;
    std::vector<Edge> edges;
    std::vector<NodeKey> nodes;  // node index -> cell; may be empty
    std::vector<std::string> warnings;

    /// Throws if an endpoint is out of range, an edge is a self-loop, or a
    /// weight is not positive.
    void check() const;
};

enum class Metric { euclidean, cosine };

Metric metric_from_string(const std::string& s);
std::string to_string(Metric m);

/// Directed edge from every node to its min(k, n-1) nearest neighbours
/// (weight 1). Ties go to the lower node index. Exact brute-force search.
CellGraph knn_feature_graph(const Matrix& features, int k, Metric metric = Metric::euclidean);

/// kNN over 2-D centroids, restricted to cells of the same sample. Nodes are
/// expected in (sample_id, cell_id) order, so index ties resolve by cell id.
/// A sample with fewer than two cells contributes no edges and a warning.
CellGraph spatial_knn_graph(std::span<const std::array<double, 2>> centroids,
                            std::span<const std::string> sample_ids, int k);

/// Symmetric normalised adjacency D^-1/2 (A + I) D^-1/2 in CSR layout.
/// A is the symmetrised edge set (an edge in either direction, max weight).
struct NormAdj {
    std::size_t n = 0;
    std::vector<std::size_t> row_offsets;  // n + 1 entries
    std::vector<std::uint32_t> cols;
    std::vector<double> values;

    std::size_t nnz() const { return values.size(); }

    /// Returns Â · X.
    Matrix multiply(const Matrix& x) const;
    Matrix to_dense() const;
};

NormAdj normalize_adjacency(const CellGraph& g);

enum class GraphKind { feature, spatial };

GraphKind graph_kind_from_string(const std::string& s);
std::string to_string(GraphKind k);

/// Pooled transductive graph over all cells of all samples.
struct TrainingGraph {
    CellTable table;   // rows in node order: sorted by (sample_id, cell_id)
    CellGraph graph;
    Matrix features;   // n_nodes x n_features
    std::vector<int> labels;
};

/// Concatenates the tables, orders nodes by (sample_id, cell_id) and builds a
/// spatial graph (disjoint per sample) or a global feature kNN graph.
TrainingGraph assemble_training_graph(const std::vector<CellTable>& tables, GraphKind kind, int k = 5,
                                      Metric metric = Metric::euclidean);

/// Feature matrix of a table in row order.
Matrix table_features(const CellTable& table);

// Edge-list text: "# nodes N" header, then "src dst weight" per line.
std::string encode_edge_list(const CellGraph& g);
CellGraph parse_edge_list(const std::string& text);

}  // namespace cellgraph
