#include "cellgraph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "cellgraph/error.hpp"
#include "cellgraph/features.hpp"
#include "cellgraph/io.hpp"
#include "cellgraph/parallel.hpp"

namespace cellgraph {

namespace {

// Sorted top-k buffer. Candidates arrive in increasing index order, so a
// candidate that only ties the current worst never displaces it.
struct TopK {
    std::size_t k;
    std::vector<double> d;
    std::vector<std::uint32_t> idx;

    explicit TopK(std::size_t k_) : k(k_) {
        d.reserve(k + 1);
        idx.reserve(k + 1);
    }

    void offer(double dist, std::uint32_t j) {
        if (d.size() == k && !(dist < d.back())) return;
        std::size_t pos = d.size();
        while (pos > 0 && d[pos - 1] > dist) --pos;
        d.insert(d.begin() + std::ptrdiff_t(pos), dist);
        idx.insert(idx.begin() + std::ptrdiff_t(pos), j);
        if (d.size() > k) {
            d.pop_back();
            idx.pop_back();
        }
    }
};

void check_k(int k, std::size_t n, const char* who) {
    if (k <= 0) throw Error(std::string(who) + ": k must be >= 1, got " + std::to_string(k));
    if (n == 0) throw Error(std::string(who) + ": no nodes");
    if (n > std::numeric_limits<std::uint32_t>::max()) throw Error(std::string(who) + ": too many nodes");
}

// kNN among `members` (global node ids), distances from `dist(i, j)`.
template <class Dist>
void knn_block(const std::vector<std::uint32_t>& members, std::size_t k, Dist dist, std::vector<Edge>& out) {
    const std::size_t m = members.size();
    const std::size_t kk = std::min(k, m - 1);
    std::vector<std::vector<std::uint32_t>> nbrs(m);
    parallel_for(m, [&](std::size_t a) {
        TopK top(kk);
        for (std::size_t b = 0; b < m; ++b) {
            if (b != a) top.offer(dist(members[a], members[b]), std::uint32_t(b));
        }
        nbrs[a] = std::move(top.idx);
    });
    for (std::size_t a = 0; a < m; ++a) {
        for (std::uint32_t b : nbrs[a]) out.push_back({members[a], members[b], 1.0});
    }
}

}  // namespace

void CellGraph::check() const {
    if (!nodes.empty() && nodes.size() != n_nodes) throw Error("graph: node map size differs from node count");
    for (const auto& e : edges) {
        if (e.src >= n_nodes || e.dst >= n_nodes) throw Error("graph: edge endpoint out of range");
        if (e.src == e.dst) throw Error("graph: self-loop stored in edge list");
        if (!(e.weight > 0.0) || !std::isfinite(e.weight)) throw Error("graph: edge weight must be positive");
    }
}

Metric metric_from_string(const std::string& s) {
    if (s == "euclidean") return Metric::euclidean;
    if (s == "cosine") return Metric::cosine;
    throw Error("unknown metric '" + s + "' (expected euclidean or cosine)");
}

std::string to_string(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }

GraphKind graph_kind_from_string(const std::string& s) {
    if (s == "feature") return GraphKind::feature;
    if (s == "spatial") return GraphKind::spatial;
    throw Error("unknown graph kind '" + s + "' (expected feature or spatial)");
}

std::string to_string(GraphKind k) { return k == GraphKind::feature ? "feature" : "spatial"; }

CellGraph knn_feature_graph(const Matrix& x, int k, Metric metric) {
    const auto n = std::size_t(x.rows());
    check_k(k, n, "knn_feature_graph");
    if (x.cols() == 0) throw Error("knn_feature_graph: feature matrix has no columns");
    if (!x.allFinite()) throw Error("knn_feature_graph: feature matrix contains non-finite values");

    CellGraph g;
    g.n_nodes = n;
    if (n < 2) return g;
    std::vector<std::uint32_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = std::uint32_t(i);
    g.edges.reserve(n * std::min<std::size_t>(std::size_t(k), n - 1));

    const auto d = x.cols();
    const double* base = x.data();
    if (metric == Metric::euclidean) {
        knn_block(all, std::size_t(k), [&](std::uint32_t i, std::uint32_t j) {
            const double* a = base + std::ptrdiff_t(i) * d;
            const double* b = base + std::ptrdiff_t(j) * d;
            double s = 0.0;
            for (Eigen::Index t = 0; t < d; ++t) {
                const double diff = a[t] - b[t];
                s += diff * diff;
            }
            return s;
        }, g.edges);
    } else {
        std::vector<double> norms(n);
        for (std::size_t i = 0; i < n; ++i) norms[i] = x.row(Eigen::Index(i)).norm();
        knn_block(all, std::size_t(k), [&](std::uint32_t i, std::uint32_t j) {
            if (norms[i] == 0.0 || norms[j] == 0.0) return 1.0;
            const double* a = base + std::ptrdiff_t(i) * d;
            const double* b = base + std::ptrdiff_t(j) * d;
            double s = 0.0;
            for (Eigen::Index t = 0; t < d; ++t) s += a[t] * b[t];
            return 1.0 - s / (norms[i] * norms[j]);
        }, g.edges);
    }
    return g;
}

CellGraph spatial_knn_graph(std::span<const std::array<double, 2>> centroids, std::span<const std::string> sample_ids,
                            int k) {
    const std::size_t n = centroids.size();
    check_k(k, n, "spatial_knn_graph");
    if (sample_ids.size() != n) throw Error("spatial_knn_graph: centroid and sample id counts differ");

    // Samples in order of first appearance; members stay in node order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<std::uint32_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
        auto [it, fresh] = groups.try_emplace(sample_ids[i]);
        if (fresh) order.push_back(sample_ids[i]);
        it->second.push_back(std::uint32_t(i));
    }

    CellGraph g;
    g.n_nodes = n;
    for (const auto& sid : order) {
        const auto& members = groups[sid];
        if (members.size() < 2) {
            g.warnings.push_back("sample " + sid + " has fewer than two cells; no spatial edges");
            continue;
        }
        knn_block(members, std::size_t(k), [&](std::uint32_t i, std::uint32_t j) {
            const double dx = centroids[i][0] - centroids[j][0];
            const double dy = centroids[i][1] - centroids[j][1];
            return dx * dx + dy * dy;
        }, g.edges);
    }
    std::stable_sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) { return a.src < b.src; });
    return g;
}

NormAdj normalize_adjacency(const CellGraph& g) {
    g.check();
    const std::size_t n = g.n_nodes;

    struct Entry {
        std::uint32_t r, c;
        double w;
    };
    std::vector<Entry> entries;
    entries.reserve(2 * g.edges.size() + n);
    for (const auto& e : g.edges) {
        entries.push_back({e.src, e.dst, e.weight});
        entries.push_back({e.dst, e.src, e.weight});
    }
    for (std::size_t i = 0; i < n; ++i) entries.push_back({std::uint32_t(i), std::uint32_t(i), 1.0});
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return a.r != b.r ? a.r < b.r : a.c < b.c;
    });

    NormAdj adj;
    adj.n = n;
    adj.row_offsets.assign(n + 1, 0);
    for (std::size_t i = 0; i < entries.size();) {
        std::size_t j = i;
        double w = entries[i].w;
        while (j < entries.size() && entries[j].r == entries[i].r && entries[j].c == entries[i].c) {
            w = std::max(w, entries[j].w);
            ++j;
        }
        adj.cols.push_back(entries[i].c);
        adj.values.push_back(w);
        ++adj.row_offsets[entries[i].r + 1];
        i = j;
    }
    for (std::size_t i = 0; i < n; ++i) adj.row_offsets[i + 1] += adj.row_offsets[i];

    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t p = adj.row_offsets[i]; p < adj.row_offsets[i + 1]; ++p) s += adj.values[p];
        inv_sqrt_deg[i] = 1.0 / std::sqrt(s);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = adj.row_offsets[i]; p < adj.row_offsets[i + 1]; ++p) {
            adj.values[p] *= inv_sqrt_deg[i] * inv_sqrt_deg[adj.cols[p]];
        }
    }
    return adj;
}

Matrix NormAdj::multiply(const Matrix& x) const {
    if (std::size_t(x.rows()) != n) throw Error("NormAdj::multiply: row count does not match node count");
    Matrix y = Matrix::Zero(x.rows(), x.cols());
    parallel_for(n, [&](std::size_t i) {
        for (std::size_t p = row_offsets[i]; p < row_offsets[i + 1]; ++p) {
            y.row(Eigen::Index(i)) += values[p] * x.row(Eigen::Index(cols[p]));
        }
    });
    return y;
}

Matrix NormAdj::to_dense() const {
    Matrix m = Matrix::Zero(Eigen::Index(n), Eigen::Index(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = row_offsets[i]; p < row_offsets[i + 1]; ++p) m(Eigen::Index(i), cols[p]) = values[p];
    }
    return m;
}

Matrix table_features(const CellTable& table) {
    Matrix x(Eigen::Index(table.rows.size()), Eigen::Index(table.n_features()));
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& f = table.rows[i].features;
        if (f.size() != table.n_features()) throw Error("table_features: row has the wrong feature count");
        for (std::size_t j = 0; j < f.size(); ++j) x(Eigen::Index(i), Eigen::Index(j)) = f[j];
    }
    return x;
}

TrainingGraph assemble_training_graph(const std::vector<CellTable>& tables, GraphKind kind, int k, Metric metric) {
    if (tables.empty()) throw Error("assemble_training_graph: no tables");
    for (const auto& t : tables) {
        if (t.n_features() != tables.front().n_features()) {
            throw Error("assemble_training_graph: feature-length mismatch across samples (" +
                        std::to_string(tables.front().n_features()) + " vs " + std::to_string(t.n_features()) + ")");
        }
    }
    TrainingGraph tg;
    tg.table = concat_tables(tables);
    tg.features = table_features(tg.table);
    const std::size_t n = tg.table.rows.size();
    tg.labels.reserve(n);
    for (const auto& r : tg.table.rows) tg.labels.push_back(r.label);

    if (kind == GraphKind::feature) {
        tg.graph = knn_feature_graph(tg.features, k, metric);
    } else {
        std::vector<std::array<double, 2>> xy(n);
        std::vector<std::string> sids(n);
        for (std::size_t i = 0; i < n; ++i) {
            xy[i] = {tg.table.rows[i].cx, tg.table.rows[i].cy};
            sids[i] = tg.table.rows[i].sample_id;
        }
        tg.graph = spatial_knn_graph(xy, sids, k);
    }
    tg.graph.nodes.reserve(n);
    for (const auto& r : tg.table.rows) tg.graph.nodes.push_back({r.sample_id, r.cell_id});
    return tg;
}

std::string encode_edge_list(const CellGraph& g) {
    std::string out = "# nodes " + std::to_string(g.n_nodes) + "\n";
    for (const auto& e : g.edges) {
        out += std::to_string(e.src);
        out += ' ';
        out += std::to_string(e.dst);
        out += ' ';
        out += io::format_double(e.weight);
        out += '\n';
    }
    return out;
}

CellGraph parse_edge_list(const std::string& text) {
    const auto lines = io::split_lines(text);
    CellGraph g;
    bool have_header = false;
    std::size_t lineno = 0;
    for (const auto& raw : lines) {
        ++lineno;
        if (raw.empty()) continue;
        if (raw[0] == '#') {
            unsigned long long n = 0;
            if (std::sscanf(raw.c_str(), "# nodes %llu", &n) == 1) {
                g.n_nodes = std::size_t(n);
                have_header = true;
            }
            continue;
        }
        if (!have_header) throw Error("edge list: missing '# nodes N' header before line " + std::to_string(lineno));
        unsigned long long s = 0, d = 0;
        char wbuf[64] = {0};
        if (std::sscanf(raw.c_str(), "%llu %llu %63s", &s, &d, wbuf) != 3) {
            throw Error("edge list: malformed line " + std::to_string(lineno) + ": '" + raw + "'");
        }
        g.edges.push_back({std::uint32_t(s), std::uint32_t(d), io::parse_double(wbuf)});
    }
    if (!have_header) throw Error("edge list: missing '# nodes N' header");
    g.check();
    return g;
}

}  // namespace cellgraph
