#include "cellgraph/radiomics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "cellgraph/parallel.hpp"

namespace cellgraph::radiomics {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kStdFloor = 1e-12;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

// Bin lookup over the region's bounding box; -1 marks pixels outside the region.
class LocalGrid {
public:
    explicit LocalGrid(const QuantizedRegion& q) {
        if (q.coords.empty()) return;
        int r1 = q.coords[0].row, c1 = q.coords[0].col;
        r0_ = r1;
        c0_ = c1;
        for (const auto& p : q.coords) {
            r0_ = std::min(r0_, p.row);
            c0_ = std::min(c0_, p.col);
            r1 = std::max(r1, p.row);
            c1 = std::max(c1, p.col);
        }
        h_ = r1 - r0_ + 1;
        w_ = c1 - c0_ + 1;
        cells_.assign(std::size_t(h_) * std::size_t(w_), -1);
        for (std::size_t i = 0; i < q.coords.size(); ++i) {
            cells_[index(q.coords[i].row, q.coords[i].col)] = q.bins[i];
        }
    }

    int get(int row, int col) const {
        const int r = row - r0_;
        const int c = col - c0_;
        if (r < 0 || c < 0 || r >= h_ || c >= w_) return -1;
        return cells_[std::size_t(r) * std::size_t(w_) + std::size_t(c)];
    }

private:
    std::size_t index(int row, int col) const { return std::size_t(row - r0_) * std::size_t(w_) + std::size_t(col - c0_); }

    int r0_ = 0, c0_ = 0, h_ = 0, w_ = 0;
    std::vector<int> cells_;
};

void check_offsets(std::span<const Offset> offsets) {
    if (offsets.empty()) throw Error("at least one offset is required");
    for (const auto& o : offsets) {
        if (o.dr == 0 && o.dc == 0) throw Error("offsets must be non-zero");
    }
}

double plogp_bits(double p) { return p > 0.0 ? p * std::log2(p) : 0.0; }

}  // namespace

std::vector<Offset> default_offsets() { return {{0, 1}, {1, 0}, {1, 1}, {1, -1}}; }

QuantizedRegion quantize(std::span<const PixelCoord> coords, std::span<const double> values, int levels) {
    if (levels < 2) throw Error("quantize: levels must be >= 2");
    if (coords.size() != values.size()) throw Error("quantize: coordinate and value counts differ");
    if (coords.empty()) throw Error("quantize: empty region");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double range = *hi_it - lo;
    QuantizedRegion q;
    q.levels = levels;
    q.coords.assign(coords.begin(), coords.end());
    q.bins.resize(values.size(), 0);
    if (range > 0.0) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const int b = static_cast<int>(std::floor((values[i] - lo) * levels / range));
            q.bins[i] = std::clamp(b, 0, levels - 1);
        }
    }
    return q;
}

QuantizedRegion quantize(const ChannelImage& image, std::span<const PixelCoord> coords, int levels) {
    std::vector<double> values;
    values.reserve(coords.size());
    for (const auto& p : coords) values.push_back(image.at(std::uint32_t(p.row), std::uint32_t(p.col)));
    return quantize(coords, values, levels);
}

FirstOrder first_order_features(std::span<const double> values, int levels) {
    if (values.empty()) throw Error("first_order_features: empty region");
    FirstOrder f;
    // Single-pass central moments (Welford / Terriberry update).
    double n = 0, mean = 0, m2 = 0, m3 = 0, m4 = 0;
    f.min = values[0];
    f.max = values[0];
    for (double x : values) {
        const double n1 = n;
        n += 1.0;
        const double delta = x - mean;
        const double delta_n = delta / n;
        const double delta_n2 = delta_n * delta_n;
        const double term1 = delta * delta_n * n1;
        mean += delta_n;
        m4 += term1 * delta_n2 * (n * n - 3 * n + 3) + 6 * delta_n2 * m2 - 4 * delta_n * m3;
        m3 += term1 * delta_n * (n - 2) - 3 * delta_n * m2;
        m2 += term1;
        f.energy += x * x;
        f.min = std::min(f.min, x);
        f.max = std::max(f.max, x);
    }
    f.mean = mean;
    f.variance = m2 / n;
    if (f.variance > 0.0) {
        f.skewness = (m3 / n) / std::pow(f.variance, 1.5);
        f.kurtosis = (m4 / n) / (f.variance * f.variance);
    }
    std::vector<std::size_t> hist(std::size_t(levels), 0);
    const double range = f.max - f.min;
    for (double x : values) {
        int b = range > 0.0 ? static_cast<int>(std::floor((x - f.min) * levels / range)) : 0;
        ++hist[std::size_t(std::clamp(b, 0, levels - 1))];
    }
    for (std::size_t h : hist) f.entropy -= plogp_bits(double(h) / n);
    if (f.entropy == 0.0) f.entropy = 0.0;  // normalise -0
    return f;
}

FirstOrder first_order_features(const ChannelImage& image, std::span<const PixelCoord> coords, int levels) {
    std::vector<double> values;
    values.reserve(coords.size());
    for (const auto& p : coords) values.push_back(image.at(std::uint32_t(p.row), std::uint32_t(p.col)));
    return first_order_features(values, levels);
}

Shape shape_features(std::span<const PixelCoord> coords, double spacing) {
    if (coords.empty()) throw Error("shape_features: empty region");
    Shape s;
    const double n = double(coords.size());
    for (const auto& p : coords) {
        s.centroid_row += p.row;
        s.centroid_col += p.col;
    }
    s.centroid_row /= n;
    s.centroid_col /= n;

    double mrr = 0, mcc = 0, mrc = 0;
    for (const auto& p : coords) {
        const double dr = p.row - s.centroid_row;
        const double dc = p.col - s.centroid_col;
        mrr += dr * dr;
        mcc += dc * dc;
        mrc += dr * dc;
    }
    mrr /= n;
    mcc /= n;
    mrc /= n;
    const double half_trace = 0.5 * (mrr + mcc);
    const double disc = std::sqrt(std::max(0.0, 0.25 * (mrr - mcc) * (mrr - mcc) + mrc * mrc));
    const double l1 = std::max(0.0, half_trace + disc);
    const double l2 = std::max(0.0, half_trace - disc);
    s.major_axis = 4.0 * std::sqrt(l1) * spacing;
    s.minor_axis = 4.0 * std::sqrt(l2) * spacing;
    s.elongation = l1 > 0.0 ? std::sqrt(l2 / l1) : 1.0;
    s.eccentricity = l1 > 0.0 ? std::sqrt(std::max(0.0, 1.0 - l2 / l1)) : 0.0;

    QuantizedRegion inside;
    inside.coords.assign(coords.begin(), coords.end());
    inside.bins.assign(coords.size(), 0);
    const LocalGrid grid(inside);
    std::size_t edges = 0;
    static constexpr int kDr[4] = {-1, 1, 0, 0};
    static constexpr int kDc[4] = {0, 0, -1, 1};
    for (const auto& p : coords) {
        for (int k = 0; k < 4; ++k) edges += grid.get(p.row + kDr[k], p.col + kDc[k]) < 0 ? 1 : 0;
    }
    s.area_um2 = n * spacing * spacing;
    s.perimeter_um = double(edges) * spacing;
    s.compactness = 4.0 * kPi * s.area_um2 / (s.perimeter_um * s.perimeter_um);
    return s;
}

Shape shape_features(const LabelMask& mask, std::uint32_t cell_id, double spacing) {
    std::vector<PixelCoord> coords;
    for (std::uint32_t r = 0; r < mask.height; ++r) {
        for (std::uint32_t c = 0; c < mask.width; ++c) {
            if (mask.at(r, c) == cell_id) coords.push_back({int(r), int(c)});
        }
    }
    if (coords.empty()) throw Error("shape_features: cell " + std::to_string(cell_id) + " has no pixels");
    return shape_features(coords, spacing);
}

GlcmMatrix glcm(const QuantizedRegion& q, std::span<const Offset> offsets, bool symmetric) {
    check_offsets(offsets);
    const int L = q.levels;
    const LocalGrid grid(q);
    std::vector<std::uint64_t> counts(std::size_t(L) * std::size_t(L), 0);
    std::size_t pairs = 0;
    for (const auto& o : offsets) {
        for (std::size_t i = 0; i < q.coords.size(); ++i) {
            const int b = grid.get(q.coords[i].row + o.dr, q.coords[i].col + o.dc);
            if (b < 0) continue;
            ++counts[std::size_t(q.bins[i]) * std::size_t(L) + std::size_t(b)];
            ++pairs;
        }
    }
    if (pairs == 0) throw DegenerateRegion("glcm: region has no in-cell pixel pairs for the given offsets");
    GlcmMatrix m;
    m.levels = L;
    m.offsets.assign(offsets.begin(), offsets.end());
    m.symmetric = symmetric;
    m.n_pairs = pairs;
    m.p.assign(counts.size(), 0.0);
    const double total = symmetric ? 2.0 * double(pairs) : double(pairs);
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
            std::uint64_t c = counts[std::size_t(i) * std::size_t(L) + std::size_t(j)];
            if (symmetric) c += counts[std::size_t(j) * std::size_t(L) + std::size_t(i)];
            m.p[std::size_t(i) * std::size_t(L) + std::size_t(j)] = double(c) / total;
        }
    }
    return m;
}

GlcmFeatures glcm_features(const GlcmMatrix& m) {
    const int L = m.levels;
    GlcmFeatures f;
    double mu_i = 0, mu_j = 0;
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
            const double p = m.at(i, j);
            mu_i += i * p;
            mu_j += j * p;
        }
    }
    double var_i = 0, var_j = 0, cov = 0;
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
            const double p = m.at(i, j);
            if (p == 0.0) continue;
            const double d = double(i - j);
            f.contrast += p * d * d;
            f.angular_second_moment += p * p;
            f.inverse_difference_moment += p / (1.0 + d * d);
            f.entropy -= plogp_bits(p);
            var_i += (i - mu_i) * (i - mu_i) * p;
            var_j += (j - mu_j) * (j - mu_j) * p;
            cov += (i - mu_i) * (j - mu_j) * p;
        }
    }
    const double sd_i = std::sqrt(var_i);
    const double sd_j = std::sqrt(var_j);
    f.correlation = (sd_i > kStdFloor && sd_j > kStdFloor) ? cov / (sd_i * sd_j) : 0.0;
    if (f.entropy == 0.0) f.entropy = 0.0;
    return f;
}

GlrlmMatrix glrlm(const QuantizedRegion& q, std::span<const Offset> directions) {
    check_offsets(directions);
    const LocalGrid grid(q);
    std::vector<std::pair<int, int>> runs;  // (gray, length)
    int max_run = 1;
    for (const auto& d : directions) {
        for (std::size_t i = 0; i < q.coords.size(); ++i) {
            const int r = q.coords[i].row;
            const int c = q.coords[i].col;
            const int g = q.bins[i];
            if (grid.get(r - d.dr, c - d.dc) == g) continue;  // not the start of a run
            int len = 1;
            while (grid.get(r + len * d.dr, c + len * d.dc) == g) ++len;
            runs.emplace_back(g, len);
            max_run = std::max(max_run, len);
        }
    }
    GlrlmMatrix m;
    m.levels = q.levels;
    m.max_run = max_run;
    m.directions.assign(directions.begin(), directions.end());
    m.r.assign(std::size_t(q.levels) * std::size_t(max_run), 0.0);
    for (auto [g, len] : runs) m.r[std::size_t(g) * std::size_t(max_run) + std::size_t(len - 1)] += 1.0;
    m.n_runs = runs.size();
    return m;
}

GlrlmFeatures glrlm_features(const GlrlmMatrix& m, std::size_t n_pixels) {
    double nr = 0;
    for (double v : m.r) nr += v;
    if (nr <= 0.0) throw DegenerateRegion("glrlm_features: matrix holds no runs");
    if (n_pixels == 0) throw Error("glrlm_features: n_pixels must be positive");
    GlrlmFeatures f;
    std::vector<double> per_length(std::size_t(m.max_run), 0.0);
    for (int g = 0; g < m.levels; ++g) {
        double per_gray = 0.0;
        for (int l = 1; l <= m.max_run; ++l) {
            const double v = m.at(g, l);
            if (v == 0.0) continue;
            const double l2 = double(l) * double(l);
            f.short_run_emphasis += v / l2;
            f.long_run_emphasis += v * l2;
            per_gray += v;
            per_length[std::size_t(l - 1)] += v;
        }
        f.gray_level_nonuniformity += per_gray * per_gray;
    }
    for (double v : per_length) f.run_length_nonuniformity += v * v;
    f.short_run_emphasis /= nr;
    f.long_run_emphasis /= nr;
    f.gray_level_nonuniformity /= nr;
    f.run_length_nonuniformity /= nr;
    f.run_percentage = nr / double(n_pixels);
    return f;
}

// ---------------------------------------------------------------------------
// Feature table

std::vector<std::string> radiomic_feature_names(const std::vector<std::string>& antigens, const RadiomicsConfig& cfg) {
    static const char* kShape[kShapeFeatureCount] = {"area_um2",   "perimeter_um", "major_axis",  "minor_axis",
                                                      "elongation", "compactness",  "eccentricity"};
    static const char* kChannel[kChannelFeatureCount] = {
        "mean",         "variance",         "skewness",      "kurtosis",      "energy",    "entropy",
        "min",          "max",              "glcm_contrast", "glcm_correlation", "glcm_asm", "glcm_idm",
        "glcm_entropy", "glrlm_sre",        "glrlm_lre",     "glrlm_gln",     "glrlm_rln", "glrlm_rp"};
    std::vector<std::string> names;
    if (cfg.shape) {
        for (const char* s : kShape) names.push_back(std::string("shape__") + s);
    }
    for (const auto& a : antigens) {
        for (const char* f : kChannel) names.push_back(a + "__" + f);
    }
    return names;
}

RadiomicsResult radiomic_feature_table(const StainStack& stack, const LabelMask& mask, const RadiomicsConfig& cfg) {
    if (cfg.levels < 2) throw Error("radiomics: levels must be >= 2");
    check_offsets(cfg.offsets);
    if (stack.channels.empty()) throw Error("radiomics: stack has no channels");
    if (mask.width != stack.width() || mask.height != stack.height()) {
        throw Error("radiomics: mask and stack dimensions differ for sample " + stack.sample_id);
    }

    std::vector<std::size_t> selected;
    if (cfg.channels.empty()) {
        for (std::size_t k = 0; k < stack.channels.size(); ++k) selected.push_back(k);
    } else {
        for (const auto& name : cfg.channels) {
            bool found = false;
            for (std::size_t k = 0; k < stack.channels.size(); ++k) found = found || stack.channels[k].antigen == name;
            if (!found) throw Error("radiomics: unknown channel '" + name + "'");
        }
        for (std::size_t k = 0; k < stack.channels.size(); ++k) {
            if (std::find(cfg.channels.begin(), cfg.channels.end(), stack.channels[k].antigen) != cfg.channels.end())
                selected.push_back(k);
        }
    }
    std::vector<std::string> antigens;
    for (std::size_t k : selected) antigens.push_back(stack.channels[k].antigen);

    const auto ids = mask.cell_ids();
    if (ids.empty()) throw Error("radiomics: mask of sample " + stack.sample_id + " contains no cells");
    std::unordered_map<std::uint32_t, std::size_t> slot;
    for (std::size_t i = 0; i < ids.size(); ++i) slot[ids[i]] = i;
    std::vector<std::vector<PixelCoord>> pixels(ids.size());
    for (std::uint32_t r = 0; r < mask.height; ++r) {
        for (std::uint32_t c = 0; c < mask.width; ++c) {
            const auto id = mask.at(r, c);
            if (id != 0) pixels[slot[id]].push_back({int(r), int(c)});
        }
    }

    RadiomicsResult result;
    result.table.feature_names = radiomic_feature_names(antigens, cfg);
    result.table.rows.resize(ids.size());
    std::vector<std::vector<FeatureWarning>> warnings(ids.size());

    parallel_for(ids.size(), [&](std::size_t c) {
        const auto& px = pixels[c];
        CellRow& row = result.table.rows[c];
        row.cell_id = ids[c];
        row.sample_id = stack.sample_id;
        row.features.reserve(result.table.feature_names.size());

        const Shape shape = shape_features(px, stack.pixel_spacing_um);
        row.cx = shape.centroid_col;
        row.cy = shape.centroid_row;
        if (cfg.shape) {
            row.features.insert(row.features.end(), {shape.area_um2, shape.perimeter_um, shape.major_axis,
                                                     shape.minor_axis, shape.elongation, shape.compactness,
                                                     shape.eccentricity});
        }

        std::vector<double> values(px.size());
        for (std::size_t k : selected) {
            const ChannelImage& img = stack.channels[k].image;
            for (std::size_t i = 0; i < px.size(); ++i) values[i] = img.at(std::uint32_t(px[i].row), std::uint32_t(px[i].col));
            const FirstOrder fo = first_order_features(values, cfg.levels);
            row.features.insert(row.features.end(),
                                {fo.mean, fo.variance, fo.skewness, fo.kurtosis, fo.energy, fo.entropy, fo.min, fo.max});

            const QuantizedRegion q = quantize(px, values, cfg.levels);

            GlcmFeatures acc;
            int used = 0;
            for (const auto& o : cfg.offsets) {
                try {
                    const GlcmFeatures g = glcm_features(glcm(q, std::span(&o, 1), cfg.symmetric));
                    acc.contrast += g.contrast;
                    acc.correlation += g.correlation;
                    acc.angular_second_moment += g.angular_second_moment;
                    acc.inverse_difference_moment += g.inverse_difference_moment;
                    acc.entropy += g.entropy;
                    ++used;
                } catch (const DegenerateRegion&) {
                }
            }
            if (used == 0) {
                row.features.insert(row.features.end(), {kNaN, kNaN, kNaN, kNaN, kNaN});
                warnings[c].push_back({stack.sample_id, ids[c], stack.channels[k].antigen,
                                       "GLCM has no in-cell pixel pairs; texture columns set to NaN"});
            } else {
                const double u = used;
                row.features.insert(row.features.end(), {acc.contrast / u, acc.correlation / u,
                                                         acc.angular_second_moment / u,
                                                         acc.inverse_difference_moment / u, acc.entropy / u});
            }

            GlrlmFeatures racc;
            for (const auto& d : cfg.offsets) {
                const GlrlmFeatures r = glrlm_features(glrlm(q, std::span(&d, 1)), q.size());
                racc.short_run_emphasis += r.short_run_emphasis;
                racc.long_run_emphasis += r.long_run_emphasis;
                racc.gray_level_nonuniformity += r.gray_level_nonuniformity;
                racc.run_length_nonuniformity += r.run_length_nonuniformity;
                racc.run_percentage += r.run_percentage;
            }
            const double nd = double(cfg.offsets.size());
            row.features.insert(row.features.end(),
                                {racc.short_run_emphasis / nd, racc.long_run_emphasis / nd,
                                 racc.gray_level_nonuniformity / nd, racc.run_length_nonuniformity / nd,
                                 racc.run_percentage / nd});
        }
    });

    for (auto& w : warnings) result.warnings.insert(result.warnings.end(), w.begin(), w.end());
    return result;
}

RadiomicsResult radiomic_feature_table(const Sample& sample, const RadiomicsConfig& cfg) {
    RadiomicsResult r = radiomic_feature_table(sample.stack, sample.mask, cfg);
    for (auto& row : r.table.rows) row.label = label_of(sample.labels, row.cell_id);
    return r;
}

}  // namespace cellgraph::radiomics
