#include "cellgraph/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"

#include "cellgraph/error.hpp"
#include "cellgraph/io.hpp"
#include "cellgraph/parallel.hpp"
#include "cellgraph/random.hpp"

namespace cellgraph {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBackgroundMean = 300.0;
constexpr double kBackgroundSd = 30.0;
constexpr double kBetweenCellSd = 150.0;
constexpr double kProfileAmplitude = 150.0;
constexpr double kBaseNoiseSd = 25.0;
constexpr int kMinCellPixels = 5;
constexpr int kPlacementRetries = 8;

struct Ellipse {
    double cx, cy;  // continuous pixel coordinates (column, row)
    double a, b;    // semi-axes
    double theta;
};

std::string sample_name(int index, int total) {
    char buf[16];
    std::snprintf(buf, sizeof buf, total > 99 ? "S%03d" : "S%02d", index + 1);
    return buf;
}

std::string antigen_name(int k) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "AG%02d", k);
    return buf;
}

// Normalized squared radius of a point relative to the ellipse; < 1 means inside.
double ellipse_rho2(const Ellipse& e, double x, double y) {
    const double dx = x - e.cx;
    const double dy = y - e.cy;
    const double c = std::cos(e.theta);
    const double s = std::sin(e.theta);
    const double u = (dx * c + dy * s) / e.a;
    const double v = (-dx * s + dy * c) / e.b;
    return u * u + v * v;
}

struct CellPixels {
    std::uint32_t id;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pixels;  // (row, col)
    std::vector<double> rho2;
    double cx = 0.0, cy = 0.0;
};

}  // namespace

int marker_channel_count(const SynthConfig& cfg) {
    return std::clamp(static_cast<int>(std::ceil(cfg.marker_channel_fraction * cfg.n_channels - 1e-9)), 0, cfg.n_channels);
}

void SynthConfig::check() const {
    if (n_samples < 1) throw Error("synth: n_samples must be >= 1");
    if (n_melanoma < 0 || n_melanoma > n_samples) throw Error("synth: n_melanoma must be in [0, n_samples]");
    if (image_size < 32 || image_size > 65535) throw Error("synth: image_size must be in [32, 65535]");
    if (n_channels < 2) throw Error("synth: n_channels must be >= 2");
    if (cells_per_sample < 1) throw Error("synth: cells_per_sample must be >= 1");
    if (!(tumor_fraction >= 0.0 && tumor_fraction <= 1.0)) throw Error("synth: tumor_fraction must be in [0, 1]");
    if (!(marker_channel_fraction >= 0.0 && marker_channel_fraction <= 1.0))
        throw Error("synth: marker_channel_fraction must be in [0, 1]");
    if (!(unlabeled_fraction >= 0.0 && unlabeled_fraction < 1.0)) throw Error("synth: unlabeled_fraction must be in [0, 1)");
    if (!(pixel_spacing_um > 0.0)) throw Error("synth: pixel_spacing_um must be > 0");
    if (!std::isfinite(intensity_separation) || !std::isfinite(texture_contrast_separation) ||
        texture_contrast_separation <= -1.0)
        throw Error("synth: separations must be finite and texture_contrast_separation > -1");
}

SynthConfig synth_config_from_json(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(std::string("synth config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw Error("synth config must be a JSON object");
    SynthConfig c;
    for (const auto& [key, v] : doc.items()) {
        try {
            if (key == "n_samples") c.n_samples = v.get<int>();
            else if (key == "n_melanoma") c.n_melanoma = v.get<int>();
            else if (key == "image_size") c.image_size = v.get<int>();
            else if (key == "n_channels") c.n_channels = v.get<int>();
            else if (key == "cells_per_sample") c.cells_per_sample = v.get<int>();
            else if (key == "tumor_fraction") c.tumor_fraction = v.get<double>();
            else if (key == "marker_channel_fraction") c.marker_channel_fraction = v.get<double>();
            else if (key == "intensity_separation") c.intensity_separation = v.get<double>();
            else if (key == "texture_contrast_separation") c.texture_contrast_separation = v.get<double>();
            else if (key == "unlabeled_fraction") c.unlabeled_fraction = v.get<double>();
            else if (key == "pixel_spacing_um") c.pixel_spacing_um = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else throw Error("synth config: unknown key '" + key + "'");
        } catch (const json::exception& e) {
            throw Error("synth config: bad value for '" + key + "': " + e.what());
        }
    }
    c.check();
    return c;
}

std::string synth_config_to_json(const SynthConfig& c) {
    json doc = {{"n_samples", c.n_samples},
                {"n_melanoma", c.n_melanoma},
                {"image_size", c.image_size},
                {"n_channels", c.n_channels},
                {"cells_per_sample", c.cells_per_sample},
                {"tumor_fraction", c.tumor_fraction},
                {"marker_channel_fraction", c.marker_channel_fraction},
                {"intensity_separation", c.intensity_separation},
                {"texture_contrast_separation", c.texture_contrast_separation},
                {"unlabeled_fraction", c.unlabeled_fraction},
                {"pixel_spacing_um", c.pixel_spacing_um},
                {"seed", c.seed}};
    return doc.dump(2) + "\n";
}

namespace {

struct GeneratedSample {
    Sample sample;
    std::vector<CellRow> truth;
};

GeneratedSample generate_sample(const SynthConfig& cfg, int index, bool melanoma,
                                const std::vector<double>& channel_means) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
    const std::uint32_t size = static_cast<std::uint32_t>(cfg.image_size);
    const int n = cfg.cells_per_sample;

    // Jittered grid: one ellipse per slot, each ellipse strictly inside its slot.
    const int gx = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    const int gy = (n + gx - 1) / gx;
    const double slot_w = static_cast<double>(size) / gx;
    const double slot_h = static_cast<double>(size) / gy;
    const double slot = std::min(slot_w, slot_h);

    std::vector<int> slots(static_cast<std::size_t>(gx) * gy);
    std::iota(slots.begin(), slots.end(), 0);
    rng.shuffle(slots.begin(), slots.end());
    slots.resize(static_cast<std::size_t>(n));
    std::sort(slots.begin(), slots.end());

    GeneratedSample out;
    Sample& s = out.sample;
    s.stack.sample_id = sample_name(index, cfg.n_samples);
    s.stack.pixel_spacing_um = cfg.pixel_spacing_um;
    s.diagnosis = melanoma ? Diagnosis::melanoma : Diagnosis::healthy;
    s.mask = LabelMask(size, size);

    std::vector<CellPixels> cells;
    cells.reserve(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        const int sx = slots[static_cast<std::size_t>(c)] % gx;
        const int sy = slots[static_cast<std::size_t>(c)] / gx;
        CellPixels cell;
        cell.id = static_cast<std::uint32_t>(c + 1);
        for (int attempt = 0; attempt < kPlacementRetries && cell.pixels.size() < std::size_t(kMinCellPixels); ++attempt) {
            Ellipse e;
            e.a = rng.uniform(0.30, 0.42) * slot;
            e.b = e.a * rng.uniform(0.6, 1.0);
            e.theta = rng.uniform(0.0, kPi);
            const double slack = std::max(0.0, 0.5 * slot - e.a - 0.5);
            e.cx = (sx + 0.5) * slot_w + rng.uniform(-slack, slack);
            e.cy = (sy + 0.5) * slot_h + rng.uniform(-slack, slack);
            cell.pixels.clear();
            cell.rho2.clear();
            const auto r0 = static_cast<std::uint32_t>(std::max(0.0, std::floor(e.cy - e.a - 1)));
            const auto r1 = static_cast<std::uint32_t>(std::min<double>(size - 1, std::ceil(e.cy + e.a + 1)));
            const auto c0 = static_cast<std::uint32_t>(std::max(0.0, std::floor(e.cx - e.a - 1)));
            const auto c1 = static_cast<std::uint32_t>(std::min<double>(size - 1, std::ceil(e.cx + e.a + 1)));
            for (std::uint32_t r = r0; r <= r1; ++r) {
                for (std::uint32_t col = c0; col <= c1; ++col) {
                    const double rho2 = ellipse_rho2(e, col + 0.5, r + 0.5);
                    if (rho2 < 1.0) {
                        cell.pixels.emplace_back(r, col);
                        cell.rho2.push_back(rho2);
                    }
                }
            }
        }
        if (cell.pixels.size() < std::size_t(kMinCellPixels)) {
            throw Error("synth: cell placement failed in sample " + s.stack.sample_id + " after " +
                        std::to_string(kPlacementRetries) + " retries; achieved " + std::to_string(c) + " of " +
                        std::to_string(n) + " cells (" +
                        std::to_string(static_cast<double>(c) / (double(size) * size) * 1e4) +
                        " cells per 100x100 px); reduce cells_per_sample or enlarge image_size");
        }
        double sr = 0, sc = 0;
        for (auto [r, col] : cell.pixels) {
            s.mask.at(r, col) = cell.id;
            sr += r;
            sc += col;
        }
        cell.cy = sr / double(cell.pixels.size());
        cell.cx = sc / double(cell.pixels.size());
        cells.push_back(std::move(cell));
    }

    // Tumor cells form one contiguous nest: the cells nearest a random focus.
    std::vector<int> tumor(static_cast<std::size_t>(n), 0);
    if (melanoma) {
        const double fx = rng.uniform(0.0, size);
        const double fy = rng.uniform(0.0, size);
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            const auto& A = cells[std::size_t(a)];
            const auto& B = cells[std::size_t(b)];
            return std::hypot(A.cx - fx, A.cy - fy) < std::hypot(B.cx - fx, B.cy - fy);
        });
        const auto n_tumor = static_cast<std::size_t>(std::llround(cfg.tumor_fraction * n));
        for (std::size_t i = 0; i < n_tumor; ++i) tumor[std::size_t(order[i])] = 1;
    }

    for (int c = 0; c < n; ++c) {
        const int truth = tumor[std::size_t(c)];
        const int written = rng.bernoulli(cfg.unlabeled_fraction) ? kUnlabeled : truth;
        s.labels.push_back({cells[std::size_t(c)].id, written});
        CellRow row;
        row.cell_id = cells[std::size_t(c)].id;
        row.sample_id = s.stack.sample_id;
        row.cx = cells[std::size_t(c)].cx;
        row.cy = cells[std::size_t(c)].cy;
        row.label = truth;
        out.truth.push_back(std::move(row));
    }

    const int n_marker = marker_channel_count(cfg);
    for (int k = 0; k < cfg.n_channels; ++k) {
        ChannelImage img(size, size);
        std::vector<double> field(std::size_t(size) * size);
        for (auto& v : field) v = rng.normal(kBackgroundMean, kBackgroundSd);
        for (int c = 0; c < n; ++c) {
            const auto& cell = cells[std::size_t(c)];
            const bool is_tumor = tumor[std::size_t(c)] != 0;
            double mean = channel_means[std::size_t(k)] + kBetweenCellSd * rng.normal();
            if (is_tumor && k < n_marker) mean += cfg.intensity_separation * kBetweenCellSd;
            const double noise = kBaseNoiseSd * (is_tumor ? 1.0 + cfg.texture_contrast_separation : 1.0);
            for (std::size_t p = 0; p < cell.pixels.size(); ++p) {
                const auto [r, col] = cell.pixels[p];
                field[std::size_t(r) * size + col] = mean + kProfileAmplitude * (1.0 - cell.rho2[p]) + noise * rng.normal();
            }
        }
        for (std::size_t i = 0; i < field.size(); ++i) {
            img.values[i] = static_cast<std::uint16_t>(std::clamp(std::llround(field[i]), 0LL, 65535LL));
        }
        s.stack.channels.push_back({antigen_name(k), std::move(img)});
    }
    return out;
}

}  // namespace

SyntheticDataset generate_synthetic_dataset(const SynthConfig& cfg) {
    cfg.check();
    Rng root(derive_seed(cfg.seed, "dataset"));
    std::vector<double> channel_means(static_cast<std::size_t>(cfg.n_channels));
    for (auto& m : channel_means) m = root.uniform(800.0, 2000.0);

    std::vector<int> order(static_cast<std::size_t>(cfg.n_samples));
    std::iota(order.begin(), order.end(), 0);
    root.shuffle(order.begin(), order.end());
    std::vector<bool> melanoma(static_cast<std::size_t>(cfg.n_samples), false);
    for (int i = 0; i < cfg.n_melanoma; ++i) melanoma[std::size_t(order[std::size_t(i)])] = true;

    std::vector<GeneratedSample> parts(static_cast<std::size_t>(cfg.n_samples));
    parallel_for(parts.size(), [&](std::size_t i) {
        parts[i] = generate_sample(cfg, static_cast<int>(i), melanoma[i], channel_means);
    });

    SyntheticDataset out;
    out.dataset.pixel_spacing_um = cfg.pixel_spacing_um;
    for (auto& p : parts) {
        out.dataset.samples.push_back(std::move(p.sample));
        for (auto& r : p.truth) out.ground_truth.rows.push_back(std::move(r));
    }
    return out;
}

std::filesystem::path write_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& dir) {
    const SyntheticDataset synth = generate_synthetic_dataset(cfg);
    const auto manifest = save_dataset(synth.dataset, dir);
    std::string gt = "sample_id,cell_id,cx,cy,class_label\n";
    for (const auto& r : synth.ground_truth.rows) {
        gt += r.sample_id + "," + std::to_string(r.cell_id) + "," + io::format_double(r.cx) + "," +
              io::format_double(r.cy) + "," + std::to_string(r.label) + "\n";
    }
    io::write_file_atomic(dir / "ground_truth.csv", gt);
    io::write_file_atomic(dir / "synth_config.json", synth_config_to_json(cfg));
    return manifest;
}

}  // namespace cellgraph
