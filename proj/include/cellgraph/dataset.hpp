#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace cellgraph {

/// One grayscale antigen channel, row-major 16-bit intensities.
struct ChannelImage {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint16_t> values;

    ChannelImage() = default;
    ChannelImage(std::uint32_t w, std::uint32_t h, std::uint16_t fill = 0)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    std::uint16_t at(std::uint32_t row, std::uint32_t col) const { return values[std::size_t(row) * width + col]; }
    std::uint16_t& at(std::uint32_t row, std::uint32_t col) { return values[std::size_t(row) * width + col]; }

    bool operator==(const ChannelImage&) const = default;
};

struct Channel {
    std::string antigen;
    ChannelImage image;

    bool operator==(const Channel&) const = default;
};

/// All channels of one sample. Channel order is manifest order.
struct StainStack {
    std::string sample_id;
    std::vector<Channel> channels;
    double pixel_spacing_um = 0.45;

    std::uint32_t width() const { return channels.empty() ? 0 : channels.front().image.width; }
    std::uint32_t height() const { return channels.empty() ? 0 : channels.front().image.height; }

    bool operator==(const StainStack&) const = default;
};

/// Instance segmentation: 0 is background, k > 0 is the cell with id k.
struct LabelMask {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint32_t> labels;

    LabelMask() = default;
    LabelMask(std::uint32_t w, std::uint32_t h) : width(w), height(h), labels(static_cast<std::size_t>(w) * h, 0) {}

    std::uint32_t at(std::uint32_t row, std::uint32_t col) const { return labels[std::size_t(row) * width + col]; }
    std::uint32_t& at(std::uint32_t row, std::uint32_t col) { return labels[std::size_t(row) * width + col]; }

    /// Distinct non-zero ids in ascending order.
    std::vector<std::uint32_t> cell_ids() const;

    bool operator==(const LabelMask&) const = default;
};

enum class Diagnosis { melanoma, healthy };

std::string to_string(Diagnosis d);
Diagnosis diagnosis_from_string(const std::string& s);

/// Class label convention: 0 healthy, 1 tumor, -1 unlabeled.
inline constexpr int kUnlabeled = -1;

struct CellLabel {
    std::uint32_t cell_id = 0;
    int class_label = kUnlabeled;

    bool operator==(const CellLabel&) const = default;
};

struct CellRow {
    std::uint32_t cell_id = 0;
    std::string sample_id;
    double cx = 0.0;  // column coordinate of the centroid, pixels
    double cy = 0.0;  // row coordinate of the centroid, pixels
    int label = kUnlabeled;
    std::vector<double> features;
};

/// Per-cell records with a uniform feature vector.
struct CellTable {
    std::vector<std::string> feature_names;
    std::vector<CellRow> rows;

    std::size_t n_features() const { return feature_names.size(); }

    /// Throws if a row has the wrong feature count or (sample_id, cell_id) repeats.
    void check() const;

    /// Orders rows by (sample_id, cell_id).
    void sort();
};

struct Sample {
    StainStack stack;
    LabelMask mask;
    std::vector<CellLabel> labels;
    Diagnosis diagnosis = Diagnosis::healthy;
};

struct Dataset {
    double pixel_spacing_um = 0.45;
    std::vector<Sample> samples;
};

// On-disk manifest. Paths are relative to the manifest's directory.
struct ManifestChannel {
    std::string antigen;
    std::string path;
};

struct ManifestSample {
    std::string sample_id;
    std::vector<ManifestChannel> channels;
    std::string mask;
    std::string labels;
    Diagnosis diagnosis = Diagnosis::healthy;
};

struct DatasetManifest {
    double pixel_spacing_um = 0.45;
    std::vector<ManifestSample> samples;
};

DatasetManifest parse_manifest(const std::string& json_text);
std::string manifest_to_json(const DatasetManifest& manifest);

// Binary 16-bit PGM (P5). 8-bit PGMs (maxval < 256) are also accepted on read.
ChannelImage read_pgm(const std::filesystem::path& path);
std::string encode_pgm(const ChannelImage& image);

// "CGMK" + u16 width + u16 height, followed by u32 little-endian labels.
LabelMask read_mask(const std::filesystem::path& path);
std::string encode_mask(const LabelMask& mask);

// `cell_id,class_label` CSV with a header line.
std::vector<CellLabel> read_labels_csv(const std::filesystem::path& path);
std::string encode_labels_csv(const std::vector<CellLabel>& labels);

/// Loads and validates a dataset. Throws DatasetError naming the sample and
/// file for missing files, malformed headers, and any validation violation.
/// Accepts either a manifest path or a directory containing manifest.json.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest.json plus one directory per sample; returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct Violation {
    std::string sample_id;
    std::string check;
    std::string message;
};

using ValidationReport = std::vector<Violation>;

/// Lists every invariant violation, ordered by sample then check id.
ValidationReport validate_dataset(const Dataset& dataset);

/// Cell id to class label lookup built from a sample's labels; ids missing
/// from the labels file map to kUnlabeled.
int label_of(const std::vector<CellLabel>& labels, std::uint32_t cell_id);

}  // namespace cellgraph
