#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cellgraph/dataset.hpp"

namespace cellgraph {

/// Parameters of the synthetic multiplex dataset. Defaults are the desk-scale
/// configuration used by the end-to-end tests.
struct SynthConfig {
    int n_samples = 6;
    int n_melanoma = 4;
    int image_size = 256;
    int n_channels = 12;
    int cells_per_sample = 300;
    double tumor_fraction = 0.4;           // share of cells that are tumor in a melanoma sample
    double marker_channel_fraction = 0.25;  // share of channels that carry the intensity signal
    double intensity_separation = 3.0;      // class mean shift on marker channels, in between-cell SDs
    double texture_contrast_separation = 2.0;  // relative increase of intra-cell noise SD for tumor cells
    double unlabeled_fraction = 0.0;        // share of cells written with label -1
    double pixel_spacing_um = 0.45;
    std::uint64_t seed = 42;

    /// Throws Error if an invariant does not hold.
    void check() const;
};

SynthConfig synth_config_from_json(const std::string& json_text);
std::string synth_config_to_json(const SynthConfig& cfg);

struct SyntheticDataset {
    Dataset dataset;
    /// True labels for every cell, including those written as unlabeled.
    CellTable ground_truth;
};

/// Builds the dataset in memory. Deterministic for a fixed config; each
/// sample draws from its own stream, so thread count does not matter.
SyntheticDataset generate_synthetic_dataset(const SynthConfig& cfg);

/// Generates and writes the dataset plus ground_truth.csv to `dir`.
/// Returns the manifest path.
std::filesystem::path write_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& dir);

/// Number of channels that receive the class intensity shift.
int marker_channel_count(const SynthConfig& cfg);

}  // namespace cellgraph
