#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cellgraph/dataset.hpp"
#include "cellgraph/error.hpp"

namespace cellgraph::radiomics {

struct PixelCoord {
    int row = 0;
    int col = 0;

    bool operator==(const PixelCoord&) const = default;
};

/// Displacement between the two pixels of a co-occurrence pair, or the step
/// direction of a run.
struct Offset {
    int dr = 0;
    int dc = 0;

    bool operator==(const Offset&) const = default;
};

/// The four distance-1 directions: 0°, 90°, 45°, 135°.
std::vector<Offset> default_offsets();

/// A cell's pixels with their gray-level bin in [0, levels).
struct QuantizedRegion {
    int levels = 16;
    std::vector<PixelCoord> coords;
    std::vector<int> bins;

    std::size_t size() const { return coords.size(); }
};

/// Raised when a texture matrix has nothing to count (no in-cell pairs).
class DegenerateRegion : public Error {
public:
    using Error::Error;
};

/// Equal-width bins over [min, max] of the region's values; the maximum maps
/// to levels-1 and a constant region maps entirely to bin 0.
QuantizedRegion quantize(std::span<const PixelCoord> coords, std::span<const double> values, int levels);
QuantizedRegion quantize(const ChannelImage& image, std::span<const PixelCoord> coords, int levels);

struct FirstOrder {
    double mean = 0, variance = 0, skewness = 0, kurtosis = 0, energy = 0, entropy = 0, min = 0, max = 0;
};

/// Population moments; entropy in bits over a `levels`-bin histogram.
/// Skewness and kurtosis are 0 for a constant region.
FirstOrder first_order_features(std::span<const double> values, int levels = 16);
FirstOrder first_order_features(const ChannelImage& image, std::span<const PixelCoord> coords, int levels = 16);

struct Shape {
    double area_um2 = 0;
    double perimeter_um = 0;
    double major_axis = 0;  // µm
    double minor_axis = 0;  // µm
    double elongation = 1;  // minor / major
    double compactness = 0;
    double eccentricity = 0;
    double centroid_row = 0;  // pixels
    double centroid_col = 0;  // pixels
};

Shape shape_features(std::span<const PixelCoord> coords, double pixel_spacing_um);
Shape shape_features(const LabelMask& mask, std::uint32_t cell_id, double pixel_spacing_um);

struct GlcmMatrix {
    int levels = 0;
    std::vector<double> p;  // levels x levels, row-major, sums to 1
    std::vector<Offset> offsets;
    bool symmetric = true;
    std::size_t n_pairs = 0;  // ordered pairs counted before symmetrisation

    double at(int i, int j) const { return p[std::size_t(i) * std::size_t(levels) + std::size_t(j)]; }
};

/// Co-occurrences accumulated over all offsets; pairs must lie inside the
/// region. Throws DegenerateRegion when no pair exists.
GlcmMatrix glcm(const QuantizedRegion& q, std::span<const Offset> offsets, bool symmetric = true);

struct GlcmFeatures {
    double contrast = 0, correlation = 0, angular_second_moment = 0, inverse_difference_moment = 0, entropy = 0;
};

GlcmFeatures glcm_features(const GlcmMatrix& m);

struct GlrlmMatrix {
    int levels = 0;
    int max_run = 0;
    std::vector<double> r;  // levels x max_run; r[g * max_run + (l - 1)] counts runs of gray g, length l
    std::vector<Offset> directions;
    std::size_t n_runs = 0;

    double at(int gray, int length) const {
        return r[std::size_t(gray) * std::size_t(max_run) + std::size_t(length - 1)];
    }
};

/// Maximal equal-bin runs along each direction, broken at the region boundary.
GlrlmMatrix glrlm(const QuantizedRegion& q, std::span<const Offset> directions);

struct GlrlmFeatures {
    double short_run_emphasis = 0, long_run_emphasis = 0, gray_level_nonuniformity = 0,
           run_length_nonuniformity = 0, run_percentage = 0;
};

/// `n_pixels` is the number of pixel positions scanned: region size times the
/// number of directions accumulated in the matrix. Throws DegenerateRegion on
/// an empty matrix.
GlrlmFeatures glrlm_features(const GlrlmMatrix& m, std::size_t n_pixels);

struct RadiomicsConfig {
    int levels = 16;
    std::vector<Offset> offsets = default_offsets();
    bool symmetric = true;
    std::vector<std::string> channels;  // antigens to analyse; empty selects all
    bool shape = true;
};

struct FeatureWarning {
    std::string sample_id;
    std::uint32_t cell_id = 0;
    std::string channel;
    std::string message;
};

struct RadiomicsResult {
    CellTable table;
    std::vector<FeatureWarning> warnings;
};

inline constexpr std::size_t kShapeFeatureCount = 7;
inline constexpr std::size_t kChannelFeatureCount = 18;  // 8 first-order + 5 GLCM + 5 GLRLM

/// Column names in canonical order: shape block, then per selected channel
/// (manifest order) first-order, GLCM and GLRLM features.
std::vector<std::string> radiomic_feature_names(const std::vector<std::string>& antigens, const RadiomicsConfig& cfg);

/// Per-cell radiomic features. A cell whose texture matrix is degenerate gets
/// NaN in the affected columns and a warning; cells are never dropped.
RadiomicsResult radiomic_feature_table(const StainStack& stack, const LabelMask& mask, const RadiomicsConfig& cfg = {});
RadiomicsResult radiomic_feature_table(const Sample& sample, const RadiomicsConfig& cfg = {});

}  // namespace cellgraph::radiomics
