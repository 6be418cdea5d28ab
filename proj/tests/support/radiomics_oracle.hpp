#pragma once

// Brute-force reference computations for texture matrices and features. They
// deliberately avoid the bounding-box lookup and run-walking used by the
// library so that agreement is meaningful.

#include <cmath>
#include <vector>

#include "cellgraph/radiomics.hpp"
#include "cellgraph/random.hpp"

namespace cellgraph::testing {

using radiomics::Offset;
using radiomics::PixelCoord;

/// Unnormalised co-occurrence counts by all-pairs enumeration.
inline std::vector<double> glcm_counts_oracle(const std::vector<PixelCoord>& coords, const std::vector<int>& bins, int L,
                                              const std::vector<Offset>& offsets, bool symmetric) {
    std::vector<double> c(std::size_t(L * L), 0.0);
    for (const auto& o : offsets) {
        for (std::size_t i = 0; i < coords.size(); ++i) {
            for (std::size_t j = 0; j < coords.size(); ++j) {
                if (coords[j].row - coords[i].row == o.dr && coords[j].col - coords[i].col == o.dc) {
                    c[std::size_t(bins[i] * L + bins[j])] += 1.0;
                    if (symmetric) c[std::size_t(bins[j] * L + bins[i])] += 1.0;
                }
            }
        }
    }
    return c;
}

inline std::vector<double> glcm_oracle(const std::vector<PixelCoord>& coords, const std::vector<int>& bins, int L,
                                       const std::vector<Offset>& offsets, bool symmetric) {
    auto c = glcm_counts_oracle(coords, bins, L, offsets, symmetric);
    double total = 0;
    for (double v : c) total += v;
    if (total > 0) {
        for (double& v : c) v /= total;
    }
    return c;
}

/// Run counts (gray x length, length index l-1) by testing every candidate
/// segment for maximality. `max_len` bounds the lengths examined.
inline std::vector<double> glrlm_oracle(const std::vector<PixelCoord>& coords, const std::vector<int>& bins, int L,
                                        const std::vector<Offset>& dirs, int max_len) {
    auto bin_at = [&](int r, int c) {
        for (std::size_t i = 0; i < coords.size(); ++i) {
            if (coords[i].row == r && coords[i].col == c) return bins[i];
        }
        return -1;
    };
    std::vector<double> R(std::size_t(L * max_len), 0.0);
    for (const auto& d : dirs) {
        for (std::size_t i = 0; i < coords.size(); ++i) {
            const int g = bins[i];
            for (int len = 1; len <= max_len; ++len) {
                bool uniform = true;
                for (int t = 0; t < len && uniform; ++t) {
                    uniform = bin_at(coords[i].row + t * d.dr, coords[i].col + t * d.dc) == g;
                }
                if (!uniform) break;
                const bool open_before = bin_at(coords[i].row - d.dr, coords[i].col - d.dc) != g;
                const bool open_after = bin_at(coords[i].row + len * d.dr, coords[i].col + len * d.dc) != g;
                if (open_before && open_after) R[std::size_t(g * max_len + len - 1)] += 1.0;
            }
        }
    }
    return R;
}

struct GlcmOracleFeatures {
    double contrast, correlation, asm_, idm, entropy;
};

inline GlcmOracleFeatures glcm_features_oracle(const std::vector<double>& P, int L) {
    std::vector<double> px(std::size_t(L), 0.0), py(std::size_t(L), 0.0);
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
            px[std::size_t(i)] += P[std::size_t(i * L + j)];
            py[std::size_t(j)] += P[std::size_t(i * L + j)];
        }
    }
    double mx = 0, my = 0;
    for (int i = 0; i < L; ++i) {
        mx += i * px[std::size_t(i)];
        my += i * py[std::size_t(i)];
    }
    double vx = 0, vy = 0;
    for (int i = 0; i < L; ++i) {
        vx += (i - mx) * (i - mx) * px[std::size_t(i)];
        vy += (i - my) * (i - my) * py[std::size_t(i)];
    }
    GlcmOracleFeatures f{0, 0, 0, 0, 0};
    double exy = 0;
    for (int i = 0; i < L; ++i) {
        for (int j = 0; j < L; ++j) {
            const double p = P[std::size_t(i * L + j)];
            f.contrast += (i - j) * (i - j) * p;
            f.asm_ += p * p;
            f.idm += p / (1.0 + (i - j) * (i - j));
            if (p > 0) f.entropy -= p * std::log(p) / std::log(2.0);
            exy += double(i) * double(j) * p;
        }
    }
    const double sx = std::sqrt(vx), sy = std::sqrt(vy);
    f.correlation = (sx > 1e-12 && sy > 1e-12) ? (exy - mx * my) / (sx * sy) : 0.0;
    return f;
}

struct GlrlmOracleFeatures {
    double sre, lre, gln, rln, rp;
};

inline GlrlmOracleFeatures glrlm_features_oracle(const std::vector<double>& R, int L, int max_len, double n_pixels) {
    double nr = 0;
    for (double v : R) nr += v;
    GlrlmOracleFeatures f{0, 0, 0, 0, 0};
    for (int g = 0; g < L; ++g) {
        for (int l = 1; l <= max_len; ++l) {
            const double v = R[std::size_t(g * max_len + l - 1)];
            f.sre += v / double(l * l);
            f.lre += v * double(l * l);
        }
    }
    for (int g = 0; g < L; ++g) {
        double s = 0;
        for (int l = 1; l <= max_len; ++l) s += R[std::size_t(g * max_len + l - 1)];
        f.gln += s * s;
    }
    for (int l = 1; l <= max_len; ++l) {
        double s = 0;
        for (int g = 0; g < L; ++g) s += R[std::size_t(g * max_len + l - 1)];
        f.rln += s * s;
    }
    f.sre /= nr;
    f.lre /= nr;
    f.gln /= nr;
    f.rln /= nr;
    f.rp = nr / n_pixels;
    return f;
}

/// Random single-cell region inside an 8x8 window: a random subset of pixels
/// (at least two) with random bins.
struct RandomRegion {
    std::vector<PixelCoord> coords;
    std::vector<int> bins;
};

inline RandomRegion random_region(Rng& rng, int L, double density = 0.7) {
    RandomRegion reg;
    while (reg.coords.size() < 2) {
        reg.coords.clear();
        reg.bins.clear();
        for (int r = 0; r < 8; ++r) {
            for (int c = 0; c < 8; ++c) {
                if (rng.bernoulli(density)) {
                    reg.coords.push_back({r, c});
                    reg.bins.push_back(int(rng.below(std::uint64_t(L))));
                }
            }
        }
    }
    return reg;
}

inline bool rel_close(double a, double b, double rel) {
    if (a == b) return true;
    return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace cellgraph::testing
