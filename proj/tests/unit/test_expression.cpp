#include "doctest.h"

#include <algorithm>
#include <map>

#include "cellgraph/error.hpp"
#include "cellgraph/features.hpp"
#include "cellgraph/random.hpp"

using namespace cellgraph;

namespace {

StainStack random_stack(std::uint64_t seed, std::uint32_t w, std::uint32_t h, int channels) {
    Rng rng(seed);
    StainStack s;
    s.sample_id = "T";
    for (int k = 0; k < channels; ++k) {
        ChannelImage img(w, h);
        for (auto& v : img.values) v = std::uint16_t(rng.below(65536));
        s.channels.push_back({"M" + std::to_string(k), img});
    }
    return s;
}

LabelMask random_mask(std::uint64_t seed, std::uint32_t w, std::uint32_t h, std::uint32_t n_cells) {
    Rng rng(seed);
    LabelMask m(w, h);
    for (auto& v : m.labels) v = std::uint32_t(rng.below(n_cells + 1));
    for (std::uint32_t c = 1; c <= n_cells; ++c) m.labels[c] = c;  // every id present
    return m;
}

}  // namespace

TEST_CASE("two-pixel cell averages its values") {
    StainStack s;
    s.sample_id = "T";
    ChannelImage img(2, 1);
    img.values = {10, 20};
    s.channels.push_back({"CD3", img});
    LabelMask m(2, 1);
    m.labels = {4, 4};
    const CellTable t = expression_profile(s, m);
    REQUIRE(t.rows.size() == 1);
    CHECK(t.rows[0].features[0] == 15.0);
    CHECK(t.rows[0].cell_id == 4);
    CHECK(t.rows[0].cx == 0.5);
    CHECK(t.rows[0].cy == 0.0);
    CHECK(t.feature_names == std::vector<std::string>{"CD3"});
}

TEST_CASE("constant channel gives its value") {
    StainStack s;
    s.channels.push_back({"A", ChannelImage(5, 5, 7)});
    const CellTable t = expression_profile(s, random_mask(3, 5, 5, 3));
    for (const auto& r : t.rows) CHECK(r.features[0] == 7.0);
}

TEST_CASE("matches brute-force per-pixel accumulation exactly") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const StainStack s = random_stack(seed, 8, 8, 3);
        const LabelMask m = random_mask(seed + 100, 8, 8, 3);
        const CellTable t = expression_profile(s, m);
        REQUIRE(t.rows.size() == 3);

        // Oracle: one pass over every pixel, accumulating per (cell, channel).
        std::map<std::uint32_t, std::vector<double>> sums;
        std::map<std::uint32_t, double> counts;
        for (std::uint32_t r = 0; r < 8; ++r) {
            for (std::uint32_t c = 0; c < 8; ++c) {
                const auto id = m.at(r, c);
                if (id == 0) continue;
                auto& acc = sums[id];
                acc.resize(3, 0.0);
                for (int k = 0; k < 3; ++k) acc[std::size_t(k)] += s.channels[std::size_t(k)].image.at(r, c);
                counts[id] += 1;
            }
        }
        std::size_t i = 0;
        for (const auto& [id, acc] : sums) {
            CHECK(t.rows[i].cell_id == id);
            for (int k = 0; k < 3; ++k) CHECK(t.rows[i].features[std::size_t(k)] == acc[std::size_t(k)] / counts[id]);
            ++i;
        }
    }
}

TEST_CASE("feature lies between channel min and max over the cell") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const StainStack s = random_stack(seed, 12, 9, 2);
        const LabelMask m = random_mask(seed * 7, 12, 9, 6);
        const CellTable t = expression_profile(s, m);
        for (const auto& row : t.rows) {
            for (int k = 0; k < 2; ++k) {
                double lo = 1e9, hi = -1e9;
                for (std::size_t p = 0; p < m.labels.size(); ++p) {
                    if (m.labels[p] != row.cell_id) continue;
                    lo = std::min<double>(lo, s.channels[std::size_t(k)].image.values[p]);
                    hi = std::max<double>(hi, s.channels[std::size_t(k)].image.values[p]);
                }
                CHECK(row.features[std::size_t(k)] >= lo);
                CHECK(row.features[std::size_t(k)] <= hi);
            }
        }
    }
}

TEST_CASE("permuting channels permutes columns by name") {
    const StainStack s = random_stack(5, 10, 10, 4);
    const LabelMask m = random_mask(6, 10, 10, 5);
    StainStack p = s;
    std::reverse(p.channels.begin(), p.channels.end());
    const CellTable a = expression_profile(s, m);
    const CellTable b = expression_profile(p, m);
    for (std::size_t i = 0; i < a.feature_names.size(); ++i) {
        const auto j = std::size_t(std::find(b.feature_names.begin(), b.feature_names.end(), a.feature_names[i]) -
                                   b.feature_names.begin());
        REQUIRE(j < b.feature_names.size());
        for (std::size_t r = 0; r < a.rows.size(); ++r) CHECK(a.rows[r].features[i] == b.rows[r].features[j]);
    }
}

TEST_CASE("median pooling") {
    StainStack s;
    ChannelImage img(3, 1);
    img.values = {1, 100, 3};
    s.channels.push_back({"A", img});
    LabelMask m(3, 1);
    m.labels = {1, 1, 1};
    CHECK(expression_profile(s, m, Pooling::median).rows[0].features[0] == 3.0);
}

TEST_CASE("errors") {
    StainStack s;
    s.channels.push_back({"A", ChannelImage(3, 3, 1)});
    CHECK_THROWS_AS(expression_profile(s, LabelMask(3, 3)), Error);  // no cells
    CHECK_THROWS_AS(expression_profile(s, LabelMask(4, 3)), Error);  // dimension mismatch
}

TEST_CASE("feature table CSV round trip is exact and has the documented header") {
    Rng rng(9);
    CellTable t;
    t.feature_names = {"a", "b"};
    for (std::uint32_t i = 1; i <= 20; ++i) {
        t.rows.push_back({i, "S1", rng.normal(), rng.normal(), int(rng.below(3)) - 1,
                          {rng.normal() * 1e6, rng.uniform() * 1e-9}});
    }
    t.rows[3].features[0] = std::nan("");
    const std::string csv = encode_cell_table_csv(t);
    CHECK(csv.rfind("cell_id,sample_id,cx,cy,label,a,b\n", 0) == 0);
    const CellTable back = parse_cell_table_csv(csv);
    REQUIRE(back.rows.size() == t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        CHECK(back.rows[i].cx == t.rows[i].cx);
        CHECK(back.rows[i].label == t.rows[i].label);
        CHECK(back.rows[i].features[1] == t.rows[i].features[1]);
        if (i == 3) CHECK(std::isnan(back.rows[i].features[0]));
        else CHECK(back.rows[i].features[0] == t.rows[i].features[0]);
    }
    CHECK(encode_cell_table_csv(back) == csv);
}
