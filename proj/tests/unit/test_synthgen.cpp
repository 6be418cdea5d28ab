#include "doctest.h"

#include <cmath>

#include "cellgraph/dataset.hpp"
#include "cellgraph/error.hpp"
#include "cellgraph/features.hpp"
#include "cellgraph/parallel.hpp"
#include "cellgraph/synthgen.hpp"
#include "test_support.hpp"

using namespace cellgraph;

namespace {

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.n_samples = 3;
    cfg.n_melanoma = 2;
    cfg.image_size = 96;
    cfg.n_channels = 4;
    cfg.cells_per_sample = 40;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("27 cases with 20 melanoma keep the 20/7 diagnosis split through disk") {
    SynthConfig cfg;
    cfg.n_samples = 27;
    cfg.n_melanoma = 20;
    cfg.image_size = 64;
    cfg.n_channels = 2;
    cfg.cells_per_sample = 30;
    const auto dir = testing::scratch_dir("synth_27");
    const Dataset ds = load_dataset(write_synthetic_dataset(cfg, dir));
    REQUIRE(ds.samples.size() == 27);
    int melanoma = 0;
    for (const auto& s : ds.samples) melanoma += s.diagnosis == Diagnosis::melanoma ? 1 : 0;
    CHECK(melanoma == 20);
    CHECK(27 - melanoma == 7);
}

TEST_CASE("tumor_fraction 0 gives only healthy labels") {
    SynthConfig cfg = small_config();
    cfg.tumor_fraction = 0.0;
    const auto synth = generate_synthetic_dataset(cfg);
    for (const auto& s : synth.dataset.samples) {
        for (const auto& l : s.labels) CHECK(l.class_label == 0);
    }
}

TEST_CASE("healthy samples hold no tumor cells and melanoma samples do") {
    const auto synth = generate_synthetic_dataset(small_config());
    for (const auto& s : synth.dataset.samples) {
        int tumor = 0;
        for (const auto& l : s.labels) tumor += l.class_label == 1;
        if (s.diagnosis == Diagnosis::healthy) CHECK(tumor == 0);
        else CHECK(tumor == static_cast<int>(std::llround(0.4 * 40)));
    }
}

TEST_CASE("same seed gives byte-identical output trees") {
    const auto a = testing::scratch_dir("synth_det_a");
    const auto b = testing::scratch_dir("synth_det_b");
    write_synthetic_dataset(small_config(), a);
    write_synthetic_dataset(small_config(), b);
    CHECK(testing::hash_tree(a) == testing::hash_tree(b));
    CHECK(testing::snapshot_tree(a) == testing::snapshot_tree(b));

    SynthConfig other = small_config();
    other.seed = 12;
    const auto c = testing::scratch_dir("synth_det_c");
    write_synthetic_dataset(other, c);
    CHECK(testing::hash_tree(a) != testing::hash_tree(c));
}

TEST_CASE("parallel and serial generation agree bitwise") {
    set_num_threads(1);
    const auto serial = generate_synthetic_dataset(small_config());
    set_num_threads(4);
    const auto parallel = generate_synthetic_dataset(small_config());
    set_num_threads(0);
    REQUIRE(serial.dataset.samples.size() == parallel.dataset.samples.size());
    for (std::size_t i = 0; i < serial.dataset.samples.size(); ++i) {
        CHECK(serial.dataset.samples[i].stack == parallel.dataset.samples[i].stack);
        CHECK(serial.dataset.samples[i].mask == parallel.dataset.samples[i].mask);
    }
}

TEST_CASE("default config: cell count within 15% and unique mask ids") {
    const SynthConfig cfg;
    const auto synth = generate_synthetic_dataset(cfg);
    for (const auto& s : synth.dataset.samples) {
        const auto ids = s.mask.cell_ids();
        CHECK(std::abs(double(ids.size()) - cfg.cells_per_sample) <= 0.15 * cfg.cells_per_sample);
        CHECK(ids.size() == s.labels.size());
    }
    CHECK(validate_dataset(synth.dataset).empty());
}

TEST_CASE("marker channels separate classes by at least half the configured effect size") {
    const SynthConfig cfg;
    const auto synth = generate_synthetic_dataset(cfg);
    const int n_marker = marker_channel_count(cfg);
    REQUIRE(n_marker == 3);
    for (int k = 0; k < cfg.n_channels; ++k) {
        double s0 = 0, s1 = 0, q0 = 0, q1 = 0;
        int n0 = 0, n1 = 0;
        for (const auto& s : synth.dataset.samples) {
            const CellTable t = expression_profile(s);
            for (const auto& r : t.rows) {
                const double v = r.features[std::size_t(k)];
                if (r.label == 1) {
                    s1 += v;
                    q1 += v * v;
                    ++n1;
                } else {
                    s0 += v;
                    q0 += v * v;
                    ++n0;
                }
            }
        }
        const double m0 = s0 / n0, m1 = s1 / n1;
        const double v0 = q0 / n0 - m0 * m0, v1 = q1 / n1 - m1 * m1;
        const double pooled = std::sqrt(((n0 - 1) * v0 + (n1 - 1) * v1) / (n0 + n1 - 2));
        const double effect = (m1 - m0) / pooled;
        if (k < n_marker) CHECK(effect >= cfg.intensity_separation / 2);
        else CHECK(std::abs(effect) < 0.5);
    }
}

TEST_CASE("overcrowded configuration reports achieved density") {
    SynthConfig cfg = small_config();
    cfg.image_size = 32;
    cfg.cells_per_sample = 400;
    CHECK_THROWS_WITH_AS(generate_synthetic_dataset(cfg), doctest::Contains("achieved"), Error);
}

TEST_CASE("config parsing rejects unknown keys and bad invariants") {
    CHECK(synth_config_from_json(R"({"n_samples": 27, "n_melanoma": 20})").n_melanoma == 20);
    CHECK_THROWS_AS(synth_config_from_json(R"({"n_sample": 3})"), Error);
    CHECK_THROWS_AS(synth_config_from_json(R"({"n_samples": 3, "n_melanoma": 4})"), Error);
    CHECK_THROWS_AS(synth_config_from_json(R"({"image_size": 16})"), Error);
    CHECK_THROWS_AS(synth_config_from_json(R"({"n_channels": 1})"), Error);
    const SynthConfig round = synth_config_from_json(synth_config_to_json(small_config()));
    CHECK(round.cells_per_sample == 40);
    CHECK(round.seed == 11);
}
