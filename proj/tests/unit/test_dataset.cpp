#include "doctest.h"

#include <filesystem>

#include "cellgraph/dataset.hpp"
#include "cellgraph/error.hpp"
#include "cellgraph/io.hpp"
#include "cellgraph/random.hpp"
#include "cellgraph/synthgen.hpp"
#include "test_support.hpp"

using namespace cellgraph;
namespace fs = std::filesystem;

namespace {

// 1 sample, 2 channels 4x4, two cells.
Dataset tiny_dataset() {
    Dataset ds;
    Sample s;
    s.stack.sample_id = "A";
    s.stack.pixel_spacing_um = 0.45;
    for (int k = 0; k < 2; ++k) {
        ChannelImage img(4, 4);
        for (std::size_t i = 0; i < img.values.size(); ++i) img.values[i] = static_cast<std::uint16_t>(1000 * k + 37 * i);
        s.stack.channels.push_back({k == 0 ? "CD3" : "CD20", img});
    }
    s.mask = LabelMask(4, 4);
    s.mask.at(0, 0) = 1;
    s.mask.at(0, 1) = 1;
    s.mask.at(2, 2) = 5;
    s.mask.at(3, 3) = 5;
    s.labels = {{1, 0}, {5, 1}};
    s.diagnosis = Diagnosis::melanoma;
    ds.samples.push_back(s);
    return ds;
}

bool same(const Dataset& a, const Dataset& b) {
    if (a.samples.size() != b.samples.size() || a.pixel_spacing_um != b.pixel_spacing_um) return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const auto& x = a.samples[i];
        const auto& y = b.samples[i];
        if (!(x.stack == y.stack) || !(x.mask == y.mask) || x.labels != y.labels || x.diagnosis != y.diagnosis) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("minimal manifest loads with channel order preserved") {
    const auto dir = testing::scratch_dir("dataset_minimal");
    const Dataset ds = tiny_dataset();
    const auto manifest = save_dataset(ds, dir);
    const Dataset loaded = load_dataset(manifest);
    REQUIRE(loaded.samples.size() == 1);
    CHECK(loaded.samples[0].stack.channels.size() == 2);
    CHECK(loaded.samples[0].stack.channels[0].antigen == "CD3");
    CHECK(loaded.samples[0].stack.channels[1].antigen == "CD20");
    CHECK(same(ds, loaded));
    CHECK(validate_dataset(loaded).empty());
    // Directory form resolves manifest.json.
    CHECK(same(load_dataset(dir), ds));
}

TEST_CASE("absent mask file is reported with its path") {
    const auto dir = testing::scratch_dir("dataset_missing_mask");
    const auto manifest = save_dataset(tiny_dataset(), dir);
    fs::remove(dir / "A" / "mask.cgmk");
    try {
        load_dataset(manifest);
        FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
        CHECK(e.sample_id() == "A");
        CHECK(std::string(e.what()).find("mask.cgmk") != std::string::npos);
        CHECK(e.path().find("mask.cgmk") != std::string::npos);
    }
}

TEST_CASE("malformed files are rejected") {
    const auto dir = testing::scratch_dir("dataset_malformed");
    const auto manifest = save_dataset(tiny_dataset(), dir);

    SUBCASE("bad PGM magic") {
        io::write_file_atomic(dir / "A" / "CD3.pgm", "P2\n4 4\n65535\n");
        CHECK_THROWS_AS(load_dataset(manifest), DatasetError);
    }
    SUBCASE("truncated raster") {
        std::string pgm = encode_pgm(tiny_dataset().samples[0].stack.channels[0].image);
        pgm.pop_back();
        io::write_file_atomic(dir / "A" / "CD3.pgm", pgm);
        CHECK_THROWS_AS(load_dataset(manifest), DatasetError);
    }
    SUBCASE("channel dimension mismatch") {
        io::write_file_atomic(dir / "A" / "CD20.pgm", encode_pgm(ChannelImage(5, 5)));
        CHECK_THROWS_WITH_AS(load_dataset(manifest), doctest::Contains("CD20.pgm"), DatasetError);
    }
    SUBCASE("bad mask magic") {
        io::write_file_atomic(dir / "A" / "mask.cgmk", "XXXX\x04\0\x04\0");
        CHECK_THROWS_AS(load_dataset(manifest), DatasetError);
    }
    SUBCASE("unknown manifest key") {
        std::string text = io::read_file(manifest);
        text.insert(text.find('{') + 1, "\"pixel_spacing\": 1.0,");
        io::write_file_atomic(manifest, text);
        CHECK_THROWS_WITH_AS(load_dataset(manifest), doctest::Contains("unknown key"), DatasetError);
    }
    SUBCASE("bad label value") {
        io::write_file_atomic(dir / "A" / "labels.csv", "cell_id,class_label\n1,0\n5,2\n");
        CHECK_THROWS_AS(load_dataset(manifest), DatasetError);
    }
}

TEST_CASE("PGM header with comments and 8-bit raster is accepted") {
    const auto dir = testing::scratch_dir("dataset_pgm8");
    io::write_file_atomic(dir / "a.pgm", [] { const char raw[] = "P5\n# comment\n2 1\n255\n\x07\xff"; return std::string(raw, sizeof raw - 1); }());
    const ChannelImage img = read_pgm(dir / "a.pgm");
    CHECK(img.width == 2);
    CHECK(img.values == std::vector<std::uint16_t>{7, 255});
}

TEST_CASE("PGM samples are big-endian and masks little-endian") {
    ChannelImage img(1, 1);
    img.values[0] = 0x1234;
    const std::string pgm = encode_pgm(img);
    CHECK(pgm.substr(pgm.size() - 2) == std::string("\x12\x34", 2));
    LabelMask m(1, 1);
    m.labels[0] = 0x01020304;
    const std::string mk = encode_mask(m);
    CHECK(mk == std::string("CGMK\x01\x00\x01\x00\x04\x03\x02\x01", 12));
}

TEST_CASE("validation") {
    SUBCASE("valid dataset has empty report") { CHECK(validate_dataset(tiny_dataset()).empty()); }

    SUBCASE("4x4 mask with 5x5 channels gives one dimension violation") {
        Dataset ds = tiny_dataset();
        for (auto& ch : ds.samples[0].stack.channels) ch.image = ChannelImage(5, 5, 3);
        const auto report = validate_dataset(ds);
        REQUIRE(report.size() == 1);
        CHECK(report[0].check == "S05-mask-dimension-mismatch");
        CHECK(report[0].sample_id == "A");
    }

    SUBCASE("deleting a labelled cell's pixels yields one orphan-label violation") {
        Dataset ds = tiny_dataset();
        for (auto& v : ds.samples[0].mask.labels) {
            if (v == 5) v = 0;
        }
        const auto report = validate_dataset(ds);
        REQUIRE(report.size() == 1);
        CHECK(report[0].check == "S09-orphan-label");
    }

    SUBCASE("violations are ordered by sample, then check id") {
        Dataset ds = tiny_dataset();
        Sample b = ds.samples[0];
        b.stack.sample_id = "B";
        b.stack.channels[1].antigen = "CD3";  // duplicate antigen
        b.labels.push_back({9, 1});           // orphan
        ds.samples.push_back(b);
        ds.samples[0].labels.pop_back();      // cell 5 unlabelled
        const auto report = validate_dataset(ds);
        REQUIRE(report.size() == 3);
        CHECK(report[0].sample_id == "A");
        CHECK(report[0].check == "S10-missing-label");
        CHECK(report[1].sample_id == "B");
        CHECK(report[1].check == "S04-duplicate-antigen");
        CHECK(report[2].check == "S09-orphan-label");
    }

    SUBCASE("empty dataset") {
        const auto report = validate_dataset(Dataset{});
        REQUIRE(report.size() == 1);
        CHECK(report[0].check == "D01-no-samples");
    }
}

TEST_CASE("accepts full-size 2018x2018 channels") {
    const auto dir = testing::scratch_dir("dataset_fullsize");
    Dataset ds;
    Sample s;
    s.stack.sample_id = "big";
    ChannelImage img(2018, 2018);
    img.values.back() = 65535;
    s.stack.channels.push_back({"CD3", img});
    s.mask = LabelMask(2018, 2018);
    s.mask.at(2017, 2017) = 1;
    s.labels = {{1, -1}};
    ds.samples.push_back(s);
    const Dataset loaded = load_dataset(save_dataset(ds, dir));
    CHECK(loaded.samples[0].stack.width() == 2018);
    CHECK(loaded.samples[0].stack.channels[0].image.values.back() == 65535);
    CHECK(loaded.samples[0].labels[0].class_label == kUnlabeled);
}

TEST_CASE("load -> save -> load is bit-exact (property over random datasets)") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        Dataset ds;
        ds.pixel_spacing_um = rng.uniform(0.1, 1.0);
        const int n_samples = 1 + int(rng.below(3));
        for (int i = 0; i < n_samples; ++i) {
            Sample s;
            s.stack.sample_id = "R" + std::to_string(i);
            s.stack.pixel_spacing_um = ds.pixel_spacing_um;
            const auto w = std::uint32_t(2 + rng.below(9));
            const auto h = std::uint32_t(2 + rng.below(9));
            const int n_channels = 1 + int(rng.below(4));
            for (int k = 0; k < n_channels; ++k) {
                ChannelImage img(w, h);
                for (auto& v : img.values) v = std::uint16_t(rng.below(65536));
                s.stack.channels.push_back({"C" + std::to_string(k), img});
            }
            s.mask = LabelMask(w, h);
            for (auto& v : s.mask.labels) v = std::uint32_t(rng.below(4)) * 1000003u;
            s.mask.labels[0] = 7;
            for (auto id : s.mask.cell_ids()) s.labels.push_back({id, int(rng.below(3)) - 1});
            s.diagnosis = rng.bernoulli(0.5) ? Diagnosis::melanoma : Diagnosis::healthy;
            ds.samples.push_back(s);
        }
        const auto d1 = testing::scratch_dir("roundtrip_a");
        const auto d2 = testing::scratch_dir("roundtrip_b");
        const Dataset first = load_dataset(save_dataset(ds, d1));
        CHECK(same(first, ds));
        const Dataset second = load_dataset(save_dataset(first, d2));
        CHECK(same(first, second));
    }
}

TEST_CASE("generated datasets validate cleanly") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        SynthConfig cfg;
        cfg.n_samples = 2;
        cfg.n_melanoma = 1;
        cfg.image_size = 64;
        cfg.cells_per_sample = 20;
        cfg.n_channels = 3;
        cfg.unlabeled_fraction = 0.3;
        cfg.seed = seed;
        const auto dir = testing::scratch_dir("dataset_generated");
        const auto manifest = write_synthetic_dataset(cfg, dir);
        CHECK(validate_dataset(load_dataset(manifest)).empty());
    }
}
