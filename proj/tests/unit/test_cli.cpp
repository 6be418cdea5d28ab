#include "doctest.h"

#include <cmath>
#include <sstream>

#include "cellgraph/cli.hpp"
#include "cellgraph/io.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace cellgraph;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

bool contains(const std::string& s, const std::string& what) { return s.find(what) != std::string::npos; }

}  // namespace

TEST_CASE("cli: help and usage errors") {
    Run help = cli({"--help"});
    CHECK(help.code == 0);
    for (const char* stage : {"synth", "extract", "graph", "reduce", "train", "baseline", "evaluate", "experiment", "report"}) {
        CHECK(contains(help.out, stage));
    }
    CHECK(cli({"extract", "--help"}).code == 0);
    CHECK(cli({}).code == 2);
    CHECK(cli({"synth", "--no-such-flag"}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"graph", "--features", "f.csv", "--kind", "diagonal", "--out", "g"}).code == 2);

    Run missing = cli({"train", "--graph", "g.edges", "--features", "f.csv"});
    CHECK(missing.code == 2);
    CHECK(contains(missing.err, "--labels"));
    CHECK(cli({"experiment", "--out", "x"}).code == 2);
}

TEST_CASE("cli: stage errors exit 1 and name the path") {
    const fs::path dir = testing::scratch_dir("cli_errors");
    const std::string missing = (dir / "no_such_dataset").string();
    Run r = cli({"extract", "--dataset", missing, "--out", (dir / "f.csv").string()});
    CHECK(r.code == 1);
    CHECK(contains(r.err, missing));
    CHECK_FALSE(fs::exists(dir / "f.csv"));

    io::write_file_atomic(dir / "bad.json", "{\"cells_per_sample\": -3}");
    CHECK(cli({"--config", (dir / "bad.json").string(), "synth", "--out", (dir / "d").string()}).code == 1);
}

TEST_CASE("cli: synth -> extract -> graph -> train / baseline -> evaluate") {
    const fs::path dir = testing::scratch_dir("cli_chain");
    auto p = [&](const char* name) { return (dir / name).string(); };
    REQUIRE(cli({"synth", "--out", p("data"), "--samples", "2", "--cells", "40", "--size", "96", "--seed", "3"}).code == 0);
    CHECK(fs::exists(dir / "data" / "manifest.json"));
    REQUIRE(cli({"extract", "--dataset", p("data"), "--out", p("expr.csv"), "--labels-out", p("labels.csv")}).code == 0);
    CHECK(io::split_lines(io::read_file(dir / "labels.csv")).front() == "sample_id,cell_id,class_label");
    REQUIRE(cli({"graph", "--features", p("expr.csv"), "--kind", "spatial", "--out", p("g.edges")}).code == 0);
    CHECK(contains(io::read_file(dir / "g.edges"), "# nodes 80"));

    REQUIRE(cli({"train", "--graph", p("g.edges"), "--features", p("expr.csv"), "--labels", p("labels.csv"), "--out",
                 p("grand"), "--epochs", "20"})
                .code == 0);
    for (const char* f : {"model.grnd", "history.csv", "predictions.csv", "metrics.json"}) {
        CHECK(fs::exists(dir / "grand" / f));
    }
    const std::string first = io::read_file(dir / "grand" / "predictions.csv");
    REQUIRE(cli({"train", "--graph", p("g.edges"), "--features", p("expr.csv"), "--labels", p("labels.csv"), "--out",
                 p("grand"), "--epochs", "20", "--threads", "2"})
                .code == 0);
    CHECK(io::read_file(dir / "grand" / "predictions.csv") == first);

    REQUIRE(cli({"baseline", "--features", p("expr.csv"), "--labels", p("labels.csv"), "--model", "random_forest",
                 "--out", p("rf")})
                .code == 0);
    Run ev = cli({"evaluate", "--predictions", p("rf/predictions.csv")});
    REQUIRE(ev.code == 0);
    const auto m = nlohmann::json::parse(ev.out);
    const auto saved = nlohmann::json::parse(io::read_file(dir / "rf" / "metrics.json"));
    CHECK(m == saved);
    CHECK(m["tp"].get<int>() + m["fp"].get<int>() + m["fn"].get<int>() + m["tn"].get<int>() > 0);

    // Graph node count must match the table.
    io::write_file_atomic(dir / "small.edges", "# nodes 3\n0 1 1\n");
    CHECK(cli({"train", "--graph", p("small.edges"), "--features", p("expr.csv"), "--labels", p("labels.csv"), "--out",
               p("bad")})
              .code == 1);

    REQUIRE(cli({"reduce", "--features", p("expr.csv"), "--method", "pca", "--dim", "3", "--out", p("pca.csv")}).code == 0);
    CHECK(io::split_lines(io::read_file(dir / "pca.csv")).front() == "cell_id,sample_id,cx,cy,label,pca_0,pca_1,pca_2");
}

TEST_CASE("cli: experiment seed propagation and report determinism") {
    const fs::path dir = testing::scratch_dir("cli_experiment");
    io::write_file_atomic(dir / "e.json", R"({
        "synth": {"n_samples": 2, "n_melanoma": 1, "cells_per_sample": 40, "image_size": 96, "n_channels": 4},
        "feature_types": ["expression"], "reductions": ["none", "pca"],
        "models": ["grand_spatial_graph", "random_forest"], "grand": {"max_epochs": 10}})");
    const std::string cfg = (dir / "e.json").string();
    REQUIRE(cli({"--seed", "7", "experiment", "--config", cfg, "--out", (dir / "a").string()}).code == 0);
    const auto report = nlohmann::json::parse(io::read_file(dir / "a" / "report.json"));
    CHECK(report["seed"] == 7);
    CHECK(report["config"]["seed"] == 7);
    CHECK(report["cells"].size() == 4);

    REQUIRE(cli({"experiment", "--config", cfg, "--seed", "7", "--threads", "3", "--out", (dir / "b").string()}).code == 0);
    CHECK(io::read_file(dir / "a" / "report.json") == io::read_file(dir / "b" / "report.json"));
    REQUIRE(cli({"experiment", "--config", cfg, "--out", (dir / "c").string()}).code == 0);
    CHECK(nlohmann::json::parse(io::read_file(dir / "c" / "report.json"))["seed"] == 42);

    for (const char* out : {"r1", "r2"}) {
        REQUIRE(cli({"report", "--report", (dir / "a" / "report.json").string(), "--out", (dir / out).string()}).code == 0);
    }
    for (const char* f : {"table1.csv", "accuracy.svg", "precision.svg", "recall.svg", "f1.svg", "roc_auc.svg"}) {
        CHECK(io::read_file(dir / "r1" / f) == io::read_file(dir / "r2" / f));
    }
    CHECK(io::read_file(dir / "r1" / "table1.csv") == io::read_file(dir / "a" / "table1.csv"));
}

TEST_CASE("bar chart svg") {
    const std::string svg = render_bar_chart_svg("f1 & co", {"a-x", "b-y", "c-x"}, {0.5, std::nan(""), 1.0});
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(contains(svg, "f1 &amp; co"));
    CHECK(contains(svg, "n/a"));
    CHECK(contains(svg, "height=\"120.00\""));  // 0.5 of a 240-pixel plot
    CHECK(svg == render_bar_chart_svg("f1 & co", {"a-x", "b-y", "c-x"}, {0.5, std::nan(""), 1.0}));
    CHECK_THROWS(render_bar_chart_svg("t", {"a"}, {}));
}
