#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "wildtta/experiment.hpp"

using namespace wildtta;
namespace fs = std::filesystem;

namespace {

ExperimentConfig quick_config(const fs::path& out) {
    ExperimentConfig c = default_config();
    c.source.n_per_class = 200;
    c.source.test_per_class = 100;
    c.pretrain.epochs = 10;
    c.stream.steps = 4;
    c.stream.imbalance_ratio = 10.0;
    c.collapse_window = 50;
    c.out = out;
    return c;
}

RunReport report_with(double acc, std::uint64_t seed) {
    RunReport r;
    r.config = {{"source", {{"classes", 10}}}, {"stream", {{"severity", 5}}}};
    r.method = "tent";
    r.norm = "gn";
    r.seed = seed;
    r.final_accuracy = acc;
    return r;
}

}  // namespace

TEST_CASE("compare: mean and sample standard deviation") {
    const Summary s = compare({report_with(0.4, 0), report_with(0.5, 1), report_with(0.6, 2)});
    REQUIRE(s.rows.size() == 1);
    CHECK(s.rows[0].runs == 3);
    CHECK(s.rows[0].mean == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.rows[0].stdev == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(s.to_text().find("tent") != std::string::npos);
    CHECK(s.to_json().dump().find("\"accuracy_stdev\"") != std::string::npos);
}

TEST_CASE("compare: single and identical reports have zero spread") {
    CHECK(compare({report_with(0.7, 0)}).rows[0].stdev == 0.0);
    const Summary s = compare({report_with(0.3, 0), report_with(0.3, 1)});
    CHECK(s.rows[0].stdev == 0.0);
    CHECK(s.rows[0].mean == 0.3);
}

TEST_CASE("compare: groups by method and norm in order of appearance") {
    RunReport a = report_with(0.5, 0), b = report_with(0.6, 0), c = report_with(0.7, 1);
    b.method = "sar";
    c.norm = "ln";
    c.collapsed = true;
    const Summary s = compare({a, b, c});
    REQUIRE(s.rows.size() == 3);
    CHECK(s.rows[0].method == "tent");
    CHECK(s.rows[1].method == "sar");
    CHECK(s.rows[2].norm == "ln");
    CHECK(s.rows[2].collapsed_runs == 1);
}

TEST_CASE("compare: heterogeneous reports are rejected") {
    RunReport other = report_with(0.5, 1);
    other.config["stream"]["severity"] = 3;
    CHECK_THROWS_AS(compare({report_with(0.5, 0), other}), ConfigError);
    CHECK_THROWS_AS(compare({}), ConfigError);
}

TEST_CASE("config parsing") {
    const ExperimentConfig d = default_config();
    CHECK_NOTHROW(d.validate());

    SUBCASE("overlay") {
        const auto j = nlohmann::json::parse(R"({
            "stream": {"batch_size": 16, "imbalance_ratio": "inf", "corruptions": ["gaussian_noise", "feature_scale"]},
            "model": {"norms": ["bn", "ln"]},
            "adapt": {"methods": ["tent"], "lr": 0.2, "lr_family": "resnet"},
            "seeds": [3, 4]
        })");
        const ExperimentConfig c = parse_config(j);
        CHECK(c.stream.batch_size == 16);
        CHECK(std::isinf(c.stream.imbalance_ratio));
        CHECK(c.stream.mixed());
        CHECK(c.norms.size() == 2);
        CHECK(c.methods == std::vector<Method>{Method::Tent});
        CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
        CHECK(c.effective_lr() == doctest::Approx(0.2 / 2.0));
        CHECK(c.source.classes == d.source.classes);
    }
    SUBCASE("unknown keys") {
        CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"bogus": 1})")), ConfigError);
        CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"adapt": {"lrr": 1}})")), ConfigError);
    }
    SUBCASE("bad values") {
        CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"adapt": {"methods": ["eata"]}})")), ConfigError);
        CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"stream": {"batch_size": "x"}})")), ConfigError);
        ExperimentConfig c = d;
        c.stream.batch_size = 100000;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = d;
        c.norms = {NormKind::layer(), NormKind::layer()};
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = d;
        c.seeds.clear();
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }
    SUBCASE("echo round trip") {
        const ExperimentConfig c = parse_config(nlohmann::json::parse(config_to_json(d).dump()));
        CHECK(config_to_json(c) == config_to_json(d));
    }
    SUBCASE("file loading") {
        const auto dir = testing::scratch_dir("config");
        std::ofstream(dir / "c.json") << R"({"stream": {"severity": 2}})";
        CHECK(load_config(dir / "c.json").stream.severity == 2);
        std::ofstream(dir / "bad.json") << "{";
        CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
        CHECK_THROWS(load_config(dir / "missing.json"));
    }
}

TEST_CASE("noadapt run equals a plain evaluation pass") {
    const ExperimentConfig cfg = quick_config(testing::scratch_dir("noadapt"));
    const SeedContext ctx = prepare(cfg, 0, NormKind::group(8));
    AdaptConfig a = cfg.adapt;
    a.method = Method::NoAdapt;
    const RunResult r = run_method(ctx.model, ctx.stream, a, cfg, 0);

    std::size_t hits = 0, total = 0;
    for (const StreamBatch& b : ctx.stream.batches) {
        const auto pred = predict(ctx.model, b.features, inference_mode(ctx.model, false));
        for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == b.labels[i];
        total += pred.size();
    }
    CHECK(r.report.samples == total);
    CHECK(r.report.final_accuracy == doctest::Approx(double(hits) / double(total)).epsilon(1e-15));
    CHECK(r.report.counts.updates == 0);
    CHECK(r.report.counts.backwards == 0);
    CHECK(r.traces.size() == ctx.stream.batches.size());
    CHECK(r.traces.back().accuracy == r.report.final_accuracy);
}

TEST_CASE("adapting runs count their updates") {
    const ExperimentConfig cfg = quick_config(testing::scratch_dir("counts"));
    const SeedContext ctx = prepare(cfg, 0, NormKind::layer());
    AdaptConfig a = cfg.adapt;
    a.method = Method::Tent;
    const RunResult tent = run_method(ctx.model, ctx.stream, a, cfg, 0);
    CHECK(tent.report.counts.updates == ctx.stream.batches.size());
    CHECK(tent.report.counts.backwards == ctx.stream.batches.size());
    a.method = Method::Sar;
    const RunResult sar = run_method(ctx.model, ctx.stream, a, cfg, 0);
    CHECK(sar.report.counts.backwards == 2 * sar.report.counts.updates);
    CHECK(sar.report.counts.updates + sar.report.counts.skipped_steps + sar.report.counts.empty_second_pass ==
          ctx.stream.batches.size());
    CHECK(sar.report.config["adapt"]["methods"] == nlohmann::json::array({"sar"}));
}

TEST_CASE("checkpoints are reused") {
    const auto dir = testing::scratch_dir("reuse");
    ExperimentConfig cfg = quick_config(dir / "out");
    cfg.checkpoint_dir = dir / "ckpt";
    const SeedContext first = prepare(cfg, 1, NormKind::layer());
    CHECK(fs::exists(dir / "ckpt" / "ln-seed1.ckpt"));
    const SeedContext second = prepare(cfg, 1, NormKind::layer());
    const auto pa = first.model.all_params(), pb = second.model.all_params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        CHECK(std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin()));

    // A checkpoint from a different architecture is not silently used.
    ExperimentConfig other = cfg;
    other.model.hidden = {32, 32};
    CHECK_THROWS(prepare(other, 1, NormKind::layer()));
}

TEST_CASE("experiments are byte-reproducible") {
    const auto root = testing::scratch_dir("repro");
    ExperimentConfig cfg = quick_config(root / "a");
    cfg.norms = {NormKind::layer()};
    cfg.seeds = {0, 1};
    cfg.surface.enabled = true;
    cfg.surface.resolution = 5;
    run_experiment(cfg);
    cfg.out = root / "b";
    run_experiment(cfg);

    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
        const auto rel = fs::relative(e.path(), root / "a");
        REQUIRE(fs::exists(root / "b" / rel));
        CHECK(testing::read_file(e.path()) == testing::read_file(root / "b" / rel));
        ++compared;
    }
    // 2 seeds x 3 methods x {trace, report, surface} + summary.json + summary.txt
    CHECK(compared == 2 * 3 * 3 + 2);
    CHECK(fs::exists(run_directory(cfg, "ln", "sar", 1) / "timing.json"));
}
