// wildtta: run test-time adaptation experiments on synthetic wild streams.
//
//   wildtta run --method tent,sar --norm bn,gn,ln --severity 5 --imbalance-ratio inf
//   wildtta compare runs/
//   wildtta dump-stream --seed 3 --output stream.jsonl
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or arguments.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "wildtta/experiment.hpp"
#include "wildtta/kernels.hpp"

namespace fs = std::filesystem;
using namespace wildtta;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> split(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const std::string& item : items) {
        std::stringstream ss(item);
        std::string part;
        while (std::getline(ss, part, ',')) {
            if (!part.empty()) out.push_back(part);
        }
    }
    return out;
}

// Flags shared by `run` and `dump-stream`. Unset flags leave the config file value alone.
struct Overrides {
    std::string config;
    std::vector<std::string> methods;
    std::vector<std::string> norms;
    std::optional<std::size_t> groups;
    std::optional<std::size_t> batch_size;
    std::optional<std::string> ratio;
    std::optional<int> severity;
    bool mix = false;
    std::vector<std::string> corruptions;
    std::optional<std::uint64_t> seed;
    std::vector<std::uint64_t> seeds;
    std::optional<std::string> out;
    std::optional<std::string> checkpoint;
    bool pretrain = false;
    std::optional<double> lr;
    std::optional<std::string> lr_family;
    std::optional<double> rho;
    std::optional<double> entropy_filter;
    std::optional<double> clip_value;
    std::optional<double> clip_norm;
    bool no_recovery = false;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> samples_per_step;
    bool surface = false;

    void attach(CLI::App& app, bool with_methods) {
        app.add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
        if (with_methods) {
            app.add_option("--method", methods, "noadapt, tent, sar, clip_value, clip_norm (comma separated)");
            app.add_option("--lr", lr, "base adaptation learning rate");
            app.add_option("--lr-family", lr_family, "batch-size lr rescaling: resnet, vit or none");
            app.add_option("--rho", rho, "perturbation radius");
            app.add_option("--entropy-filter", entropy_filter, "reliable-entropy threshold E0");
            app.add_option("--clip-value", clip_value, "clip_value threshold");
            app.add_option("--clip-norm", clip_norm, "clip_norm threshold");
            app.add_flag("--no-recovery", no_recovery, "disable model recovery");
            app.add_flag("--surface", surface, "also write the loss-surface grid");
            app.add_option("--out", out, "output directory (default: $WILDTTA_OUT_DIR or ./runs)");
            app.add_option("--checkpoint", checkpoint, "checkpoint directory; loaded when present");
            app.add_flag("--pretrain", pretrain, "pretrain even when a checkpoint exists");
        }
        app.add_option("--norm", norms, "bn, gn, ln or gn:<groups> (comma separated)");
        app.add_option("--groups", groups, "group count for gn");
        app.add_option("--batch-size", batch_size, "test batch size");
        app.add_option("--imbalance-ratio", ratio, "label imbalance ratio r >= 1, or inf");
        app.add_option("--severity", severity, "corruption severity 1..5");
        app.add_flag("--mix", mix, "mix every corruption kind into one stream");
        app.add_option("--corruption", corruptions, "corruption kinds (comma separated)");
        app.add_option("--seed", seed, "single seed");
        app.add_option("--seeds", seeds, "several seeds")->delimiter(',');
        app.add_option("--steps", steps, "label-shift steps T");
        app.add_option("--samples-per-step", samples_per_step, "samples per label-shift step M");
    }

    ExperimentConfig apply() const {
        ExperimentConfig cfg = default_config();
        if (const char* env = std::getenv("WILDTTA_OUT_DIR"); env && *env) cfg.out = env;
        if (!config.empty()) cfg = load_config(config, cfg);

        nlohmann::json doc = nlohmann::json::object();
        auto list = [](const std::vector<std::string>& v) {
            nlohmann::json a = nlohmann::json::array();
            for (const auto& s : split(v)) a.push_back(s);
            return a;
        };
        if (groups) doc["model"]["groups"] = *groups;
        if (!norms.empty()) doc["model"]["norms"] = list(norms);
        if (checkpoint) doc["model"]["checkpoint_dir"] = *checkpoint;
        if (pretrain) doc["model"]["force_pretrain"] = true;
        if (batch_size) doc["stream"]["batch_size"] = *batch_size;
        if (ratio) doc["stream"]["imbalance_ratio"] = *ratio;
        if (severity) doc["stream"]["severity"] = *severity;
        if (mix && !corruptions.empty()) throw ConfigError("--mix and --corruption are mutually exclusive");
        if (mix) {
            nlohmann::json all = nlohmann::json::array();
            for (CorruptionKind k : all_corruptions()) all.push_back(corruption_name(k));
            doc["stream"]["corruptions"] = all;
        }
        if (!corruptions.empty()) doc["stream"]["corruptions"] = list(corruptions);
        if (steps) doc["stream"]["steps"] = *steps;
        if (samples_per_step) doc["stream"]["samples_per_step"] = *samples_per_step;
        if (!methods.empty()) doc["adapt"]["methods"] = list(methods);
        if (lr) doc["adapt"]["lr"] = *lr;
        if (lr_family) {
            doc["adapt"]["lr_family"] = *lr_family == "none" ? nlohmann::json(nullptr) : nlohmann::json(*lr_family);
        }
        if (rho) doc["adapt"]["rho"] = *rho;
        if (entropy_filter) doc["adapt"]["entropy_filter"] = *entropy_filter;
        if (clip_value) doc["adapt"]["clip_value"] = *clip_value;
        if (clip_norm) doc["adapt"]["clip_norm"] = *clip_norm;
        if (no_recovery) doc["adapt"]["recovery"] = false;
        if (surface) doc["telemetry"]["surface"] = true;
        if (seed && !seeds.empty()) throw ConfigError("--seed and --seeds are mutually exclusive");
        if (seed) doc["seeds"] = {*seed};
        if (!seeds.empty()) doc["seeds"] = seeds;
        if (out) doc["out"] = *out;
        cfg = parse_config(doc, cfg);
        cfg.validate();
        return cfg;
    }
};

std::vector<RunReport> collect_reports(const std::vector<std::string>& inputs) {
    std::vector<fs::path> files;
    for (const std::string& in : inputs) {
        const fs::path p(in);
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::recursive_directory_iterator(p)) {
                if (e.is_regular_file() && e.path().filename() == "report.json") found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else if (fs::is_regular_file(p)) {
            files.push_back(p);
        } else {
            throw ConfigError("compare: no such report or directory: " + in);
        }
    }
    if (files.empty()) throw ConfigError("compare: no report.json files found");
    std::vector<RunReport> reports;
    for (const fs::path& f : files) reports.push_back(read_report(f));
    return reports;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Test-time adaptation on synthetic wild streams"};
    app.require_subcommand(1);
    std::optional<std::string> isa;
    app.add_option("--isa", isa, "kernel ISA: scalar, avx2, neon (default: best available)");
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "suppress the summary table");

    Overrides run_opts;
    CLI::App* run = app.add_subcommand("run", "pretrain (or load) models and run adaptation methods");
    run_opts.attach(*run, true);

    std::vector<std::string> compare_inputs;
    std::string compare_json;
    CLI::App* cmp = app.add_subcommand("compare", "summarize report.json files across seeds");
    cmp->add_option("reports", compare_inputs, "report files or directories")->required();
    cmp->add_option("--json", compare_json, "also write the summary as JSON here");

    Overrides dump_opts;
    std::string dump_path = "stream.jsonl";
    CLI::App* dump = app.add_subcommand("dump-stream", "write the test stream of one seed as JSON lines");
    dump_opts.attach(*dump, false);
    dump->add_option("-o,--output", dump_path, "output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (isa) kernels::set_isa(kernels::parse_isa(*isa));
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (*run) {
            const ExperimentConfig cfg = run_opts.apply();
            const std::vector<RunResult> results = run_experiment(cfg, true);
            if (!quiet) {
                std::vector<RunReport> reports;
                for (const RunResult& r : results) reports.push_back(r.report);
                std::cout << compare(reports).to_text();
                std::cout << "outputs in " << cfg.out.string() << '\n';
            }
        } else if (*cmp) {
            const Summary s = compare(collect_reports(compare_inputs));
            std::cout << s.to_text();
            if (!compare_json.empty()) {
                std::ofstream os(compare_json);
                if (!os) throw std::runtime_error("cannot write " + compare_json);
                os << s.to_json().dump(2) << '\n';
            }
        } else if (*dump) {
            const ExperimentConfig cfg = dump_opts.apply();
            if (cfg.seeds.size() != 1) throw ConfigError("dump-stream takes exactly one seed");
            const std::uint64_t seed = cfg.seeds.front();
            SourceSpec src = cfg.source;
            src.seed = seed;
            const SourceData data = gen_source(src);
            StreamSpec ss = cfg.stream;
            ss.seed = seed;
            dump_stream(build_stream(ss, data.test, src.within_std), ss.severity, dump_path);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
