#pragma once

// Experiment orchestration: source data -> pretrained model -> wild stream ->
// adaptation runs -> traces and reports. Every run is reproducible from its
// configuration and seed alone; all methods of one seed see the same stream.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wildtta/adapt.hpp"
#include "wildtta/models.hpp"
#include "wildtta/shiftgen.hpp"
#include "wildtta/telemetry.hpp"

namespace wildtta {

// Invalid configuration; the CLI maps it to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SurfaceSettings {
    bool enabled = false;
    double radius = 1.0;
    std::size_t resolution = 41;
};

struct ExperimentConfig {
    SourceSpec source;
    ModelConfig model;
    std::vector<NormKind> norms{NormKind::group(8)};
    PretrainConfig pretrain;
    std::optional<std::filesystem::path> checkpoint_dir;
    bool force_pretrain = false;
    StreamSpec stream;
    AdaptConfig adapt;
    std::vector<Method> methods{Method::NoAdapt, Method::Tent, Method::Sar};
    // When set, adapt.lr is the base rate and gets rescaled by the batch size.
    std::optional<LrFamily> lr_family;
    std::size_t collapse_window = kDefaultCollapseWindow;
    double collapse_threshold = kDefaultCollapseThreshold;
    SurfaceSettings surface;
    std::vector<std::uint64_t> seeds{0};
    std::filesystem::path out = "runs";

    // Checks every field; throws ConfigError.
    void validate() const;
    double effective_lr() const;
};

// Defaults calibrated for the synthetic benchmark (see README).
ExperimentConfig default_config();

// Overlays a JSON document onto `base`. Unknown keys raise ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc, ExperimentConfig base = default_config());
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = default_config());
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

struct RunResult {
    RunReport report;
    std::vector<StepTrace> traces;
    std::optional<SurfaceGrid> surface;
};

// Source data, pretrained model and stream for one (seed, norm) cell.
struct SeedContext {
    SourceData data;
    Model model;
    Stream stream;
    PretrainResult pretrain;
};

// Runs (or loads) everything up to the stream for one seed and norm kind.
SeedContext prepare(const ExperimentConfig& cfg, std::uint64_t seed, const NormKind& norm);

// Runs one method over `stream` starting from a copy of `pretrained`.
RunResult run_method(const Model& pretrained, const Stream& stream, const AdaptConfig& adapt,
                     const ExperimentConfig& cfg, std::uint64_t seed);

// Every (seed, norm, method) cell; writes outputs under cfg.out when `write` is set.
std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, bool write = true);

std::filesystem::path run_directory(const ExperimentConfig& cfg, const std::string& norm, const std::string& method,
                                    std::uint64_t seed);

struct SummaryRow {
    std::string method;
    std::string norm;
    std::size_t runs = 0;
    double mean = 0.0;
    double stdev = 0.0;  // sample standard deviation; 0 for a single run
    std::size_t collapsed_runs = 0;
    std::map<std::string, std::pair<double, double>> per_corruption;  // mean, stdev
};

struct Summary {
    std::vector<SummaryRow> rows;

    nlohmann::ordered_json to_json() const;
    std::string to_text() const;
};

// Mean +- sample stdev per (method, norm). Reports whose source/stream settings
// differ other than by seed are rejected with ConfigError.
Summary compare(const std::vector<RunReport>& reports);

}  // namespace wildtta
