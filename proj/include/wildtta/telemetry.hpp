#pragma once

// Per-step metrics, collapse detection, loss-surface probes and the on-disk
// trace/report formats.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wildtta/adapt.hpp"
#include "wildtta/shiftgen.hpp"

namespace wildtta {

struct StepTrace {
    std::size_t step = 0;
    std::size_t batch_size = 0;
    std::size_t selected = 0;
    std::size_t selected2 = 0;
    double mean_entropy = 0.0;
    double grad_norm = 0.0;
    double accuracy = 0.0;        // over every sample seen so far
    double modal_fraction = 0.0;  // over the trailing window
    bool recovered = false;
    bool skipped = false;
};

inline constexpr std::size_t kDefaultCollapseWindow = 200;
inline constexpr double kDefaultCollapseThreshold = 0.8;

// Share of the most frequent class in `window`; 0 for an empty window.
double modal_fraction(std::span<const int> window);
// True iff the modal-class share reaches `threshold`.
bool detect_collapse(std::span<const int> window, double threshold);

class MetricsAccumulator {
public:
    explicit MetricsAccumulator(std::size_t window = kDefaultCollapseWindow);

    // `kinds` may be empty; when given it must align with the predictions.
    void update(std::span<const int> predictions, std::span<const int> labels,
                std::span<const CorruptionKind> kinds = {});

    std::size_t seen() const noexcept { return seen_; }
    std::size_t correct() const noexcept { return correct_; }
    double accuracy() const noexcept;
    double modal_fraction() const;
    bool window_full() const noexcept { return recent_.size() == window_; }
    std::vector<int> window() const { return {recent_.begin(), recent_.end()}; }
    // Accuracy per corruption kind for the samples that carried one.
    std::map<std::string, double> per_corruption() const;

private:
    std::size_t window_;
    std::size_t seen_ = 0;
    std::size_t correct_ = 0;
    std::deque<int> recent_;
    std::map<int, std::size_t> histogram_;
    std::map<std::string, std::pair<std::size_t, std::size_t>> by_kind_;  // correct, seen
};

// Global l2 norm over the gradients of all given tensors.
double grad_norm(std::span<const Tensor> params);

struct SurfaceGrid {
    double radius = 1.0;
    std::size_t resolution = 41;
    std::uint64_t seed = 0;
    std::vector<double> alphas;
    std::vector<double> values;  // resolution x resolution, row i = first direction

    double at(std::size_t i, std::size_t j) const { return values[i * resolution + j]; }
    double value_range() const;
};

// Mean batch entropy at theta + a_i d1 + a_j d2 over a symmetric grid of offsets.
// Directions are Gaussian per trainable tensor, rescaled to that tensor's norm.
// The trainable parameters are restored bit-exactly afterwards.
SurfaceGrid loss_surface_grid(Model& model, const Tensor& batch, double radius, std::size_t resolution,
                              std::uint64_t seed);
void write_surface_csv(const SurfaceGrid& grid, const std::filesystem::path& path);

struct RunCounts {
    std::size_t updates = 0;
    std::size_t backwards = 0;
    std::size_t recoveries = 0;
    std::size_t skipped_steps = 0;
    std::size_t zero_grad_events = 0;
    std::size_t empty_second_pass = 0;
};

struct RunReport {
    nlohmann::ordered_json config;
    std::string method;
    std::string norm;
    std::uint64_t seed = 0;
    std::size_t samples = 0;
    double final_accuracy = 0.0;
    std::map<std::string, double> per_corruption;
    RunCounts counts;
    bool collapsed = false;
    std::size_t first_collapse_step = 0;  // 0 when never collapsed
    double max_modal_fraction = 0.0;
    std::size_t collapse_window = kDefaultCollapseWindow;
    double collapse_threshold = kDefaultCollapseThreshold;
    double duration_seconds = 0.0;  // written to a separate timing file

    nlohmann::ordered_json to_json() const;
    static RunReport from_json(const nlohmann::json& j);
};

inline constexpr const char* kTraceHeader =
    "step,batch_size,selected,selected2,mean_entropy,grad_norm,accuracy,modal_fraction,recovered,skipped";

void write_trace_csv(std::span<const StepTrace> traces, const std::filesystem::path& path);
std::vector<StepTrace> read_trace_csv(const std::filesystem::path& path);

struct OutputPaths {
    std::filesystem::path trace_csv;
    std::filesystem::path report_json;
    std::filesystem::path timing_json;  // optional; skipped when empty
};

void write_outputs(std::span<const StepTrace> traces, const RunReport& report, const OutputPaths& paths);
RunReport read_report(const std::filesystem::path& path);

// Text with 17 significant digits, enough to round-trip a double.
std::string format_real(double v);

}  // namespace wildtta
