#pragma once

// Synthetic source data, severity-scaled vector corruptions, and assembly of
// "wild" test streams: mixed corruption types, arbitrary batch sizes, and online
// imbalanced label shift where the dominant class changes every time-step.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wildtta/dataset.hpp"

namespace wildtta {

inline constexpr double kInfiniteRatio = std::numeric_limits<double>::infinity();

struct SourceSpec {
    std::size_t classes = 10;
    std::size_t dim = 32;
    std::size_t n_per_class = 500;
    std::size_t test_per_class = 500;
    double separation = 4.0;
    double within_std = 1.0;
    std::uint64_t seed = 0;
};

struct SourceData {
    Dataset train;
    Dataset test;
    std::vector<double> centers;  // classes x dim
};

SourceData gen_source(const SourceSpec& spec);

enum class CorruptionKind { GaussianNoise, FeatureScale, ConstantShift, FeatureDropout };

inline constexpr int kMinSeverity = 1;
inline constexpr int kMaxSeverity = 5;

std::string_view corruption_name(CorruptionKind kind) noexcept;
CorruptionKind parse_corruption(std::string_view name);
std::vector<CorruptionKind> all_corruptions();

// Severity-indexed magnitude: noise sigma and shift length in units of the source
// within-class std, the multiplicative scale, or the dropped fraction.
double corruption_magnitude(CorruptionKind kind, int severity);

class Corruptor {
public:
    Corruptor(std::size_t dim, double within_std, std::uint64_t seed);

    // Deterministic in (sample_index, kind, severity, seed).
    std::vector<double> apply(std::span<const double> x, CorruptionKind kind, int severity,
                              std::uint64_t sample_index) const;
    std::vector<double> add_gaussian(std::span<const double> x, double sigma, std::uint64_t sample_index) const;

    std::span<const double> shift_direction() const noexcept { return shift_dir_; }

private:
    std::size_t dim_;
    double within_std_;
    std::uint64_t seed_;
    std::vector<double> shift_dir_;
};

struct LabelDistribution {
    std::vector<double> q;
    double q_max = 0.0;
    double q_min = 0.0;
};

// Q_t for time-step t in [1, C]: entry t-1 is q_max = r / (r + C - 1), all other
// entries q_min = (1 - q_max) / (C - 1). r = infinity gives a one-hot vector.
LabelDistribution label_dist(std::size_t t, std::size_t classes, double ratio);

struct StreamSpec {
    std::vector<CorruptionKind> corruptions{CorruptionKind::GaussianNoise};
    int severity = 5;
    std::size_t batch_size = 64;
    double imbalance_ratio = 1.0;
    std::size_t samples_per_step = 100;    // M
    std::optional<std::size_t> steps;      // T, defaults to the class count
    std::uint64_t seed = 0;

    bool mixed() const noexcept { return corruptions.size() > 1; }
};

struct StreamBatch {
    Tensor features;
    // Ground truth travels beside the batch for metrics and is never handed to adaptation.
    std::vector<int> labels;
    std::vector<CorruptionKind> kinds;
    std::vector<std::size_t> steps;  // time-step t (1-based) each sample was drawn at
};

struct Stream {
    std::vector<StreamBatch> batches;
    std::vector<int> class_order;  // class dominating time-step t is class_order[t-1]
    std::size_t total_samples = 0;
};

// Samples M rows per time-step from `test` following Q_t over the pre-shuffled class
// order, corrupts them, and cuts the sequence into batches of batch_size (the last
// batch may be shorter). Per-class pools are drawn without replacement and reshuffled
// once exhausted.
Stream build_stream(const StreamSpec& spec, const Dataset& test, double within_std);

// One JSON object per sample: step, batch, kind, severity, label, x.
void dump_stream(const Stream& stream, int severity, const std::filesystem::path& path);

std::string format_ratio(double ratio);
double parse_ratio(std::string_view text);

}  // namespace wildtta
