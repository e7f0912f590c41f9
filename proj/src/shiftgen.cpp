#include "wildtta/shiftgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "json.hpp"

#include "wildtta/kernels.hpp"

namespace wildtta {
namespace {

std::mt19937_64 sub_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(c)};
    return std::mt19937_64(seq);
}

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> normal;
    std::vector<double> v(dim);
    double n2 = 0.0;
    while (n2 == 0.0) {
        for (double& x : v) x = normal(rng);
        n2 = kernels::sum_sq(v);
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return v;
}

// Streams distinguish their random draws by purpose.
enum Purpose : std::uint64_t { kCenters = 1, kTrain, kTest, kShift, kOrder, kLabels, kPools, kKinds, kSample };

void check_severity(int severity) {
    if (severity < kMinSeverity || severity > kMaxSeverity) {
        throw std::invalid_argument("severity " + std::to_string(severity) + " outside [1, 5]");
    }
}

}  // namespace

SourceData gen_source(const SourceSpec& spec) {
    if (spec.classes < 2 || spec.dim < 2) {
        throw std::invalid_argument("gen_source: need at least 2 classes and 2 dimensions");
    }
    if (spec.n_per_class < 2 || spec.test_per_class < 2) {
        throw std::invalid_argument("gen_source: need at least 2 samples per class in each split");
    }
    if (!(spec.separation >= 0.0) || !(spec.within_std > 0.0)) {
        throw std::invalid_argument("gen_source: separation must be >= 0 and within_std > 0");
    }
    SourceData out;
    auto rng = sub_rng(spec.seed, kCenters);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (double v : random_unit(rng, spec.dim)) out.centers.push_back(spec.separation * v);
    }

    auto fill = [&](Dataset& ds, std::size_t per_class, Purpose purpose) {
        ds.dim = spec.dim;
        ds.classes = spec.classes;
        auto r = sub_rng(spec.seed, purpose);
        std::normal_distribution<double> normal(0.0, spec.within_std);
        for (std::size_t c = 0; c < spec.classes; ++c) {
            for (std::size_t i = 0; i < per_class; ++i) {
                for (std::size_t j = 0; j < spec.dim; ++j) {
                    ds.features.push_back(out.centers[c * spec.dim + j] + normal(r));
                }
                ds.labels.push_back(static_cast<int>(c));
            }
        }
    };
    fill(out.train, spec.n_per_class, kTrain);
    fill(out.test, spec.test_per_class, kTest);
    return out;
}

// ---------------------------------------------------------------------------
// Corruptions

std::string_view corruption_name(CorruptionKind kind) noexcept {
    switch (kind) {
        case CorruptionKind::GaussianNoise:
            return "gaussian_noise";
        case CorruptionKind::FeatureScale:
            return "feature_scale";
        case CorruptionKind::ConstantShift:
            return "constant_shift";
        case CorruptionKind::FeatureDropout:
            return "feature_dropout";
    }
    return "unknown";
}

CorruptionKind parse_corruption(std::string_view name) {
    for (CorruptionKind k : all_corruptions()) {
        if (corruption_name(k) == name) return k;
    }
    throw std::invalid_argument("unknown corruption kind '" + std::string(name) + "'");
}

std::vector<CorruptionKind> all_corruptions() {
    return {CorruptionKind::GaussianNoise, CorruptionKind::FeatureScale, CorruptionKind::ConstantShift,
            CorruptionKind::FeatureDropout};
}

double corruption_magnitude(CorruptionKind kind, int severity) {
    check_severity(severity);
    static constexpr std::array<double, 5> kNoise{0.25, 0.5, 1.0, 1.5, 2.0};
    static constexpr std::array<double, 5> kScale{0.8, 0.6, 0.45, 0.3, 0.2};
    static constexpr std::array<double, 5> kShift{0.5, 1.0, 2.0, 3.0, 4.0};
    static constexpr std::array<double, 5> kDrop{0.10, 0.20, 0.35, 0.50, 0.65};
    const auto i = static_cast<std::size_t>(severity - 1);
    switch (kind) {
        case CorruptionKind::GaussianNoise:
            return kNoise[i];
        case CorruptionKind::FeatureScale:
            return kScale[i];
        case CorruptionKind::ConstantShift:
            return kShift[i];
        case CorruptionKind::FeatureDropout:
            return kDrop[i];
    }
    throw std::invalid_argument("unknown corruption kind");
}

Corruptor::Corruptor(std::size_t dim, double within_std, std::uint64_t seed)
    : dim_(dim), within_std_(within_std), seed_(seed) {
    if (dim == 0 || !(within_std > 0.0)) {
        throw std::invalid_argument("corruptor: dim must be positive and within_std > 0");
    }
    auto rng = sub_rng(seed, kShift);
    shift_dir_ = random_unit(rng, dim);
}

std::vector<double> Corruptor::add_gaussian(std::span<const double> x, double sigma,
                                            std::uint64_t sample_index) const {
    std::vector<double> out(x.begin(), x.end());
    if (sigma == 0.0) return out;
    auto rng = sub_rng(seed_, kSample, sample_index, static_cast<std::uint64_t>(CorruptionKind::GaussianNoise));
    std::normal_distribution<double> normal(0.0, sigma);
    for (double& v : out) v += normal(rng);
    return out;
}

std::vector<double> Corruptor::apply(std::span<const double> x, CorruptionKind kind, int severity,
                                     std::uint64_t sample_index) const {
    if (x.size() != dim_) {
        throw std::invalid_argument("corrupt: feature width " + std::to_string(x.size()) + " != " +
                                    std::to_string(dim_));
    }
    const double mag = corruption_magnitude(kind, severity);
    std::vector<double> out(x.begin(), x.end());
    switch (kind) {
        case CorruptionKind::GaussianNoise:
            return add_gaussian(x, mag * within_std_, sample_index);
        case CorruptionKind::FeatureScale:
            for (double& v : out) v *= mag;
            break;
        case CorruptionKind::ConstantShift:
            kernels::axpy(mag * within_std_, shift_dir_, out);
            break;
        case CorruptionKind::FeatureDropout: {
            auto rng = sub_rng(seed_, kSample, sample_index, static_cast<std::uint64_t>(kind));
            std::vector<std::size_t> idx(dim_);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::shuffle(idx.begin(), idx.end(), rng);
            const auto drop = static_cast<std::size_t>(std::lround(mag * static_cast<double>(dim_)));
            for (std::size_t i = 0; i < drop; ++i) out[idx[i]] = 0.0;
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Label shift

LabelDistribution label_dist(std::size_t t, std::size_t classes, double ratio) {
    if (classes < 2) {
        throw std::invalid_argument("label_dist: need at least 2 classes");
    }
    if (t < 1 || t > classes) {
        throw std::invalid_argument("label_dist: step " + std::to_string(t) + " outside [1, " +
                                    std::to_string(classes) + "]");
    }
    if (std::isnan(ratio) || ratio < 1.0) {
        throw std::invalid_argument("label_dist: imbalance ratio must be >= 1");
    }
    LabelDistribution d;
    const double c = static_cast<double>(classes);
    if (std::isinf(ratio)) {
        d.q_max = 1.0;
        d.q_min = 0.0;
    } else {
        d.q_max = ratio / (ratio + c - 1.0);
        d.q_min = 1.0 / (ratio + c - 1.0);
    }
    d.q.assign(classes, d.q_min);
    d.q[t - 1] = d.q_max;
    return d;
}

// ---------------------------------------------------------------------------
// Streams

Stream build_stream(const StreamSpec& spec, const Dataset& test, double within_std) {
    const std::size_t classes = test.classes;
    if (classes < 2 || test.size() == 0) {
        throw std::invalid_argument("build_stream: empty or single-class test split");
    }
    if (spec.corruptions.empty()) {
        throw std::invalid_argument("build_stream: no corruption kinds given");
    }
    check_severity(spec.severity);
    const std::size_t steps = spec.steps.value_or(classes);
    const std::size_t total = spec.samples_per_step * steps;
    if (spec.batch_size == 0 || total == 0) {
        throw std::invalid_argument("build_stream: batch size, M and T must be positive");
    }
    if (spec.batch_size > total) {
        throw std::invalid_argument("build_stream: batch size " + std::to_string(spec.batch_size) +
                                    " exceeds the stream length " + std::to_string(total));
    }

    Stream stream;
    stream.total_samples = total;
    stream.class_order.resize(classes);
    std::iota(stream.class_order.begin(), stream.class_order.end(), 0);
    auto order_rng = sub_rng(spec.seed, kOrder);
    std::shuffle(stream.class_order.begin(), stream.class_order.end(), order_rng);

    std::vector<std::vector<std::size_t>> pools(classes);
    for (std::size_t i = 0; i < test.size(); ++i) pools[static_cast<std::size_t>(test.labels[i])].push_back(i);
    auto pool_rng = sub_rng(spec.seed, kPools);
    for (auto& p : pools) {
        if (p.empty()) throw std::invalid_argument("build_stream: a class has no test samples");
        std::shuffle(p.begin(), p.end(), pool_rng);
    }
    std::vector<std::size_t> cursor(classes, 0);
    auto draw_from = [&](std::size_t cls) {
        auto& p = pools[cls];
        if (cursor[cls] == p.size()) {
            std::shuffle(p.begin(), p.end(), pool_rng);
            cursor[cls] = 0;
        }
        return p[cursor[cls]++];
    };

    auto label_rng = sub_rng(spec.seed, kLabels);
    auto kind_rng = sub_rng(spec.seed, kKinds);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick_kind(0, spec.corruptions.size() - 1);
    const Corruptor corruptor(test.dim, within_std, spec.seed);

    std::vector<std::size_t> rows;
    std::vector<int> labels;
    std::vector<std::size_t> step_of;
    rows.reserve(total);
    for (std::size_t t = 1; t <= steps; ++t) {
        // Q_t is indexed by position in the shuffled class order.
        const LabelDistribution q = label_dist((t - 1) % classes + 1, classes, spec.imbalance_ratio);
        for (std::size_t s = 0; s < spec.samples_per_step; ++s) {
            const double u = unit(label_rng);
            std::size_t pos = 0;
            double acc = q.q[0];
            while (u >= acc && pos + 1 < classes) acc += q.q[++pos];
            // Skip zero-probability positions that floating-point slack could land on.
            while (q.q[pos] == 0.0) pos = (t - 1) % classes;
            const auto cls = static_cast<std::size_t>(stream.class_order[pos]);
            rows.push_back(draw_from(cls));
            labels.push_back(static_cast<int>(cls));
            step_of.push_back(t);
        }
    }

    for (std::size_t start = 0; start < total; start += spec.batch_size) {
        const std::size_t end = std::min(total, start + spec.batch_size);
        StreamBatch b;
        std::vector<double> feats;
        feats.reserve((end - start) * test.dim);
        for (std::size_t i = start; i < end; ++i) {
            const CorruptionKind kind = spec.corruptions[spec.mixed() ? pick_kind(kind_rng) : 0];
            const std::vector<double> x = corruptor.apply(test.row(rows[i]), kind, spec.severity, i);
            feats.insert(feats.end(), x.begin(), x.end());
            b.labels.push_back(labels[i]);
            b.kinds.push_back(kind);
            b.steps.push_back(step_of[i]);
        }
        b.features = Tensor::from({end - start, test.dim}, std::move(feats));
        stream.batches.push_back(std::move(b));
    }
    return stream;
}

void dump_stream(const Stream& stream, int severity, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("stream dump " + path.string() + ": cannot open for writing");
    }
    for (std::size_t b = 0; b < stream.batches.size(); ++b) {
        const StreamBatch& batch = stream.batches[b];
        const std::size_t dim = batch.features.cols();
        for (std::size_t i = 0; i < batch.labels.size(); ++i) {
            nlohmann::ordered_json rec;
            rec["step"] = batch.steps[i];
            rec["batch"] = b;
            rec["kind"] = corruption_name(batch.kinds[i]);
            rec["severity"] = severity;
            rec["label"] = batch.labels[i];
            auto row = batch.features.data().subspan(i * dim, dim);
            rec["x"] = std::vector<double>(row.begin(), row.end());
            os << rec.dump() << '\n';
        }
    }
    if (!os) {
        throw std::runtime_error("stream dump " + path.string() + ": write failed");
    }
}

std::string format_ratio(double ratio) {
    if (std::isinf(ratio)) return "inf";
    nlohmann::json j = ratio;
    return j.dump();
}

double parse_ratio(std::string_view text) {
    if (text == "inf" || text == "infinity" || text == "Inf") return kInfiniteRatio;
    const std::string s(text);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0' || std::isnan(v) || v < 1.0) {
        throw std::invalid_argument("imbalance ratio must be a number >= 1 or 'inf', got '" + s + "'");
    }
    return v;
}

}  // namespace wildtta
