#include "wildtta/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "wildtta/kernels.hpp"

namespace wildtta {

namespace fs = std::filesystem;

double modal_fraction(std::span<const int> window) {
    if (window.empty()) return 0.0;
    std::map<int, std::size_t> counts;
    std::size_t best = 0;
    for (int p : window) best = std::max(best, ++counts[p]);
    return static_cast<double>(best) / static_cast<double>(window.size());
}

bool detect_collapse(std::span<const int> window, double threshold) {
    return !window.empty() && modal_fraction(window) >= threshold;
}

MetricsAccumulator::MetricsAccumulator(std::size_t window) : window_(window) {
    if (window == 0) {
        throw std::invalid_argument("metrics: collapse window must be >= 1");
    }
}

void MetricsAccumulator::update(std::span<const int> predictions, std::span<const int> labels,
                                std::span<const CorruptionKind> kinds) {
    if (predictions.size() != labels.size() || (!kinds.empty() && kinds.size() != labels.size())) {
        throw std::invalid_argument("metrics: predictions, labels and kinds must have equal length");
    }
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const bool hit = predictions[i] == labels[i];
        ++seen_;
        correct_ += hit;
        if (!kinds.empty()) {
            auto& [c, s] = by_kind_[std::string(corruption_name(kinds[i]))];
            c += hit;
            ++s;
        }
        recent_.push_back(predictions[i]);
        ++histogram_[predictions[i]];
        if (recent_.size() > window_) {
            auto it = histogram_.find(recent_.front());
            if (--it->second == 0) histogram_.erase(it);
            recent_.pop_front();
        }
    }
}

double MetricsAccumulator::accuracy() const noexcept {
    return seen_ ? static_cast<double>(correct_) / static_cast<double>(seen_) : 0.0;
}

double MetricsAccumulator::modal_fraction() const {
    if (recent_.empty()) return 0.0;
    std::size_t best = 0;
    for (const auto& [cls, n] : histogram_) best = std::max(best, n);
    return static_cast<double>(best) / static_cast<double>(recent_.size());
}

std::map<std::string, double> MetricsAccumulator::per_corruption() const {
    std::map<std::string, double> out;
    for (const auto& [name, cs] : by_kind_) {
        out[name] = static_cast<double>(cs.first) / static_cast<double>(cs.second);
    }
    return out;
}

double grad_norm(std::span<const Tensor> params) {
    double s = 0.0;
    for (const Tensor& p : params) s += kernels::sum_sq(p.grad());
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Loss surface

double SurfaceGrid::value_range() const {
    if (values.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return *hi - *lo;
}

SurfaceGrid loss_surface_grid(Model& model, const Tensor& batch, double radius, std::size_t resolution,
                              std::uint64_t seed) {
    if (resolution < 3 || resolution % 2 == 0) {
        throw std::invalid_argument("loss_surface_grid: resolution must be odd and >= 3");
    }
    if (!(radius > 0.0)) {
        throw std::invalid_argument("loss_surface_grid: radius must be positive");
    }
    SurfaceGrid grid;
    grid.radius = radius;
    grid.resolution = resolution;
    grid.seed = seed;
    const double half = static_cast<double>(resolution - 1);
    for (std::size_t i = 0; i < resolution; ++i) {
        grid.alphas.push_back(radius * (2.0 * static_cast<double>(i) - half) / half);
    }

    std::vector<Tensor> params = model.trainable_params();
    const ParamValues origin = snapshot(params);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    auto direction = [&]() {
        ParamValues d;
        for (const auto& p : origin) {
            std::vector<double> v(p.size());
            for (double& x : v) x = normal(rng);
            const double dn = std::sqrt(kernels::sum_sq(v));
            const double pn = std::sqrt(kernels::sum_sq(p));
            for (double& x : v) x *= dn > 0.0 ? pn / dn : 0.0;
            d.push_back(std::move(v));
        }
        return d;
    };
    const ParamValues d1 = direction();
    const ParamValues d2 = direction();

    const NormMode mode = inference_mode(model, true);
    grid.values.resize(resolution * resolution);
    for (std::size_t i = 0; i < resolution; ++i) {
        for (std::size_t j = 0; j < resolution; ++j) {
            for (std::size_t t = 0; t < params.size(); ++t) {
                auto w = params[t].data();
                for (std::size_t k = 0; k < w.size(); ++k) {
                    w[k] = origin[t][k] + grid.alphas[i] * d1[t][k] + grid.alphas[j] * d2[t][k];
                }
            }
            Tape tape;
            Tensor ent = ops::entropy_rows(tape, model.forward(tape, batch, mode));
            grid.values[i * resolution + j] = kernels::sum(ent.data()) / static_cast<double>(ent.numel());
        }
    }
    restore(params, origin);
    return grid;
}

void write_surface_csv(const SurfaceGrid& grid, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("surface " + path.string() + ": cannot open for writing");
    os << "# radius=" << format_real(grid.radius) << " resolution=" << grid.resolution << " seed=" << grid.seed
       << '\n';
    for (std::size_t i = 0; i < grid.resolution; ++i) {
        for (std::size_t j = 0; j < grid.resolution; ++j) {
            os << (j ? "," : "") << format_real(grid.at(i, j));
        }
        os << '\n';
    }
    if (!os) throw std::runtime_error("surface " + path.string() + ": write failed");
}

// ---------------------------------------------------------------------------
// Serialization

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

nlohmann::ordered_json RunReport::to_json() const {
    nlohmann::ordered_json j;
    j["method"] = method;
    j["norm"] = norm;
    j["seed"] = seed;
    j["samples"] = samples;
    j["final_accuracy"] = final_accuracy;
    j["per_corruption"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : per_corruption) j["per_corruption"][k] = v;
    j["counts"] = {{"updates", counts.updates},
                   {"backwards", counts.backwards},
                   {"recoveries", counts.recoveries},
                   {"skipped_steps", counts.skipped_steps},
                   {"zero_grad_events", counts.zero_grad_events},
                   {"empty_second_pass", counts.empty_second_pass}};
    j["collapse"] = {{"detected", collapsed},
                     {"first_step", first_collapse_step},
                     {"max_modal_fraction", max_modal_fraction},
                     {"window", collapse_window},
                     {"threshold", collapse_threshold},
                     {"note", "collapse = modal-class share of the trailing prediction window reaches the threshold"}};
    j["config"] = config;
    return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
    RunReport r;
    r.method = j.at("method").get<std::string>();
    r.norm = j.at("norm").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.samples = j.at("samples").get<std::size_t>();
    r.final_accuracy = j.at("final_accuracy").get<double>();
    for (const auto& [k, v] : j.at("per_corruption").items()) r.per_corruption[k] = v.get<double>();
    const auto& c = j.at("counts");
    r.counts.updates = c.at("updates");
    r.counts.backwards = c.at("backwards");
    r.counts.recoveries = c.at("recoveries");
    r.counts.skipped_steps = c.at("skipped_steps");
    r.counts.zero_grad_events = c.at("zero_grad_events");
    r.counts.empty_second_pass = c.at("empty_second_pass");
    const auto& col = j.at("collapse");
    r.collapsed = col.at("detected");
    r.first_collapse_step = col.at("first_step");
    r.max_modal_fraction = col.at("max_modal_fraction");
    r.collapse_window = col.at("window");
    r.collapse_threshold = col.at("threshold");
    r.config = nlohmann::ordered_json(j.at("config"));
    return r;
}

void write_trace_csv(std::span<const StepTrace> traces, const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("trace " + path.string() + ": cannot open for writing");
    os << kTraceHeader << '\n';
    for (const StepTrace& t : traces) {
        os << t.step << ',' << t.batch_size << ',' << t.selected << ',' << t.selected2 << ','
           << format_real(t.mean_entropy) << ',' << format_real(t.grad_norm) << ',' << format_real(t.accuracy)
           << ',' << format_real(t.modal_fraction) << ',' << (t.recovered ? 1 : 0) << ',' << (t.skipped ? 1 : 0)
           << '\n';
    }
    if (!os) throw std::runtime_error("trace " + path.string() + ": write failed");
}

std::vector<StepTrace> read_trace_csv(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("trace " + path.string() + ": cannot open for reading");
    std::string line;
    if (!std::getline(is, line) || line != kTraceHeader) {
        throw std::runtime_error("trace " + path.string() + ": missing or unexpected header");
    }
    std::vector<StepTrace> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 10) {
            throw std::runtime_error("trace " + path.string() + ":" + std::to_string(lineno) + ": expected 10 fields");
        }
        StepTrace t;
        t.step = std::stoul(f[0]);
        t.batch_size = std::stoul(f[1]);
        t.selected = std::stoul(f[2]);
        t.selected2 = std::stoul(f[3]);
        t.mean_entropy = std::stod(f[4]);
        t.grad_norm = std::stod(f[5]);
        t.accuracy = std::stod(f[6]);
        t.modal_fraction = std::stod(f[7]);
        t.recovered = f[8] == "1";
        t.skipped = f[9] == "1";
        out.push_back(t);
    }
    return out;
}

void write_outputs(std::span<const StepTrace> traces, const RunReport& report, const OutputPaths& paths) {
    for (const fs::path* p : {&paths.trace_csv, &paths.report_json, &paths.timing_json}) {
        if (!p->empty() && p->has_parent_path()) {
            std::error_code ec;
            fs::create_directories(p->parent_path(), ec);
            if (ec) throw std::runtime_error("output " + p->parent_path().string() + ": " + ec.message());
        }
    }
    write_trace_csv(traces, paths.trace_csv);
    {
        std::ofstream os(paths.report_json);
        if (!os) throw std::runtime_error("report " + paths.report_json.string() + ": cannot open for writing");
        os << report.to_json().dump(2) << '\n';
        if (!os) throw std::runtime_error("report " + paths.report_json.string() + ": write failed");
    }
    if (!paths.timing_json.empty()) {
        std::ofstream os(paths.timing_json);
        if (!os) throw std::runtime_error("timing " + paths.timing_json.string() + ": cannot open for writing");
        nlohmann::ordered_json t;
        t["duration_seconds"] = report.duration_seconds;
        os << t.dump(2) << '\n';
    }
}

RunReport read_report(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("report " + path.string() + ": cannot open for reading");
    try {
        return RunReport::from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("report " + path.string() + ": " + e.what());
    }
}

}  // namespace wildtta
