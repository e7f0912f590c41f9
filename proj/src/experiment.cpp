#include "wildtta/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

namespace wildtta {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.source.classes = 10;
    cfg.source.dim = 32;
    cfg.source.n_per_class = 500;
    cfg.source.test_per_class = 500;
    cfg.source.separation = 4.0;
    cfg.source.within_std = 1.0;
    cfg.model.input_dim = cfg.source.dim;
    cfg.model.classes = cfg.source.classes;
    cfg.model.hidden = {64, 64, 64};
    cfg.model.freeze_top = 1;
    cfg.pretrain.epochs = 20;
    cfg.pretrain.batch_size = 64;
    cfg.pretrain.lr = 0.05;
    cfg.pretrain.momentum = 0.9;
    cfg.stream.corruptions = {CorruptionKind::GaussianNoise};
    cfg.stream.severity = 5;
    cfg.stream.batch_size = 64;
    cfg.stream.imbalance_ratio = 1.0;
    cfg.stream.samples_per_step = 100;
    cfg.adapt.lr = 0.1;
    cfg.adapt.rho = 0.05;
    cfg.adapt.momentum = 0.9;
    cfg.adapt.recovery_threshold = 0.2;
    cfg.adapt.ema = 0.9;
    cfg.lr_family = LrFamily::ResnetLike;
    return cfg;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

[[noreturn]] void config_fail(const std::string& where, const std::string& what) {
    throw ConfigError("config " + where + ": " + what);
}

// Walks one JSON object, rejecting keys nobody asked for.
class Section {
public:
    Section(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
        if (!obj_.is_object()) config_fail(where_, "expected an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (const auto& [k, v] : obj_.items()) {
            if (!seen_.count(k)) config_fail(where_, "unknown key '" + k + "'");
        }
    }

    const json* get(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }
    template <typename T>
    void read(const std::string& key, T& out) {
        if (const json* v = get(key)) {
            try {
                out = v->get<T>();
            } catch (const json::exception&) {
                config_fail(where_ + "." + key, "wrong type");
            }
        }
    }
    void read_size(const std::string& key, std::size_t& out) {
        if (const json* v = get(key)) {
            if (!v->is_number_unsigned()) config_fail(where_ + "." + key, "expected a non-negative integer");
            out = v->get<std::size_t>();
        }
    }
    template <typename T>
    void read_optional(const std::string& key, std::optional<T>& out) {
        if (const json* v = get(key)) {
            if (v->is_null()) {
                out.reset();
                return;
            }
            try {
                out = v->get<T>();
            } catch (const json::exception&) {
                config_fail(where_ + "." + key, "wrong type");
            }
        }
    }
    template <typename T, typename Parse>
    void read_list(const std::string& key, std::vector<T>& out, Parse parse) {
        if (const json* v = get(key)) {
            if (!v->is_array() || v->empty()) config_fail(where_ + "." + key, "expected a non-empty array");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_string()) config_fail(where_ + "." + key, "expected strings");
                try {
                    out.push_back(parse(e.get<std::string>()));
                } catch (const std::invalid_argument& ex) {
                    config_fail(where_ + "." + key, ex.what());
                }
            }
        }
    }
    const std::string& where() const { return where_; }

private:
    const json& obj_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig parse_config(const json& doc, ExperimentConfig cfg) {
    Section root(doc, "<root>");
    std::size_t groups = cfg.norms.empty() ? 8 : cfg.norms.front().groups;
    if (const json* s = root.get("source")) {
        Section sec(*s, "source");
        sec.read_size("classes", cfg.source.classes);
        sec.read_size("dim", cfg.source.dim);
        sec.read_size("n_per_class", cfg.source.n_per_class);
        sec.read_size("test_per_class", cfg.source.test_per_class);
        sec.read("separation", cfg.source.separation);
        sec.read("within_std", cfg.source.within_std);
    }
    if (const json* s = root.get("model")) {
        Section sec(*s, "model");
        sec.read_size("groups", groups);
        if (const json* h = sec.get("hidden")) {
            if (!h->is_array() || h->empty()) config_fail("model.hidden", "expected a non-empty array");
            cfg.model.hidden.clear();
            for (const auto& w : *h) {
                if (!w.is_number_unsigned() || w.get<std::size_t>() == 0) {
                    config_fail("model.hidden", "widths must be positive integers");
                }
                cfg.model.hidden.push_back(w.get<std::size_t>());
            }
        }
        sec.read_list("norms", cfg.norms, [&](const std::string& n) { return NormKind::parse(n, groups); });
        sec.read_size("freeze_top", cfg.model.freeze_top);
        std::optional<std::string> ckpt;
        sec.read_optional("checkpoint_dir", ckpt);
        if (ckpt) cfg.checkpoint_dir = *ckpt;
        sec.read("force_pretrain", cfg.force_pretrain);
        if (const json* p = sec.get("pretrain")) {
            Section pre(*p, "model.pretrain");
            pre.read_size("epochs", cfg.pretrain.epochs);
            pre.read_size("batch_size", cfg.pretrain.batch_size);
            pre.read("lr", cfg.pretrain.lr);
            pre.read("momentum", cfg.pretrain.momentum);
            pre.read("min_accuracy", cfg.pretrain.min_accuracy);
        }
    }
    for (NormKind& n : cfg.norms) {
        if (n.type == NormKind::Type::Group && doc.contains("model") && doc["model"].contains("groups")) {
            n.groups = groups;
        }
    }
    if (const json* s = root.get("stream")) {
        Section sec(*s, "stream");
        sec.read_list("corruptions", cfg.stream.corruptions, [](const std::string& n) { return parse_corruption(n); });
        sec.read("severity", cfg.stream.severity);
        sec.read_size("batch_size", cfg.stream.batch_size);
        if (const json* r = sec.get("imbalance_ratio")) {
            try {
                cfg.stream.imbalance_ratio =
                    r->is_string() ? parse_ratio(r->get<std::string>()) : parse_ratio(format_real(r->get<double>()));
            } catch (const std::exception& e) {
                config_fail("stream.imbalance_ratio", e.what());
            }
        }
        sec.read_size("samples_per_step", cfg.stream.samples_per_step);
        sec.read_optional("steps", cfg.stream.steps);
    }
    if (const json* s = root.get("adapt")) {
        Section sec(*s, "adapt");
        sec.read_list("methods", cfg.methods, [](const std::string& n) { return parse_method(n); });
        sec.read("lr", cfg.adapt.lr);
        if (const json* f = sec.get("lr_family")) {
            if (f->is_null()) {
                cfg.lr_family.reset();
            } else if (f->is_string()) {
                try {
                    cfg.lr_family = parse_lr_family(f->get<std::string>());
                } catch (const std::invalid_argument& e) {
                    config_fail("adapt.lr_family", e.what());
                }
            } else {
                config_fail("adapt.lr_family", "expected a string or null");
            }
        }
        sec.get("effective_lr");  // derived; present in echoed configs and ignored
        sec.read_optional("entropy_filter", cfg.adapt.entropy_filter);
        sec.read("rho", cfg.adapt.rho);
        sec.read("momentum", cfg.adapt.momentum);
        sec.read("recovery_threshold", cfg.adapt.recovery_threshold);
        sec.read("ema", cfg.adapt.ema);
        sec.read("recovery", cfg.adapt.recovery);
        sec.read_optional("clip_value", cfg.adapt.clip_value);
        sec.read_optional("clip_norm", cfg.adapt.clip_norm);
    }
    if (const json* s = root.get("telemetry")) {
        Section sec(*s, "telemetry");
        sec.read_size("collapse_window", cfg.collapse_window);
        sec.read("collapse_threshold", cfg.collapse_threshold);
        sec.read("surface", cfg.surface.enabled);
        sec.read("surface_radius", cfg.surface.radius);
        sec.read_size("surface_resolution", cfg.surface.resolution);
    }
    if (const json* s = root.get("seeds")) {
        if (!s->is_array() || s->empty()) config_fail("seeds", "expected a non-empty array");
        cfg.seeds.clear();
        for (const auto& v : *s) {
            if (!v.is_number_unsigned()) config_fail("seeds", "expected non-negative integers");
            cfg.seeds.push_back(v.get<std::uint64_t>());
        }
    }
    if (const json* s = root.get("out")) {
        if (!s->is_string()) config_fail("out", "expected a path string");
        cfg.out = s->get<std::string>();
    }
    cfg.model.input_dim = cfg.source.dim;
    cfg.model.classes = cfg.source.classes;
    return cfg;
}

ExperimentConfig load_config(const fs::path& path, ExperimentConfig base) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config " + path.string() + ": cannot open");
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(doc, std::move(base));
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
    if (source.classes < 2 || source.dim < 2) fail("source needs >= 2 classes and >= 2 dimensions");
    if (source.n_per_class < 2 || source.test_per_class < 2) fail("source needs >= 2 samples per class per split");
    if (!(source.separation >= 0.0) || !(source.within_std > 0.0)) fail("source separation/within_std out of range");
    if (model.hidden.empty()) fail("model needs at least one hidden layer");
    if (model.freeze_top > model.hidden.size()) fail("model.freeze_top exceeds the hidden layer count");
    if (norms.empty()) fail("no norm kinds given");
    for (std::size_t i = 0; i < norms.size(); ++i) {
        for (std::size_t j = i + 1; j < norms.size(); ++j) {
            if (norms[i].name() == norms[j].name()) fail("norm kind '" + norms[i].name() + "' listed twice");
        }
    }
    for (const NormKind& n : norms) {
        if (n.type != NormKind::Type::Group) continue;
        for (std::size_t w : model.hidden) {
            if (n.groups == 0 || w % n.groups != 0) {
                fail("group count " + std::to_string(n.groups) + " does not divide hidden width " + std::to_string(w));
            }
        }
    }
    if (pretrain.epochs == 0 || pretrain.batch_size < 2) fail("pretrain needs epochs >= 1 and batch_size >= 2");
    if (!(pretrain.lr > 0.0)) fail("pretrain.lr must be positive");
    if (!(pretrain.min_accuracy >= 0.0 && pretrain.min_accuracy <= 1.0)) fail("pretrain.min_accuracy outside [0, 1]");
    if (stream.corruptions.empty()) fail("stream needs at least one corruption kind");
    if (stream.severity < kMinSeverity || stream.severity > kMaxSeverity) fail("stream.severity outside [1, 5]");
    if (stream.batch_size == 0 || stream.samples_per_step == 0) fail("stream batch_size and samples_per_step must be positive");
    if (stream.steps && *stream.steps == 0) fail("stream.steps must be positive");
    if (std::isnan(stream.imbalance_ratio) || stream.imbalance_ratio < 1.0) fail("stream.imbalance_ratio must be >= 1");
    const std::size_t total = stream.samples_per_step * stream.steps.value_or(source.classes);
    if (stream.batch_size > total) fail("stream.batch_size exceeds the stream length");
    if (methods.empty()) fail("no methods given");
    for (Method m : methods) {
        AdaptConfig a = adapt;
        a.method = m;
        try {
            a.validate(source.classes);
        } catch (const std::invalid_argument& e) {
            fail(std::string(method_name(m)) + ": " + e.what());
        }
    }
    if (collapse_window == 0) fail("telemetry.collapse_window must be >= 1");
    if (!(collapse_threshold > 0.0 && collapse_threshold <= 1.0)) fail("telemetry.collapse_threshold outside (0, 1]");
    if (surface.enabled && (surface.resolution < 3 || surface.resolution % 2 == 0 || !(surface.radius > 0.0))) {
        fail("surface needs an odd resolution >= 3 and a positive radius");
    }
    if (seeds.empty()) fail("no seeds given");
}

double ExperimentConfig::effective_lr() const {
    return lr_family ? lr_for_batch(adapt.lr, stream.batch_size, *lr_family) : adapt.lr;
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["source"] = {{"classes", cfg.source.classes},
                   {"dim", cfg.source.dim},
                   {"n_per_class", cfg.source.n_per_class},
                   {"test_per_class", cfg.source.test_per_class},
                   {"separation", cfg.source.separation},
                   {"within_std", cfg.source.within_std}};
    ordered_json norms = ordered_json::array();
    for (const NormKind& n : cfg.norms) norms.push_back(n.name());
    ordered_json hidden = ordered_json::array();
    for (std::size_t h : cfg.model.hidden) hidden.push_back(h);
    j["model"] = {{"norms", norms},
                  {"groups", cfg.norms.empty() ? 8 : cfg.norms.front().groups},
                  {"hidden", hidden},
                  {"freeze_top", cfg.model.freeze_top},
                  {"pretrain",
                   {{"epochs", cfg.pretrain.epochs},
                    {"batch_size", cfg.pretrain.batch_size},
                    {"lr", cfg.pretrain.lr},
                    {"momentum", cfg.pretrain.momentum},
                    {"min_accuracy", cfg.pretrain.min_accuracy}}}};
    for (const NormKind& n : cfg.norms) {
        if (n.type == NormKind::Type::Group) j["model"]["groups"] = n.groups;
    }
    ordered_json kinds = ordered_json::array();
    for (CorruptionKind k : cfg.stream.corruptions) kinds.push_back(corruption_name(k));
    j["stream"] = {{"corruptions", kinds},
                   {"severity", cfg.stream.severity},
                   {"batch_size", cfg.stream.batch_size},
                   {"imbalance_ratio", format_ratio(cfg.stream.imbalance_ratio)},
                   {"samples_per_step", cfg.stream.samples_per_step},
                   {"steps", cfg.stream.steps.value_or(cfg.source.classes)}};
    ordered_json methods = ordered_json::array();
    for (Method m : cfg.methods) methods.push_back(method_name(m));
    auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
    j["adapt"] = {{"methods", methods},
                  {"lr", cfg.adapt.lr},
                  {"lr_family", cfg.lr_family ? ordered_json(cfg.lr_family == LrFamily::VitLike ? "vit" : "resnet")
                                              : ordered_json(nullptr)},
                  {"effective_lr", cfg.effective_lr()},
                  {"entropy_filter", cfg.adapt.filter_threshold(cfg.source.classes)},
                  {"rho", cfg.adapt.rho},
                  {"momentum", cfg.adapt.momentum},
                  {"recovery_threshold", cfg.adapt.recovery_threshold},
                  {"ema", cfg.adapt.ema},
                  {"recovery", cfg.adapt.recovery},
                  {"clip_value", opt(cfg.adapt.clip_value)},
                  {"clip_norm", opt(cfg.adapt.clip_norm)}};
    j["telemetry"] = {{"collapse_window", cfg.collapse_window},
                      {"collapse_threshold", cfg.collapse_threshold},
                      {"surface", cfg.surface.enabled},
                      {"surface_radius", cfg.surface.radius},
                      {"surface_resolution", cfg.surface.resolution}};
    ordered_json seeds = ordered_json::array();
    for (std::uint64_t s : cfg.seeds) seeds.push_back(s);
    j["seeds"] = seeds;
    return j;
}

// ---------------------------------------------------------------------------
// Running

SeedContext prepare(const ExperimentConfig& cfg, std::uint64_t seed, const NormKind& norm) {
    SourceSpec src = cfg.source;
    src.seed = seed;
    SeedContext ctx{gen_source(src), Model{}, Stream{}, PretrainResult{}};

    ModelConfig mcfg = cfg.model;
    mcfg.input_dim = src.dim;
    mcfg.classes = src.classes;
    mcfg.norm = norm;

    std::optional<fs::path> ckpt;
    if (cfg.checkpoint_dir) {
        ckpt = *cfg.checkpoint_dir / (norm.name() + "-seed" + std::to_string(seed) + ".ckpt");
    }
    if (ckpt && !cfg.force_pretrain && fs::exists(*ckpt)) {
        ctx.model = load_checkpoint(*ckpt);
        const ModelConfig& got = ctx.model.config();
        if (got.input_dim != mcfg.input_dim || got.classes != mcfg.classes || got.hidden != mcfg.hidden ||
            !(got.norm == mcfg.norm)) {
            throw std::runtime_error("checkpoint " + ckpt->string() + " does not match the configured model");
        }
        ctx.pretrain.train_accuracy = accuracy(ctx.model, ctx.data.train, inference_mode(ctx.model, false));
    } else {
        ctx.model = Model::create(mcfg, seed);
        PretrainConfig pc = cfg.pretrain;
        pc.seed = seed;
        ctx.pretrain = pretrain(ctx.model, ctx.data.train, pc);
        if (ckpt) {
            fs::create_directories(ckpt->parent_path());
            save_checkpoint(ctx.model, *ckpt);
        }
    }

    StreamSpec ss = cfg.stream;
    ss.seed = seed;
    ctx.stream = build_stream(ss, ctx.data.test, src.within_std);
    return ctx;
}

RunResult run_method(const Model& pretrained, const Stream& stream, const AdaptConfig& adapt,
                     const ExperimentConfig& cfg, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    Model model = pretrained.clone();
    AdaptConfig a = adapt;
    a.lr = cfg.effective_lr();
    a.validate(model.classes());
    AdaptState state = AdaptState::init(model);
    MetricsAccumulator metrics(cfg.collapse_window);

    RunResult result;
    RunReport& rep = result.report;
    rep.method = std::string(method_name(a.method));
    rep.norm = model.norm_kind().name();
    rep.seed = seed;
    rep.collapse_window = cfg.collapse_window;
    rep.collapse_threshold = cfg.collapse_threshold;

    for (std::size_t b = 0; b < stream.batches.size(); ++b) {
        const StreamBatch& batch = stream.batches[b];
        const StepOutcome o = adapt_step(model, batch.features, a, state);
        metrics.update(o.predictions, batch.labels, batch.kinds);

        StepTrace t;
        t.step = b + 1;
        t.batch_size = o.batch_size;
        t.selected = o.selected;
        t.selected2 = o.selected2;
        t.mean_entropy = o.mean_entropy;
        t.grad_norm = o.grad_norm;
        t.accuracy = metrics.accuracy();
        t.modal_fraction = metrics.modal_fraction();
        t.recovered = o.recovered;
        t.skipped = o.skipped;
        result.traces.push_back(t);

        if (metrics.window_full()) {
            rep.max_modal_fraction = std::max(rep.max_modal_fraction, t.modal_fraction);
            if (!rep.collapsed && detect_collapse(metrics.window(), cfg.collapse_threshold)) {
                rep.collapsed = true;
                rep.first_collapse_step = t.step;
            }
        }
    }

    rep.samples = metrics.seen();
    rep.final_accuracy = metrics.accuracy();
    rep.per_corruption = metrics.per_corruption();
    rep.counts = {state.update_count,   state.backward_count,   state.recovery_count,
                  state.skipped_steps,  state.zero_grad_events, state.empty_second_pass};

    ExperimentConfig echo = cfg;
    echo.methods = {a.method};
    echo.norms = {model.norm_kind()};
    echo.seeds = {seed};
    rep.config = config_to_json(echo);

    if (cfg.surface.enabled && !stream.batches.empty()) {
        auto it = std::find_if(stream.batches.rbegin(), stream.batches.rend(), [&](const StreamBatch& sb) {
            return sb.features.rows() == cfg.stream.batch_size;
        });
        const StreamBatch& probe = it != stream.batches.rend() ? *it : stream.batches.back();
        result.surface = loss_surface_grid(model, probe.features, cfg.surface.radius, cfg.surface.resolution, seed);
    }
    rep.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

fs::path run_directory(const ExperimentConfig& cfg, const std::string& norm, const std::string& method,
                       std::uint64_t seed) {
    return cfg.out / norm / method / ("seed-" + std::to_string(seed));
}

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, bool write) {
    cfg.validate();
    std::vector<RunResult> results;
    for (std::uint64_t seed : cfg.seeds) {
        for (const NormKind& norm : cfg.norms) {
            const SeedContext ctx = prepare(cfg, seed, norm);
            for (Method m : cfg.methods) {
                AdaptConfig a = cfg.adapt;
                a.method = m;
                RunResult r = run_method(ctx.model, ctx.stream, a, cfg, seed);
                if (write) {
                    const fs::path dir = run_directory(cfg, r.report.norm, r.report.method, seed);
                    write_outputs(r.traces, r.report,
                                  {dir / "trace.csv", dir / "report.json", dir / "timing.json"});
                    if (r.surface) write_surface_csv(*r.surface, dir / "surface.csv");
                }
                results.push_back(std::move(r));
            }
        }
    }
    if (write && !results.empty()) {
        std::vector<RunReport> reports;
        for (const RunResult& r : results) reports.push_back(r.report);
        const Summary s = compare(reports);
        std::ofstream(cfg.out / "summary.json") << s.to_json().dump(2) << '\n';
        std::ofstream(cfg.out / "summary.txt") << s.to_text();
    }
    return results;
}

// ---------------------------------------------------------------------------
// Comparison

namespace {

std::pair<double, double> mean_stdev(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

json stream_identity(const RunReport& r) {
    json id;
    if (r.config.contains("source")) id["source"] = r.config["source"];
    if (r.config.contains("stream")) id["stream"] = r.config["stream"];
    return id;
}

}  // namespace

Summary compare(const std::vector<RunReport>& reports) {
    if (reports.empty()) {
        throw ConfigError("compare: no reports given");
    }
    const json reference = stream_identity(reports.front());
    for (const RunReport& r : reports) {
        if (stream_identity(r) != reference) {
            throw ConfigError("compare: reports come from different source/stream settings (" + r.method + ", " +
                              r.norm + ", seed " + std::to_string(r.seed) + ")");
        }
    }
    Summary s;
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<const RunReport*>> groups;
    for (const RunReport& r : reports) {
        const auto key = std::make_pair(r.method, r.norm);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    for (const auto& key : order) {
        const auto& members = groups[key];
        SummaryRow row;
        row.method = key.first;
        row.norm = key.second;
        row.runs = members.size();
        std::vector<double> acc;
        std::map<std::string, std::vector<double>> per;
        for (const RunReport* r : members) {
            acc.push_back(r->final_accuracy);
            row.collapsed_runs += r->collapsed;
            for (const auto& [k, v] : r->per_corruption) per[k].push_back(v);
        }
        std::tie(row.mean, row.stdev) = mean_stdev(acc);
        for (const auto& [k, v] : per) row.per_corruption[k] = mean_stdev(v);
        s.rows.push_back(std::move(row));
    }
    return s;
}

ordered_json Summary::to_json() const {
    ordered_json rows_json = ordered_json::array();
    for (const SummaryRow& r : rows) {
        ordered_json row;
        row["method"] = r.method;
        row["norm"] = r.norm;
        row["runs"] = r.runs;
        row["accuracy_mean"] = r.mean;
        row["accuracy_stdev"] = r.stdev;
        row["collapsed_runs"] = r.collapsed_runs;
        row["per_corruption"] = ordered_json::object();
        for (const auto& [k, ms] : r.per_corruption) {
            row["per_corruption"][k] = {{"mean", ms.first}, {"stdev", ms.second}};
        }
        rows_json.push_back(std::move(row));
    }
    ordered_json j;
    j["rows"] = std::move(rows_json);
    return j;
}

std::string Summary::to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(12) << "method" << std::setw(6) << "norm" << std::setw(6) << "runs"
       << std::setw(22) << "accuracy (mean+-sd)" << "collapsed\n";
    for (const SummaryRow& r : rows) {
        std::ostringstream acc;
        acc << std::fixed << std::setprecision(4) << r.mean << " +- " << r.stdev;
        os << std::left << std::setw(12) << r.method << std::setw(6) << r.norm << std::setw(6) << r.runs
           << std::setw(22) << acc.str() << r.collapsed_runs << '/' << r.runs << '\n';
        if (r.per_corruption.size() > 1) {
            for (const auto& [k, ms] : r.per_corruption) {
                std::ostringstream pc;
                pc << std::fixed << std::setprecision(4) << ms.first << " +- " << ms.second;
                os << "    " << std::setw(20) << k << pc.str() << '\n';
            }
        }
    }
    return os.str();
}

}  // namespace wildtta
