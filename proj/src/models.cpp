#include "wildtta/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "wildtta/kernels.hpp"

namespace wildtta {

// ---------------------------------------------------------------------------
// Dataset

Tensor Dataset::rows(std::span<const std::size_t> indices) const {
    std::vector<double> out;
    out.reserve(indices.size() * dim);
    for (std::size_t i : indices) {
        if (i >= size()) {
            throw std::out_of_range("dataset: row " + std::to_string(i) + " out of range");
        }
        auto r = row(i);
        out.insert(out.end(), r.begin(), r.end());
    }
    return Tensor::from({indices.size(), dim}, std::move(out));
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

Tensor Dataset::all() const { return Tensor::from({size(), dim}, features); }

// ---------------------------------------------------------------------------
// Norm layers

std::string NormKind::name() const {
    switch (type) {
        case Type::BatchTest:
            return "bn";
        case Type::Group:
            return "gn";
        case Type::Layer:
            return "ln";
    }
    return "?";
}

NormKind NormKind::parse(std::string_view text, std::size_t default_groups) {
    if (text == "bn" || text == "batch") return batch_test();
    if (text == "ln" || text == "layer") return layer();
    if (text == "gn" || text == "group") return group(default_groups);
    if (text.starts_with("gn:")) {
        const std::string digits(text.substr(3));
        char* end = nullptr;
        const unsigned long g = std::strtoul(digits.c_str(), &end, 10);
        if (!digits.empty() && end && *end == '\0' && g > 0) return group(g);
    }
    throw std::invalid_argument("unknown norm kind '" + std::string(text) + "' (expected bn, gn, gn:<g>, ln)");
}

AffineParams AffineParams::identity(std::size_t width) {
    return {Tensor::full({width}, 1.0), Tensor::zeros({width})};
}

Tensor norm_forward(Tape& tape, const Tensor& x, const NormLayer& layer, NormMode mode) {
    if (x.rank() != 2 || x.cols() != layer.width()) {
        throw std::invalid_argument("norm_forward: input " + shape_str(x.shape()) + " does not match width " +
                                    std::to_string(layer.width()));
    }
    Tensor xhat;
    switch (layer.kind.type) {
        case NormKind::Type::BatchTest:
            if (mode == NormMode::Running) {
                if (layer.running_mean.size() != layer.width()) {
                    throw std::logic_error("norm_forward: running statistics were never recorded");
                }
                xhat = ops::standardize_fixed(tape, x, layer.running_mean, layer.running_var, kNormEpsilon);
            } else {
                xhat = ops::standardize(tape, x, true, 1, kNormEpsilon);
            }
            break;
        case NormKind::Type::Group:
        case NormKind::Type::Layer: {
            if (mode == NormMode::Running) {
                throw std::invalid_argument("norm_forward: " + layer.kind.name() +
                                            " has no batch statistics for running mode");
            }
            const std::size_t g = layer.kind.type == NormKind::Type::Layer ? 1 : layer.kind.groups;
            if (g == 0 || layer.width() % g != 0) {
                throw std::invalid_argument("norm_forward: " + std::to_string(g) + " groups do not divide width " +
                                            std::to_string(layer.width()));
            }
            xhat = ops::standardize(tape, x, false, g, kNormEpsilon);
            break;
        }
    }
    return ops::scale_shift(tape, xhat, layer.affine.gamma, layer.affine.beta);
}

Tensor linear_forward(Tape& tape, const Tensor& x, const LinearLayer& layer) {
    return ops::add_bias(tape, ops::matmul(tape, x, layer.weight), layer.bias);
}

// ---------------------------------------------------------------------------
// Model

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
    if (config.input_dim == 0 || config.classes < 2) {
        throw std::invalid_argument("model: need input_dim >= 1 and classes >= 2");
    }
    if (config.freeze_top > config.hidden.size()) {
        throw std::invalid_argument("model: freeze_top exceeds the number of norm layers");
    }
    Model m;
    m.config_ = config;
    std::mt19937_64 rng(seed);
    std::size_t in = config.input_dim;
    auto make_linear = [&](std::size_t fan_in, std::size_t fan_out) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        std::vector<double> w(fan_in * fan_out);
        for (double& v : w) v = dist(rng);
        return LinearLayer{Tensor::from({fan_in, fan_out}, std::move(w)), Tensor::zeros({fan_out})};
    };
    for (std::size_t width : config.hidden) {
        if (config.norm.type == NormKind::Type::Group && (config.norm.groups == 0 || width % config.norm.groups)) {
            throw std::invalid_argument("model: " + std::to_string(config.norm.groups) +
                                        " groups do not divide hidden width " + std::to_string(width));
        }
        m.linears_.push_back(make_linear(in, width));
        m.norms_.push_back(NormLayer{config.norm, AffineParams::identity(width), {}, {}, false});
        in = width;
    }
    m.linears_.push_back(make_linear(in, config.classes));
    for (std::size_t i = 0; i < config.freeze_top; ++i) {
        m.norms_[m.norms_.size() - 1 - i].frozen = true;
    }
    return m;
}

Tensor Model::forward(Tape& tape, const Tensor& batch, NormMode mode) const {
    if (batch.rank() != 2 || batch.cols() != config_.input_dim) {
        throw std::invalid_argument("model: input " + shape_str(batch.shape()) + " does not match feature width " +
                                    std::to_string(config_.input_dim));
    }
    Tensor h = batch;
    for (std::size_t i = 0; i < norms_.size(); ++i) {
        h = linear_forward(tape, h, linears_[i]);
        h = norm_forward(tape, h, norms_[i], mode);
        h = ops::relu(tape, h);
    }
    return linear_forward(tape, h, linears_.back());
}

std::vector<Tensor> Model::trainable_params() const {
    std::vector<Tensor> out;
    for (const NormLayer& n : norms_) {
        if (!n.frozen) {
            out.push_back(n.affine.gamma);
            out.push_back(n.affine.beta);
        }
    }
    return out;
}

std::vector<Tensor> Model::all_params() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < linears_.size(); ++i) {
        out.push_back(linears_[i].weight);
        out.push_back(linears_[i].bias);
        if (i < norms_.size()) {
            out.push_back(norms_[i].affine.gamma);
            out.push_back(norms_[i].affine.beta);
        }
    }
    return out;
}

void Model::set_grad_mode(GradMode mode) {
    for (Tensor t : all_params()) t.set_requires_grad(mode == GradMode::Train);
    if (mode == GradMode::Adapt) {
        for (Tensor t : trainable_params()) t.set_requires_grad(true);
    }
}

Model Model::clone() const {
    Model m;
    m.config_ = config_;
    for (const LinearLayer& l : linears_) m.linears_.push_back({l.weight.clone(), l.bias.clone()});
    for (const NormLayer& n : norms_) {
        m.norms_.push_back(NormLayer{n.kind, {n.affine.gamma.clone(), n.affine.beta.clone()}, n.running_mean,
                                     n.running_var, n.frozen});
    }
    return m;
}

void Model::set_frozen(std::vector<bool> mask) {
    if (mask.size() != norms_.size()) {
        throw std::invalid_argument("model: freeze mask length does not match the norm layer count");
    }
    for (std::size_t i = 0; i < mask.size(); ++i) norms_[i].frozen = mask[i];
}

bool Model::has_running_stats() const {
    return std::all_of(norms_.begin(), norms_.end(),
                       [](const NormLayer& n) { return n.running_mean.size() == n.width(); });
}

NormMode inference_mode(const Model& model, bool adapting) {
    if (model.norm_kind().type == NormKind::Type::BatchTest && !adapting) {
        return NormMode::Running;
    }
    return NormMode::TestBatch;
}

std::vector<int> predict(const Model& model, const Tensor& batch, NormMode mode) {
    Tape tape;
    return argmax_rows(model.forward(tape, batch, mode));
}

double accuracy(const Model& model, const Dataset& data, NormMode mode) {
    if (data.size() == 0) return 0.0;
    const std::vector<int> pred = predict(model, data.all(), mode);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Source training

void record_running_stats(Model& model, const Dataset& data) {
    if (data.size() == 0) {
        throw std::invalid_argument("record_running_stats: empty dataset");
    }
    if (model.norm_kind().type != NormKind::Type::BatchTest) {
        return;
    }
    Tape tape;
    Tensor h = data.all();
    auto& norms = model.norms();
    for (std::size_t l = 0; l < norms.size(); ++l) {
        Tensor z = linear_forward(tape, h, model.linears()[l]);
        const std::size_t m = z.rows(), n = z.cols();
        std::vector<double> mean(n, 0.0), var(n, 0.0);
        auto zd = z.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) mean[j] += zd[i * n + j];
        for (double& v : mean) v /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const double c = zd[i * n + j] - mean[j];
                var[j] += c * c;
            }
        for (double& v : var) v /= static_cast<double>(m);
        norms[l].running_mean = std::move(mean);
        norms[l].running_var = std::move(var);
        h = ops::relu(tape, norm_forward(tape, z, norms[l], NormMode::Running));
    }
}

PretrainResult pretrain(Model& model, const Dataset& train, const PretrainConfig& config) {
    if (train.size() == 0 || train.dim != model.input_dim()) {
        throw std::invalid_argument("pretrain: training set does not match the model input width");
    }
    if (config.batch_size == 0 || config.epochs == 0) {
        throw std::invalid_argument("pretrain: epochs and batch_size must be positive");
    }
    model.set_grad_mode(GradMode::Train);
    std::vector<Tensor> params = model.all_params();
    std::vector<std::vector<double>> velocity;
    for (const Tensor& p : params) velocity.emplace_back(p.numel(), 0.0);

    std::mt19937_64 rng(config.seed ^ 0x5eedf00dULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    PretrainResult result;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        // Cosine decay keeps the last epochs from bouncing around the optimum.
        const double lr = config.lr * 0.5 *
                          (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(config.epochs)));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            // BatchTest needs at least two rows for a nondegenerate variance.
            if (end - start < 2) continue;
            std::span<const std::size_t> idx(order.data() + start, end - start);
            Tape tape;
            Tensor logits = model.forward(tape, train.rows(idx), NormMode::TrainBatch);
            std::vector<int> labels = train.labels_of(idx);
            Tensor loss = ops::cross_entropy(tape, logits, labels);
            for (Tensor& p : params) p.zero_grad();
            tape.backward(loss);
            for (std::size_t t = 0; t < params.size(); ++t) {
                auto g = params[t].grad();
                auto& v = velocity[t];
                auto w = params[t].data();
                for (std::size_t i = 0; i < v.size(); ++i) {
                    v[i] = config.momentum * v[i] + g[i];
                    w[i] -= lr * v[i];
                }
            }
            loss_sum += loss.item();
            ++batches;
        }
        result.final_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    }
    for (Tensor& p : params) p.zero_grad();
    model.set_grad_mode(GradMode::None);
    record_running_stats(model, train);

    result.train_accuracy = accuracy(model, train, inference_mode(model, false));
    if (result.train_accuracy < config.min_accuracy) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "pretrain: training accuracy %.4f below required %.4f after %zu epochs",
                      result.train_accuracy, config.min_accuracy, config.epochs);
        throw PretrainError(buf);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "wildtta-checkpoint";
constexpr int kVersion = 1;

void write_values(std::ostream& os, std::string_view tag, std::size_t index, std::string_view field,
                  std::span<const double> values) {
    os << tag << ' ' << index << ' ' << field << ' ' << values.size();
    char buf[64];
    for (double v : values) {
        std::snprintf(buf, sizeof buf, " %a", v);
        os << buf;
    }
    os << '\n';
}

class Reader {
public:
    Reader(std::istream& is, std::string origin) : is_(is), origin_(std::move(origin)) {}

    std::string word() {
        std::string w;
        if (!(is_ >> w)) fail("unexpected end of file");
        return w;
    }
    void expect(std::string_view w) {
        const std::string got = word();
        if (got != w) fail("expected '" + std::string(w) + "', found '" + got + "'");
    }
    std::size_t count() {
        const std::string w = word();
        char* end = nullptr;
        const unsigned long long v = std::strtoull(w.c_str(), &end, 10);
        if (w.empty() || *end != '\0') fail("expected a count, found '" + w + "'");
        return static_cast<std::size_t>(v);
    }
    double real() {
        const std::string w = word();
        char* end = nullptr;
        const double v = std::strtod(w.c_str(), &end);
        if (w.empty() || *end != '\0') fail("expected a real, found '" + w + "'");
        return v;
    }
    std::vector<double> values(std::string_view tag, std::size_t index, std::string_view field) {
        expect(tag);
        if (count() != index) fail("record out of order for " + std::string(tag));
        expect(field);
        std::vector<double> v(count());
        for (double& x : v) x = real();
        return v;
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw std::runtime_error("checkpoint " + origin_ + ": " + what);
    }

private:
    std::istream& is_;
    std::string origin_;
};

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) {
        throw std::runtime_error("checkpoint " + path.string() + ": cannot open for writing");
    }
    const ModelConfig& c = model.config();
    os << kMagic << " v" << kVersion << '\n';
    os << "input_dim " << c.input_dim << '\n';
    os << "classes " << c.classes << '\n';
    os << "hidden " << c.hidden.size();
    for (std::size_t h : c.hidden) os << ' ' << h;
    os << '\n';
    os << "norm " << c.norm.name() << ' ' << c.norm.groups << '\n';
    os << "freeze_top " << c.freeze_top << '\n';
    os << "frozen " << model.norms().size();
    for (const NormLayer& n : model.norms()) os << ' ' << (n.frozen ? 1 : 0);
    os << '\n';
    for (std::size_t i = 0; i < model.linears().size(); ++i) {
        write_values(os, "linear", i, "weight", model.linears()[i].weight.data());
        write_values(os, "linear", i, "bias", model.linears()[i].bias.data());
    }
    for (std::size_t i = 0; i < model.norms().size(); ++i) {
        const NormLayer& n = model.norms()[i];
        write_values(os, "norm", i, "gamma", n.affine.gamma.data());
        write_values(os, "norm", i, "beta", n.affine.beta.data());
        write_values(os, "norm", i, "running_mean", n.running_mean);
        write_values(os, "norm", i, "running_var", n.running_var);
    }
    os << "end\n";
    if (!os) {
        throw std::runtime_error("checkpoint " + path.string() + ": write failed");
    }
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw std::runtime_error("checkpoint " + path.string() + ": cannot open for reading");
    }
    Reader r(is, path.string());
    r.expect(kMagic);
    if (r.word() != "v" + std::to_string(kVersion)) r.fail("unsupported version");

    ModelConfig c;
    r.expect("input_dim");
    c.input_dim = r.count();
    r.expect("classes");
    c.classes = r.count();
    r.expect("hidden");
    c.hidden.assign(r.count(), 0);
    for (std::size_t& h : c.hidden) h = r.count();
    r.expect("norm");
    const std::string kind = r.word();
    const std::size_t groups = r.count();
    c.norm = NormKind::parse(kind, groups);
    r.expect("freeze_top");
    c.freeze_top = r.count();

    Model m = Model::create(c, 0);
    r.expect("frozen");
    std::vector<bool> mask(r.count());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = r.count() != 0;
    m.set_frozen(std::move(mask));

    auto fill = [&](Tensor& t, std::vector<double> v) {
        if (v.size() != t.numel()) r.fail("parameter size mismatch");
        std::copy(v.begin(), v.end(), t.data().begin());
    };
    for (std::size_t i = 0; i < m.linears_.size(); ++i) {
        fill(m.linears_[i].weight, r.values("linear", i, "weight"));
        fill(m.linears_[i].bias, r.values("linear", i, "bias"));
    }
    for (std::size_t i = 0; i < m.norms_.size(); ++i) {
        NormLayer& n = m.norms_[i];
        fill(n.affine.gamma, r.values("norm", i, "gamma"));
        fill(n.affine.beta, r.values("norm", i, "beta"));
        n.running_mean = r.values("norm", i, "running_mean");
        n.running_var = r.values("norm", i, "running_var");
        if (n.running_mean.size() != n.running_var.size()) r.fail("running statistics size mismatch");
        for (double v : n.running_var)
            if (!(v >= 0.0) || !std::isfinite(v)) r.fail("invalid running variance");
    }
    r.expect("end");
    return m;
}

}  // namespace wildtta
