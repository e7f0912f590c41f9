#include "wildtta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "wildtta/kernels.hpp"

namespace wildtta {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t d : shape) {
        if (d == 0) {
            throw std::invalid_argument("tensor: zero-sized dimension in shape " + shape_str(shape));
        }
    }
    if (values.size() != shape_numel(shape)) {
        throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                    " values do not fill shape " + shape_str(shape));
    }
    auto impl = std::make_shared<Storage>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    Tensor t(std::move(impl));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor::Storage& Tensor::storage() const {
    if (!impl_) {
        throw std::logic_error("tensor: access to an undefined tensor");
    }
    return *impl_;
}

const Shape& Tensor::shape() const { return storage().shape; }
std::size_t Tensor::numel() const { return storage().data.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw std::invalid_argument("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_str(s));
    }
    return s[axis];
}

std::span<double> Tensor::data() { return storage().data; }
std::span<const double> Tensor::data() const { return storage().data; }

std::span<double> Tensor::grad() {
    Storage& s = storage();
    if (s.grad.size() != s.data.size()) {
        s.grad.assign(s.data.size(), 0.0);
    }
    return s.grad;
}

std::span<const double> Tensor::grad() const { return const_cast<Tensor*>(this)->grad(); }

double Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("tensor: item() on non-scalar of shape " + shape_str(shape()));
    }
    return data()[0];
}

bool Tensor::requires_grad() const { return storage().requires_grad; }

void Tensor::set_requires_grad(bool on) {
    Storage& s = storage();
    s.requires_grad = on;
    if (on && s.grad.size() != s.data.size()) {
        s.grad.assign(s.data.size(), 0.0);
    }
}

void Tensor::zero_grad() {
    Storage& s = storage();
    std::fill(s.grad.begin(), s.grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    const Storage& s = storage();
    auto impl = std::make_shared<Storage>(s);
    return Tensor(std::move(impl));
}

// ---------------------------------------------------------------------------
// Tape

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
    entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& root) {
    if (!root.defined() || root.numel() != 1) {
        throw std::invalid_argument("tape: backward root must be a scalar, got shape " +
                                    (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
    }
    std::size_t end = entries_.size();
    while (end > 0 && !same_tensor(entries_[end - 1].output, root)) {
        --end;
    }
    if (end == 0) {
        throw std::invalid_argument("tape: backward root was not produced on this tape");
    }
    for (std::size_t i = 0; i < end; ++i) {
        entries_[i].output.zero_grad();
    }
    // Leaves get this pass's gradient in a zeroed buffer and the earlier contents added
    // back afterwards, so accumulation is a single addition per entry.
    std::unordered_set<const void*> produced;
    for (std::size_t i = 0; i < end; ++i) produced.insert(entries_[i].output.id());
    std::unordered_set<const void*> seen;
    std::vector<std::pair<Tensor, std::vector<double>>> leaves;
    for (std::size_t i = 0; i < end; ++i) {
        for (Tensor& in : entries_[i].inputs) {
            if (!in.requires_grad() || produced.count(in.id()) || !seen.insert(in.id()).second) continue;
            auto g = in.grad();
            leaves.emplace_back(in, std::vector<double>(g.begin(), g.end()));
            in.zero_grad();
        }
    }
    Tensor seed = root;
    seed.grad()[0] = 1.0;
    for (std::size_t i = end; i-- > 0;) {
        entries_[i].backward();
    }
    for (auto& [leaf, before] : leaves) {
        auto g = leaf.grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += before[k];
    }
}

// ---------------------------------------------------------------------------
// Operations

namespace ops {
namespace {

void require_finite(const Tensor& x, const char* op) {
    for (double v : x.data()) {
        if (!std::isfinite(v)) {
            throw std::domain_error(std::string(op) + ": non-finite input");
        }
    }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    ", got shape " + shape_str(x.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

bool any_grad(std::initializer_list<const Tensor*> xs) {
    return std::any_of(xs.begin(), xs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Writes per-row log-softmax of x into out and returns the row log-sum-exp values.
std::vector<double> row_log_softmax(std::span<const double> x, std::size_t m, std::size_t n,
                                    std::span<double> out) {
    std::vector<double> lse(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.data() + i * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            s += std::exp(row[j] - mx);
        }
        lse[i] = mx + std::log(s);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = row[j] - lse[i];
        }
    }
    return lse;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " +
                                    shape_str(b.shape()));
    }
    require_finite(a, "matmul");
    require_finite(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({m, n}, any_grad({&a, &b}));
    kernels::gemm_nn(m, k, n, a.data(), b.data(), c.data());
    if (c.requires_grad()) {
        tape.record({a, b}, c, [a = Tensor(a), b = Tensor(b), c, m, k, n]() mutable {
            if (a.requires_grad()) kernels::gemm_nt(m, k, n, c.grad(), b.data(), a.grad());
            if (b.requires_grad()) kernels::gemm_tn(m, k, n, a.data(), c.grad(), b.grad());
        });
    }
    return c;
}

namespace {
template <typename Fwd, typename Bwd>
Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd bwd) {
    require_same_shape(a, b, op);
    require_finite(a, op);
    require_finite(b, op);
    Tensor c = Tensor::zeros(a.shape(), any_grad({&a, &b}));
    auto ad = a.data();
    auto bd = b.data();
    auto cd = c.data();
    for (std::size_t i = 0; i < cd.size(); ++i) {
        cd[i] = fwd(ad[i], bd[i]);
    }
    if (c.requires_grad()) {
        tape.record({a, b}, c, [a = Tensor(a), b = Tensor(b), c, bwd]() mutable {
            auto g = c.grad();
            auto ad = a.data();
            auto bd = b.data();
            const bool ga = a.requires_grad(), gb = b.requires_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const auto [da, db] = bwd(ad[i], bd[i], g[i]);
                if (ga) a.grad()[i] += da;
                if (gb) b.grad()[i] += db;
            }
        });
    }
    return c;
}
}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary(
        tape, a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double g) { return std::pair{g, g}; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary(
        tape, a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double g) { return std::pair{g, -g}; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary(
        tape, a, b, "mul", [](double x, double y) { return x * y; },
        [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_bias");
    require_rank(bias, 1, "add_bias");
    if (bias.dim(0) != x.cols()) {
        throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                                    shape_str(x.shape()));
    }
    require_finite(x, "add_bias");
    require_finite(bias, "add_bias");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor y = x.clone();
    y.set_requires_grad(any_grad({&x, &bias}));
    for (std::size_t i = 0; i < m; ++i) {
        kernels::axpy(1.0, bias.data(), y.data().subspan(i * n, n));
    }
    if (y.requires_grad()) {
        tape.record({x, bias}, y, [x = Tensor(x), bias = Tensor(bias), y, m, n]() mutable {
            auto g = y.grad();
            if (x.requires_grad()) kernels::axpy(1.0, g, x.grad());
            if (bias.requires_grad()) {
                for (std::size_t i = 0; i < m; ++i) {
                    kernels::axpy(1.0, g.subspan(i * n, n), bias.grad());
                }
            }
        });
    }
    return y;
}

Tensor relu(Tape& tape, const Tensor& x) {
    require_finite(x, "relu");
    Tensor y = Tensor::zeros(x.shape(), x.requires_grad());
    auto xd = x.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        yd[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    }
    if (y.requires_grad()) {
        tape.record({x}, y, [x = Tensor(x), y]() mutable {
            auto g = y.grad();
            auto xd = x.data();
            auto gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xd[i] > 0.0) gx[i] += g[i];
            }
        });
    }
    return y;
}

Tensor sum(Tape& tape, const Tensor& x) {
    require_finite(x, "sum");
    Tensor y = Tensor::scalar(kernels::sum(x.data()), x.requires_grad());
    if (y.requires_grad()) {
        tape.record({x}, y, [x = Tensor(x), y]() mutable {
            const double g = y.grad()[0];
            for (double& v : x.grad()) v += g;
        });
    }
    return y;
}

Tensor mean(Tape& tape, const Tensor& x) {
    require_finite(x, "mean");
    const double n = static_cast<double>(x.numel());
    Tensor y = Tensor::scalar(kernels::sum(x.data()) / n, x.requires_grad());
    if (y.requires_grad()) {
        tape.record({x}, y, [x = Tensor(x), y, n]() mutable {
            const double g = y.grad()[0] / n;
            for (double& v : x.grad()) v += g;
        });
    }
    return y;
}

Tensor logsumexp_rows(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "logsumexp_rows");
    require_finite(x, "logsumexp_rows");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> logp(m * n);
    std::vector<double> lse = row_log_softmax(x.data(), m, n, logp);
    Tensor y = Tensor::from({m}, std::move(lse), x.requires_grad());
    if (y.requires_grad()) {
        tape.record({x}, y, [x = Tensor(x), y, logp = std::move(logp), m, n]() mutable {
            auto g = y.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    gx[i * n + j] += g[i] * std::exp(logp[i * n + j]);
                }
            }
        });
    }
    return y;
}

Tensor log_softmax_rows(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "log_softmax_rows");
    require_finite(x, "log_softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor y = Tensor::zeros({m, n}, x.requires_grad());
    row_log_softmax(x.data(), m, n, y.data());
    if (y.requires_grad()) {
        tape.record({x}, y, [x = Tensor(x), y, m, n]() mutable {
            auto g = y.grad();
            auto yd = y.data();
            auto gx = x.grad();
            for (std::size_t i = 0; i < m; ++i) {
                double gs = 0.0;
                for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
                for (std::size_t j = 0; j < n; ++j) {
                    gx[i * n + j] += g[i * n + j] - std::exp(yd[i * n + j]) * gs;
                }
            }
        });
    }
    return y;
}

Tensor softmax_rows(Tape& tape, const Tensor& x) {
    require_rank(x, 2, "softmax_rows");
    require_finite(x, "softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor y = Tensor::from({m, n}, softmax_values(x.data(), m, n), x.requires_grad());
    if (y.requires_grad()) {
        tape.record({x}, y, [x = Tensor(x), y, m, n]() mutable {
            auto g = y.grad();
            auto p = y.data();
            auto gx = x.grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double gp = kernels::dot(g.subspan(i * n, n), p.subspan(i * n, n));
                for (std::size_t j = 0; j < n; ++j) {
                    gx[i * n + j] += p[i * n + j] * (g[i * n + j] - gp);
                }
            }
        });
    }
    return y;
}

Tensor entropy_rows(Tape& tape, const Tensor& logits) {
    require_rank(logits, 2, "entropy_rows");
    require_finite(logits, "entropy_rows");
    const std::size_t m = logits.rows(), n = logits.cols();
    std::vector<double> logp(m * n);
    row_log_softmax(logits.data(), m, n, logp);
    std::vector<double> ent(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double e = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double lp = logp[i * n + j];
            const double p = std::exp(lp);
            if (p > 0.0) e -= p * lp;
        }
        ent[i] = std::max(e, 0.0);
    }
    Tensor y = Tensor::from({m}, std::move(ent), logits.requires_grad());
    if (y.requires_grad()) {
        tape.record({logits}, y, [logits = Tensor(logits), y, logp = std::move(logp), m, n]() mutable {
            // dE/dz_k = -p_k (log p_k + E)
            auto g = y.grad();
            auto e = y.data();
            auto gx = logits.grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double lp = logp[i * n + j];
                    gx[i * n + j] -= g[i] * std::exp(lp) * (lp + e[i]);
                }
            }
        });
    }
    return y;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "cross_entropy");
    require_finite(logits, "cross_entropy");
    const std::size_t m = logits.rows(), n = logits.cols();
    if (labels.size() != m) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(m) + " rows");
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= n) {
            throw std::invalid_argument("cross_entropy: label " + std::to_string(l) + " out of range");
        }
    }
    std::vector<double> logp(m * n);
    row_log_softmax(logits.data(), m, n, logp);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        loss -= logp[i * n + static_cast<std::size_t>(labels[i])];
    }
    Tensor y = Tensor::scalar(loss / static_cast<double>(m), logits.requires_grad());
    if (y.requires_grad()) {
        std::vector<int> lab(labels.begin(), labels.end());
        tape.record({logits}, y, [logits = Tensor(logits), y, logp = std::move(logp), lab = std::move(lab), m, n]() mutable {
            const double g = y.grad()[0] / static_cast<double>(m);
            auto gx = logits.grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double target = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
                    gx[i * n + j] += g * (std::exp(logp[i * n + j]) - target);
                }
            }
        });
    }
    return y;
}

Tensor gather(Tape& tape, const Tensor& x, std::span<const std::size_t> indices) {
    require_rank(x, 1, "gather");
    if (indices.empty()) {
        throw std::invalid_argument("gather: empty index set");
    }
    std::vector<double> vals;
    vals.reserve(indices.size());
    for (std::size_t idx : indices) {
        if (idx >= x.numel()) {
            throw std::invalid_argument("gather: index " + std::to_string(idx) + " out of range");
        }
        vals.push_back(x.data()[idx]);
    }
    Tensor y = Tensor::from({indices.size()}, std::move(vals), x.requires_grad());
    if (y.requires_grad()) {
        std::vector<std::size_t> idx(indices.begin(), indices.end());
        tape.record({x}, y, [x = Tensor(x), y, idx = std::move(idx)]() mutable {
            auto g = y.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
        });
    }
    return y;
}

Tensor standardize(Tape& tape, const Tensor& x, bool per_feature, std::size_t groups, double eps) {
    require_rank(x, 2, "standardize");
    require_finite(x, "standardize");
    const std::size_t m = x.rows(), n = x.cols();
    if (!per_feature && (groups == 0 || n % groups != 0)) {
        throw std::invalid_argument("standardize: " + std::to_string(groups) + " groups do not divide width " +
                                    std::to_string(n));
    }
    // A unit is a set of element offsets normalized together, addressed as
    // base + t * stride for t in [0, count).
    const std::size_t units = per_feature ? n : m * groups;
    const std::size_t count = per_feature ? m : n / groups;
    const std::size_t stride = per_feature ? n : 1;
    auto base_of = [=](std::size_t u) { return per_feature ? u : u * count; };

    Tensor y = Tensor::zeros({m, n}, x.requires_grad());
    std::vector<double> inv_std(units);
    auto xd = x.data();
    auto yd = y.data();
    for (std::size_t u = 0; u < units; ++u) {
        const std::size_t base = base_of(u);
        double mu = 0.0;
        for (std::size_t t = 0; t < count; ++t) mu += xd[base + t * stride];
        mu /= static_cast<double>(count);
        double var = 0.0;
        for (std::size_t t = 0; t < count; ++t) {
            const double c = xd[base + t * stride] - mu;
            var += c * c;
        }
        var /= static_cast<double>(count);
        inv_std[u] = 1.0 / std::sqrt(var + eps);
        for (std::size_t t = 0; t < count; ++t) {
            yd[base + t * stride] = (xd[base + t * stride] - mu) * inv_std[u];
        }
    }
    if (y.requires_grad()) {
        tape.record({x}, y, [x = Tensor(x), y, inv_std = std::move(inv_std), units, count, stride, base_of]() mutable {
            // dx = inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
            auto g = y.grad();
            auto xh = y.data();
            auto gx = x.grad();
            const double cnt = static_cast<double>(count);
            for (std::size_t u = 0; u < units; ++u) {
                const std::size_t base = base_of(u);
                double gm = 0.0, gxm = 0.0;
                for (std::size_t t = 0; t < count; ++t) {
                    const std::size_t o = base + t * stride;
                    gm += g[o];
                    gxm += g[o] * xh[o];
                }
                gm /= cnt;
                gxm /= cnt;
                for (std::size_t t = 0; t < count; ++t) {
                    const std::size_t o = base + t * stride;
                    gx[o] += inv_std[u] * (g[o] - gm - xh[o] * gxm);
                }
            }
        });
    }
    return y;
}

Tensor standardize_fixed(Tape& tape, const Tensor& x, std::span<const double> mean,
                         std::span<const double> var, double eps) {
    require_rank(x, 2, "standardize_fixed");
    require_finite(x, "standardize_fixed");
    const std::size_t m = x.rows(), n = x.cols();
    if (mean.size() != n || var.size() != n) {
        throw std::invalid_argument("standardize_fixed: statistics length does not match width " +
                                    std::to_string(n));
    }
    std::vector<double> inv_std(n);
    for (std::size_t j = 0; j < n; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    Tensor y = Tensor::zeros({m, n}, x.requires_grad());
    auto xd = x.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            yd[i * n + j] = (xd[i * n + j] - mean[j]) * inv_std[j];
        }
    }
    if (y.requires_grad()) {
        tape.record({x}, y, [x = Tensor(x), y, inv_std = std::move(inv_std), m, n]() mutable {
            auto g = y.grad();
            auto gx = x.grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * inv_std[j];
            }
        });
    }
    return y;
}

Tensor scale_shift(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    require_rank(x, 2, "scale_shift");
    require_rank(gamma, 1, "scale_shift");
    require_same_shape(gamma, beta, "scale_shift");
    if (gamma.dim(0) != x.cols()) {
        throw std::invalid_argument("scale_shift: affine width " + shape_str(gamma.shape()) +
                                    " does not match " + shape_str(x.shape()));
    }
    require_finite(x, "scale_shift");
    require_finite(gamma, "scale_shift");
    require_finite(beta, "scale_shift");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor y = Tensor::zeros({m, n}, any_grad({&x, &gamma, &beta}));
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            yd[i * n + j] = xd[i * n + j] * gd[j] + bd[j];
        }
    }
    if (y.requires_grad()) {
        tape.record({x, gamma, beta}, y, [x = Tensor(x), gamma = Tensor(gamma), beta = Tensor(beta), y, m, n]() mutable {
            auto g = y.grad();
            auto xd = x.data();
            auto gd = gamma.data();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double gy = g[i * n + j];
                    if (x.requires_grad()) x.grad()[i * n + j] += gy * gd[j];
                    if (gamma.requires_grad()) gamma.grad()[j] += gy * xd[i * n + j];
                    if (beta.requires_grad()) beta.grad()[j] += gy;
                }
            }
        });
    }
    return y;
}

}  // namespace ops

std::vector<double> softmax_values(std::span<const double> logits, std::size_t rows, std::size_t cols) {
    if (logits.size() != rows * cols) {
        throw std::invalid_argument("softmax_values: size mismatch");
    }
    std::vector<double> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = logits.data() + i * cols;
        const double mx = *std::max_element(row, row + cols);
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = std::exp(row[j] - lse);
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& x) {
    if (x.rank() != 2) {
        throw std::invalid_argument("argmax_rows: expected a matrix, got " + shape_str(x.shape()));
    }
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<int> out(m);
    auto d = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        out[i] = static_cast<int>(std::max_element(d.begin() + i * n, d.begin() + (i + 1) * n) -
                                  (d.begin() + i * n));
    }
    return out;
}

double finite_diff_check(const std::function<Tensor(Tape&)>& loss_fn, std::span<Tensor> params,
                         double step) {
    if (!(step > 0.0)) {
        throw std::invalid_argument("finite_diff_check: step must be positive");
    }
    auto eval = [&]() {
        Tape tape;
        return loss_fn(tape).item();
    };
    if (eval() != eval()) {
        throw std::runtime_error("finite_diff_check: loss function is not deterministic");
    }

    for (Tensor& p : params) p.zero_grad();
    {
        Tape tape;
        Tensor root = loss_fn(tape);
        if (root.requires_grad()) tape.backward(root);
    }
    std::vector<std::vector<double>> analytic;
    for (Tensor& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

    double worst = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto values = params[t].data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = eval();
            values[i] = saved - step;
            const double down = eval();
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[t][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    for (Tensor& p : params) p.zero_grad();
    return worst;
}

}  // namespace wildtta
