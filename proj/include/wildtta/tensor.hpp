#pragma once

// Minimal define-by-run reverse-mode autodiff over dense double arrays.
//
// A Tensor is a shared handle: copies alias the same storage. Use clone() for
// an independent deep copy. Operations live in wildtta::ops and record onto an
// explicit Tape whenever at least one input requires a gradient.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace wildtta {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    // Size of dimension `axis`; rows()/cols() are the 2-D conveniences.
    std::size_t dim(std::size_t axis) const;
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }

    std::span<double> data();
    std::span<const double> data() const;
    std::span<double> grad();
    std::span<const double> grad() const;
    double item() const;
    double operator[](std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    void set_requires_grad(bool on);
    void zero_grad();

    // Independent copy of the values (and gradient buffer), not attached to any tape.
    Tensor clone() const;

    const void* id() const noexcept { return impl_.get(); }
    friend bool same_tensor(const Tensor& a, const Tensor& b) noexcept { return a.impl_ == b.impl_; }

private:
    struct Storage {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    explicit Tensor(std::shared_ptr<Storage> impl) : impl_(std::move(impl)) {}
    Storage& storage() const;

    std::shared_ptr<Storage> impl_;
};

// Ordered record of the operations of one forward pass.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    // Records `output = op(inputs)`. Inputs produced by earlier records must already be on the tape.
    void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

    // Accumulates d(root)/d(t) into t.grad() for every leaf t with requires_grad.
    // Gradients of intermediate results are recomputed from scratch on each call, so
    // two calls accumulate exactly twice the leaf gradients of one call.
    void backward(const Tensor& root);

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    void clear() noexcept { entries_.clear(); }

private:
    struct Entry {
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };
    std::vector<Entry> entries_;
};

namespace ops {

// c = a[m x k] * b[k x n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
// x[m x n] + bias[n] broadcast over rows.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);
// Per-row reductions over a [m x n] matrix; results have shape [m].
Tensor logsumexp_rows(Tape& tape, const Tensor& x);
Tensor log_softmax_rows(Tape& tape, const Tensor& x);
Tensor softmax_rows(Tape& tape, const Tensor& x);
// Shannon entropy of softmax(x) per row, evaluated through log-sum-exp.
Tensor entropy_rows(Tape& tape, const Tensor& logits);
// Mean cross-entropy of softmax(logits) against integer labels.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);
// Elements x[indices[i]] of a rank-1 tensor.
Tensor gather(Tape& tape, const Tensor& x, std::span<const std::size_t> indices);

// Standardization of a [m x n] matrix to zero mean / unit variance (biased
// variance, eps under the square root). `per_feature` normalizes each column over
// the rows; otherwise each row is split into `groups` contiguous chunks that are
// normalized independently.
Tensor standardize(Tape& tape, const Tensor& x, bool per_feature, std::size_t groups, double eps);
// (x - mean[j]) / sqrt(var[j] + eps) with fixed column statistics.
Tensor standardize_fixed(Tape& tape, const Tensor& x, std::span<const double> mean,
                         std::span<const double> var, double eps);
// x[m x n] * gamma[n] + beta[n]
Tensor scale_shift(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta);

}  // namespace ops

// Row-wise softmax values without recording; used when only probabilities are needed.
std::vector<double> softmax_values(std::span<const double> logits, std::size_t rows, std::size_t cols);
std::vector<int> argmax_rows(const Tensor& x);

// Maximum relative error between backward() gradients of `loss_fn` and central
// differences with the given step, over every entry of `params`:
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// `loss_fn` must build its graph on the supplied tape and return a scalar.
// Throws std::runtime_error when two identical evaluations disagree.
double finite_diff_check(const std::function<Tensor(Tape&)>& loss_fn, std::span<Tensor> params,
                         double step);

}  // namespace wildtta
