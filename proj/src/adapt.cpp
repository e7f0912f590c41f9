#include "wildtta/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "wildtta/kernels.hpp"

namespace wildtta {

std::string_view method_name(Method m) noexcept {
    switch (m) {
        case Method::NoAdapt:
            return "noadapt";
        case Method::Tent:
            return "tent";
        case Method::Sar:
            return "sar";
        case Method::ClipValue:
            return "clip_value";
        case Method::ClipNorm:
            return "clip_norm";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (Method m : {Method::NoAdapt, Method::Tent, Method::Sar, Method::ClipValue, Method::ClipNorm}) {
        if (method_name(m) == name) return m;
    }
    throw std::invalid_argument("unknown method '" + std::string(name) +
                                "' (expected noadapt, tent, sar, clip_value, clip_norm)");
}

double AdaptConfig::filter_threshold(std::size_t classes) const {
    return entropy_filter.value_or(0.4 * std::log(static_cast<double>(classes)));
}

void AdaptConfig::validate(std::size_t classes) const {
    const double e0 = filter_threshold(classes);
    const double max_entropy = std::log(static_cast<double>(classes));
    auto fail = [](const std::string& what) { throw std::invalid_argument("adapt config: " + what); };
    if (!(e0 > 0.0) || e0 > max_entropy) fail("entropy filter E0 must lie in (0, ln C]");
    if (!(rho >= 0.0) || !std::isfinite(rho)) fail("rho must be finite and >= 0");
    if (!(recovery_threshold >= 0.0)) fail("recovery threshold must be >= 0");
    if (!(ema >= 0.0 && ema < 1.0)) fail("ema must lie in [0, 1)");
    if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (method == Method::ClipValue && !clip_value) fail("clip_value method needs clip_value");
    if (method == Method::ClipNorm && !clip_norm) fail("clip_norm method needs clip_norm");
    if (clip_value && !(*clip_value > 0.0)) fail("clip_value must be positive");
    if (clip_norm && !(*clip_norm > 0.0)) fail("clip_norm must be positive");
}

// ---------------------------------------------------------------------------
// Building blocks

std::vector<double> entropy(std::span<const double> probs, std::size_t rows, std::size_t cols) {
    if (probs.size() != rows * cols || cols == 0) {
        throw std::invalid_argument("entropy: probability matrix size mismatch");
    }
    std::vector<double> out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        auto row = probs.subspan(i * cols, cols);
        double total = 0.0, e = 0.0;
        for (double p : row) {
            if (!(p >= 0.0) || !std::isfinite(p)) {
                throw std::invalid_argument("entropy: row " + std::to_string(i) + " has an invalid probability");
            }
            total += p;
            if (p > 0.0) e -= p * std::log(p);
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw std::invalid_argument("entropy: row " + std::to_string(i) + " does not sum to 1");
        }
        out[i] = std::max(e, 0.0);
    }
    return out;
}

std::vector<bool> reliable_mask(std::span<const double> entropies, double threshold) {
    std::vector<bool> mask(entropies.size());
    for (std::size_t i = 0; i < entropies.size(); ++i) mask[i] = entropies[i] < threshold;
    return mask;
}

double global_norm(const ParamValues& values) {
    double s = 0.0;
    for (const auto& v : values) s += kernels::sum_sq(v);
    return std::sqrt(s);
}

double Perturbation::norm() const { return global_norm(epsilon); }

Perturbation sam_perturbation(const ParamValues& grads, double rho) {
    if (!(rho >= 0.0)) {
        throw std::invalid_argument("sam_perturbation: rho must be >= 0");
    }
    Perturbation p;
    p.epsilon.reserve(grads.size());
    for (const auto& g : grads) p.epsilon.emplace_back(g.size(), 0.0);
    const double gn = global_norm(grads);
    if (rho == 0.0) return p;
    if (gn == 0.0) {
        p.degenerate = true;
        return p;
    }
    const double scale = rho / gn;
    for (std::size_t t = 0; t < grads.size(); ++t) {
        for (std::size_t i = 0; i < grads[t].size(); ++i) p.epsilon[t][i] = scale * grads[t][i];
    }
    return p;
}

ParamValues snapshot(std::span<const Tensor> params) {
    ParamValues out;
    out.reserve(params.size());
    for (const Tensor& p : params) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

void restore(std::span<Tensor> params, const ParamValues& values) {
    if (params.size() != values.size()) {
        throw std::invalid_argument("restore: parameter count mismatch");
    }
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t].numel() != values[t].size()) {
            throw std::invalid_argument("restore: parameter size mismatch");
        }
        std::copy(values[t].begin(), values[t].end(), params[t].data().begin());
    }
}

AdaptState AdaptState::init(const Model& model) {
    AdaptState s;
    const std::vector<Tensor> params = model.trainable_params();
    s.theta0 = snapshot(params);
    for (const Tensor& p : params) s.momentum.emplace_back(p.numel(), 0.0);
    return s;
}

namespace {

struct ForwardPass {
    Tape tape;
    Tensor entropies;
    std::vector<int> predictions;
};

ForwardPass forward_entropy(const Model& model, const Tensor& batch, NormMode mode) {
    ForwardPass f;
    Tensor logits = model.forward(f.tape, batch, mode);
    f.predictions = argmax_rows(logits);
    f.entropies = ops::entropy_rows(f.tape, logits);
    return f;
}

ParamValues collect_grads(std::span<const Tensor> params) {
    ParamValues out;
    out.reserve(params.size());
    for (const Tensor& p : params) out.emplace_back(p.grad().begin(), p.grad().end());
    return out;
}

// Backward of `loss` into zeroed trainable gradients; returns the gradients.
ParamValues gradients(Tape& tape, const Tensor& loss, std::vector<Tensor>& params) {
    for (Tensor& p : params) p.zero_grad();
    if (loss.requires_grad()) tape.backward(loss);
    return collect_grads(params);
}

// SGD with momentum (no dampening): v = mu * v + g; p -= lr * v.
void sgd_update(std::vector<Tensor>& params, const ParamValues& grads, const AdaptConfig& cfg, AdaptState& state) {
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto w = params[t].data();
        auto& v = state.momentum[t];
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = cfg.momentum * v[i] + grads[t][i];
            w[i] -= cfg.lr * v[i];
        }
    }
}

void check_batch(const Tensor& batch) {
    if (!batch.defined() || batch.rank() != 2 || batch.rows() == 0) {
        throw std::invalid_argument("adapt: empty batch");
    }
}

void check_state(const Model& model, const AdaptState& state) {
    if (state.theta0.size() != model.trainable_params().size()) {
        throw std::logic_error("adapt: state was initialized for a different set of trainable parameters");
    }
}

StepOutcome begin_outcome(const ForwardPass& f) {
    StepOutcome out;
    out.predictions = f.predictions;
    out.entropies.assign(f.entropies.data().begin(), f.entropies.data().end());
    out.batch_size = out.predictions.size();
    out.mean_entropy = kernels::sum(out.entropies) / static_cast<double>(out.batch_size);
    return out;
}

// Shared by tent and clip: one forward, mean entropy over the whole batch, one backward.
std::pair<StepOutcome, ParamValues> entropy_gradient(Model& model, const Tensor& batch,
                                                     std::vector<Tensor>& params) {
    ForwardPass f = forward_entropy(model, batch, inference_mode(model, true));
    StepOutcome out = begin_outcome(f);
    Tensor loss = ops::mean(f.tape, f.entropies);
    ParamValues g = gradients(f.tape, loss, params);
    out.grad_norm = global_norm(g);
    out.selected = out.selected2 = out.batch_size;
    return {std::move(out), std::move(g)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Steps

StepOutcome noadapt_step(const Model& model, const Tensor& batch) {
    check_batch(batch);
    return begin_outcome(forward_entropy(model, batch, inference_mode(model, false)));
}

StepOutcome tent_step(Model& model, const Tensor& batch, const AdaptConfig& cfg, AdaptState& state) {
    check_batch(batch);
    check_state(model, state);
    model.set_grad_mode(GradMode::Adapt);
    std::vector<Tensor> params = model.trainable_params();
    auto [out, g] = entropy_gradient(model, batch, params);
    sgd_update(params, g, cfg, state);
    ++state.update_count;
    ++state.backward_count;
    return out;
}

StepOutcome clip_step(Model& model, const Tensor& batch, const AdaptConfig& cfg, AdaptState& state,
                      ClipMode mode) {
    check_batch(batch);
    check_state(model, state);
    const std::optional<double>& delta = mode == ClipMode::ByValue ? cfg.clip_value : cfg.clip_norm;
    if (!delta) {
        throw std::invalid_argument(mode == ClipMode::ByValue ? "clip_step: clip_value is not configured"
                                                              : "clip_step: clip_norm is not configured");
    }
    model.set_grad_mode(GradMode::Adapt);
    std::vector<Tensor> params = model.trainable_params();
    auto [out, g] = entropy_gradient(model, batch, params);
    if (mode == ClipMode::ByValue) {
        for (auto& t : g)
            for (double& v : t) v = std::clamp(v, -*delta, *delta);
    } else if (out.grad_norm > *delta) {
        const double scale = *delta / out.grad_norm;
        for (auto& t : g)
            for (double& v : t) v *= scale;
    }
    sgd_update(params, g, cfg, state);
    ++state.update_count;
    ++state.backward_count;
    return out;
}

StepOutcome sar_step(Model& model, const Tensor& batch, const AdaptConfig& cfg, AdaptState& state) {
    check_batch(batch);
    check_state(model, state);
    model.set_grad_mode(GradMode::Adapt);
    const NormMode mode = inference_mode(model, true);
    const double threshold = cfg.filter_threshold(model.classes());
    std::vector<Tensor> params = model.trainable_params();

    ForwardPass first = forward_entropy(model, batch, mode);
    StepOutcome out = begin_outcome(first);

    std::vector<std::size_t> s1;
    const std::vector<bool> mask1 = reliable_mask(out.entropies, threshold);
    for (std::size_t i = 0; i < mask1.size(); ++i)
        if (mask1[i]) s1.push_back(i);
    out.selected = s1.size();
    if (s1.empty()) {
        out.skipped = true;
        ++state.skipped_steps;
        return out;
    }

    Tensor loss1 = ops::mean(first.tape, ops::gather(first.tape, first.entropies, s1));
    const ParamValues g = gradients(first.tape, loss1, params);
    out.grad_norm = global_norm(g);

    const Perturbation eps = sam_perturbation(g, cfg.rho);
    if (eps.degenerate) ++state.zero_grad_events;
    const ParamValues origin = snapshot(params);
    for (std::size_t t = 0; t < params.size(); ++t) {
        kernels::axpy(1.0, eps.epsilon[t], params[t].data());
    }

    ForwardPass second = forward_entropy(model, batch, mode);
    auto ent2 = second.entropies.data();
    std::vector<std::size_t> s2;
    for (std::size_t i : s1)
        if (ent2[i] < threshold) s2.push_back(i);
    out.selected2 = s2.size();
    if (s2.empty()) {
        restore(params, origin);
        for (Tensor& p : params) p.zero_grad();
        out.skipped = true;
        ++state.empty_second_pass;
        return out;
    }

    Tensor sel2 = ops::gather(second.tape, second.entropies, s2);
    Tensor loss2 = ops::mean(second.tape, sel2);
    const ParamValues g_sa = gradients(second.tape, loss2, params);
    // Return to the unperturbed point from the saved copy so the round trip is exact.
    restore(params, origin);

    sgd_update(params, g_sa, cfg, state);
    ++state.update_count;
    state.backward_count += 2;

    const double perturbed_mean = loss2.item();
    state.entropy_ema = state.entropy_ema ? cfg.ema * *state.entropy_ema + (1.0 - cfg.ema) * perturbed_mean
                                          : perturbed_mean;
    if (cfg.recovery) out.recovered = maybe_recover(model, cfg, state);
    return out;
}

StepOutcome adapt_step(Model& model, const Tensor& batch, const AdaptConfig& cfg, AdaptState& state) {
    switch (cfg.method) {
        case Method::NoAdapt:
            return noadapt_step(model, batch);
        case Method::Tent:
            return tent_step(model, batch, cfg, state);
        case Method::Sar:
            return sar_step(model, batch, cfg, state);
        case Method::ClipValue:
            return clip_step(model, batch, cfg, state, ClipMode::ByValue);
        case Method::ClipNorm:
            return clip_step(model, batch, cfg, state, ClipMode::ByNorm);
    }
    throw std::invalid_argument("adapt_step: unknown method");
}

bool maybe_recover(Model& model, const AdaptConfig& cfg, AdaptState& state) {
    if (!state.entropy_ema || !(*state.entropy_ema < cfg.recovery_threshold)) {
        return false;
    }
    std::vector<Tensor> params = model.trainable_params();
    restore(params, state.theta0);
    for (auto& v : state.momentum) std::fill(v.begin(), v.end(), 0.0);
    state.entropy_ema.reset();
    ++state.recovery_count;
    return true;
}

double lr_for_batch(double base_lr, std::size_t batch_size, LrFamily family) {
    if (batch_size == 0) {
        throw std::invalid_argument("lr_for_batch: batch size must be >= 1");
    }
    const double b = static_cast<double>(batch_size);
    switch (family) {
        case LrFamily::ResnetLike:
            return batch_size < 32 ? base_lr / 32.0 * b : base_lr;
        case LrFamily::VitLike:
            return batch_size < 64 ? base_lr / 64.0 * b : base_lr;
    }
    return base_lr;
}

LrFamily parse_lr_family(std::string_view name) {
    if (name == "resnet" || name == "resnet-like") return LrFamily::ResnetLike;
    if (name == "vit" || name == "vit-like") return LrFamily::VitLike;
    throw std::invalid_argument("unknown lr family '" + std::string(name) + "' (expected resnet, vit)");
}

}  // namespace wildtta
