#pragma once

// Online test-time adaptation of norm-layer affine parameters.
//
// Every step predicts on the incoming batch first and adapts afterwards, so the
// reported predictions are never influenced by the batch they belong to.
//
//   tent  - minimize the mean prediction entropy of the batch
//   clip  - tent with the gradient clipped by value or by global norm
//   sar   - keep only samples with entropy below E0, take the entropy gradient at
//           weights perturbed by rho * g / |g| (sharpness-aware step), and reset
//           the trainable parameters when the moving-average entropy collapses

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "wildtta/models.hpp"

namespace wildtta {

enum class Method { NoAdapt, Tent, Sar, ClipValue, ClipNorm };

std::string_view method_name(Method m) noexcept;
Method parse_method(std::string_view name);

struct AdaptConfig {
    Method method = Method::Sar;
    // E0; unset means 0.4 * ln(C).
    std::optional<double> entropy_filter;
    double rho = 0.05;
    double lr = 0.00025;
    double momentum = 0.9;
    // e0
    double recovery_threshold = 0.2;
    double ema = 0.9;
    bool recovery = true;
    std::optional<double> clip_value;
    std::optional<double> clip_norm;

    double filter_threshold(std::size_t classes) const;
    // Throws std::invalid_argument on out-of-range values.
    void validate(std::size_t classes) const;
};

// Per-tensor values in trainable_params() order.
using ParamValues = std::vector<std::vector<double>>;

struct AdaptState {
    ParamValues theta0;
    ParamValues momentum;
    std::optional<double> entropy_ema;  // e_m; unset until the first executed update
    std::size_t update_count = 0;
    std::size_t backward_count = 0;
    std::size_t recovery_count = 0;
    std::size_t skipped_steps = 0;       // S1 empty
    std::size_t zero_grad_events = 0;    // rho > 0 but first-pass gradient exactly zero
    std::size_t empty_second_pass = 0;   // S1 nonempty, S2 empty

    static AdaptState init(const Model& model);
};

struct StepOutcome {
    std::vector<int> predictions;
    std::vector<double> entropies;
    std::size_t batch_size = 0;
    std::size_t selected = 0;
    std::size_t selected2 = 0;
    double mean_entropy = 0.0;
    double grad_norm = 0.0;
    bool recovered = false;
    bool skipped = false;
};

// Per-row Shannon entropy of probability rows; 0 log 0 is taken as 0.
std::vector<double> entropy(std::span<const double> probs, std::size_t rows, std::size_t cols);

// selected[i] iff entropies[i] < threshold.
std::vector<bool> reliable_mask(std::span<const double> entropies, double threshold);

struct Perturbation {
    ParamValues epsilon;
    // The gradient was all zeros with rho > 0; epsilon is zero.
    bool degenerate = false;

    double norm() const;
};

// rho * g / |g|_2 with one norm over the concatenation of every tensor.
Perturbation sam_perturbation(const ParamValues& grads, double rho);

double global_norm(const ParamValues& values);
ParamValues snapshot(std::span<const Tensor> params);
void restore(std::span<Tensor> params, const ParamValues& values);

StepOutcome noadapt_step(const Model& model, const Tensor& batch);
StepOutcome tent_step(Model& model, const Tensor& batch, const AdaptConfig& cfg, AdaptState& state);
StepOutcome sar_step(Model& model, const Tensor& batch, const AdaptConfig& cfg, AdaptState& state);

enum class ClipMode { ByValue, ByNorm };
StepOutcome clip_step(Model& model, const Tensor& batch, const AdaptConfig& cfg, AdaptState& state, ClipMode mode);

// Dispatches on cfg.method.
StepOutcome adapt_step(Model& model, const Tensor& batch, const AdaptConfig& cfg, AdaptState& state);

// Restores theta0 and clears momentum and e_m when e_m < e0.
bool maybe_recover(Model& model, const AdaptConfig& cfg, AdaptState& state);

enum class LrFamily { ResnetLike, VitLike };

// Batch-size rescaling of the base learning rate:
//   resnet-like: base / 32 * B below 32, base otherwise
//   vit-like:    base / 64 * B, capped at base
double lr_for_batch(double base_lr, std::size_t batch_size, LrFamily family);
LrFamily parse_lr_family(std::string_view name);

}  // namespace wildtta
