#pragma once

// MLP classifiers built from Linear -> Norm -> ReLU blocks with a final Linear
// head. The norm layers carry the affine parameters that test-time adaptation
// updates; everything else stays fixed after source training.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wildtta/dataset.hpp"
#include "wildtta/tensor.hpp"

namespace wildtta {

inline constexpr double kNormEpsilon = 1e-5;

struct NormKind {
    enum class Type { BatchTest, Group, Layer };

    Type type = Type::Layer;
    std::size_t groups = 1;  // only meaningful for Group

    static NormKind batch_test() { return {Type::BatchTest, 1}; }
    static NormKind group(std::size_t g) { return {Type::Group, g}; }
    static NormKind layer() { return {Type::Layer, 1}; }

    // "bn", "gn", "ln"; parse also accepts "gn:<groups>".
    std::string name() const;
    static NormKind parse(std::string_view text, std::size_t default_groups = 8);

    friend bool operator==(const NormKind&, const NormKind&) = default;
};

// TrainBatch and TestBatch both use the statistics of the batch at hand; they are
// kept distinct so call sites say which protocol they follow. Running uses the
// statistics stored at the end of source training and exists only for BatchTest.
enum class NormMode { TrainBatch, TestBatch, Running };

struct AffineParams {
    Tensor gamma;
    Tensor beta;

    static AffineParams identity(std::size_t width);
};

struct NormLayer {
    NormKind kind;
    AffineParams affine;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    bool frozen = false;

    std::size_t width() const { return affine.gamma.numel(); }
};

struct LinearLayer {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
};

Tensor norm_forward(Tape& tape, const Tensor& x, const NormLayer& layer, NormMode mode);
Tensor linear_forward(Tape& tape, const Tensor& x, const LinearLayer& layer);

struct ModelConfig {
    std::size_t input_dim = 32;
    std::size_t classes = 10;
    std::vector<std::size_t> hidden{64, 64, 64};
    NormKind norm = NormKind::group(8);
    // Number of deepest norm layers excluded from adaptation.
    std::size_t freeze_top = 1;
};

enum class GradMode {
    None,   // nothing records
    Adapt,  // only affine parameters of non-frozen norm layers
    Train,  // every parameter
};

class Model {
public:
    Model() = default;

    // He-normal weights, zero biases, identity affine.
    static Model create(const ModelConfig& config, std::uint64_t seed);

    Tensor forward(Tape& tape, const Tensor& batch, NormMode mode) const;

    // gamma/beta of each non-frozen norm layer, in layer order.
    std::vector<Tensor> trainable_params() const;
    std::vector<Tensor> all_params() const;
    void set_grad_mode(GradMode mode);

    // Deep copy; shares no storage with *this.
    Model clone() const;

    const ModelConfig& config() const noexcept { return config_; }
    std::size_t classes() const noexcept { return config_.classes; }
    std::size_t input_dim() const noexcept { return config_.input_dim; }
    const NormKind& norm_kind() const noexcept { return config_.norm; }
    std::vector<LinearLayer>& linears() noexcept { return linears_; }
    const std::vector<LinearLayer>& linears() const noexcept { return linears_; }
    std::vector<NormLayer>& norms() noexcept { return norms_; }
    const std::vector<NormLayer>& norms() const noexcept { return norms_; }

    void set_frozen(std::vector<bool> mask);
    bool has_running_stats() const;

private:
    ModelConfig config_;
    std::vector<LinearLayer> linears_;
    std::vector<NormLayer> norms_;

    friend Model load_checkpoint(const std::filesystem::path& path);
};

// The mode an evaluation or adaptation pass should use for this model's norm kind:
// BatchTest models adapt on test-batch statistics and are evaluated without
// adaptation on stored statistics; GN/LN are per-sample either way.
NormMode inference_mode(const Model& model, bool adapting);

// Predicted classes for a batch without recording gradients.
std::vector<int> predict(const Model& model, const Tensor& batch, NormMode mode);
double accuracy(const Model& model, const Dataset& data, NormMode mode);

class PretrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PretrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double min_accuracy = 0.95;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    double train_accuracy = 0.0;
    double final_loss = 0.0;
};

// SGD with momentum on cross-entropy over every parameter, then records per-feature
// running statistics for BatchTest layers with one full pass over `train`.
// Throws PretrainError when the final training accuracy is below min_accuracy.
PretrainResult pretrain(Model& model, const Dataset& train, const PretrainConfig& config);
void record_running_stats(Model& model, const Dataset& data);

// Text checkpoint with hex-float values; load(save(m)) reproduces m bit-exactly.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace wildtta
