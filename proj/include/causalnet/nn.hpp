#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "causalnet/rng.hpp"

namespace causalnet::nn {

// Row-major dense tensor. The leading dimension is the batch dimension for
// all layer operations.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        values.assign(numel_of(shape), 0.0);
    }
    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }
    std::size_t numel() const { return values.size(); }
};

enum class Activation { relu, elu, tanh, sigmoid, linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

enum class LayerKind {
    conv1d,
    conv1d_transpose,
    dense,
    avg_pool_time,  // mean over all time positions -> one vector per sample
    avg_pool2,      // halves the time axis by averaging adjacent positions
    upsample,       // nearest-neighbor upsampling to an explicit output length
    activation,
    dropout,
    flatten,
};

std::string to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    // conv1d / conv1d_transpose
    std::size_t window = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    // dense
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    double l1_coefficient = 0.0;
    // conv/dense
    bool has_bias = true;
    // activation
    Activation act = Activation::linear;
    // dropout
    double rate = 0.0;
    // upsample
    std::size_t output_length = 0;

    static LayerSpec Conv1d(std::size_t window, std::size_t in_ch, std::size_t out_ch,
                            bool bias = true);
    static LayerSpec Conv1dTranspose(std::size_t window, std::size_t in_ch, std::size_t out_ch,
                                     bool bias = true);
    static LayerSpec Dense(std::size_t in, std::size_t out, bool bias = true, double l1 = 0.0);
    static LayerSpec AvgPoolTime();
    static LayerSpec AvgPool2();
    static LayerSpec Upsample(std::size_t output_length);
    static LayerSpec Act(Activation a);
    static LayerSpec Dropout(double rate);
    static LayerSpec Flatten();
};

enum class Combiner { none, dot, subtract };

std::string to_string(Combiner c);
Combiner combiner_from_string(const std::string& s);

// Architecture descriptor: a flat layer list. For Siamese models the first
// branch_depth layers form the shared branch applied to each input; the
// remaining layers are the head applied after the combiner. For plain
// sequential models combiner is none and branch_depth equals layers.size().
struct ModelSpec {
    std::vector<LayerSpec> layers;
    Combiner combiner = Combiner::none;
    std::size_t branch_depth = 0;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Weights plus descriptor; parameters are ordered by layer.
struct ModelWeights {
    ModelSpec spec;
    std::vector<NamedTensor> params;

    static ModelWeights init(const ModelSpec& spec, std::uint64_t seed);
    std::size_t total_parameters() const;
};

// Cached activations from a forward pass, consumed by backward().
struct ForwardCache;

struct ForwardResult {
    Tensor output;
    std::shared_ptr<ForwardCache> cache;
};

// Runs the model on one input (sequential) or two inputs (Siamese). Dropout
// is active only when training; the seed makes it reproducible.
ForwardResult forward(const ModelWeights& weights, const std::vector<Tensor>& inputs,
                      bool training, std::uint64_t seed);

// Reverse-mode gradients of the loss w.r.t. every parameter, including the
// L1 subgradient of regularized dense layers. loss_grad is d(loss)/d(output).
std::vector<Tensor> backward(const ModelWeights& weights, const ForwardCache& cache,
                             const Tensor& loss_grad);

// Sum of l1_coefficient * sum(|w|) over regularized layers; add to the loss.
double l1_penalty(const ModelWeights& weights);

// Combiner primitives, exposed for direct testing.
Tensor combine_forward(Combiner c, const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> combine_backward(Combiner c, const Tensor& a, const Tensor& b,
                                           const Tensor& gout);

struct AdamState {
    std::size_t step = 0;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<double> first_moment;
    std::vector<double> second_moment;

    static AdamState init(const ModelWeights& weights, double lr = 0.001);
};

void adam_step(AdamState& state, ModelWeights& weights, const std::vector<Tensor>& grads);

std::string save_adam_state(const AdamState& state);
AdamState load_adam_state(const std::string& json_text);

enum class LossKind { bce, mse };

struct LossResult {
    double value = 0.0;
    Tensor grad;
};

LossResult loss(LossKind kind, const Tensor& predictions, const std::vector<double>& labels);

void save_model(const ModelWeights& weights, const std::string& path);
ModelWeights load_model(const std::string& path);
std::string model_to_json(const ModelWeights& weights);
ModelWeights model_from_json(const std::string& json_text);

}  // namespace causalnet::nn
