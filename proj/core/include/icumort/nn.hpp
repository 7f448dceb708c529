#pragma once

#include "icumort/jsonio.hpp"
#include "icumort/rng.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace icumort::nn {

struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
    double* row(std::size_t r) { return a.data() + r * cols; }
    const double* row(std::size_t r) const { return a.data() + r * cols; }
};

// Uniform on (-L, L) with L = sqrt(6 / (fan_in + fan_out)). W has shape
// fan_out x fan_in (row per output unit); deterministic per seed.
Matrix xavier_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

enum class Activation { Sigmoid, Relu, Identity };
enum class Pooling { Concat, Add };

struct LayerSpec {
    std::size_t in = 0, out = 0;
    Activation act = Activation::Relu;
    bool batch_norm = false;
    double dropout = 0.0;
};

// Per-modality encoder shape. The static block is two layers (32, 16) with
// sigmoid activations; other blocks default to (input/2, 32) with rectifier
// activations. Batch normalization and dropout sit between the layers.
struct EncoderSpec {
    std::string name;
    std::size_t input_width = 0;
    std::vector<LayerSpec> layers;

    static EncoderSpec static_block(const std::string& name, std::size_t input_width,
                                    double dropout);
    static EncoderSpec dynamic_block(const std::string& name, std::size_t input_width,
                                     double dropout);
};

struct DenseLayer {
    Matrix w;               // out x in
    std::vector<double> b;  // out
    Activation act = Activation::Relu;
    double dropout = 0.0;
    bool batch_norm = false;
    std::vector<double> bn_gamma, bn_beta;
    std::vector<double> bn_run_mean, bn_run_var;
};

struct Encoder {
    std::string name;
    std::vector<DenseLayer> layers;
};

// Fused feedforward classifier: one encoder per modality block, pooled by
// concatenation or element-wise addition, then a (128, 32) rectifier head and
// a sigmoid output unit.
struct FusedNet {
    std::vector<Encoder> blocks;
    Pooling pooling = Pooling::Concat;
    Encoder head;
    DenseLayer out; // final linear, 1 unit

    std::size_t block_index(const std::string& name) const;
    std::size_t input_width() const; // sum over blocks

    json to_json() const;
    static FusedNet from_json(const json& j);
};

struct NetConfig {
    std::vector<EncoderSpec> blocks;
    Pooling pooling = Pooling::Concat;
    std::vector<std::size_t> head_widths = {128, 32};
    double dropout = 0.2;
    bool head_batch_norm = false;
};

FusedNet build_net(const NetConfig& cfg, std::uint64_t seed);

// Canonical parameter walk: same order for Adam state, serialization,
// finite-difference checks and freezing. `block` is the encoder index, -1
// for head/output parameters.
void visit_params(FusedNet& net,
                  const std::function<void(int block, std::vector<double>&)>& fn);
void visit_params_const(const FusedNet& net,
                        const std::function<void(int block, const std::vector<double>&)>& fn);
std::vector<double> flatten_params(const FusedNet& net);
void load_params(FusedNet& net, const std::vector<double>& flat);

enum class Mode { Train, Eval };

struct ForwardCache; // opaque to callers; holds per-layer activations

struct Batch {
    std::vector<Matrix> block_inputs; // one per block, same row count
    std::vector<double> labels;       // empty for pure inference

    std::size_t size() const { return block_inputs.empty() ? 0 : block_inputs[0].rows; }
};

// Probabilities in (0,1). Train mode uses batch statistics and dropout and
// fills the cache for backward; eval mode uses running statistics, no
// dropout, and is deterministic. Throws data_error when an input width does
// not match the block it feeds.
std::vector<double> forward(const FusedNet& net, const Batch& batch, Mode mode,
                            ForwardCache* cache, Rng* dropout_rng);

struct ClassWeights {
    double w_neg = 1.0, w_pos = 1.0;

    // w_c = N / (2 N_c): inverse class frequency, normalized to mean 1
    static ClassWeights balanced(const std::vector<double>& labels);
};

struct Gradients {
    std::vector<double> flat; // same layout as flatten_params
};

// Weighted binary cross-entropy plus (wd/2)||theta||^2; analytic gradients
// for every parameter. Matches central finite differences in double
// precision. Dropout is driven by the provided rng (pass nullptr for none).
double loss_and_grad(FusedNet& net, const Batch& batch, const ClassWeights& weights,
                     double weight_decay, Mode mode, Rng* dropout_rng, Gradients& grads,
                     std::vector<Matrix>* input_grads = nullptr);

// Per-example sampling weights proportional to inverse class frequency, so a
// resampled batch is balanced in expectation. Throws on a single-class set.
std::vector<double> make_sampler(const std::vector<double>& labels);

struct TrainConfig {
    double learning_rate = 5e-4;
    double weight_decay = 0.01;
    int lr_step_epochs = 10;     // x0.1 every 10 epochs
    double lr_step_factor = 0.1;
    std::size_t batch_size = 16;
    int patience = 20;
    int max_epochs = 200;
    std::uint64_t seed = 1;
    std::string monitor = "auroc"; // or "f1"
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double dropout = 0.2;

    static TrainConfig from_json(const json& j);
    json to_json() const;
};

double lr_at_epoch(const TrainConfig& cfg, int epoch); // epoch is 0-based

struct EpochLog {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double val_metric = 0;
    bool improved = false;
};

struct TrainResult {
    FusedNet best_net;
    double best_val_metric = 0;
    int best_epoch = -1;
    std::vector<EpochLog> log;

    json log_to_json() const;
};

// The full recipe: weighted random sampling, weighted cross-entropy, Adam
// (beta1 0.9, beta2 0.999, eps 1e-8) with the step schedule, weight decay
// applied as a direct multiplicative shrink, early stopping on the validation
// monitor with checkpointing of the best state. `frozen_blocks` lists encoder
// names whose parameters must not move (staged fusion training).
TrainResult train(const NetConfig& net_cfg, const TrainConfig& cfg, const Batch& train_set,
                  const Batch& val_set, const std::vector<std::string>& frozen_blocks = {},
                  const FusedNet* init = nullptr);

enum class AttributionOutput { Probability, Logit };

// Integrated Gradients with a midpoint Riemann rule:
//   attr_i = (x_i - b_i) * mean_k dF/dx_i at b + (k-1/2)/steps * (x-b).
// Returns one attribution per input feature, blocks concatenated.
std::vector<double> integrated_gradients(const FusedNet& net, const Batch& x,
                                         const Batch& baseline, int steps,
                                         AttributionOutput output = AttributionOutput::Probability);

std::vector<double> predict(const FusedNet& net, const Batch& batch);

} // namespace icumort::nn
