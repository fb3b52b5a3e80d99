#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bnfk/data.hpp"
#include "bnfk/features.hpp"
#include "bnfk/metrics.hpp"
#include "bnfk/model.hpp"

namespace bnfk {

// Deterministic RNG stream for augmentation and shuffling.
struct TrainRng {
    std::uint64_t s;
    std::uint64_t next();
    double uniform();  // [0,1)
    double uniform(double lo, double hi);
};

struct TrainConfig {
    double lr_init = 1e-4;
    double lr_final = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-2;
    std::size_t batch_size = 32;  // desk default; 128 at paper scale
    std::size_t max_epochs = 20;
    bool freeze_backbone = false;
    std::uint64_t seed = 0;
    FeatureConfig channels;

    // augmentation
    bool flips = true;
    bool rotations = true;
    double color_jitter = 0.2;  // factor range [1-j, 1+j]

    // preprocessing geometry; 252/224 per the training recipe, scalable for
    // desk-sized inputs
    std::size_t resize_longest = 252;
    std::size_t crop_size = 224;

    // stop once validation reaches both targets (0 disables)
    double target_val_acc = 0.0;
    double target_val_auc = 0.0;

    void validate() const;
};

// Random hflip/vflip (p=0.5 each), rotation 0/90/270 (none p=0.5, each
// rotation p=0.25), per-channel color jitter in [1-j, 1+j], clamped.
Tensor augment(const Tensor& image, const TrainConfig& cfg, TrainRng& rng);

enum class PreprocessMode { Train, Eval };

// Bilinear resize so max(h,w) == resize_longest, edge-replicate any side
// shorter than crop, then center (eval) or uniform random (train) crop.
Tensor preprocess(const Tensor& image, PreprocessMode mode, TrainRng& rng,
                  std::size_t resize_longest = 252, std::size_t crop = 224);

Tensor bilinear_resize(const Tensor& image, std::size_t out_h, std::size_t out_w);

// ImageNet mean/std on the RGB planes; (x - 0.5)/0.5 on augmentation planes.
Tensor normalize_stack(const Tensor& stack);
inline Tensor normalize(const Tensor& rgb) { return normalize_stack(rgb); }

// Stable binary cross-entropy: max(z,0) - z*y + log(1 + exp(-|z|)).
double bce_loss(double logit, int label);

// Clipped-identity pass-through: grad = upstream where |latent| <= 1, else 0.
Tensor ste_backward(const Tensor& upstream_grad, const Tensor& latent);

double lr_schedule(double epoch_progress, const TrainConfig& cfg);

// Gradients mirroring ModelState's parameter layout.
struct ParamGrads {
    Tensor adapter_w;
    std::vector<double> adapter_b;
    struct Block {
        Tensor latent;
        std::vector<double> gamma, beta;
        Tensor proj;
    };
    std::vector<Block> blocks;
    std::vector<double> head_w;
    double head_b = 0.0;

    static ParamGrads zeros_like(const ModelState& state);
    void accumulate(const ParamGrads& other, double scale);
};

// Differentiable surrogate: every sign (weights, activations, pooled
// features) replaced by the clipped identity on [-1,1]; alpha stays mean(|W|)
// and is differentiated through. surrogate_loss_and_grads returns the exact
// gradient of this loss, which is what finite-difference checks verify.
double surrogate_loss(const Tensor& stack, int label, const ModelState& state);
double surrogate_loss_and_grads(const Tensor& stack, int label, const ModelState& state,
                                ParamGrads& grads, bool backbone_grads);

// Training gradients: the forward pass is the real binary network (sign
// weights/activations/features, identical to model_forward), the backward
// pass substitutes the clipped-identity derivative at every sign. The
// optimized objective is therefore the deployed path's loss.
double ste_loss_and_grads(const Tensor& stack, int label, const ModelState& state,
                          ParamGrads& grads, bool backbone_grads);

struct OptimizerState {
    std::vector<double> m, v;  // flattened over all parameters
    long long step = 0;
};

class AdamW {
public:
    AdamW(const ModelState& state, const TrainConfig& cfg);
    // Throws on non-finite gradients. Honors freeze_backbone; decay is not
    // applied to gamma, beta, biases, or binary latent weights.
    void step(ModelState& state, const ParamGrads& grads, double lr);
    const OptimizerState& opt() const { return opt_; }

private:
    TrainConfig cfg_;
    OptimizerState opt_;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double val_acc = 0.0;
    double val_auc = 0.0;
};

struct TrainResult {
    ModelState best;       // best validation-accuracy checkpoint
    std::vector<EpochStats> epochs;
    std::vector<std::string> log_lines;  // JSONL
};

// Loaded-in-memory dataset split.
struct LoadedSplit {
    std::vector<Tensor> images;
    std::vector<int> labels;
};

LoadedSplit load_split(const std::vector<ManifestEntry>& entries);

TrainResult train_loop(const LoadedSplit& train_split, const LoadedSplit& val_split,
                       ModelState model, const TrainConfig& cfg,
                       const std::function<void(const std::string&)>& log_sink = {});

// Eval-path inference: preprocess, stack, normalize, bit-packed forward.
double predict_probability(const Tensor& image, const ModelState& state,
                           const TrainConfig& cfg);
EvalReport evaluate(const LoadedSplit& split, const ModelState& state,
                    const TrainConfig& cfg);

}  // namespace bnfk
