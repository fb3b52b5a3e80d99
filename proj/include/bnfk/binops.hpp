#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnfk/tensor.hpp"

namespace bnfk {

struct ConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t out_h(std::size_t h) const;
    std::size_t out_w(std::size_t w) const;
    void validate(const std::vector<std::size_t>& in_shape) const;
};

// Per-output-channel positive scale reconstructing binarized magnitude.
struct ScalingFactor {
    std::vector<double> alpha;
};

// Full-precision cross-correlation (deep-learning convention), zero padding.
// x: [C,H,W], w: [O,C,Kh,Kw] -> [O,H',W'].
Tensor conv2d_ref(const Tensor& x, const Tensor& w, const ConvSpec& spec);

// alpha_o = mean(|w_o|), the L2-optimal scalar for sign-binarized weights.
ScalingFactor compute_alpha(const Tensor& w);

// Packed kernel rows for binary_conv2d: one BitTensor row per output channel,
// row length C*Kh*Kw. Pack once per layer, reuse across forwards.
BitTensor pack_conv_weights(const Tensor& w);
BitTensor pack_conv_weights_signed(const Tensor& w);  // sign-quantizes first

// Binary convolution: sign-binarize activations (zero padding binarizes
// to +1), integer XNOR/POPCOUNT cross-correlation, then per-channel alpha.
// w_b must come from pack_conv_weights* above ([O, C*Kh*Kw] rows).
Tensor binary_conv2d(const Tensor& x, const BitTensor& w_b,
                     const ScalingFactor& alpha, const ConvSpec& spec);

// Same arithmetic on a pre-binarized activation image (planes packed per row).
// Used by the inference path to avoid re-binarizing between blocks.
class PackedImage {
public:
    PackedImage() = default;
    PackedImage(const Tensor& x, std::size_t padding);  // binarize + pad with +1
    std::size_t channels() const { return c_; }
    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    const std::uint64_t* row(std::size_t c, std::size_t y) const {
        return bits_.data() + (c * h_ + y) * words_per_row_;
    }
    std::size_t words_per_row() const { return words_per_row_; }

private:
    std::size_t c_ = 0, h_ = 0, w_ = 0, words_per_row_ = 0;
    std::vector<std::uint64_t> bits_;
};

Tensor binary_conv2d_packed(const PackedImage& img, const BitTensor& w_b,
                            const ScalingFactor& alpha, const ConvSpec& spec,
                            std::size_t logical_h, std::size_t logical_w);

struct BenchRow {
    ConvSpec spec;
    std::size_t input_h = 0, input_w = 0;
    long long binary_ns = 0;
    long long float_ns = 0;
    double speedup = 0.0;
    std::string to_json() const;
};

// Median wall-clock of binary vs float conv on identical shapes. Checks the
// binary output against the composed reference oracle before timing.
BenchRow bench_conv(const ConvSpec& spec, std::size_t input_h, std::size_t input_w,
                    std::size_t repetitions, std::uint64_t seed = 1);

}  // namespace bnfk
