#pragma once

#include <complex>
#include <string>
#include <vector>

#include "bnfk/tensor.hpp"

namespace bnfk {

enum class Channel { Fft, Lbp, Sobel };

struct FeatureConfig {
    bool fft = true;
    bool lbp = true;
    bool sobel = false;

    std::size_t channel_count() const { return 3 + (fft ? 1 : 0) + (lbp ? 1 : 0) + (sobel ? 1 : 0); }
    std::string name() const;
};

// 5-channel augmented image (R, G, B, then enabled channels in fixed order
// FFT, LBP, Sobel). For ablation configs the count is 3 + #active.
struct FeatureStack {
    Tensor channels;  // [3 + #active, H, W]
    FeatureConfig config;
};

// luma = 0.299 R + 0.587 G + 0.114 B, clamped to [0,1]
Tensor to_grayscale(const Tensor& rgb);

using ComplexImage = std::vector<std::complex<double>>;

// Unnormalized forward DFT (inverse divides by H*W). Radix-2 where axis
// lengths factor by 2, Bluestein chirp-z for odd factors; any H,W >= 1.
ComplexImage fft2d(const ComplexImage& x, std::size_t h, std::size_t w, bool inverse);

void fft1d(std::complex<double>* data, std::size_t n, bool inverse);

// grayscale -> FFT -> fftshift -> log1p(|X|) -> min-max to [0,1]
Tensor fft_magnitude_channel(const Tensor& rgb);

// 8-neighbor LBP, replicate border, bit 0 at top-left clockwise, code/255
Tensor lbp_channel(const Tensor& rgb);

// Sobel gradient magnitude, replicate border, normalized by 4*sqrt(2)
Tensor sobel_channel(const Tensor& rgb);

FeatureStack build_stack(const Tensor& rgb, const FeatureConfig& config);

}  // namespace bnfk
