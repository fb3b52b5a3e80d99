#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnfk/binops.hpp"
#include "bnfk/features.hpp"
#include "bnfk/tensor.hpp"

namespace bnfk {

struct BlockSpec {
    ConvSpec conv;
    bool has_skip = false;

    // identity skip needs matching shapes; otherwise a full-precision
    // strided 1x1 projection carries the skip path
    bool needs_projection() const {
        return has_skip && (conv.stride != 1 || conv.in_channels != conv.out_channels);
    }
};

struct ModelSpec {
    std::size_t in_channels = 5;
    std::size_t input_h = 224, input_w = 224;  // nominal, for op accounting
    ConvSpec adapter;                          // in_channels -> 3, 1x1
    std::vector<BlockSpec> blocks;

    std::size_t feature_dim() const {
        return blocks.empty() ? 3 : blocks.back().conv.out_channels;
    }
    void validate() const;
};

// 4 blocks, 16->32->64->64 channels, strides 1,2,2,1, identity skip on the
// last block; adapter squeezes in_channels to 3.
ModelSpec default_desk_spec(std::size_t in_channels, std::size_t input_h = 224,
                            std::size_t input_w = 224);

struct BlockState {
    Tensor latent;  // [O,C,Kh,Kw] full-precision latent weights
    ScalingFactor alpha;
    BitTensor packed;  // sign(latent), packed kernel rows
    std::vector<double> gamma, beta;
    Tensor proj;  // [O,C] 1x1 projection, empty unless needs_projection()
};

struct ModelState {
    ModelSpec spec;
    Tensor adapter_w;  // [3, in_channels, 1, 1]
    std::vector<double> adapter_b;
    std::vector<BlockState> blocks;
    std::vector<double> head_w;
    double head_b = 0.0;

    // alpha and packed bits must be refreshed whenever a latent changes
    void refresh_block(std::size_t i);
    void refresh_all();
};

ModelState make_initial_state(const ModelSpec& spec, std::uint64_t seed);

// Full-precision 1x1 adapter, same spatial size.
Tensor adapter_forward(const Tensor& stack, const ModelState& state);

// Binary-path block: gamma * binary_conv(x) + beta + skip(x). No explicit
// nonlinearity; the next block's input binarization plays that role.
Tensor block_forward(const Tensor& x, const BlockSpec& block, const BlockState& state);

// All blocks, global average pool, then sign-quantize to {-1,+1}^f.
Tensor backbone_forward(const Tensor& x3, const ModelState& state);

double head_forward(const Tensor& feat, const ModelState& state);

// stack -> adapter -> backbone -> head, production bit-packed path
double model_forward(const Tensor& stack, const ModelState& state);

enum class ModelError { BadMagic, VersionMismatch, Truncated, Checksum };

class model_format_error : public std::runtime_error {
public:
    model_format_error(ModelError kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ModelError kind() const { return kind_; }

private:
    ModelError kind_;
};

// "BNFK", u32 version, length-prefixed spec section (LE u32 fields), f64
// parameter sections in declaration order, trailing CRC32 of everything
// after the magic. Writes are atomic (temp file + rename).
void save_model(const ModelState& state, const std::string& path);
ModelState load_model(const std::string& path);

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t seed = 0);

}  // namespace bnfk
