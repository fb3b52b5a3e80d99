#pragma once

#include <cstdint>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace bnfk {

// Dense row-major real tensor, last axis fastest.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double v);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D / 3-D / 4-D indexers for the common layouts (HW, CHW, OCKK).
    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at3(std::size_t c, std::size_t i, std::size_t j) {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double at3(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double& at4(std::size_t o, std::size_t c, std::size_t i, std::size_t j) {
        return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }
    double at4(std::size_t o, std::size_t c, std::size_t i, std::size_t j) const {
        return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }

    bool all_finite() const;
    void check_finite(const char* what) const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

// Bit-packed {-1,+1} tensor. Bit 1 encodes +1, bit 0 encodes -1.
// Packing is per last-axis row: each row occupies ceil(last/64) words,
// LSB-first within a word. Pad bits past the row length are kept zero.
class BitTensor {
public:
    BitTensor() = default;
    explicit BitTensor(std::vector<std::size_t> shape);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t logical_size() const { return rows_ * row_len_; }
    std::size_t rows() const { return rows_; }
    std::size_t row_len() const { return row_len_; }
    std::size_t words_per_row() const { return words_per_row_; }

    const std::vector<std::uint64_t>& words() const { return words_; }
    std::vector<std::uint64_t>& words() { return words_; }
    const std::uint64_t* row(std::size_t r) const { return words_.data() + r * words_per_row_; }
    std::uint64_t* row(std::size_t r) { return words_.data() + r * words_per_row_; }

    // +1/-1 value of the logical element at flat row-major index i.
    int get(std::size_t i) const {
        std::size_t r = i / row_len_, c = i % row_len_;
        return (row(r)[c >> 6] >> (c & 63)) & 1u ? +1 : -1;
    }
    void set(std::size_t i, int v) {
        std::size_t r = i / row_len_, c = i % row_len_;
        std::uint64_t bit = std::uint64_t(1) << (c & 63);
        if (v >= 0)
            row(r)[c >> 6] |= bit;
        else
            row(r)[c >> 6] &= ~bit;
    }

    // Zeroes every pad bit (bits at/after row_len in each row's last word).
    void clear_padding();
    std::size_t byte_size() const { return words_.size() * sizeof(std::uint64_t); }

private:
    std::vector<std::size_t> shape_;
    std::size_t rows_ = 0, row_len_ = 0, words_per_row_ = 0;
    std::vector<std::uint64_t> words_;
};

// sign binarization: x >= 0 -> +1 (so -0.0 -> +1), else -1.
BitTensor sign_quantize(const Tensor& x);

// pack requires every element to be exactly -1 or +1.
BitTensor pack(const Tensor& x);
Tensor unpack(const BitTensor& b);

// Sum_i a_i * b_i over the +-1 interpretation, via 2*popcount(xnor)-n.
// Requires identical shapes.
long long xnor_popcount_dot(const BitTensor& a, const BitTensor& b);

// Symmetric per-channel INT-4 quantization: codes in [-8,7], two per byte.
class Int4Tensor {
public:
    Int4Tensor() = default;

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t axis() const { return axis_; }
    const std::vector<double>& scales() const { return scales_; }
    std::size_t size() const { return size_; }

    int code(std::size_t i) const {
        std::uint8_t byte = codes_[i >> 1];
        int nib = (i & 1) ? (byte >> 4) : (byte & 0x0f);
        return nib >= 8 ? nib - 16 : nib;
    }
    double dequant(std::size_t i) const { return code(i) * scales_[channel_of(i)]; }
    std::size_t byte_size() const { return codes_.size(); }

    friend Int4Tensor int4_quantize(const Tensor& x, std::size_t axis);

private:
    std::size_t channel_of(std::size_t i) const { return (i / inner_) % shape_[axis_]; }
    void set_code(std::size_t i, int c) {
        std::uint8_t nib = std::uint8_t(c & 0x0f);
        if (i & 1)
            codes_[i >> 1] = std::uint8_t((codes_[i >> 1] & 0x0f) | (nib << 4));
        else
            codes_[i >> 1] = std::uint8_t((codes_[i >> 1] & 0xf0) | nib);
    }

    std::vector<std::size_t> shape_;
    std::size_t axis_ = 0, size_ = 0, inner_ = 1;
    std::vector<std::uint8_t> codes_;
    std::vector<double> scales_;
};

Int4Tensor int4_quantize(const Tensor& x, std::size_t axis);
Tensor int4_dequantize(const Int4Tensor& q);

// a: [M,K], w: quantized [N,K] with axis 0 -> out [M,N], dequantizing on the fly.
Tensor int4_matmul(const Tensor& a, const Int4Tensor& w);

}  // namespace bnfk
