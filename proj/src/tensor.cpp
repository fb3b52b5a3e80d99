#include "bnfk/tensor.hpp"

#include <bit>
#include <cmath>
#include <string>

namespace bnfk {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size())
        throw std::invalid_argument("Tensor: shape/data size mismatch");
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::check_finite(const char* what) const {
    if (!all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite values");
}

BitTensor::BitTensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    row_len_ = shape_.empty() ? 0 : shape_.back();
    rows_ = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) rows_ *= shape_[i];
    if (row_len_ == 0) rows_ = 0;
    words_per_row_ = (row_len_ + 63) / 64;
    words_.assign(rows_ * words_per_row_, 0);
}

void BitTensor::clear_padding() {
    if (words_per_row_ == 0) return;
    std::size_t tail = row_len_ & 63;
    if (tail == 0) return;
    std::uint64_t mask = (std::uint64_t(1) << tail) - 1;
    for (std::size_t r = 0; r < rows_; ++r) row(r)[words_per_row_ - 1] &= mask;
}

BitTensor sign_quantize(const Tensor& x) {
    x.check_finite("sign_quantize");
    BitTensor b(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] >= 0.0) b.set(i, +1);
    return b;
}

BitTensor pack(const Tensor& x) {
    BitTensor b(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x[i];
        if (v != 1.0 && v != -1.0)
            throw std::invalid_argument("pack: element not in {-1,+1}; quantize first");
        if (v > 0) b.set(i, +1);
    }
    return b;
}

Tensor unpack(const BitTensor& b) {
    Tensor t(b.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = double(b.get(i));
    return t;
}

long long xnor_popcount_dot(const BitTensor& a, const BitTensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("xnor_popcount_dot: length mismatch");
    const std::size_t n = a.logical_size();
    const std::size_t wpr = a.words_per_row();
    const std::size_t tail = a.row_len() & 63;
    const std::uint64_t tail_mask =
        tail ? (std::uint64_t(1) << tail) - 1 : ~std::uint64_t(0);
    long long pop = 0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const std::uint64_t* pa = a.row(r);
        const std::uint64_t* pb = b.row(r);
        for (std::size_t w = 0; w + 1 < wpr; ++w)
            pop += std::popcount(~(pa[w] ^ pb[w]));
        if (wpr > 0)
            pop += std::popcount(~(pa[wpr - 1] ^ pb[wpr - 1]) & tail_mask);
    }
    return 2 * pop - (long long)n;
}

Int4Tensor int4_quantize(const Tensor& x, std::size_t axis) {
    x.check_finite("int4_quantize");
    if (axis >= x.rank()) throw std::invalid_argument("int4_quantize: bad axis");
    Int4Tensor q;
    q.shape_ = x.shape();
    q.axis_ = axis;
    q.size_ = x.size();
    q.inner_ = 1;
    for (std::size_t i = axis + 1; i < x.rank(); ++i) q.inner_ *= x.dim(i);
    const std::size_t channels = x.dim(axis);
    q.scales_.assign(channels, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::size_t c = q.channel_of(i);
        double a = std::fabs(x[i]);
        if (a > q.scales_[c]) q.scales_[c] = a;
    }
    for (double& s : q.scales_) s = s > 0.0 ? s / 7.0 : 1.0;  // all-zero channel rule
    q.codes_.assign((q.size_ + 1) / 2, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x[i] / q.scales_[q.channel_of(i)];
        // round half away from zero
        int code = int(v >= 0 ? std::floor(v + 0.5) : std::ceil(v - 0.5));
        if (code < -8) code = -8;
        if (code > 7) code = 7;
        q.set_code(i, code);
    }
    return q;
}

Tensor int4_dequantize(const Int4Tensor& q) {
    Tensor t(q.shape());
    for (std::size_t i = 0; i < q.size(); ++i) t[i] = q.dequant(i);
    return t;
}

Tensor int4_matmul(const Tensor& a, const Int4Tensor& w) {
    if (a.rank() != 2 || w.shape().size() != 2 || w.axis() != 0 ||
        a.dim(1) != w.shape()[1])
        throw std::invalid_argument("int4_matmul: expects a[M,K], w[N,K] axis 0");
    const std::size_t m = a.dim(0), k = a.dim(1), n = w.shape()[0];
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t)
                acc += a.at2(i, t) * w.code(j * k + t);
            out.at2(i, j) = acc * w.scales()[j];
        }
    return out;
}

}  // namespace bnfk
