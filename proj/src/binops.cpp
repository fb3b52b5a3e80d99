#include "bnfk/binops.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace bnfk {

std::size_t ConvSpec::out_h(std::size_t h) const {
    std::size_t padded = h + 2 * padding;
    if (padded < kernel_h) throw std::invalid_argument("ConvSpec: kernel taller than input");
    return (padded - kernel_h) / stride + 1;
}

std::size_t ConvSpec::out_w(std::size_t w) const {
    std::size_t padded = w + 2 * padding;
    if (padded < kernel_w) throw std::invalid_argument("ConvSpec: kernel wider than input");
    return (padded - kernel_w) / stride + 1;
}

void ConvSpec::validate(const std::vector<std::size_t>& in_shape) const {
    if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0)
        throw std::invalid_argument("ConvSpec: zero-sized field");
    if (in_shape.size() != 3 || in_shape[0] != in_channels)
        throw std::invalid_argument("conv: input shape mismatch");
    out_h(in_shape[1]);
    out_w(in_shape[2]);
}

Tensor conv2d_ref(const Tensor& x, const Tensor& w, const ConvSpec& spec) {
    spec.validate(x.shape());
    if (w.rank() != 4 || w.dim(0) != spec.out_channels || w.dim(1) != spec.in_channels ||
        w.dim(2) != spec.kernel_h || w.dim(3) != spec.kernel_w)
        throw std::invalid_argument("conv2d_ref: weight shape mismatch");
    const std::size_t C = spec.in_channels, O = spec.out_channels;
    const std::size_t H = x.dim(1), W = x.dim(2);
    const std::size_t Ho = spec.out_h(H), Wo = spec.out_w(W);
    const long pad = (long)spec.padding;
    const long s = (long)spec.stride;
    Tensor out({O, Ho, Wo});
    // kernel-position outer loops keep the inner loops on contiguous rows
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
                // oy*s + ky - pad must land in [0, H)
                const long oy_lo = pad > (long)ky ? (pad - (long)ky + s - 1) / s : 0;
                const long oy_hi =
                    std::min((long)Ho, ((long)H + pad - (long)ky - 1) / s + 1);
                for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
                    const double wv = w.at4(o, c, ky, kx);
                    if (wv == 0.0) continue;
                    const long ox_lo = pad > (long)kx ? (pad - (long)kx + s - 1) / s : 0;
                    const long ox_hi =
                        std::min((long)Wo, ((long)W + pad - (long)kx - 1) / s + 1);
                    const long n = ox_hi - ox_lo;
                    if (n <= 0) continue;
                    for (long oy = oy_lo; oy < oy_hi; ++oy) {
                        const long y = oy * s + (long)ky - pad;
                        const std::size_t x0 = (std::size_t)(ox_lo * s + (long)kx - pad);
                        const double* xr = x.data() + (c * H + (std::size_t)y) * W + x0;
                        double* orow = out.data() + (o * Ho + (std::size_t)oy) * Wo + ox_lo;
                        if (s == 1)
                            for (long i = 0; i < n; ++i) orow[i] += wv * xr[i];
                        else
                            for (long i = 0; i < n; ++i) orow[i] += wv * xr[i * s];
                    }
                }
            }
    return out;
}

ScalingFactor compute_alpha(const Tensor& w) {
    w.check_finite("compute_alpha");
    if (w.rank() != 4) throw std::invalid_argument("compute_alpha: expects [O,C,Kh,Kw]");
    const std::size_t O = w.dim(0);
    const std::size_t per = w.size() / O;
    ScalingFactor s;
    s.alpha.assign(O, 0.0);
    for (std::size_t o = 0; o < O; ++o) {
        double sum = 0.0;
        for (std::size_t i = 0; i < per; ++i) sum += std::fabs(w[o * per + i]);
        s.alpha[o] = sum / (double)per;
    }
    return s;
}

BitTensor pack_conv_weights(const Tensor& w) {
    if (w.rank() != 4) throw std::invalid_argument("pack_conv_weights: expects [O,C,Kh,Kw]");
    const std::size_t O = w.dim(0);
    const std::size_t per = w.size() / O;
    BitTensor b({O, per});
    for (std::size_t i = 0; i < w.size(); ++i) {
        double v = w[i];
        if (v != 1.0 && v != -1.0)
            throw std::invalid_argument("pack_conv_weights: weight not in {-1,+1}");
        if (v > 0) b.set(i, +1);
    }
    return b;
}

BitTensor pack_conv_weights_signed(const Tensor& w) {
    w.check_finite("pack_conv_weights_signed");
    if (w.rank() != 4) throw std::invalid_argument("pack_conv_weights_signed: expects [O,C,Kh,Kw]");
    const std::size_t O = w.dim(0);
    const std::size_t per = w.size() / O;
    BitTensor b({O, per});
    for (std::size_t i = 0; i < w.size(); ++i)
        if (w[i] >= 0.0) b.set(i, +1);
    return b;
}

PackedImage::PackedImage(const Tensor& x, std::size_t padding) {
    if (x.rank() != 3) throw std::invalid_argument("PackedImage: expects [C,H,W]");
    x.check_finite("PackedImage");
    c_ = x.dim(0);
    h_ = x.dim(1) + 2 * padding;
    w_ = x.dim(2) + 2 * padding;
    words_per_row_ = (w_ + 63) / 64;
    bits_.assign(c_ * h_ * words_per_row_, 0);
    const std::size_t H = x.dim(1), W = x.dim(2);
    for (std::size_t c = 0; c < c_; ++c)
        for (std::size_t y = 0; y < h_; ++y) {
            std::uint64_t* r = bits_.data() + (c * h_ + y) * words_per_row_;
            for (std::size_t xx = 0; xx < w_; ++xx) {
                bool inside = y >= padding && y < padding + H && xx >= padding && xx < padding + W;
                // zero padding binarizes to +1 (sign(0) = +1)
                bool bit = inside ? x.at3(c, y - padding, xx - padding) >= 0.0 : true;
                if (bit) r[xx >> 6] |= std::uint64_t(1) << (xx & 63);
            }
        }
}

namespace {

// count <= 64 bits starting at bit `start` of a zero-padded word row
inline std::uint64_t extract_bits(const std::uint64_t* words, std::size_t start,
                                  std::size_t count) {
    const std::size_t sh = start & 63;
    std::uint64_t v = words[start >> 6] >> sh;
    if (sh && sh + count > 64) v |= words[(start >> 6) + 1] << (64 - sh);
    return count == 64 ? v : v & ((std::uint64_t(1) << count) - 1);
}

inline void append_bits(std::uint64_t* buf, std::size_t& bitpos, std::uint64_t v,
                        std::size_t count) {
    const std::size_t sh = bitpos & 63;
    buf[bitpos >> 6] |= v << sh;
    if (sh && sh + count > 64) buf[(bitpos >> 6) + 1] = v >> (64 - sh);
    bitpos += count;
}

}  // namespace

Tensor binary_conv2d_packed(const PackedImage& img, const BitTensor& w_b,
                            const ScalingFactor& alpha, const ConvSpec& spec,
                            std::size_t logical_h, std::size_t logical_w) {
    const std::size_t C = spec.in_channels, O = spec.out_channels;
    if (img.channels() != C || w_b.rows() != O ||
        w_b.row_len() != C * spec.kernel_h * spec.kernel_w ||
        alpha.alpha.size() != O)
        throw std::invalid_argument("binary_conv2d: shape mismatch");
    const std::size_t Ho = spec.out_h(logical_h), Wo = spec.out_w(logical_w);
    const std::size_t n = w_b.row_len();
    const std::size_t nwords = w_b.words_per_row();
    const std::size_t tail = n & 63;
    const std::uint64_t tail_mask = tail ? (std::uint64_t(1) << tail) - 1 : ~std::uint64_t(0);

    std::vector<std::uint64_t> window(nwords + 1);
    Tensor out({O, Ho, Wo});
    for (std::size_t oy = 0; oy < Ho; ++oy) {
        const std::size_t y0 = oy * spec.stride;
        for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::size_t x0 = ox * spec.stride;
            std::fill(window.begin(), window.end(), 0);
            std::size_t bitpos = 0;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
                    const std::uint64_t* row = img.row(c, y0 + ky);
                    std::size_t kx = 0;
                    while (kx < spec.kernel_w) {
                        std::size_t take = std::min<std::size_t>(64, spec.kernel_w - kx);
                        append_bits(window.data(), bitpos,
                                    extract_bits(row, x0 + kx, take), take);
                        kx += take;
                    }
                }
            for (std::size_t o = 0; o < O; ++o) {
                const std::uint64_t* kr = w_b.row(o);
                long long pop = 0;
                for (std::size_t w = 0; w + 1 < nwords; ++w)
                    pop += std::popcount(~(kr[w] ^ window[w]));
                pop += std::popcount(~(kr[nwords - 1] ^ window[nwords - 1]) & tail_mask);
                out.at3(o, oy, ox) = double(2 * pop - (long long)n) * alpha.alpha[o];
            }
        }
    }
    return out;
}

Tensor binary_conv2d(const Tensor& x, const BitTensor& w_b, const ScalingFactor& alpha,
                     const ConvSpec& spec) {
    spec.validate(x.shape());
    PackedImage img(x, spec.padding);
    return binary_conv2d_packed(img, w_b, alpha, spec, x.dim(1), x.dim(2));
}

std::string BenchRow::to_json() const {
    std::ostringstream os;
    os << "{\"spec\":{\"in_channels\":" << spec.in_channels
       << ",\"out_channels\":" << spec.out_channels << ",\"kernel_h\":" << spec.kernel_h
       << ",\"kernel_w\":" << spec.kernel_w << ",\"stride\":" << spec.stride
       << ",\"padding\":" << spec.padding << ",\"input_h\":" << input_h
       << ",\"input_w\":" << input_w << "},\"binary_ns\":" << binary_ns
       << ",\"float_ns\":" << float_ns << ",\"speedup\":" << speedup << "}";
    return os.str();
}

BenchRow bench_conv(const ConvSpec& spec, std::size_t input_h, std::size_t input_w,
                    std::size_t repetitions, std::uint64_t seed) {
    if (repetitions < 3) throw std::invalid_argument("bench_conv: repetitions must be >= 3");
    std::mt19937_64 rng(seed);
    auto urand = [&] { return (double)(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };

    Tensor x({spec.in_channels, input_h, input_w});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = urand();
    Tensor w({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng() & 1 ? 1.0 : -1.0;

    BitTensor wb = pack_conv_weights(w);
    ScalingFactor alpha = compute_alpha(w);

    // correctness gate before any timing; the oracle input carries the +1
    // padding explicitly since zero padding binarizes to +1
    Tensor xb = unpack(sign_quantize(x));
    const std::size_t p = spec.padding;
    Tensor xp({spec.in_channels, input_h + 2 * p, input_w + 2 * p});
    for (std::size_t i = 0; i < xp.size(); ++i) xp[i] = 1.0;
    for (std::size_t c = 0; c < spec.in_channels; ++c)
        for (std::size_t y = 0; y < input_h; ++y)
            for (std::size_t xx = 0; xx < input_w; ++xx)
                xp.at3(c, y + p, xx + p) = xb.at3(c, y, xx);
    ConvSpec nopad = spec;
    nopad.padding = 0;
    Tensor oracle = conv2d_ref(xp, w, nopad);
    Tensor got = binary_conv2d(x, wb, alpha, spec);
    for (std::size_t i = 0; i < got.size(); ++i) {
        double want = oracle[i] * alpha.alpha[i / (got.size() / spec.out_channels)];
        double tol = 1e-12 * std::max(1.0, std::fabs(want));
        if (std::fabs(got[i] - want) > tol)
            throw std::runtime_error("bench_conv: binary/float disagreement");
    }

    auto time_ns = [&](auto&& fn) {
        std::vector<long long> samples;
        samples.reserve(repetitions);
        for (std::size_t r = 0; r < repetitions; ++r) {
            auto t0 = std::chrono::steady_clock::now();
            fn();
            auto t1 = std::chrono::steady_clock::now();
            samples.push_back(
                std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
        }
        std::sort(samples.begin(), samples.end());
        return samples[samples.size() / 2];
    };

    BenchRow row;
    row.spec = spec;
    row.input_h = input_h;
    row.input_w = input_w;
    volatile double sink = 0.0;
    row.binary_ns = time_ns([&] {
        Tensor y = binary_conv2d(x, wb, alpha, spec);
        sink = sink + y[0];
    });
    row.float_ns = time_ns([&] {
        Tensor y = conv2d_ref(x, w, spec);
        sink = sink + y[0];
    });
    row.speedup = row.binary_ns > 0 ? (double)row.float_ns / (double)row.binary_ns : 0.0;
    return row;
}

}  // namespace bnfk
