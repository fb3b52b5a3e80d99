#include "bnfk/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bnfk {

std::string FeatureConfig::name() const {
    std::string s;
    if (fft) s += s.empty() ? "fft" : "+fft";
    if (lbp) s += s.empty() ? "lbp" : "+lbp";
    if (sobel) s += s.empty() ? "sobel" : "+sobel";
    return s.empty() ? "rgb" : s;
}

namespace {

void check_rgb(const Tensor& rgb, const char* what) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw std::invalid_argument(std::string(what) + ": expects [3,H,W]");
    for (std::size_t i = 0; i < rgb.size(); ++i)
        if (!(rgb[i] >= -1e-9 && rgb[i] <= 1.0 + 1e-9))
            throw std::invalid_argument(std::string(what) + ": values outside [0,1]");
}

constexpr double kPi = std::numbers::pi;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_pow2(std::complex<double>* a, std::size_t n, double sign) {
    // iterative radix-2, bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * kPi / (double)len;
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

void fft_any(std::complex<double>* a, std::size_t n, double sign);

void fft_bluestein(std::complex<double>* a, std::size_t n, double sign) {
    std::size_t m = 1;
    while (m < 2 * n - 1) m <<= 1;
    std::vector<std::complex<double>> chirp(n), fa(m), fb(m);
    for (std::size_t k = 0; k < n; ++k) {
        // angle of w^{k^2/2}; (k*k) mod 2n keeps the argument small
        double ang = sign * kPi * (double)((k * (unsigned long long)k) % (2 * n)) / (double)n;
        chirp[k] = {std::cos(ang), std::sin(ang)};
    }
    for (std::size_t k = 0; k < n; ++k) {
        fa[k] = a[k] * chirp[k];
        fb[k] = std::conj(chirp[k]);
        if (k) fb[m - k] = fb[k];
    }
    fft_pow2(fa.data(), m, -1.0);
    fft_pow2(fb.data(), m, -1.0);
    for (std::size_t k = 0; k < m; ++k) fa[k] *= fb[k];
    fft_pow2(fa.data(), m, 1.0);
    const double inv_m = 1.0 / (double)m;
    for (std::size_t k = 0; k < n; ++k) a[k] = fa[k] * inv_m * chirp[k];
}

void fft_any(std::complex<double>* a, std::size_t n, double sign) {
    if (n == 1) return;
    if (is_pow2(n)) {
        fft_pow2(a, n, sign);
        return;
    }
    if (n % 2 == 0) {
        const std::size_t half = n / 2;
        std::vector<std::complex<double>> even(half), odd(half);
        for (std::size_t i = 0; i < half; ++i) {
            even[i] = a[2 * i];
            odd[i] = a[2 * i + 1];
        }
        fft_any(even.data(), half, sign);
        fft_any(odd.data(), half, sign);
        for (std::size_t k = 0; k < half; ++k) {
            double ang = sign * 2.0 * kPi * (double)k / (double)n;
            std::complex<double> t = odd[k] * std::complex<double>(std::cos(ang), std::sin(ang));
            a[k] = even[k] + t;
            a[k + half] = even[k] - t;
        }
        return;
    }
    fft_bluestein(a, n, sign);
}

}  // namespace

void fft1d(std::complex<double>* data, std::size_t n, bool inverse) {
    fft_any(data, n, inverse ? 1.0 : -1.0);
    if (inverse) {
        const double inv = 1.0 / (double)n;
        for (std::size_t i = 0; i < n; ++i) data[i] *= inv;
    }
}

ComplexImage fft2d(const ComplexImage& x, std::size_t h, std::size_t w, bool inverse) {
    if (h == 0 || w == 0 || x.size() != h * w)
        throw std::invalid_argument("fft2d: bad dimensions");
    ComplexImage out = x;
    for (std::size_t y = 0; y < h; ++y) fft1d(out.data() + y * w, w, inverse);
    std::vector<std::complex<double>> col(h);
    for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t y = 0; y < h; ++y) col[y] = out[y * w + c];
        fft1d(col.data(), h, inverse);
        for (std::size_t y = 0; y < h; ++y) out[y * w + c] = col[y];
    }
    return out;
}

Tensor to_grayscale(const Tensor& rgb) {
    check_rgb(rgb, "to_grayscale");
    const std::size_t H = rgb.dim(1), W = rgb.dim(2);
    Tensor g({H, W});
    for (std::size_t i = 0; i < H * W; ++i) {
        double v = 0.299 * rgb[i] + 0.587 * rgb[H * W + i] + 0.114 * rgb[2 * H * W + i];
        g[i] = std::clamp(v, 0.0, 1.0);
    }
    return g;
}

Tensor fft_magnitude_channel(const Tensor& rgb) {
    Tensor g = to_grayscale(rgb);
    const std::size_t H = g.dim(0), W = g.dim(1);
    ComplexImage c(H * W);
    for (std::size_t i = 0; i < H * W; ++i) c[i] = g[i];
    ComplexImage spec = fft2d(c, H, W, false);

    Tensor mag({H, W});
    const std::size_t sy = H / 2, sx = W / 2;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            mag.at2((y + sy) % H, (x + sx) % W) = std::log1p(std::abs(spec[y * W + x]));

    double lo = mag[0], hi = mag[0];
    for (std::size_t i = 0; i < mag.size(); ++i) {
        lo = std::min(lo, mag[i]);
        hi = std::max(hi, mag[i]);
    }
    if (hi > lo)
        for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = (mag[i] - lo) / (hi - lo);
    else
        for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = 0.0;
    return mag;
}

namespace {

// clockwise from top-left; bit i has weight 2^i
constexpr int kLbpOff[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1},
                               {1, 1},   {1, 0},  {1, -1}, {0, -1}};

inline double clamped_at(const Tensor& g, long y, long x, long H, long W) {
    y = std::clamp(y, 0L, H - 1);
    x = std::clamp(x, 0L, W - 1);
    return g.at2((std::size_t)y, (std::size_t)x);
}

}  // namespace

Tensor lbp_channel(const Tensor& rgb) {
    Tensor g = to_grayscale(rgb);
    const long H = (long)g.dim(0), W = (long)g.dim(1);
    Tensor out({(std::size_t)H, (std::size_t)W});
    for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x) {
            const double center = g.at2(y, x);
            int code = 0;
            for (int i = 0; i < 8; ++i)
                if (clamped_at(g, y + kLbpOff[i][0], x + kLbpOff[i][1], H, W) >= center)
                    code |= 1 << i;
            out.at2(y, x) = (double)code / 255.0;
        }
    return out;
}

Tensor sobel_channel(const Tensor& rgb) {
    Tensor g = to_grayscale(rgb);
    const long H = (long)g.dim(0), W = (long)g.dim(1);
    static const double gx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    Tensor out({(std::size_t)H, (std::size_t)W});
    const double norm = 4.0 * std::sqrt(2.0);
    for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x) {
            double sx = 0.0, sy = 0.0;
            for (int ky = -1; ky <= 1; ++ky)
                for (int kx = -1; kx <= 1; ++kx) {
                    double v = clamped_at(g, y + ky, x + kx, H, W);
                    sx += gx[ky + 1][kx + 1] * v;
                    sy += gx[kx + 1][ky + 1] * v;  // Gy = Gx transposed
                }
            out.at2(y, x) = std::clamp(std::sqrt(sx * sx + sy * sy) / norm, 0.0, 1.0);
        }
    return out;
}

FeatureStack build_stack(const Tensor& rgb, const FeatureConfig& config) {
    check_rgb(rgb, "build_stack");
    const std::size_t H = rgb.dim(1), W = rgb.dim(2);
    const std::size_t n = config.channel_count();
    FeatureStack stack;
    stack.config = config;
    stack.channels = Tensor({n, H, W});
    std::copy(rgb.data(), rgb.data() + 3 * H * W, stack.channels.data());
    std::size_t c = 3;
    auto put = [&](const Tensor& plane) {
        std::copy(plane.data(), plane.data() + H * W, stack.channels.data() + c * H * W);
        ++c;
    };
    if (config.fft) put(fft_magnitude_channel(rgb));
    if (config.lbp) put(lbp_channel(rgb));
    if (config.sobel) put(sobel_channel(rgb));
    return stack;
}

}  // namespace bnfk
