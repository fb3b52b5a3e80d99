#include "bnfk/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace bnfk {

std::uint64_t TrainRng::next() {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
double TrainRng::uniform() { return (double)(next() >> 11) * 0x1.0p-53; }
double TrainRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

void TrainConfig::validate() const {
    if (!(lr_final > 0.0) || !(lr_final <= lr_init))
        throw std::invalid_argument("TrainConfig: need 0 < lr_final <= lr_init");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("TrainConfig: betas must lie in [0,1)");
    if (batch_size == 0 || max_epochs == 0)
        throw std::invalid_argument("TrainConfig: batch_size/max_epochs must be >= 1");
    if (color_jitter < 0.0 || color_jitter > 0.2)
        throw std::invalid_argument("TrainConfig: color_jitter must be in [0, 0.2]");
    if (crop_size == 0 || resize_longest < crop_size)
        throw std::invalid_argument("TrainConfig: need resize_longest >= crop_size >= 1");
}

// ---------------------------------------------------------------------------
// augmentation / preprocessing

namespace {

Tensor hflip(const Tensor& x) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                out.at3(c, y, xx) = x.at3(c, y, W - 1 - xx);
    return out;
}

Tensor vflip(const Tensor& x) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                out.at3(c, y, xx) = x.at3(c, H - 1 - y, xx);
    return out;
}

// clockwise quarter turn: out[y][x] = in[H-1-x][y], out is [C,W,H]
Tensor rot90(const Tensor& x) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out({C, W, H});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < W; ++y)
            for (std::size_t xx = 0; xx < H; ++xx)
                out.at3(c, y, xx) = x.at3(c, H - 1 - xx, y);
    return out;
}

}  // namespace

Tensor augment(const Tensor& image, const TrainConfig& cfg, TrainRng& rng) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("augment: expects [3,h,w]");
    Tensor out = image;
    if (cfg.flips) {
        if (rng.uniform() < 0.5) out = hflip(out);
        if (rng.uniform() < 0.5) out = vflip(out);
    }
    if (cfg.rotations) {
        double u = rng.uniform();
        if (u < 0.25) out = rot90(out);
        else if (u < 0.5) out = rot90(rot90(rot90(out)));  // 270
    }
    if (cfg.color_jitter > 0.0) {
        for (std::size_t c = 0; c < 3; ++c) {
            double f = rng.uniform(1.0 - cfg.color_jitter, 1.0 + cfg.color_jitter);
            double* p = out.data() + c * out.dim(1) * out.dim(2);
            for (std::size_t i = 0; i < out.dim(1) * out.dim(2); ++i)
                p[i] = std::clamp(p[i] * f, 0.0, 1.0);
        }
    }
    return out;
}

Tensor bilinear_resize(const Tensor& image, std::size_t out_h, std::size_t out_w) {
    const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    Tensor out({C, out_h, out_w});
    const double sy = (double)H / (double)out_h, sx = (double)W / (double)out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
        double fy = ((double)y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, (double)H - 1.0);
        const std::size_t y0 = (std::size_t)fy;
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - (double)y0;
        for (std::size_t x = 0; x < out_w; ++x) {
            double fx = ((double)x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, (double)W - 1.0);
            const std::size_t x0 = (std::size_t)fx;
            const std::size_t x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - (double)x0;
            for (std::size_t c = 0; c < C; ++c) {
                double v = (1 - wy) * ((1 - wx) * image.at3(c, y0, x0) +
                                       wx * image.at3(c, y0, x1)) +
                           wy * ((1 - wx) * image.at3(c, y1, x0) +
                                 wx * image.at3(c, y1, x1));
                out.at3(c, y, x) = v;
            }
        }
    }
    return out;
}

namespace {

Tensor replicate_pad_to(const Tensor& x, std::size_t min_h, std::size_t min_w) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (H >= min_h && W >= min_w) return x;
    const std::size_t nh = std::max(H, min_h), nw = std::max(W, min_w);
    const std::size_t top = (nh - H) / 2, left = (nw - W) / 2;
    Tensor out({C, nh, nw});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < nh; ++y)
            for (std::size_t xx = 0; xx < nw; ++xx) {
                long sy = std::clamp((long)y - (long)top, 0L, (long)H - 1);
                long sx = std::clamp((long)xx - (long)left, 0L, (long)W - 1);
                out.at3(c, y, xx) = x.at3(c, (std::size_t)sy, (std::size_t)sx);
            }
    return out;
}

}  // namespace

Tensor preprocess(const Tensor& image, PreprocessMode mode, TrainRng& rng,
                  std::size_t resize_longest, std::size_t crop) {
    if (image.rank() != 3 || image.dim(1) == 0 || image.dim(2) == 0)
        throw std::invalid_argument("preprocess: expects non-empty [C,h,w]");
    const std::size_t H = image.dim(1), W = image.dim(2);
    std::size_t nh, nw;
    if (H >= W) {
        nh = resize_longest;
        nw = std::max<std::size_t>(
            1, (std::size_t)std::lround((double)W * (double)resize_longest / (double)H));
    } else {
        nw = resize_longest;
        nh = std::max<std::size_t>(
            1, (std::size_t)std::lround((double)H * (double)resize_longest / (double)W));
    }
    Tensor resized = bilinear_resize(image, nh, nw);
    resized = replicate_pad_to(resized, crop, crop);
    const std::size_t ph = resized.dim(1), pw = resized.dim(2);
    std::size_t oy, ox;
    if (mode == PreprocessMode::Eval) {
        oy = (ph - crop) / 2;
        ox = (pw - crop) / 2;
    } else {
        oy = ph == crop ? 0 : rng.next() % (ph - crop + 1);
        ox = pw == crop ? 0 : rng.next() % (pw - crop + 1);
    }
    const std::size_t C = resized.dim(0);
    Tensor out({C, crop, crop});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < crop; ++y)
            for (std::size_t x = 0; x < crop; ++x)
                out.at3(c, y, x) = resized.at3(c, oy + y, ox + x);
    return out;
}

Tensor normalize_stack(const Tensor& stack) {
    if (stack.rank() != 3 || stack.dim(0) < 3)
        throw std::invalid_argument("normalize_stack: expects [>=3,H,W]");
    static const double mean[3] = {0.485, 0.456, 0.406};
    static const double stddev[3] = {0.229, 0.224, 0.225};
    Tensor out = stack;
    const std::size_t HW = stack.dim(1) * stack.dim(2);
    for (std::size_t c = 0; c < stack.dim(0); ++c) {
        double* p = out.data() + c * HW;
        if (c < 3) {
            for (std::size_t i = 0; i < HW; ++i) p[i] = (p[i] - mean[c]) / stddev[c];
        } else {
            for (std::size_t i = 0; i < HW; ++i) p[i] = (p[i] - 0.5) / 0.5;
        }
    }
    return out;
}

double bce_loss(double logit, int label) {
    if (label != 0 && label != 1) throw std::invalid_argument("bce_loss: label must be 0/1");
    return std::max(logit, 0.0) - logit * (double)label + std::log1p(std::exp(-std::fabs(logit)));
}

Tensor ste_backward(const Tensor& upstream_grad, const Tensor& latent) {
    if (upstream_grad.shape() != latent.shape())
        throw std::invalid_argument("ste_backward: shape mismatch");
    Tensor out = upstream_grad;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (std::fabs(latent[i]) > 1.0) out[i] = 0.0;
    return out;
}

double lr_schedule(double epoch_progress, const TrainConfig& cfg) {
    if (epoch_progress < 0.0) throw std::invalid_argument("lr_schedule: negative progress");
    // linear ramp hitting lr_final at the end of epoch 5, clamped after
    if (epoch_progress >= 5.0) return cfg.lr_final;
    return cfg.lr_init + (cfg.lr_final - cfg.lr_init) * (epoch_progress / 5.0);
}

// ---------------------------------------------------------------------------
// surrogate forward / backward

namespace {

inline double clip1(double v) { return std::clamp(v, -1.0, 1.0); }
inline double clip_mask(double v) { return std::fabs(v) <= 1.0 ? 1.0 : 0.0; }
inline double sgn0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor clip_tensor(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = clip1(out[i]);
    return out;
}

Tensor binsign_tensor(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] >= 0.0 ? 1.0 : -1.0;
    return out;
}

// Surrogate: sign replaced everywhere by the clipped identity (differentiable
// end to end). Binary: the real deployed forward; backward then applies the
// straight-through derivative at every sign site.
enum class FwdMode { Surrogate, Binary };

// the deployed path binarizes zero padding to +1; the surrogate sees clip(0)=0
inline double pad_value(FwdMode mode) { return mode == FwdMode::Binary ? 1.0 : 0.0; }

Tensor pad_const(const Tensor& x, std::size_t pad, double value) {
    if (pad == 0) return x;
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out({C, H + 2 * pad, W + 2 * pad});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = value;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y) {
            const double* src = x.data() + (c * H + y) * W;
            double* dst = out.data() + (c * (H + 2 * pad) + y + pad) * (W + 2 * pad) + pad;
            for (std::size_t xx = 0; xx < W; ++xx) dst[xx] = src[xx];
        }
    return out;
}

struct BlockCache {
    Tensor x_in;       // block input, pre-binarization
    Tensor a;          // clip(x_in) or sign(x_in)
    Tensor conv_raw;   // conv2d(a, W~) before alpha, W~ per mode
};

struct ForwardCache {
    Tensor stack;
    Tensor adapter_out;
    std::vector<BlockCache> blocks;
    Tensor last;    // output of the final block
    Tensor pooled;  // [f] pre-clip/sign
    Tensor feat;    // clip(pooled) or sign(pooled)
    double logit = 0.0;
};

double net_forward(const Tensor& stack, const ModelState& state, ForwardCache* cache,
                   FwdMode mode) {
    Tensor x = adapter_forward(stack, state);
    if (cache) {
        cache->stack = stack;
        cache->adapter_out = x;
    }
    for (std::size_t bi = 0; bi < state.spec.blocks.size(); ++bi) {
        const BlockSpec& bs = state.spec.blocks[bi];
        const BlockState& b = state.blocks[bi];
        Tensor a = mode == FwdMode::Surrogate ? clip_tensor(x) : binsign_tensor(x);
        a = pad_const(a, bs.conv.padding, pad_value(mode));
        Tensor wc = mode == FwdMode::Surrogate ? clip_tensor(b.latent) : binsign_tensor(b.latent);
        ConvSpec cs = bs.conv;
        cs.padding = 0;
        Tensor conv = conv2d_ref(a, wc, cs);
        const std::size_t O = bs.conv.out_channels;
        const std::size_t HWo = conv.dim(1) * conv.dim(2);
        Tensor y = conv;
        for (std::size_t o = 0; o < O; ++o) {
            double* p = y.data() + o * HWo;
            const double g = b.gamma[o], al = b.alpha.alpha[o], bb = b.beta[o];
            for (std::size_t i = 0; i < HWo; ++i) p[i] = g * (p[i] * al) + bb;
        }
        if (bs.has_skip) {
            if (bs.needs_projection()) {
                const std::size_t C = bs.conv.in_channels, s = bs.conv.stride;
                for (std::size_t o = 0; o < O; ++o)
                    for (std::size_t oy = 0; oy < y.dim(1); ++oy)
                        for (std::size_t ox = 0; ox < y.dim(2); ++ox) {
                            double acc = 0.0;
                            for (std::size_t c = 0; c < C; ++c)
                                acc += b.proj.at2(o, c) * x.at3(c, oy * s, ox * s);
                            y.at3(o, oy, ox) += acc;
                        }
            } else {
                for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
            }
        }
        if (cache) cache->blocks.push_back({std::move(x), std::move(a), std::move(conv)});
        x = std::move(y);
    }
    const std::size_t f = x.dim(0), HW = x.dim(1) * x.dim(2);
    Tensor pooled({f});
    for (std::size_t c = 0; c < f; ++c) {
        double s = 0.0;
        const double* p = x.data() + c * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
        pooled[c] = s / (double)HW;
    }
    Tensor feat({f});
    for (std::size_t c = 0; c < f; ++c)
        feat[c] = mode == FwdMode::Surrogate ? clip1(pooled[c]) : (pooled[c] >= 0.0 ? 1.0 : -1.0);
    double logit = state.head_b;
    for (std::size_t c = 0; c < f; ++c) logit += state.head_w[c] * feat[c];
    if (cache) {
        cache->last = std::move(x);
        cache->pooled = std::move(pooled);
        cache->feat = std::move(feat);
        cache->logit = logit;
    }
    return logit;
}

}  // namespace

ParamGrads ParamGrads::zeros_like(const ModelState& state) {
    ParamGrads g;
    g.adapter_w = Tensor(state.adapter_w.shape());
    g.adapter_b.assign(3, 0.0);
    for (const BlockState& b : state.blocks) {
        Block bg;
        bg.latent = Tensor(b.latent.shape());
        bg.gamma.assign(b.gamma.size(), 0.0);
        bg.beta.assign(b.beta.size(), 0.0);
        if (b.proj.size()) bg.proj = Tensor(b.proj.shape());
        g.blocks.push_back(std::move(bg));
    }
    g.head_w.assign(state.head_w.size(), 0.0);
    return g;
}

void ParamGrads::accumulate(const ParamGrads& other, double scale) {
    for (std::size_t i = 0; i < adapter_w.size(); ++i) adapter_w[i] += scale * other.adapter_w[i];
    for (std::size_t i = 0; i < adapter_b.size(); ++i) adapter_b[i] += scale * other.adapter_b[i];
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t i = 0; i < blocks[b].latent.size(); ++i)
            blocks[b].latent[i] += scale * other.blocks[b].latent[i];
        for (std::size_t i = 0; i < blocks[b].gamma.size(); ++i) {
            blocks[b].gamma[i] += scale * other.blocks[b].gamma[i];
            blocks[b].beta[i] += scale * other.blocks[b].beta[i];
        }
        for (std::size_t i = 0; i < blocks[b].proj.size(); ++i)
            blocks[b].proj[i] += scale * other.blocks[b].proj[i];
    }
    for (std::size_t i = 0; i < head_w.size(); ++i) head_w[i] += scale * other.head_w[i];
    head_b += scale * other.head_b;
}

double surrogate_loss(const Tensor& stack, int label, const ModelState& state) {
    return bce_loss(net_forward(stack, state, nullptr, FwdMode::Surrogate), label);
}

namespace {

double loss_and_grads(const Tensor& stack, int label, const ModelState& state,
                      ParamGrads& grads, bool backbone_grads, FwdMode mode) {
    ForwardCache cache;
    const double logit = net_forward(stack, state, &cache, mode);
    const double loss = bce_loss(logit, label);

    const double dlogit = 1.0 / (1.0 + std::exp(-logit)) - (double)label;
    const std::size_t f = cache.feat.size();
    for (std::size_t c = 0; c < f; ++c) grads.head_w[c] += dlogit * cache.feat[c];
    grads.head_b += dlogit;

    const std::size_t HW_last = cache.last.dim(1) * cache.last.dim(2);
    Tensor dx(cache.last.shape());
    for (std::size_t c = 0; c < f; ++c) {
        const double dpool = dlogit * state.head_w[c] * clip_mask(cache.pooled[c]);
        const double spread = dpool / (double)HW_last;
        double* p = dx.data() + c * HW_last;
        for (std::size_t i = 0; i < HW_last; ++i) p[i] = spread;
    }

    for (std::size_t bi = state.spec.blocks.size(); bi-- > 0;) {
        const BlockSpec& bs = state.spec.blocks[bi];
        const BlockState& b = state.blocks[bi];
        const BlockCache& bc = cache.blocks[bi];
        ParamGrads::Block& bg = grads.blocks[bi];
        const std::size_t O = bs.conv.out_channels;
        const std::size_t Ho = dx.dim(1), Wo = dx.dim(2);
        const std::size_t HWo = Ho * Wo;
        const std::size_t per = b.latent.size() / O;

        // dY is dx; split into affine, alpha, conv and skip paths
        Tensor dconv({O, Ho, Wo});
        std::vector<double> dalpha(O, 0.0);
        for (std::size_t o = 0; o < O; ++o) {
            const double* dy = dx.data() + o * HWo;
            const double* cr = bc.conv_raw.data() + o * HWo;
            const double g = b.gamma[o], al = b.alpha.alpha[o];
            double dbeta = 0.0, dgamma = 0.0, da = 0.0;
            double* dc = dconv.data() + o * HWo;
            for (std::size_t i = 0; i < HWo; ++i) {
                dbeta += dy[i];
                dgamma += dy[i] * cr[i] * al;
                const double ds = dy[i] * g;  // grad at conv_raw * alpha
                da += ds * cr[i];
                dc[i] = ds * al;
            }
            if (backbone_grads) {
                bg.beta[o] += dbeta;
                bg.gamma[o] += dgamma;
                dalpha[o] = da;
            }
        }

        // bc.a carries the explicit constant padding; gradients w.r.t. the pad
        // cells accumulate in dpad and are discarded at the crop below
        Tensor dpad(bc.a.shape());
        const std::size_t C = bs.conv.in_channels;
        const std::size_t H = bc.a.dim(1), W = bc.a.dim(2);
        const long pad = 0;
        Tensor wc = mode == FwdMode::Surrogate ? clip_tensor(b.latent) : binsign_tensor(b.latent);
        Tensor dwc = backbone_grads ? Tensor(b.latent.shape()) : Tensor();
        // fused input-grad / weight-grad accumulation, row-contiguous per
        // kernel position so the inner loops vectorize
        const long st = (long)bs.conv.stride;
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t ky = 0; ky < bs.conv.kernel_h; ++ky) {
                    const long oy_lo = pad > (long)ky ? (pad - (long)ky + st - 1) / st : 0;
                    const long oy_hi =
                        std::min((long)Ho, ((long)H + pad - (long)ky - 1) / st + 1);
                    for (std::size_t kx = 0; kx < bs.conv.kernel_w; ++kx) {
                        const std::size_t widx =
                            ((o * C + c) * bs.conv.kernel_h + ky) * bs.conv.kernel_w + kx;
                        const double wv = wc[widx];
                        const long ox_lo = pad > (long)kx ? (pad - (long)kx + st - 1) / st : 0;
                        const long ox_hi =
                            std::min((long)Wo, ((long)W + pad - (long)kx - 1) / st + 1);
                        const long n = ox_hi - ox_lo;
                        if (n <= 0) continue;
                        double gw = 0.0;
                        for (long oy = oy_lo; oy < oy_hi; ++oy) {
                            const long y = oy * st + (long)ky - pad;
                            const std::size_t x0 = (std::size_t)(ox_lo * st + (long)kx - pad);
                            const std::size_t base = (c * H + (std::size_t)y) * W + x0;
                            const double* arow = bc.a.data() + base;
                            double* drow = dpad.data() + base;
                            const double* gr =
                                dconv.data() + (o * Ho + (std::size_t)oy) * Wo + ox_lo;
                            if (backbone_grads) {
                                if (st == 1)
                                    for (long i = 0; i < n; ++i) {
                                        gw += gr[i] * arow[i];
                                        drow[i] += wv * gr[i];
                                    }
                                else
                                    for (long i = 0; i < n; ++i) {
                                        gw += gr[i] * arow[i * st];
                                        drow[i * st] += wv * gr[i];
                                    }
                            } else {
                                if (st == 1)
                                    for (long i = 0; i < n; ++i) drow[i] += wv * gr[i];
                                else
                                    for (long i = 0; i < n; ++i) drow[i * st] += wv * gr[i];
                            }
                        }
                        if (backbone_grads) dwc[widx] = gw;
                    }
                }
        if (backbone_grads) {
            // through clip(W) and through alpha = mean|W|
            for (std::size_t o = 0; o < O; ++o) {
                const double da_per = dalpha[o] / (double)per;
                for (std::size_t i = 0; i < per; ++i) {
                    const double w = b.latent[o * per + i];
                    bg.latent[o * per + i] +=
                        dwc[o * per + i] * clip_mask(w) + da_per * sgn0(w);
                }
            }
        }
        // crop the pad ring off, apply the activation clip mask, then add the
        // skip-path gradient
        Tensor dxin(bc.x_in.shape());
        {
            const std::size_t p = bs.conv.padding;
            const std::size_t Hi = bc.x_in.dim(1), Wi = bc.x_in.dim(2);
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t y = 0; y < Hi; ++y) {
                    const double* src = dpad.data() + (c * H + y + p) * W + p;
                    double* dst = dxin.data() + (c * Hi + y) * Wi;
                    for (std::size_t xx = 0; xx < Wi; ++xx) dst[xx] = src[xx];
                }
        }
        for (std::size_t i = 0; i < dxin.size(); ++i) dxin[i] *= clip_mask(bc.x_in[i]);
        if (bs.has_skip) {
            if (bs.needs_projection()) {
                const std::size_t s = bs.conv.stride;
                for (std::size_t o = 0; o < O; ++o)
                    for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            const double dy = dx.at3(o, oy, ox);
                            for (std::size_t c = 0; c < C; ++c) {
                                dxin.at3(c, oy * s, ox * s) += b.proj.at2(o, c) * dy;
                                if (backbone_grads)
                                    bg.proj.at2(o, c) += dy * bc.x_in.at3(c, oy * s, ox * s);
                            }
                        }
            } else {
                for (std::size_t i = 0; i < dxin.size(); ++i) dxin[i] += dx[i];
            }
        }
        dx = std::move(dxin);
    }

    // adapter: dx is now the gradient at the adapter output
    const std::size_t HW = cache.stack.dim(1) * cache.stack.dim(2);
    for (std::size_t o = 0; o < 3; ++o) {
        const double* dp = dx.data() + o * HW;
        double db = 0.0;
        for (std::size_t i = 0; i < HW; ++i) db += dp[i];
        grads.adapter_b[o] += db;
        for (std::size_t c = 0; c < cache.stack.dim(0); ++c) {
            const double* sp = cache.stack.data() + c * HW;
            double dw = 0.0;
            for (std::size_t i = 0; i < HW; ++i) dw += dp[i] * sp[i];
            grads.adapter_w.at4(o, c, 0, 0) += dw;
        }
    }
    return loss;
}

}  // namespace

double surrogate_loss_and_grads(const Tensor& stack, int label, const ModelState& state,
                                ParamGrads& grads, bool backbone_grads) {
    return loss_and_grads(stack, label, state, grads, backbone_grads, FwdMode::Surrogate);
}

double ste_loss_and_grads(const Tensor& stack, int label, const ModelState& state,
                          ParamGrads& grads, bool backbone_grads) {
    return loss_and_grads(stack, label, state, grads, backbone_grads, FwdMode::Binary);
}

// ---------------------------------------------------------------------------
// optimizer

namespace {

struct ParamView {
    double* p;
    std::size_t n;
    bool decay;
    bool backbone;
    bool latent;
};

std::vector<ParamView> param_views(ModelState& st) {
    std::vector<ParamView> v;
    v.push_back({st.adapter_w.data(), st.adapter_w.size(), true, false, false});
    v.push_back({st.adapter_b.data(), st.adapter_b.size(), false, false, false});
    for (BlockState& b : st.blocks) {
        v.push_back({b.latent.data(), b.latent.size(), false, true, true});
        v.push_back({b.gamma.data(), b.gamma.size(), false, true, false});
        v.push_back({b.beta.data(), b.beta.size(), false, true, false});
        if (b.proj.size()) v.push_back({b.proj.data(), b.proj.size(), true, true, false});
    }
    v.push_back({st.head_w.data(), st.head_w.size(), true, false, false});
    v.push_back({&st.head_b, 1, false, false, false});
    return v;
}

std::vector<const double*> grad_ptrs(const ParamGrads& g) {
    std::vector<const double*> v;
    v.push_back(g.adapter_w.data());
    v.push_back(g.adapter_b.data());
    for (const ParamGrads::Block& b : g.blocks) {
        v.push_back(b.latent.data());
        v.push_back(b.gamma.data());
        v.push_back(b.beta.data());
        if (b.proj.size()) v.push_back(b.proj.data());
    }
    v.push_back(g.head_w.data());
    v.push_back(&g.head_b);
    return v;
}

}  // namespace

AdamW::AdamW(const ModelState& state, const TrainConfig& cfg) : cfg_(cfg) {
    std::size_t total = 0;
    ModelState& st = const_cast<ModelState&>(state);
    for (const ParamView& pv : param_views(st)) total += pv.n;
    opt_.m.assign(total, 0.0);
    opt_.v.assign(total, 0.0);
}

void AdamW::step(ModelState& state, const ParamGrads& grads, double lr) {
    auto views = param_views(state);
    auto gp = grad_ptrs(grads);
    for (std::size_t i = 0; i < views.size(); ++i)
        for (std::size_t j = 0; j < views[i].n; ++j)
            if (!std::isfinite(gp[i][j]))
                throw std::runtime_error("adamw_step: non-finite gradient, aborting step");

    opt_.step += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, (double)opt_.step);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, (double)opt_.step);
    constexpr double eps = 1e-8;
    std::size_t off = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
        ParamView& pv = views[i];
        if (cfg_.freeze_backbone && pv.backbone) {
            off += pv.n;
            continue;
        }
        for (std::size_t j = 0; j < pv.n; ++j) {
            const std::size_t k = off + j;
            if (pv.decay) pv.p[j] -= lr * cfg_.weight_decay * pv.p[j];
            const double g = gp[i][j];
            opt_.m[k] = cfg_.beta1 * opt_.m[k] + (1.0 - cfg_.beta1) * g;
            opt_.v[k] = cfg_.beta2 * opt_.v[k] + (1.0 - cfg_.beta2) * g * g;
            const double mh = opt_.m[k] / bc1;
            const double vh = opt_.v[k] / bc2;
            pv.p[j] -= lr * mh / (std::sqrt(vh) + eps);
            // keep the STE active region populated
            if (pv.latent) pv.p[j] = std::clamp(pv.p[j], -1.5, 1.5);
        }
        off += pv.n;
    }
    if (!cfg_.freeze_backbone) state.refresh_all();
}

// ---------------------------------------------------------------------------
// training loop

LoadedSplit load_split(const std::vector<ManifestEntry>& entries) {
    LoadedSplit s;
    for (const ManifestEntry& e : entries) {
        s.images.push_back(load_pnm(e.path));
        s.labels.push_back(e.label);
    }
    return s;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Tensor train_sample_stack(const Tensor& image, const TrainConfig& cfg, TrainRng& rng) {
    Tensor aug = augment(image, cfg, rng);
    Tensor crop = preprocess(aug, PreprocessMode::Train, rng, cfg.resize_longest, cfg.crop_size);
    FeatureStack stack = build_stack(crop, cfg.channels);
    return normalize_stack(stack.channels);
}

Tensor eval_sample_stack(const Tensor& image, const TrainConfig& cfg) {
    TrainRng rng{0};
    Tensor crop = preprocess(image, PreprocessMode::Eval, rng, cfg.resize_longest, cfg.crop_size);
    FeatureStack stack = build_stack(crop, cfg.channels);
    return normalize_stack(stack.channels);
}

}  // namespace

double predict_probability(const Tensor& image, const ModelState& state,
                           const TrainConfig& cfg) {
    const double z = model_forward(eval_sample_stack(image, cfg), state);
    return 1.0 / (1.0 + std::exp(-z));
}

EvalReport evaluate(const LoadedSplit& split, const ModelState& state, const TrainConfig& cfg) {
    if (split.images.empty()) throw data_error("evaluate: empty split");
    std::vector<double> scores;
    scores.reserve(split.images.size());
    for (const Tensor& img : split.images)
        scores.push_back(predict_probability(img, state, cfg));
    EvalReport rep = make_report(scores, split.labels);
    rep.ops = count_ops(state.spec);
    return rep;
}

TrainResult train_loop(const LoadedSplit& train_split, const LoadedSplit& val_split,
                       ModelState model, const TrainConfig& cfg,
                       const std::function<void(const std::string&)>& log_sink) {
    cfg.validate();
    if (train_split.images.empty()) throw data_error("train_loop: empty training set");
    bool has0 = false, has1 = false;
    for (int l : train_split.labels) (l ? has1 : has0) = true;
    if (!has0 || !has1) throw data_error("train_loop: training set must contain both classes");

    const LoadedSplit& val = val_split.images.empty() ? train_split : val_split;

    TrainResult result;
    AdamW opt(model, cfg);
    auto log = [&](const std::string& line) {
        result.log_lines.push_back(line);
        if (log_sink) log_sink(line);
    };

    const std::size_t n = train_split.images.size();
    std::vector<std::size_t> order(n);
    double best_acc = -1.0;
    long long global_step = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        // class-stratified shuffle: shuffle each class, then interleave
        // proportionally so every batch stays close to the class balance of
        // the split (keeps the batch-imbalance noise out of the gradient)
        TrainRng shuffle_rng{cfg.seed * 0x51ed2701u + epoch + 1};
        std::vector<std::size_t> byclass[2];
        for (std::size_t i = 0; i < n; ++i) byclass[train_split.labels[i] ? 1 : 0].push_back(i);
        for (auto& idxs : byclass)
            for (std::size_t i = idxs.size(); i > 1; --i)
                std::swap(idxs[i - 1], idxs[shuffle_rng.next() % i]);
        std::size_t taken[2] = {0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const double f0 = byclass[0].empty()
                                  ? 2.0
                                  : ((double)taken[0] + 0.5) / (double)byclass[0].size();
            const double f1 = byclass[1].empty()
                                  ? 2.0
                                  : ((double)taken[1] + 0.5) / (double)byclass[1].size();
            const int c = (taken[0] < byclass[0].size() &&
                           (taken[1] >= byclass[1].size() || f0 <= f1))
                              ? 0
                              : 1;
            order[i] = byclass[c][taken[c]++];
        }

        const std::size_t steps = (n + cfg.batch_size - 1) / cfg.batch_size;
        double epoch_loss = 0.0;
        std::size_t epoch_count = 0;
        for (std::size_t step = 0; step < steps; ++step) {
            const std::size_t lo = step * cfg.batch_size;
            const std::size_t hi = std::min(n, lo + cfg.batch_size);
            ParamGrads grads = ParamGrads::zeros_like(model);
            double batch_loss = 0.0;
            for (std::size_t bi = lo; bi < hi; ++bi) {
                const std::size_t idx = order[bi];
                TrainRng rng{(cfg.seed + 1) * 0x9e3779b97f4a7c15ull +
                             epoch * 0x100000001ull + idx};
                Tensor stack = train_sample_stack(train_split.images[idx], cfg, rng);
                ParamGrads sample = ParamGrads::zeros_like(model);
                batch_loss += ste_loss_and_grads(stack, train_split.labels[idx], model,
                                                 sample, !cfg.freeze_backbone);
                grads.accumulate(sample, 1.0 / (double)(hi - lo));
            }
            batch_loss /= (double)(hi - lo);
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train_loop: non-finite loss");
            const double lr =
                lr_schedule((double)epoch + (double)step / (double)steps, cfg);
            opt.step(model, grads, lr);
            log("{\"epoch\":" + std::to_string(epoch) + ",\"step\":" +
                std::to_string(global_step) + ",\"loss\":" + fmt_double(batch_loss) +
                ",\"lr\":" + fmt_double(lr) + "}");
            epoch_loss += batch_loss * (double)(hi - lo);
            epoch_count += hi - lo;
            ++global_step;
        }

        std::vector<double> scores;
        scores.reserve(val.images.size());
        for (const Tensor& img : val.images)
            scores.push_back(predict_probability(img, model, cfg));
        std::vector<int> preds(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] >= 0.5 ? 1 : 0;
        const double val_acc = accuracy(preds, val.labels);
        double val_auc;
        try {
            val_auc = auc(scores, val.labels);
        } catch (const std::invalid_argument&) {
            val_auc = 0.0;  // single-class validation split
        }

        EpochStats st;
        st.epoch = epoch;
        st.mean_loss = epoch_loss / (double)epoch_count;
        st.val_acc = val_acc;
        st.val_auc = val_auc;
        result.epochs.push_back(st);
        log("{\"epoch\":" + std::to_string(epoch) + ",\"val_acc\":" + fmt_double(val_acc) +
            ",\"val_auc\":" + fmt_double(val_auc) + "}");

        if (val_acc > best_acc) {
            best_acc = val_acc;
            result.best = model;
        }
        if (cfg.target_val_acc > 0.0 && val_acc >= cfg.target_val_acc &&
            (cfg.target_val_auc <= 0.0 || val_auc >= cfg.target_val_auc))
            break;
    }
    return result;
}

}  // namespace bnfk
