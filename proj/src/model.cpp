#include "bnfk/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

namespace bnfk {

void ModelSpec::validate() const {
    if (in_channels == 0) throw std::invalid_argument("ModelSpec: in_channels == 0");
    if (adapter.in_channels != in_channels || adapter.out_channels != 3 ||
        adapter.kernel_h != 1 || adapter.kernel_w != 1 || adapter.stride != 1 ||
        adapter.padding != 0)
        throw std::invalid_argument("ModelSpec: adapter must be a 1x1 conv to 3 channels");
    std::size_t c = 3;
    for (const BlockSpec& b : blocks) {
        if (b.conv.in_channels != c)
            throw std::invalid_argument("ModelSpec: block channel chain mismatch");
        c = b.conv.out_channels;
    }
}

ModelSpec default_desk_spec(std::size_t in_channels, std::size_t input_h,
                            std::size_t input_w) {
    ModelSpec spec;
    spec.in_channels = in_channels;
    spec.input_h = input_h;
    spec.input_w = input_w;
    spec.adapter = {in_channels, 3, 1, 1, 1, 0};
    const std::size_t chans[] = {16, 32, 64, 64};
    const std::size_t strides[] = {1, 2, 2, 1};
    std::size_t c = 3;
    for (int i = 0; i < 4; ++i) {
        BlockSpec b;
        b.conv = {c, chans[i], 3, 3, strides[i], 1};
        b.has_skip = (strides[i] == 1 && c == chans[i]);
        spec.blocks.push_back(b);
        c = chans[i];
    }
    return spec;
}

void ModelState::refresh_block(std::size_t i) {
    BlockState& b = blocks[i];
    b.alpha = compute_alpha(b.latent);
    b.packed = pack_conv_weights_signed(b.latent);
}

void ModelState::refresh_all() {
    for (std::size_t i = 0; i < blocks.size(); ++i) refresh_block(i);
}

ModelState make_initial_state(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    auto urand = [&] { return (double)(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };

    ModelState st;
    st.spec = spec;
    st.adapter_w = Tensor({3, spec.in_channels, 1, 1});
    st.adapter_b.assign(3, 0.0);
    // RGB passthrough plus a seeded random mix of the augmentation channels,
    // so the extra planes reach the backbone before any training step
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t c = 0; c < spec.in_channels; ++c)
            st.adapter_w.at4(o, c, 0, 0) = (c == o) ? 1.0 : (c >= 3 ? 0.5 * urand() : 0.0);

    for (const BlockSpec& bs : spec.blocks) {
        BlockState b;
        b.latent = Tensor({bs.conv.out_channels, bs.conv.in_channels, bs.conv.kernel_h,
                           bs.conv.kernel_w});
        // scale so binarized conv outputs (alpha ~ s/2 times a +-sqrt(fan_in)
        // popcount sum) land near unit magnitude, keeping pre-sign activations
        // inside the straight-through window where gradients flow
        const double fan_in = (double)(bs.conv.in_channels * bs.conv.kernel_h * bs.conv.kernel_w);
        const double s = 2.0 / std::sqrt(fan_in);
        for (std::size_t i = 0; i < b.latent.size(); ++i) b.latent[i] = s * urand();
        b.gamma.assign(bs.conv.out_channels, 1.0);
        b.beta.assign(bs.conv.out_channels, 0.0);
        if (bs.needs_projection()) {
            b.proj = Tensor({bs.conv.out_channels, bs.conv.in_channels});
            const double s = 1.0 / std::sqrt((double)bs.conv.in_channels);
            for (std::size_t i = 0; i < b.proj.size(); ++i) b.proj[i] = s * urand();
        }
        st.blocks.push_back(std::move(b));
    }
    st.head_w.assign(spec.feature_dim(), 0.0);
    st.head_b = 0.0;
    st.refresh_all();
    return st;
}

Tensor adapter_forward(const Tensor& stack, const ModelState& state) {
    if (stack.rank() != 3 || stack.dim(0) != state.spec.in_channels)
        throw std::invalid_argument("adapter_forward: channel mismatch");
    const std::size_t C = stack.dim(0), H = stack.dim(1), W = stack.dim(2);
    Tensor out({3, H, W});
    for (std::size_t o = 0; o < 3; ++o) {
        double* dst = out.data() + o * H * W;
        for (std::size_t i = 0; i < H * W; ++i) dst[i] = state.adapter_b[o];
        for (std::size_t c = 0; c < C; ++c) {
            const double wv = state.adapter_w.at4(o, c, 0, 0);
            if (wv == 0.0) continue;
            const double* src = stack.data() + c * H * W;
            for (std::size_t i = 0; i < H * W; ++i) dst[i] += wv * src[i];
        }
    }
    return out;
}

Tensor block_forward(const Tensor& x, const BlockSpec& block, const BlockState& state) {
    Tensor y = binary_conv2d(x, state.packed, state.alpha, block.conv);
    const std::size_t O = block.conv.out_channels;
    const std::size_t Ho = y.dim(1), Wo = y.dim(2);
    for (std::size_t o = 0; o < O; ++o) {
        double* p = y.data() + o * Ho * Wo;
        const double g = state.gamma[o], b = state.beta[o];
        for (std::size_t i = 0; i < Ho * Wo; ++i) p[i] = g * p[i] + b;
    }
    if (block.has_skip) {
        if (block.needs_projection()) {
            const std::size_t C = block.conv.in_channels, s = block.conv.stride;
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t oy = 0; oy < Ho; ++oy)
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < C; ++c)
                            acc += state.proj.at2(o, c) * x.at3(c, oy * s, ox * s);
                        y.at3(o, oy, ox) += acc;
                    }
        } else {
            if (x.shape() != y.shape())
                throw std::invalid_argument("block_forward: identity skip shape mismatch");
            for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
        }
    }
    return y;
}

Tensor backbone_forward(const Tensor& x3, const ModelState& state) {
    Tensor x = x3;
    for (std::size_t i = 0; i < state.spec.blocks.size(); ++i)
        x = block_forward(x, state.spec.blocks[i], state.blocks[i]);
    const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
    Tensor feat({C});
    for (std::size_t c = 0; c < C; ++c) {
        double sum = 0.0;
        const double* p = x.data() + c * HW;
        for (std::size_t i = 0; i < HW; ++i) sum += p[i];
        feat[c] = (sum / (double)HW) >= 0.0 ? 1.0 : -1.0;
    }
    return feat;
}

double head_forward(const Tensor& feat, const ModelState& state) {
    if (feat.size() != state.head_w.size())
        throw std::invalid_argument("head_forward: length mismatch");
    double z = state.head_b;
    for (std::size_t i = 0; i < feat.size(); ++i) z += state.head_w[i] * feat[i];
    return z;
}

double model_forward(const Tensor& stack, const ModelState& state) {
    return head_forward(backbone_forward(adapter_forward(stack, state), state), state);
}

// ---------------------------------------------------------------------------
// serialization

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t seed) {
    static std::uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    std::uint32_t crc = ~seed;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return ~crc;
}

namespace {

constexpr char kMagic[4] = {'B', 'N', 'F', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(bits >> (8 * i)));
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    std::uint32_t u32(const std::string& section) {
        if (pos + 4 > buf.size())
            throw model_format_error(ModelError::Truncated,
                                     "model file truncated in section: " + section);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    double f64(const std::string& section) {
        if (pos + 8 > buf.size())
            throw model_format_error(ModelError::Truncated,
                                     "model file truncated in section: " + section);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= std::uint64_t(buf[pos + i]) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void f64_array(double* dst, std::size_t n, const std::string& section) {
        for (std::size_t i = 0; i < n; ++i) dst[i] = f64(section);
    }
};

}  // namespace

void save_model(const ModelState& state, const std::string& path) {
    const ModelSpec& spec = state.spec;
    std::vector<std::uint8_t> body;  // everything after the magic
    put_u32(body, kVersion);

    std::vector<std::uint8_t> sec;
    put_u32(sec, (std::uint32_t)spec.in_channels);
    put_u32(sec, (std::uint32_t)spec.input_h);
    put_u32(sec, (std::uint32_t)spec.input_w);
    put_u32(sec, (std::uint32_t)spec.blocks.size());
    for (const BlockSpec& b : spec.blocks) {
        put_u32(sec, (std::uint32_t)b.conv.in_channels);
        put_u32(sec, (std::uint32_t)b.conv.out_channels);
        put_u32(sec, (std::uint32_t)b.conv.kernel_h);
        put_u32(sec, (std::uint32_t)b.conv.kernel_w);
        put_u32(sec, (std::uint32_t)b.conv.stride);
        put_u32(sec, (std::uint32_t)b.conv.padding);
        put_u32(sec, b.has_skip ? 1 : 0);
    }
    put_u32(body, (std::uint32_t)sec.size());
    body.insert(body.end(), sec.begin(), sec.end());

    auto put_array = [&](const double* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) put_f64(body, p[i]);
    };
    put_array(state.adapter_w.data(), state.adapter_w.size());
    put_array(state.adapter_b.data(), state.adapter_b.size());
    for (std::size_t i = 0; i < state.blocks.size(); ++i) {
        const BlockState& b = state.blocks[i];
        put_array(b.latent.data(), b.latent.size());
        put_array(b.gamma.data(), b.gamma.size());
        put_array(b.beta.data(), b.beta.size());
        if (spec.blocks[i].needs_projection()) put_array(b.proj.data(), b.proj.size());
    }
    put_array(state.head_w.data(), state.head_w.size());
    put_f64(body, state.head_b);

    std::uint32_t crc = crc32(body.data(), body.size());

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("save_model: cannot open " + tmp);
        f.write(kMagic, 4);
        f.write(reinterpret_cast<const char*>(body.data()), (std::streamsize)body.size());
        std::vector<std::uint8_t> tail;
        put_u32(tail, crc);
        f.write(reinterpret_cast<const char*>(tail.data()), 4);
        if (!f) throw std::runtime_error("save_model: write failed on " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("save_model: rename to " + path + " failed");
}

ModelState load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_model: cannot open " + path);
    std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    if (raw.size() < 4 || std::memcmp(raw.data(), kMagic, 4) != 0)
        throw model_format_error(ModelError::BadMagic, "not a model file (bad magic)");
    if (raw.size() < 12)
        throw model_format_error(ModelError::Truncated,
                                 "model file truncated in section: header");
    // body = [4, len-4); trailing u32 is the CRC of the body
    std::vector<std::uint8_t> body(raw.begin() + 4, raw.end() - 4);
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= std::uint32_t(raw[raw.size() - 4 + i]) << (8 * i);
    // CRC verified only once every section parses; a short file reports
    // truncation (with its section) rather than a checksum failure

    Reader r{body};
    std::uint32_t version = r.u32("header");
    if (version != kVersion)
        throw model_format_error(ModelError::VersionMismatch,
                                 "unsupported model version " + std::to_string(version));
    std::uint32_t spec_len = r.u32("spec");
    std::size_t spec_end = r.pos + spec_len;

    ModelSpec spec;
    spec.in_channels = r.u32("spec");
    spec.input_h = r.u32("spec");
    spec.input_w = r.u32("spec");
    std::uint32_t n_blocks = r.u32("spec");
    for (std::uint32_t i = 0; i < n_blocks; ++i) {
        BlockSpec b;
        b.conv.in_channels = r.u32("spec");
        b.conv.out_channels = r.u32("spec");
        b.conv.kernel_h = r.u32("spec");
        b.conv.kernel_w = r.u32("spec");
        b.conv.stride = r.u32("spec");
        b.conv.padding = r.u32("spec");
        b.has_skip = r.u32("spec") != 0;
        spec.blocks.push_back(b);
    }
    if (r.pos != spec_end)
        throw model_format_error(ModelError::Truncated,
                                 "model file truncated in section: spec");
    spec.adapter = {spec.in_channels, 3, 1, 1, 1, 0};
    spec.validate();

    ModelState st;
    st.spec = spec;
    st.adapter_w = Tensor({3, spec.in_channels, 1, 1});
    r.f64_array(st.adapter_w.data(), st.adapter_w.size(), "adapter_w");
    st.adapter_b.assign(3, 0.0);
    r.f64_array(st.adapter_b.data(), 3, "adapter_b");
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        const ConvSpec& c = spec.blocks[i].conv;
        const std::string tag = "block" + std::to_string(i);
        BlockState b;
        b.latent = Tensor({c.out_channels, c.in_channels, c.kernel_h, c.kernel_w});
        r.f64_array(b.latent.data(), b.latent.size(), tag + ".latent");
        b.gamma.assign(c.out_channels, 0.0);
        r.f64_array(b.gamma.data(), b.gamma.size(), tag + ".gamma");
        b.beta.assign(c.out_channels, 0.0);
        r.f64_array(b.beta.data(), b.beta.size(), tag + ".beta");
        if (spec.blocks[i].needs_projection()) {
            b.proj = Tensor({c.out_channels, c.in_channels});
            r.f64_array(b.proj.data(), b.proj.size(), tag + ".proj");
        }
        st.blocks.push_back(std::move(b));
    }
    st.head_w.assign(spec.feature_dim(), 0.0);
    r.f64_array(st.head_w.data(), st.head_w.size(), "head_w");
    st.head_b = r.f64("head_b");
    if (r.pos != body.size())
        throw model_format_error(ModelError::Checksum,
                                 "model file has trailing bytes");
    if (crc32(body.data(), body.size()) != stored)
        throw model_format_error(ModelError::Checksum, "model file checksum mismatch");
    st.refresh_all();
    return st;
}

}  // namespace bnfk
