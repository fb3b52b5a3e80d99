#include "bnfk/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace fs = std::filesystem;

namespace bnfk {

const std::vector<ManifestEntry>& DatasetManifest::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split: " + name);
}

namespace {

constexpr std::size_t kMaxPixels = std::size_t(1) << 26;

struct HeaderParser {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void skip_space() {
        while (pos < buf.size()) {
            char c = (char)buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }
    std::size_t number() {
        skip_space();
        if (pos >= buf.size() || !isdigit(buf[pos]))
            throw data_error("pnm: expected integer in header");
        std::size_t v = 0;
        while (pos < buf.size() && isdigit(buf[pos])) {
            v = v * 10 + (buf[pos] - '0');
            if (v > kMaxPixels) throw data_error("pnm: dimension overflow");
            ++pos;
        }
        return v;
    }
};

}  // namespace

Tensor decode_pnm(const std::vector<std::uint8_t>& bytes, bool broadcast_gray) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw data_error("pnm: bad magic (want P5 or P6)");
    const bool color = bytes[1] == '6';
    HeaderParser h{bytes, 2};
    const std::size_t w = h.number();
    const std::size_t hgt = h.number();
    const std::size_t maxval = h.number();
    if (w == 0 || hgt == 0 || w * hgt > kMaxPixels)
        throw data_error("pnm: dimension overflow");
    if (maxval != 255) throw data_error("pnm: only maxval 255 supported");
    if (h.pos >= bytes.size()) throw data_error("pnm: payload missing");
    ++h.pos;  // single whitespace after maxval
    const std::size_t nchan = color ? 3 : 1;
    const std::size_t need = w * hgt * nchan;
    if (bytes.size() - h.pos < need) throw data_error("pnm: payload shorter than declared size");

    const std::size_t out_c = (color || broadcast_gray) ? 3 : 1;
    Tensor img({out_c, hgt, w});
    for (std::size_t y = 0; y < hgt; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < nchan; ++c) {
                double v = bytes[h.pos + (y * w + x) * nchan + c] / 255.0;
                if (nchan == 1) {
                    for (std::size_t oc = 0; oc < out_c; ++oc) img.at3(oc, y, x) = v;
                } else {
                    img.at3(c, y, x) = v;
                }
            }
    return img;
}

Tensor load_pnm(const std::string& path, bool broadcast_gray) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open image: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_pnm(bytes, broadcast_gray);
}

namespace {

std::uint8_t to_byte(double v) {
    double s = std::clamp(v, 0.0, 1.0) * 255.0;
    return (std::uint8_t)(long)(s + 0.5);
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw std::invalid_argument("encode_ppm: expects [3,h,w]");
    const std::size_t h = rgb.dim(1), w = rgb.dim(2);
    std::ostringstream hdr;
    hdr << "P6\n" << w << " " << h << "\n255\n";
    std::string hs = hdr.str();
    std::vector<std::uint8_t> out(hs.begin(), hs.end());
    out.reserve(out.size() + h * w * 3);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.push_back(to_byte(rgb.at3(c, y, x)));
    return out;
}

std::vector<std::uint8_t> encode_pgm(const Tensor& gray) {
    if (gray.rank() != 2) throw std::invalid_argument("encode_pgm: expects [h,w]");
    const std::size_t h = gray.dim(0), w = gray.dim(1);
    std::ostringstream hdr;
    hdr << "P5\n" << w << " " << h << "\n255\n";
    std::string hs = hdr.str();
    std::vector<std::uint8_t> out(hs.begin(), hs.end());
    for (std::size_t i = 0; i < h * w; ++i) out.push_back(to_byte(gray[i]));
    return out;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw data_error("cannot open for writing: " + tmp);
        f.write(reinterpret_cast<const char*>(bytes.data()), (std::streamsize)bytes.size());
        if (!f) throw data_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw data_error("rename failed: " + path);
}

DatasetManifest scan_directory(const std::string& root) {
    if (!fs::is_directory(root)) throw data_error("dataset root missing: " + root);
    DatasetManifest m;
    bool any_split = false;
    for (const char* split : {"train", "val", "test"}) {
        fs::path sp = fs::path(root) / split;
        if (!fs::is_directory(sp)) continue;
        any_split = true;
        std::vector<ManifestEntry>& dst = const_cast<std::vector<ManifestEntry>&>(m.split(split));
        // real before fake so labels come out 0,0,...,1,1 per split;
        // lexicographic within each class
        for (const char* cls : {"real", "fake"}) {
            fs::path cp = sp / cls;
            if (!fs::is_directory(cp))
                throw data_error("missing class directory: " + cp.string());
            std::vector<std::string> files;
            for (const auto& e : fs::directory_iterator(cp))
                if (e.is_regular_file()) files.push_back(e.path().string());
            std::sort(files.begin(), files.end());
            for (const std::string& f : files)
                dst.push_back({f, std::strcmp(cls, "fake") == 0 ? 1 : 0});
        }
    }
    if (!any_split) throw data_error("no split directories (train/val/test) under " + root);
    if (m.train.empty() && m.val.empty() && m.test.empty())
        throw data_error("dataset contains zero images: " + root);
    return m;
}

// ---------------------------------------------------------------------------
// synthetic generator

namespace {

std::uint64_t splitmix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct Rng {
    std::uint64_t s;
    double uniform() { return (double)(splitmix64(s) >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t next() { return splitmix64(s); }
    double gauss() {
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }
};

void box_blur_region(Tensor& img, std::size_t c, std::size_t y0, std::size_t y1,
                     std::size_t x0, std::size_t x1) {
    const long H = (long)img.dim(1), W = (long)img.dim(2);
    std::vector<double> src(img.data() + c * H * W, img.data() + (c + 1) * H * W);
    for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
            double acc = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    long yy = std::clamp((long)y + dy, 0L, H - 1);
                    long xx = std::clamp((long)x + dx, 0L, W - 1);
                    acc += src[yy * W + xx];
                }
            img.at3(c, y, x) = acc / 9.0;
        }
}

}  // namespace

Tensor synthetic_image(std::size_t size, bool fake, std::uint64_t seed) {
    if (size < 32) throw std::invalid_argument("synthetic_image: size must be >= 32");
    Rng rng{seed};
    const std::size_t n = size;
    const long fmax = std::max<long>(1, (long)(size / 16));

    std::vector<double> field(n * n, 0.0);
    for (int k = 0; k < 4; ++k) {
        double amp = rng.uniform(0.5, 1.0);
        long fx = 0, fy = 0;
        while (fx == 0 && fy == 0) {
            fx = (long)(rng.next() % (2 * fmax + 1)) - fmax;
            fy = (long)(rng.next() % (2 * fmax + 1)) - fmax;
        }
        double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                field[y * n + x] += amp * std::sin(2.0 * std::numbers::pi *
                                                       ((double)(fx * (long)x + fy * (long)y) /
                                                        (double)n) +
                                                   phase);
    }
    for (double& v : field) v += 0.05 * rng.gauss();
    double lo = field[0], hi = field[0];
    for (double v : field) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (double& v : field) v = (v - lo) / span;

    Tensor img({3, n, n});
    for (std::size_t c = 0; c < 3; ++c) {
        double gain = rng.uniform(0.85, 1.0);
        for (std::size_t i = 0; i < n * n; ++i) img[c * n * n + i] = gain * field[i];
    }

    if (fake) {
        const double f = (double)(size / 4);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x)
                    img.at3(c, y, x) +=
                        0.08 * std::sin(2.0 * std::numbers::pi * f * (double)x / (double)n) +
                        0.08 * std::sin(2.0 * std::numbers::pi * f * (double)y / (double)n);
        // homogenize a random half of the image
        switch (rng.next() % 4) {
            case 0:
                for (std::size_t c = 0; c < 3; ++c) box_blur_region(img, c, 0, n, 0, n / 2);
                break;
            case 1:
                for (std::size_t c = 0; c < 3; ++c) box_blur_region(img, c, 0, n, n / 2, n);
                break;
            case 2:
                for (std::size_t c = 0; c < 3; ++c) box_blur_region(img, c, 0, n / 2, 0, n);
                break;
            default:
                for (std::size_t c = 0; c < 3; ++c) box_blur_region(img, c, n / 2, n, 0, n);
        }
    }
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
    return img;
}

void generate_synthetic(const SyntheticParams& params, const std::string& out_root) {
    if (params.n_per_class < 1) throw std::invalid_argument("generate_synthetic: n >= 1");
    const std::size_t n = params.n_per_class;
    const std::size_t n_val = (std::size_t)((double)n * 0.15);
    const std::size_t n_test = n_val;
    const std::size_t n_train = n - n_val - n_test;

    for (int cls = 0; cls < 2; ++cls) {
        const char* cname = cls ? "fake" : "real";
        for (std::size_t i = 0; i < n; ++i) {
            const char* split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
            fs::path dir = fs::path(out_root) / split / cname;
            fs::create_directories(dir);
            std::uint64_t img_seed =
                params.seed * 0x9e3779b97f4a7c15ull + (std::uint64_t)cls * 1000003ull + i;
            Tensor img = synthetic_image(params.size, cls == 1, img_seed);
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%05zu.ppm", cname, i);
            write_file((dir / name).string(), encode_ppm(img));
        }
    }
    std::ostringstream manifest;
    manifest << "{\"seed\":" << params.seed << ",\"n_per_class\":" << n
             << ",\"size\":" << params.size << ",\"splits\":{\"train\":" << n_train
             << ",\"val\":" << n_val << ",\"test\":" << n_test << "}}\n";
    std::string s = manifest.str();
    write_file((fs::path(out_root) / "manifest.json").string(),
               std::vector<std::uint8_t>(s.begin(), s.end()));
}

}  // namespace bnfk
