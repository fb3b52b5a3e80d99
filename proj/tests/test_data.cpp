#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "bnfk/data.hpp"
#include "bnfk/features.hpp"

using namespace bnfk;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const char* tag) {
        path = fs::temp_directory_path() / (std::string("bnfk_data_") + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint8_t> bytes_of(const std::string& s) {
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("decode_pnm: 1x1 P6 red pixel") {
    std::vector<std::uint8_t> data = bytes_of("P6\n1 1\n255\n");
    data.push_back(255);
    data.push_back(0);
    data.push_back(0);
    Tensor t = decode_pnm(data);
    REQUIRE(t.shape() == std::vector<std::size_t>{3, 1, 1});
    CHECK(t[0] == doctest::Approx(1.0));
    CHECK(t[1] == doctest::Approx(0.0));
    CHECK(t[2] == doctest::Approx(0.0));
}

TEST_CASE("decode_pnm: P5 ramp divides by 255") {
    std::vector<std::uint8_t> data = bytes_of("P5\n2 2\n255\n");
    for (int v : {0, 85, 170, 255}) data.push_back((std::uint8_t)v);
    Tensor t = decode_pnm(data, /*broadcast_gray=*/false);
    REQUIRE(t.dim(0) == 1);
    CHECK(t[0] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(t[1] == doctest::Approx(85.0 / 255.0).epsilon(1e-6));
    CHECK(t[2] == doctest::Approx(170.0 / 255.0).epsilon(1e-6));
    CHECK(t[3] == doctest::Approx(1.0).epsilon(1e-6));

    Tensor b = decode_pnm(data, /*broadcast_gray=*/true);
    REQUIRE(b.dim(0) == 3);
    CHECK(b.at3(2, 1, 1) == doctest::Approx(1.0));
}

TEST_CASE("decode_pnm rejects malformed input") {
    CHECK_THROWS_AS(decode_pnm(bytes_of("P3\n1 1\n255\n")), data_error);  // ascii variant
    CHECK_THROWS_AS(decode_pnm(bytes_of("XX\n1 1\n255\n")), data_error);
    std::vector<std::uint8_t> short_payload = bytes_of("P6\n2 2\n255\n");
    short_payload.push_back(0);  // needs 12 bytes
    CHECK_THROWS_AS(decode_pnm(short_payload), data_error);
    CHECK_THROWS_AS(decode_pnm(bytes_of("P6\n1 1\n65535\n")), data_error);  // maxval
}

TEST_CASE("encode/decode round-trip is the identity at 8-bit resolution") {
    std::mt19937 rng(4);
    Tensor img({3, 7, 9});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = (rng() % 256) / 255.0;
    Tensor back = decode_pnm(encode_ppm(img));
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-9));

    Tensor gray({5, 4});
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = (rng() % 256) / 255.0;
    Tensor gback = decode_pnm(encode_pgm(gray), false);
    for (std::size_t i = 0; i < gray.size(); ++i)
        CHECK(gback[i] == doctest::Approx(gray[i]).epsilon(1e-9));
}

TEST_CASE("scan_directory: labels follow subdirectories, lexicographic order") {
    TempDir td("scan");
    for (const char* split : {"train", "val", "test"})
        for (const char* cls : {"real", "fake"})
            fs::create_directories(td.path / split / cls);
    Tensor px({3, 1, 1}, {0.5, 0.5, 0.5});
    auto put = [&](const char* split, const char* cls, const char* name) {
        write_file((td.path / split / cls / name).string(), encode_ppm(px));
    };
    put("train", "real", "b.ppm");
    put("train", "real", "a.ppm");
    put("train", "fake", "z.ppm");
    put("train", "fake", "y.ppm");
    put("val", "real", "v.ppm");
    put("val", "fake", "w.ppm");
    put("test", "real", "t.ppm");
    put("test", "fake", "u.ppm");

    DatasetManifest m = scan_directory(td.path.string());
    REQUIRE(m.train.size() == 4);
    CHECK(m.train[0].label == 0);
    CHECK(m.train[1].label == 0);
    CHECK(m.train[2].label == 1);
    CHECK(m.train[3].label == 1);
    // lexicographic within class
    CHECK(m.train[0].path < m.train[1].path);
    CHECK(m.train[2].path < m.train[3].path);
    CHECK(m.val.size() == 2);
    CHECK(m.test.size() == 2);

    // determinism and split disjointness
    DatasetManifest m2 = scan_directory(td.path.string());
    for (std::size_t i = 0; i < m.train.size(); ++i) CHECK(m.train[i].path == m2.train[i].path);
    for (const auto& e : m.train)
        for (const auto& v : m.val) CHECK(e.path != v.path);
}

TEST_CASE("scan_directory: missing class directory is a structural error") {
    TempDir td("scan_missing");
    fs::create_directories(td.path / "train" / "real");
    Tensor px({3, 1, 1}, {0.1, 0.2, 0.3});
    write_file((td.path / "train" / "real" / "a.ppm").string(), encode_ppm(px));
    CHECK_THROWS_AS(scan_directory(td.path.string()), data_error);
}

TEST_CASE("generate_synthetic writes a deterministic split tree") {
    TempDir t1("gen1"), t2("gen2");
    SyntheticParams p;
    p.n_per_class = 8;
    p.size = 32;
    p.seed = 42;
    generate_synthetic(p, t1.path.string());
    generate_synthetic(p, t2.path.string());

    DatasetManifest m = scan_directory(t1.path.string());
    // 16 total, floor(0.15*16)=2 per eval split per class split rule
    CHECK(m.train.size() + m.val.size() + m.test.size() == 16);
    CHECK(!m.train.empty());
    CHECK(!m.val.empty());
    CHECK(!m.test.empty());
    CHECK(fs::exists(t1.path / "manifest.json"));

    // byte-identical files across runs
    for (const char* split : {"train", "val", "test"})
        for (const char* cls : {"real", "fake"})
            for (const auto& e : fs::directory_iterator(t1.path / split / cls)) {
                fs::path other = t2.path / split / cls / e.path().filename();
                REQUIRE(fs::exists(other));
                CHECK(read_file_bytes(e.path()) == read_file_bytes(other));
            }
}

TEST_CASE("generate_synthetic: n=1 emits exactly one file per class") {
    TempDir td("gen_one");
    SyntheticParams p;
    p.n_per_class = 1;
    p.size = 32;
    p.seed = 3;
    generate_synthetic(p, td.path.string());
    std::size_t count = 0;
    for (const char* split : {"train", "val", "test"})
        for (const char* cls : {"real", "fake"}) {
            fs::path d = td.path / split / cls;
            if (fs::exists(d))
                for (const auto& e : fs::directory_iterator(d)) {
                    (void)e;
                    ++count;
                }
        }
    CHECK(count == 2);
}

TEST_CASE("synthetic images separate in the high-frequency band") {
    // fake class carries a size/4 grid; top-quartile band energy must separate
    const std::size_t n = 32;
    auto band_energy = [&](const Tensor& img) {
        Tensor g = to_grayscale(img);
        ComplexImage x(n * n);
        for (std::size_t i = 0; i < n * n; ++i) x[i] = {g[i], 0.0};
        ComplexImage X = fft2d(x, n, n, false);
        double e = 0;
        for (std::size_t u = 0; u < n; ++u)
            for (std::size_t v = 0; v < n; ++v) {
                std::size_t fu = std::min(u, n - u), fv = std::min(v, n - v);
                if (fu >= n / 4 || fv >= n / 4) e += std::norm(X[u * n + v]);
            }
        return e;
    };
    int correct = 0;
    std::vector<double> real_e, fake_e;
    for (int i = 0; i < 100; ++i) {
        real_e.push_back(band_energy(synthetic_image(n, false, 1000 + i)));
        fake_e.push_back(band_energy(synthetic_image(n, true, 2000 + i)));
    }
    double mr = 0, mf = 0;
    for (int i = 0; i < 100; ++i) {
        mr += real_e[i] / 100;
        mf += fake_e[i] / 100;
    }
    CHECK(mf > mr);
    const double thr = (mr + mf) / 2;
    for (int i = 0; i < 100; ++i) {
        if (real_e[i] < thr) correct++;
        if (fake_e[i] >= thr) correct++;
    }
    CHECK(correct >= 180);  // >= 90% by thresholding band energy alone
}

TEST_CASE("synthetic images stay in [0,1] and are deterministic per seed") {
    Tensor a = synthetic_image(32, true, 99);
    Tensor b = synthetic_image(32, true, 99);
    Tensor c = synthetic_image(32, true, 100);
    REQUIRE(a.size() == b.size());
    bool same = true, diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] >= 0.0);
        CHECK(a[i] <= 1.0);
        same = same && a[i] == b[i];
        diff = diff || a[i] != c[i];
    }
    CHECK(same);
    CHECK(diff);
}
