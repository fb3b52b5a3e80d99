#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bnfk/tensor.hpp"

namespace bnfk {

class data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Sample {
    Tensor image;  // [3,h,w] in [0,1]
    int label = 0;  // real=0, fake=1
    std::string id;
};

struct ManifestEntry {
    std::string path;
    int label = 0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> train, val, test;

    const std::vector<ManifestEntry>& split(const std::string& name) const;
};

// Binary PNM, maxval 255. P6 -> [3,h,w]; P5 -> [1,h,w] (or broadcast to 3).
Tensor decode_pnm(const std::vector<std::uint8_t>& bytes, bool broadcast_gray = true);
Tensor load_pnm(const std::string& path, bool broadcast_gray = true);

std::vector<std::uint8_t> encode_ppm(const Tensor& rgb);     // [3,h,w] -> P6
std::vector<std::uint8_t> encode_pgm(const Tensor& gray);    // [h,w] -> P5
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

// root/{train,val,test}/{real,fake}/*.ppm, lexicographic order per split.
DatasetManifest scan_directory(const std::string& root);

struct SyntheticParams {
    std::size_t n_per_class = 100;
    std::size_t size = 64;
    std::uint64_t seed = 0;
};

// Real class: sum of 4 low-frequency gratings plus Gaussian noise, mapped to
// [0,1]. Fake class: same construction plus a high-frequency grid
// (amplitude 0.08, frequency size/4 on both axes) and a 3x3 box blur over a
// random half of the image. Deterministic per seed; writes the split tree
// plus manifest.json.
void generate_synthetic(const SyntheticParams& params, const std::string& out_root);

// In-memory single image from the generator, for tests.
Tensor synthetic_image(std::size_t size, bool fake, std::uint64_t seed);

}  // namespace bnfk
