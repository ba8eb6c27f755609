#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccdet/boxes.hpp"
#include "ccdet/config.hpp"
#include "ccdet/tensor.hpp"

namespace ccdet {

// One multimodal sample: aligned visible and infrared views plus labels.
struct Sample {
    Tensor<float> rgb;            // [H,W,3], values in [0,1]
    Tensor<float> ir;             // [H,W], values in [0,1]
    std::vector<BoxLabel> boxes;  // normalized center-form
};

// Object paint levels per channel. Class identity is decodable only from the
// relation between channels: every single channel takes each level for
// exactly two of the four classes.
//   class 0: dark R,  dark G,  dark B,  bright IR
//   class 1: bright R, dark G, bright B, dark IR
//   class 2: dark R, bright G, bright B, bright IR   (G = B)
//   class 3: bright R, bright G, dark B, dark IR     (G >> B)
struct ClassLevels {
    double r = 0, g = 0, b = 0, ir = 0;
};
ClassLevels class_levels(const SynthConfig& cfg, int cls);

// Deterministic per-sample seed stream.
std::uint64_t sample_seed(std::uint64_t dataset_seed, int index);

// Exact 8-bit quantization helpers shared by the generator and the loader so
// disk round-trips reproduce float values bit-for-bit.
float u8_to_unit(int v);
int unit_to_u8(double v);

std::vector<Sample> gen_synthetic(int n, const SynthConfig& cfg);

// Directory layout: <dir>/images/<id>_co.png, <dir>/images/<id>_ir.png,
// <dir>/labels/<id>.txt with lines "class cx cy w h".
void save_vedai_format(const std::vector<Sample>& samples, const std::string& dir);

struct LoadReport {
    std::vector<std::string> warnings;  // skipped samples / malformed lines
};

// Loads every id with an RGB image, pairing it with its IR counterpart and
// label file. Missing IR skips the sample with a warning; malformed label
// lines are reported as "<path>:<line>: <reason>" and skipped; unreadable
// images throw. When report is null, warnings go to stderr.
std::vector<Sample> load_vedai_format(const std::string& image_dir, const std::string& label_dir,
                                      LoadReport* report = nullptr);

// Seeded flip (p=0.5) and translation by up to +-10% of extent (p=0.5),
// applied identically to both modalities. Shifted boxes are clipped to the
// image and dropped when less than 25% of their area remains.
Sample augment(const Sample& s, std::uint64_t seed);

}  // namespace ccdet
