#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "astromae/rng.hpp"

namespace astromae {

// One synthetic galaxy: 5-band 64x64 calibrated-flux image (u, g, r, i, z),
// per-band magnitudes computed from the clean pre-noise flux, and the
// spectroscopic redshift label.
struct GalaxySample {
    std::vector<float> image;  // 5 * 64 * 64, band-major
    std::array<float, 5> magnitudes{};
    float z_spec = 0.0f;
};

struct Dataset {
    std::int64_t height = 64, width = 64, channels = 5;
    std::vector<GalaxySample> samples;
    std::uint64_t seed = 0;

    std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
};

// Redshift drives three observable effects: angular size shrinks as 1/(1+z),
// per-band fluxes shift linearly in z (plus 5% multiplicative noise), and the
// magnitudes integrate the clean fluxes. Background Gaussian noise is added
// to the pixels afterwards, so the magnitudes carry information the image
// only approximates.
Dataset generate_synthetic(std::int64_t n, std::uint64_t seed);

struct DatasetSplit {
    std::vector<std::int64_t> train, val, test;
    std::uint64_t seed = 0;
};

// Seeded shuffle, then a 70/10/20 proportional cut (floor for train and val).
DatasetSplit split(std::int64_t n, std::uint64_t seed);

// Pretraining split: 90% train / 10% validation, no test portion.
DatasetSplit pretrain_split(std::int64_t n, std::uint64_t seed);

// Central window of the band-major image; returns channels * size * size floats.
std::vector<float> center_crop(const std::vector<float>& image, std::int64_t channels,
                               std::int64_t h, std::int64_t w, std::int64_t size);

// Per-band statistics over a set of (cropped) images.
struct NormStats {
    std::array<double, 5> mean{};
    std::array<double, 5> stddev{};
};

NormStats compute_norm_stats(const std::vector<std::vector<float>>& images, std::int64_t channels,
                             std::int64_t hw);

void normalize_inplace(std::vector<float>& image, const NormStats& stats, std::int64_t channels,
                       std::int64_t hw);

enum class AugmentPhase { Pretrain, Finetune };

// Training-only augmentation: independent coin-flip horizontal flip, vertical
// flip and 45-degree rotation (bilinear, zero fill); the fine-tune phase adds
// N(0, noise_std^2) per pixel. Applied after normalization.
void augment_inplace(std::vector<float>& image, std::int64_t channels, std::int64_t size, Rng& rng,
                     AugmentPhase phase, float noise_std);

// Binary container, magic "AMDS": version u32 LE, count u32, H u32, W u32,
// C u32, then per sample C*H*W float32 LE pixels, 5 magnitudes, 1 redshift.
// A JSON sidecar at <path>.json records the seed, generator parameters and
// full-dataset per-band statistics.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace astromae
