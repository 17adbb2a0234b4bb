#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lora3d/tensor.hpp"

namespace lora3d {

// ---------------------------------------------------------------------------
// VOL1 volume container: magic "VOL1", channel count (u32 LE), extents
// D, H, W (u32 LE each), dtype code (u8, 0 = 32-bit float), then raw
// little-endian voxel data in [c, D, H, W] row-major order.
// ---------------------------------------------------------------------------

void save_volume(const std::string& path, const Tensor& volume);   // [c, D, H, W]
Tensor load_volume(const std::string& path);

// Trilinear resampling with corner-aligned coordinates: source position of
// output index t is t*(S-1)/(T-1) for T > 1, the center sample for T = 1.
Tensor resize_trilinear(const Tensor& volume, std::array<std::size_t, 3> target);

// Per-channel z-score: (x - mean_c) / (std_c + 1e-8).
Tensor normalize_volume(const Tensor& volume);

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

struct ManifestRow {
    std::string id;
    int label = 0;        // 0 = HV, 1 = ADHD
    std::string path;     // volume file, relative paths resolve against base_dir
};

struct Manifest {
    std::vector<ManifestRow> rows;
    std::string base_dir;

    std::string volume_path(const ManifestRow& row) const;
    std::size_t count_label(int label) const;
};

// CSV with header "subject_id,label,path". Validates unique ids and binary
// labels on load.
Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& manifest);

// ---------------------------------------------------------------------------
// Stratified k-fold split
// ---------------------------------------------------------------------------

struct FoldSplit {
    std::uint64_t seed = 0;
    std::vector<std::vector<std::string>> val_folds;   // subject ids per fold
};

// Within each class, subjects are shuffled by the seeded RNG and dealt
// round-robin into k validation folds, so per-class fold sizes differ by at
// most one. The training set of fold i is everything not in fold i.
FoldSplit stratified_kfold(const Manifest& manifest, int k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic two-class volume generator (smoothed noise; class 1 adds a
// centered blob to channel 0 and attenuates channel 1, both scaled by
// `separation`; separation 0 makes the classes identically distributed).
// ---------------------------------------------------------------------------

struct SynthConfig {
    int n_per_class = 50;
    std::array<std::size_t, 3> extents{16, 16, 16};
    std::uint64_t seed = 42;
    double separation = 2.0;
};

// Writes volumes and manifest.csv under `dir` and returns the manifest.
Manifest synth_generate(const std::string& dir, const SynthConfig& cfg);

}  // namespace lora3d
