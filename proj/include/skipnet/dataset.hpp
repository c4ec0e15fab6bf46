#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "skipnet/image.hpp"
#include "skipnet/tensor.hpp"
#include "skipnet/trainer.hpp"

namespace skipnet {

inline constexpr std::array<const char*, 3> kLabelNames = {
    "meningioma", "glioma", "pituitary"};

enum class Split { Train = 0, Val = 1, Test = 2, Unassigned = 3 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    default: return "unassigned";
  }
}

struct ManifestRecord {
  std::string path;  // relative to the manifest's directory
  int label = 0;     // 0=meningioma, 1=glioma, 2=pituitary
  std::string patient_id;
  Split split = Split::Unassigned;
};

struct DatasetManifest {
  std::string root;  // directory holding the manifest file
  std::vector<ManifestRecord> records;

  std::array<std::size_t, 3> class_counts() const {
    std::array<std::size_t, 3> counts{0, 0, 0};
    for (const auto& r : records) ++counts[static_cast<std::size_t>(r.label)];
    return counts;
  }
};

// Parses a `path,label,patient_id` CSV. Every record's image file must exist
// under the manifest's directory; duplicates, unknown labels, and malformed
// rows are rejected with their line number.
DatasetManifest load_manifest(const std::string& path);

// Assigns every patient (and so every slice) to exactly one split. Patients
// are shuffled under the seed, then greedily placed to track per-class slice
// fractions. Fractions must be positive and sum to 1 within 1e-9.
void split_by_patient(DatasetManifest& manifest, double train_fraction,
                      double val_fraction, double test_fraction,
                      std::uint64_t seed);

// Checks the hard invariant: no patient id appears in two splits, and no
// record is unassigned. Throws SplitError on violation.
void verify_split_integrity(const DatasetManifest& manifest);

// Normalizes to [0,1] by the source bit-depth maximum and resizes to
// target x target with bilinear interpolation (half-pixel centers, edges
// clamped). An image already at the target size bypasses resampling, so the
// result is the bitwise-exact normalized source.
Tensor<float> preprocess(const Image& image, std::size_t target_size);

struct LoadedDataset {
  std::vector<Example<float>> train;
  std::vector<Example<float>> val;
  std::vector<Example<float>> test;
};

// Decodes and preprocesses every record into its split bucket, preserving
// manifest order within each split.
LoadedDataset load_examples(const DatasetManifest& manifest,
                            std::size_t target_size);

}  // namespace skipnet
