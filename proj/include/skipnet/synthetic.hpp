#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skipnet/trainer.hpp"

namespace skipnet {

struct SyntheticOptions {
  std::size_t n_per_class = 200;
  std::size_t size = 128;
  std::uint64_t seed = 0;
};

// Writes a three-class grayscale dataset under `out_dir`: PNG images in
// images/ plus a manifest.csv, byte-identical for identical options.
//
// Class 0 (meningioma stand-in): bright ellipse near the image periphery.
// Class 1 (glioma stand-in): irregular multi-lobe blob, arbitrary position.
// Class 2 (pituitary stand-in): small bright disc near the center-bottom.
// All over a Gaussian noise background (sigma 0.1). Synthetic patient ids
// group four consecutive samples of a class.
//
// Returns the manifest path.
std::string generate_synthetic(const std::string& out_dir,
                               const SyntheticOptions& options);

// Nearest-centroid classification on raw pixels: per-class mean over `train`,
// then L2-nearest assignment over `eval`. The sanity baseline a trained
// network has to beat.
double nearest_centroid_accuracy(const std::vector<Example<float>>& train,
                                 const std::vector<Example<float>>& eval);

}  // namespace skipnet
