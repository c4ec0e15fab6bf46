#include "skipnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "skipnet/dataset.hpp"
#include "skipnet/error.hpp"
#include "skipnet/image.hpp"
#include "skipnet/rng.hpp"

namespace fs = std::filesystem;

namespace skipnet {

namespace {

// Soft-edged membership: 1 inside, fading to 0 across the last 20% of the
// normalized radius.
double edge(double d) { return std::clamp((1.0 - d) / 0.2, 0.0, 1.0); }

void draw_ellipse(std::vector<double>& canvas, std::size_t size, double cx,
                  double cy, double a, double b, double phi,
                  double intensity) {
  const double cphi = std::cos(phi), sphi = std::sin(phi);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      const double u = (dx * cphi + dy * sphi) / a;
      const double v = (-dx * sphi + dy * cphi) / b;
      const double d = std::sqrt(u * u + v * v);
      double& pixel = canvas[y * size + x];
      pixel = std::max(pixel, intensity * edge(d));
    }
  }
}

void draw_disc(std::vector<double>& canvas, std::size_t size, double cx,
               double cy, double r, double intensity) {
  draw_ellipse(canvas, size, cx, cy, r, r, 0.0, intensity);
}

std::vector<std::uint8_t> render_sample(int label, std::size_t size,
                                        Rng& rng) {
  const double s = static_cast<double>(size);
  std::vector<double> background(size * size);
  for (auto& v : background) v = 0.12 + 0.08 * rng.normal();

  std::vector<double> shape(size * size, 0.0);
  if (label == 0) {
    // One solid convex blob: an ellipse centered 20-38% of the image extent
    // out from the middle, any direction and orientation.
    const double radius = rng.uniform(0.20, 0.38) * s;
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double cx =
        std::clamp(0.5 + (radius / s) * std::cos(angle), 0.12, 0.88) * s;
    const double cy =
        std::clamp(0.5 + (radius / s) * std::sin(angle), 0.12, 0.88) * s;
    const double a = rng.uniform(0.055, 0.09) * s;
    const double b = rng.uniform(0.042, 0.07) * s;
    const double phi = rng.uniform(0.0, std::numbers::pi);
    draw_ellipse(shape, size, cx, cy, a, b, phi, rng.uniform(0.6, 0.9));
  } else if (label == 1) {
    // A ring of separated lobes. The geometry guarantees every draw is
    // visibly non-convex (the class-0 blob never is): adjacent lobe centers
    // sit at least 2.5 lobe radii apart, so lobes cannot merge into one
    // convex mass. Ring radius and lobe size keep the expected bright mass
    // near class 0's, and the intensity range is identical, so overall
    // brightness carries no class signal.
    const double cx = rng.uniform(0.18, 0.82) * s;
    const double cy = rng.uniform(0.18, 0.82) * s;
    const std::size_t lobes = 3 + rng.uniform_int(3);
    const double ring = rng.uniform(0.08, 0.115) * s;
    const double theta0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double step = 2.0 * std::numbers::pi / static_cast<double>(lobes);
    const double r_cap = 0.8 * ring * std::sin(0.7 * std::numbers::pi /
                                               static_cast<double>(lobes));
    const double intensity = rng.uniform(0.6, 0.9);
    for (std::size_t l = 0; l < lobes; ++l) {
      const double jitter = rng.uniform(-0.15, 0.15) * step;
      const double theta = theta0 + static_cast<double>(l) * step + jitter;
      const double ox = cx + ring * std::cos(theta);
      const double oy = cy + ring * std::sin(theta);
      const double r = rng.uniform(0.7, 0.9) * r_cap;
      draw_disc(shape, size, ox, oy, r, intensity);
    }
  } else {
    const double cx = rng.uniform(0.45, 0.55) * s;
    const double cy = rng.uniform(0.62, 0.72) * s;
    const double r = rng.uniform(0.03, 0.05) * s;
    draw_disc(shape, size, cx, cy, r, rng.uniform(0.8, 0.95));
  }

  std::vector<std::uint8_t> pixels(size * size);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(background[i] + shape[i], 0.0, 1.0);
    pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return pixels;
}

}  // namespace

std::string generate_synthetic(const std::string& out_dir,
                               const SyntheticOptions& options) {
  if (options.n_per_class == 0) {
    throw ConfigError("n_per_class must be at least 1");
  }
  if (options.size < 8) {
    throw ConfigError("synthetic image size must be at least 8");
  }

  const fs::path root(out_dir);
  fs::create_directories(root / "images");

  std::string manifest_text = "path,label,patient_id\n";
  char name[64];
  for (int label = 0; label < 3; ++label) {
    for (std::size_t i = 0; i < options.n_per_class; ++i) {
      // One independent stream per sample: regenerating any subset of the
      // dataset yields the same bytes.
      Rng rng = Rng(options.seed).fork(
          static_cast<std::uint64_t>(label) * 1000000 + i);
      const auto pixels = render_sample(label, options.size, rng);
      std::snprintf(name, sizeof(name), "%s_%04zu.png", kLabelNames[label],
                    i);
      write_png((root / "images" / name).string(), pixels, options.size,
                options.size);
      manifest_text += std::string("images/") + name + "," +
                       kLabelNames[label] + "," + kLabelNames[label] + "_p" +
                       std::to_string(i / 4) + "\n";
    }
  }

  const std::string manifest_path = (root / "manifest.csv").string();
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open manifest '" + manifest_path + "' for writing");
  }
  out << manifest_text;
  out.flush();
  if (!out) throw IoError("failed writing manifest '" + manifest_path + "'");
  return manifest_path;
}

double nearest_centroid_accuracy(const std::vector<Example<float>>& train,
                                 const std::vector<Example<float>>& eval) {
  if (train.empty() || eval.empty()) {
    throw DataError("nearest-centroid baseline needs non-empty splits");
  }
  const std::size_t dim = train.front().image.size();
  int max_label = 0;
  for (const auto& ex : train) max_label = std::max(max_label, ex.label);
  const std::size_t classes = static_cast<std::size_t>(max_label) + 1;

  std::vector<std::vector<double>> centroids(classes,
                                             std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& ex : train) {
    if (ex.image.size() != dim) {
      throw DimensionError("baseline samples must share one shape");
    }
    auto& c = centroids[static_cast<std::size_t>(ex.label)];
    for (std::size_t i = 0; i < dim; ++i) c[i] += ex.image[i];
    ++counts[static_cast<std::size_t>(ex.label)];
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (counts[k] == 0) {
      throw DataError("baseline training split lacks class " +
                      std::to_string(k));
    }
    for (auto& v : centroids[k]) v /= static_cast<double>(counts[k]);
  }

  std::size_t correct = 0;
  for (const auto& ex : eval) {
    if (ex.image.size() != dim) {
      throw DimensionError("baseline samples must share one shape");
    }
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      double dist = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double d = ex.image[i] - centroids[k][i];
        dist += d * d;
      }
      if (k == 0 || dist < best_dist) {
        best = k;
        best_dist = dist;
      }
    }
    if (static_cast<int>(best) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}

}  // namespace skipnet
