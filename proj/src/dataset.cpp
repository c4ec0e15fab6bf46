#include "skipnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "skipnet/error.hpp"
#include "skipnet/rng.hpp"

namespace fs = std::filesystem;

namespace skipnet {

namespace {

[[noreturn]] void bad_row(const std::string& path, std::size_t line,
                          const std::string& why) {
  throw DataError("manifest '" + path + "' line " + std::to_string(line) +
                  ": " + why);
}

int parse_label(const std::string& text) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i) {
    if (text == kLabelNames[i]) return static_cast<int>(i);
  }
  return -1;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path + "'");

  DatasetManifest manifest;
  manifest.root = fs::path(path).parent_path().string();
  if (manifest.root.empty()) manifest.root = ".";

  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen_paths;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "path,label,patient_id") {
        bad_row(path, 1,
                "expected header 'path,label,patient_id', got '" + line + "'");
      }
      continue;
    }
    if (line.empty()) continue;

    const auto fields = split_fields(line);
    if (fields.size() != 3) {
      bad_row(path, line_no, "expected 3 fields, got " +
                                 std::to_string(fields.size()));
    }
    if (fields[0].empty()) bad_row(path, line_no, "empty image path");
    if (fields[2].empty()) bad_row(path, line_no, "empty patient_id");

    const fs::path rel(fields[0]);
    if (rel.is_absolute() ||
        std::find(rel.begin(), rel.end(), "..") != rel.end()) {
      bad_row(path, line_no,
              "image path must be relative to the manifest, without '..'");
    }
    if (!seen_paths.insert(fields[0]).second) {
      bad_row(path, line_no, "duplicate image path '" + fields[0] + "'");
    }

    const int label = parse_label(fields[1]);
    if (label < 0) {
      bad_row(path, line_no,
              "unknown label '" + fields[1] +
                  "' (expected meningioma, glioma, or pituitary)");
    }
    if (!fs::exists(fs::path(manifest.root) / rel)) {
      bad_row(path, line_no, "image file '" + fields[0] + "' not found");
    }
    manifest.records.push_back({fields[0], label, fields[2]});
  }
  if (in.bad()) throw IoError("failed reading manifest '" + path + "'");
  if (manifest.records.empty()) {
    throw DataError("manifest '" + path + "' has no records");
  }
  return manifest;
}

void split_by_patient(DatasetManifest& manifest, double train_fraction,
                      double val_fraction, double test_fraction,
                      std::uint64_t seed) {
  const double fractions[3] = {train_fraction, val_fraction, test_fraction};
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) {
      throw ConfigError("split fractions must all be positive");
    }
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }

  // Patients in first-appearance order, then shuffled under the seed.
  struct Patient {
    std::string id;
    std::size_t counts[3] = {0, 0, 0};
    std::vector<std::size_t> records;
  };
  std::vector<Patient> patients;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t r = 0; r < manifest.records.size(); ++r) {
    const auto& rec = manifest.records[r];
    auto [it, inserted] = index_of.try_emplace(rec.patient_id, patients.size());
    if (inserted) patients.push_back({rec.patient_id, {0, 0, 0}, {}});
    Patient& p = patients[it->second];
    ++p.counts[static_cast<std::size_t>(rec.label)];
    p.records.push_back(r);
  }
  if (patients.size() < 3) {
    throw SplitError("cannot populate three splits with " +
                     std::to_string(patients.size()) + " patient(s)");
  }

  std::vector<std::size_t> order(patients.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const auto totals = manifest.class_counts();
  double target[3][3];
  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < 3; ++c) {
      target[s][c] = fractions[s] * static_cast<double>(totals[c]);
    }
  }

  // Greedy assignment: each patient lands in the split where it least
  // increases the squared relative deviation from the per-class slice
  // targets (under-filled splits improve, so they attract patients until
  // they reach their targets). While some split is still empty, only empty
  // splits compete, so every split is guaranteed at least one patient.
  std::size_t placed[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  std::size_t patients_in[3] = {0, 0, 0};
  std::vector<int> assignment(patients.size(), -1);
  for (std::size_t oi : order) {
    const Patient& p = patients[oi];
    const bool any_empty =
        patients_in[0] == 0 || patients_in[1] == 0 || patients_in[2] == 0;
    int best = -1;
    double best_delta = 0.0;
    for (int s = 0; s < 3; ++s) {
      if (any_empty && patients_in[s] != 0) continue;
      double delta = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double t = std::max(target[s][c], 1.0);
        const double before =
            (static_cast<double>(placed[s][c]) - target[s][c]) / t;
        const double after =
            (static_cast<double>(placed[s][c] + p.counts[c]) - target[s][c]) /
            t;
        delta += after * after - before * before;
      }
      if (best < 0 || delta < best_delta) {
        best = s;
        best_delta = delta;
      }
    }
    assignment[oi] = best;
    ++patients_in[best];
    for (int c = 0; c < 3; ++c) placed[best][c] += p.counts[c];
  }

  for (int s = 0; s < 3; ++s) {
    for (int c = 0; c < 3; ++c) {
      if (totals[c] > 0 && placed[s][c] == 0) {
        throw SplitError(std::string("split produced no '") + kLabelNames[c] +
                         "' slices in the " +
                         split_name(static_cast<Split>(s)) +
                         " split; re-seed or adjust fractions");
      }
    }
  }

  for (std::size_t pi = 0; pi < patients.size(); ++pi) {
    for (std::size_t r : patients[pi].records) {
      manifest.records[r].split = static_cast<Split>(assignment[pi]);
    }
  }
  verify_split_integrity(manifest);
}

void verify_split_integrity(const DatasetManifest& manifest) {
  std::map<std::string, Split> split_of;
  for (const auto& rec : manifest.records) {
    if (rec.split == Split::Unassigned) {
      throw SplitError("record '" + rec.path + "' has no split assignment");
    }
    auto [it, inserted] = split_of.try_emplace(rec.patient_id, rec.split);
    if (!inserted && it->second != rec.split) {
      throw SplitError("patient '" + rec.patient_id +
                       "' appears in both the " + split_name(it->second) +
                       " and " + split_name(rec.split) + " splits");
    }
  }
}

Tensor<float> preprocess(const Image& image, std::size_t target_size) {
  if (target_size == 0) throw ConfigError("target size must be positive");
  if (image.width == 0 || image.height == 0 ||
      image.pixels.size() != image.width * image.height) {
    throw DataError("preprocess: inconsistent image buffer");
  }
  const double scale = 1.0 / static_cast<double>(image.max_value);
  Tensor<float> out({1, target_size, target_size});

  if (image.width == target_size && image.height == target_size) {
    // Exact-size bypass: pure normalization, no resampling arithmetic.
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
      out[i] = static_cast<float>(image.pixels[i] * scale);
    }
    return out;
  }

  const double sy_step = static_cast<double>(image.height) /
                         static_cast<double>(target_size);
  const double sx_step = static_cast<double>(image.width) /
                         static_cast<double>(target_size);
  for (std::size_t i = 0; i < target_size; ++i) {
    double sy = (static_cast<double>(i) + 0.5) * sy_step - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(image.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < target_size; ++j) {
      double sx = (static_cast<double>(j) + 0.5) * sx_step - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(image.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = sx - static_cast<double>(x0);
      const double p00 = image.at(y0, x0) * scale;
      const double p01 = image.at(y0, x1) * scale;
      const double p10 = image.at(y1, x0) * scale;
      const double p11 = image.at(y1, x1) * scale;
      const double top = (1.0 - fx) * p00 + fx * p01;
      const double bottom = (1.0 - fx) * p10 + fx * p11;
      const double value = (1.0 - fy) * top + fy * bottom;
      out(0, i, j) = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }
  return out;
}

LoadedDataset load_examples(const DatasetManifest& manifest,
                            std::size_t target_size) {
  verify_split_integrity(manifest);
  LoadedDataset out;
  for (const auto& rec : manifest.records) {
    const std::string full =
        (fs::path(manifest.root) / fs::path(rec.path)).string();
    Example<float> ex{preprocess(read_image(full), target_size), rec.label};
    switch (rec.split) {
      case Split::Train: out.train.push_back(std::move(ex)); break;
      case Split::Val: out.val.push_back(std::move(ex)); break;
      case Split::Test: out.test.push_back(std::move(ex)); break;
      case Split::Unassigned: break;  // unreachable after integrity check
    }
  }
  return out;
}

}  // namespace skipnet
