#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "advlab/tensor.hpp"

namespace advlab {

struct ImageDataset {
  std::string name;
  int class_count = 0;
  int c = 0, h = 0, w = 0;
  std::vector<float> images;  // n*c*h*w, row-major, pixels in [0,1]
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  std::int64_t image_numel() const { return static_cast<std::int64_t>(c) * h * w; }
  std::span<const float> image(int i) const;

  Tensor batch(const std::vector<int>& idx) const;
  std::vector<int> batch_labels(const std::vector<int>& idx) const;
  ImageDataset subset(const std::vector<int>& idx) const;

  /// Checks pixel range, label range and non-emptiness; throws on violation.
  void validate() const;

  void save(const std::string& path) const;
  static ImageDataset load(const std::string& path);
};

struct CorruptionSet {
  std::string kind;
  int severity = 0;
  ImageDataset data;
};

/// split: "train" (the five data_batch files) or "test" (test_batch.bin).
ImageDataset load_cifar10_bin(const std::string& dir, const std::string& split);

std::pair<ImageDataset, ImageDataset> split_train_val(const ImageDataset& ds,
                                                      double val_fraction, std::uint64_t seed);

/// NPY ingestion: images expect shape N×H×W×C (uint8 or float32).
ImageDataset load_npy_images(const std::string& path);
std::vector<int> load_npy_labels(const std::string& path);

/// CIFAR-10C layout: 50,000 rows per file, severities 1..5 stacked in order.
ImageDataset load_cifar10c(const std::string& images_npy, const std::string& labels_npy,
                           const std::string& kind, int severity);

void flip_horizontal(float* img, int c, int h, int w);
void crop_reflect_pad(const float* img, int c, int h, int w, int pad, int dy, int dx, float* out);

/// Per-image random reflection-pad crop plus horizontal flip, in place.
/// Draw order per image: dy, dx, flip.
void augment_images(std::vector<float>& images, int n, int c, int h, int w, std::mt19937& rng,
                    int pad = 4);

/// Adds N(0, sigma^2) noise without clamping; building block for the
/// gaussian corruption (sigma = 0 is the identity).
void add_gaussian_noise(std::vector<float>& images, float sigma, std::mt19937& rng);

std::vector<float> gather_images(const ImageDataset& ds, const std::vector<int>& idx);

const std::vector<std::string>& corruption_kinds();
/// Severity-indexed parameter table (index 0 = severity 1).
std::vector<float> corruption_params(const std::string& kind);
CorruptionSet generate_corruptions(const ImageDataset& ds, const std::string& kind, int severity,
                                   std::uint64_t seed);

struct SyntheticOpts {
  int c = 3;
  int h = 32;
  int w = 32;
  int class_count = 2;
  float sigma = 0.1f;       // two-gaussians noise scale
  float separation = 6.0f;  // class-mean distance in units of sigma
};

/// kind: "two-gaussians-images" (linearly separable) or "striped-classes"
/// (texture separable; class = stripe orientation/period).
ImageDataset synthetic_dataset(const std::string& kind, int n, std::uint64_t seed,
                               const SyntheticOpts& opts = {});

}  // namespace advlab
