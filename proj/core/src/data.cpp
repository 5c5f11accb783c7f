#include "advlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "advlab/container.hpp"
#include "advlab/npy.hpp"
#include "advlab/rng.hpp"
#include "json.hpp"

namespace advlab {

namespace {

int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

std::vector<int> permutation(int n, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(uniform_below(rng, static_cast<std::uint32_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

}  // namespace

std::span<const float> ImageDataset::image(int i) const {
  const auto d = static_cast<std::size_t>(image_numel());
  return {images.data() + static_cast<std::size_t>(i) * d, d};
}

Tensor ImageDataset::batch(const std::vector<int>& idx) const {
  return Tensor({static_cast<int>(idx.size()), c, h, w}, gather_images(*this, idx));
}

std::vector<int> ImageDataset::batch_labels(const std::vector<int>& idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

ImageDataset ImageDataset::subset(const std::vector<int>& idx) const {
  ImageDataset out;
  out.name = name;
  out.class_count = class_count;
  out.c = c;
  out.h = h;
  out.w = w;
  out.images = gather_images(*this, idx);
  out.labels = batch_labels(idx);
  return out;
}

void ImageDataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset '" + name + "' is empty");
  if (static_cast<std::int64_t>(images.size()) !=
      static_cast<std::int64_t>(labels.size()) * image_numel())
    throw std::invalid_argument("dataset '" + name + "': " + std::to_string(images.size()) +
                                " pixels for " + std::to_string(labels.size()) + " images of " +
                                std::to_string(image_numel()) + " each");
  for (int y : labels)
    if (y < 0 || y >= class_count)
      throw std::out_of_range("dataset '" + name + "': label " + std::to_string(y) +
                              " out of range [0, " + std::to_string(class_count) + ")");
  for (float v : images)
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::out_of_range("dataset '" + name + "': pixel " + std::to_string(v) +
                              " outside [0,1]");
}

void ImageDataset::save(const std::string& path) const {
  Container ct;
  ct.put_f32("images", {size(), c, h, w}, images);
  ct.put_i32("labels", std::vector<std::int32_t>(labels.begin(), labels.end()));
  nlohmann::json meta = {{"name", name}, {"class_count", class_count}};
  ct.put_bytes("meta", meta.dump());
  ct.save(path);
}

ImageDataset ImageDataset::load(const std::string& path) {
  Container ct = Container::load(path);
  const auto& entry = ct.get("images");
  if (entry.type != Container::Type::F32 || entry.dims.size() != 4)
    throw std::runtime_error("dataset load: 'images' entry malformed in '" + path + "'");
  ImageDataset ds;
  ds.c = entry.dims[1];
  ds.h = entry.dims[2];
  ds.w = entry.dims[3];
  ds.images = entry.f32;
  const auto& lab = ct.get_i32("labels");
  ds.labels.assign(lab.begin(), lab.end());
  const auto meta = nlohmann::json::parse(ct.get_text("meta"));
  ds.name = meta.at("name").get<std::string>();
  ds.class_count = meta.at("class_count").get<int>();
  ds.validate();
  return ds;
}

ImageDataset load_cifar10_bin(const std::string& dir, const std::string& split) {
  std::vector<std::string> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else if (split == "test") {
    files.push_back(dir + "/test_batch.bin");
  } else {
    throw std::invalid_argument("cifar10: unknown split '" + split + "' (want train or test)");
  }
  constexpr int kRecord = 3073;
  constexpr int kPixels = 3072;
  ImageDataset ds;
  ds.name = "cifar10-" + split;
  ds.class_count = 10;
  ds.c = 3;
  ds.h = 32;
  ds.w = 32;
  for (const auto& path : files) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cifar10: cannot open '" + path + "'");
    is.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::int64_t>(is.tellg());
    is.seekg(0);
    if (bytes % kRecord != 0)
      throw std::runtime_error("cifar10: '" + path + "' size " + std::to_string(bytes) +
                               " is not a multiple of " + std::to_string(kRecord));
    const auto records = bytes / kRecord;
    std::vector<unsigned char> rec(kRecord);
    for (std::int64_t r = 0; r < records; ++r) {
      if (!is.read(reinterpret_cast<char*>(rec.data()), kRecord))
        throw std::runtime_error("cifar10: short read in '" + path + "'");
      if (rec[0] > 9)
        throw std::runtime_error("cifar10: label byte " + std::to_string(rec[0]) + " > 9 in '" +
                                 path + "'");
      ds.labels.push_back(rec[0]);
      for (int i = 0; i < kPixels; ++i)
        ds.images.push_back(static_cast<float>(rec[static_cast<std::size_t>(i) + 1]) / 255.0f);
    }
  }
  ds.validate();
  return ds;
}

std::pair<ImageDataset, ImageDataset> split_train_val(const ImageDataset& ds,
                                                      double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("split: val_fraction " + std::to_string(val_fraction) +
                                " outside (0,1)");
  const int n = ds.size();
  const auto val_count = static_cast<int>(std::llround(n * val_fraction));
  if (val_count < 1 || val_count >= n)
    throw std::invalid_argument("split: val size " + std::to_string(val_count) +
                                " degenerate for " + std::to_string(n) + " images");
  auto idx = permutation(n, seed);
  std::vector<int> val_idx(idx.begin(), idx.begin() + val_count);
  std::vector<int> train_idx(idx.begin() + val_count, idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  auto train = ds.subset(train_idx);
  auto val = ds.subset(val_idx);
  train.name = ds.name + "-train";
  val.name = ds.name + "-val";
  return {std::move(train), std::move(val)};
}

ImageDataset load_npy_images(const std::string& path) {
  NpyArray arr = load_npy(path);
  if (arr.shape.size() != 4 || (arr.shape[3] != 1 && arr.shape[3] != 3))
    throw std::runtime_error("npy images: want shape N×H×W×C with C∈{1,3}, got " +
                             shape_str(arr.shape) + " in '" + path + "'");
  if (arr.u8.empty() && arr.f32.empty())
    throw std::runtime_error("npy images: dtype '" + arr.descr + "' not an image dtype in '" +
                             path + "'");
  const int n = arr.shape[0], h = arr.shape[1], w = arr.shape[2], c = arr.shape[3];
  ImageDataset ds;
  ds.name = path;
  ds.class_count = 1;
  ds.c = c;
  ds.h = h;
  ds.w = w;
  ds.images.resize(static_cast<std::size_t>(arr.numel()));
  ds.labels.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) {
          const auto src = ((static_cast<std::size_t>(i) * h + y) * w + x) * c + ch;
          const auto dst = ((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x;
          ds.images[dst] =
              arr.u8.empty() ? arr.f32[src] : static_cast<float>(arr.u8[src]) / 255.0f;
        }
  ds.validate();
  return ds;
}

std::vector<int> load_npy_labels(const std::string& path) {
  NpyArray arr = load_npy(path);
  if (arr.shape.size() != 1)
    throw std::runtime_error("npy labels: want 1-d array, got " + shape_str(arr.shape) + " in '" +
                             path + "'");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(arr.numel()));
  if (!arr.i64.empty())
    for (auto v : arr.i64) out.push_back(static_cast<int>(v));
  else if (!arr.u8.empty())
    for (auto v : arr.u8) out.push_back(static_cast<int>(v));
  else
    throw std::runtime_error("npy labels: dtype '" + arr.descr + "' not integral in '" + path +
                             "'");
  return out;
}

ImageDataset load_cifar10c(const std::string& images_npy, const std::string& labels_npy,
                           const std::string& kind, int severity) {
  if (severity < 1 || severity > 5)
    throw std::invalid_argument("cifar10c: severity " + std::to_string(severity) +
                                " out of range [1,5]");
  ImageDataset all = load_npy_images(images_npy);
  auto labels = load_npy_labels(labels_npy);
  if (all.size() % 5 != 0)
    throw std::runtime_error("cifar10c: image count " + std::to_string(all.size()) +
                             " not divisible by 5 severities");
  const int per = all.size() / 5;
  std::vector<int> idx(static_cast<std::size_t>(per));
  for (int i = 0; i < per; ++i) idx[static_cast<std::size_t>(i)] = (severity - 1) * per + i;
  ImageDataset ds = all.subset(idx);
  ds.name = "cifar10c-" + kind + "-s" + std::to_string(severity);
  ds.class_count = 10;
  if (static_cast<int>(labels.size()) == all.size())
    ds.labels = {labels.begin() + (severity - 1) * per, labels.begin() + severity * per};
  else if (static_cast<int>(labels.size()) == per)
    ds.labels = labels;
  else
    throw std::runtime_error("cifar10c: label count " + std::to_string(labels.size()) +
                             " matches neither " + std::to_string(all.size()) + " nor " +
                             std::to_string(per));
  ds.validate();
  return ds;
}

void flip_horizontal(float* img, int c, int h, int w) {
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      float* row = img + (static_cast<std::size_t>(ch) * h + y) * w;
      for (int x = 0; x < w / 2; ++x) std::swap(row[x], row[w - 1 - x]);
    }
}

void crop_reflect_pad(const float* img, int c, int h, int w, int pad, int dy, int dx,
                      float* out) {
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = img + static_cast<std::size_t>(ch) * h * w;
    float* oplane = out + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y) {
      const int sy = reflect_index(y + dy - pad, h);
      for (int x = 0; x < w; ++x)
        oplane[static_cast<std::size_t>(y) * w + x] =
            plane[static_cast<std::size_t>(sy) * w + reflect_index(x + dx - pad, w)];
    }
  }
}

void augment_images(std::vector<float>& images, int n, int c, int h, int w, std::mt19937& rng,
                    int pad) {
  const auto d = static_cast<std::size_t>(c) * h * w;
  std::vector<float> scratch(d);
  for (int i = 0; i < n; ++i) {
    float* img = images.data() + static_cast<std::size_t>(i) * d;
    const auto dy = static_cast<int>(uniform_below(rng, static_cast<std::uint32_t>(2 * pad + 1)));
    const auto dx = static_cast<int>(uniform_below(rng, static_cast<std::uint32_t>(2 * pad + 1)));
    const bool flip = uniform_below(rng, 2) == 1;
    crop_reflect_pad(img, c, h, w, pad, dy, dx, scratch.data());
    std::copy(scratch.begin(), scratch.end(), img);
    if (flip) flip_horizontal(img, c, h, w);
  }
}

void add_gaussian_noise(std::vector<float>& images, float sigma, std::mt19937& rng) {
  if (sigma == 0.0f) return;
  for (auto& v : images) v += sigma * normal_unit(rng);
}

std::vector<float> gather_images(const ImageDataset& ds, const std::vector<int>& idx) {
  const auto d = static_cast<std::size_t>(ds.image_numel());
  std::vector<float> out;
  out.reserve(idx.size() * d);
  for (int i : idx) {
    if (i < 0 || i >= ds.size())
      throw std::out_of_range("dataset '" + ds.name + "': index " + std::to_string(i) +
                              " out of range [0, " + std::to_string(ds.size()) + ")");
    const auto img = ds.image(i);
    out.insert(out.end(), img.begin(), img.end());
  }
  return out;
}

const std::vector<std::string>& corruption_kinds() {
  static const std::vector<std::string> kinds = {"gaussian_noise", "shot_noise", "impulse_noise",
                                                 "box_blur", "brightness", "contrast"};
  return kinds;
}

std::vector<float> corruption_params(const std::string& kind) {
  if (kind == "gaussian_noise") return {0.04f, 0.06f, 0.08f, 0.09f, 0.10f};
  if (kind == "shot_noise") return {60.0f, 25.0f, 12.0f, 5.0f, 3.0f};  // photon scale, lower=worse
  if (kind == "impulse_noise") return {0.03f, 0.06f, 0.09f, 0.17f, 0.27f};
  if (kind == "box_blur") return {1.0f, 2.0f, 3.0f, 4.0f, 5.0f};  // radius
  if (kind == "brightness") return {0.05f, 0.10f, 0.15f, 0.20f, 0.25f};
  if (kind == "contrast") return {0.25f, 0.40f, 0.55f, 0.70f, 0.85f};  // reduction fraction
  std::string valid;
  for (const auto& k : corruption_kinds()) valid += (valid.empty() ? "" : ", ") + k;
  throw std::invalid_argument("corruption: unknown kind '" + kind + "' (valid: " + valid + ")");
}

namespace {

void box_blur_image(float* img, int c, int h, int w, int radius) {
  const int win = 2 * radius + 1;
  std::vector<float> tmp(static_cast<std::size_t>(h) * w);
  std::vector<float> pre(static_cast<std::size_t>(std::max(h, w)) + 2 * radius + 1);
  for (int ch = 0; ch < c; ++ch) {
    float* plane = img + static_cast<std::size_t>(ch) * h * w;
    // horizontal pass with clamped edges
    for (int y = 0; y < h; ++y) {
      const float* row = plane + static_cast<std::size_t>(y) * w;
      pre[0] = 0.0f;
      for (int i = 0; i < w + 2 * radius; ++i) {
        const int sx = std::clamp(i - radius, 0, w - 1);
        pre[static_cast<std::size_t>(i) + 1] = pre[static_cast<std::size_t>(i)] + row[sx];
      }
      for (int x = 0; x < w; ++x)
        tmp[static_cast<std::size_t>(y) * w + x] =
            (pre[static_cast<std::size_t>(x) + win] - pre[static_cast<std::size_t>(x)]) / win;
    }
    // vertical pass
    for (int x = 0; x < w; ++x) {
      pre[0] = 0.0f;
      for (int i = 0; i < h + 2 * radius; ++i) {
        const int sy = std::clamp(i - radius, 0, h - 1);
        pre[static_cast<std::size_t>(i) + 1] =
            pre[static_cast<std::size_t>(i)] + tmp[static_cast<std::size_t>(sy) * w + x];
      }
      for (int y = 0; y < h; ++y)
        plane[static_cast<std::size_t>(y) * w + x] =
            (pre[static_cast<std::size_t>(y) + win] - pre[static_cast<std::size_t>(y)]) / win;
    }
  }
}

}  // namespace

CorruptionSet generate_corruptions(const ImageDataset& ds, const std::string& kind, int severity,
                                   std::uint64_t seed) {
  if (severity < 1 || severity > 5)
    throw std::invalid_argument("corruption: severity " + std::to_string(severity) +
                                " out of range [1,5]");
  const float param = corruption_params(kind)[static_cast<std::size_t>(severity - 1)];
  CorruptionSet out;
  out.kind = kind;
  out.severity = severity;
  out.data = ds;
  out.data.name = ds.name + "-" + kind + "-s" + std::to_string(severity);
  auto& imgs = out.data.images;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  const auto d = static_cast<std::size_t>(ds.image_numel());

  if (kind == "gaussian_noise") {
    add_gaussian_noise(imgs, param, rng);
  } else if (kind == "shot_noise") {
    std::poisson_distribution<int> pois;
    for (auto& v : imgs) {
      pois.param(std::poisson_distribution<int>::param_type(
          std::max(1e-6, static_cast<double>(v) * param)));
      v = static_cast<float>(pois(rng)) / param;
    }
  } else if (kind == "impulse_noise") {
    for (auto& v : imgs) {
      const float u = uniform_unit(rng);
      if (u < param / 2.0f)
        v = 0.0f;
      else if (u < param)
        v = 1.0f;
    }
  } else if (kind == "box_blur") {
    for (int i = 0; i < ds.size(); ++i)
      box_blur_image(imgs.data() + static_cast<std::size_t>(i) * d, ds.c, ds.h, ds.w,
                     static_cast<int>(param));
  } else if (kind == "brightness") {
    for (auto& v : imgs) v += param;
  } else if (kind == "contrast") {
    for (int i = 0; i < ds.size(); ++i) {
      float* img = imgs.data() + static_cast<std::size_t>(i) * d;
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += img[j];
      const auto m = static_cast<float>(mean / static_cast<double>(d));
      for (std::size_t j = 0; j < d; ++j) img[j] = m + (img[j] - m) * (1.0f - param);
    }
  } else {
    corruption_params(kind);  // throws with the valid-kind list
  }
  for (auto& v : imgs) v = clamp01(v);
  out.data.validate();
  return out;
}

ImageDataset synthetic_dataset(const std::string& kind, int n, std::uint64_t seed,
                               const SyntheticOpts& opts) {
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  ImageDataset ds;
  ds.c = opts.c;
  ds.h = opts.h;
  ds.w = opts.w;
  const auto d = static_cast<std::size_t>(ds.image_numel());

  if (kind == "two-gaussians-images") {
    ds.name = "two-gaussians";
    ds.class_count = 2;
    if (n < 2) throw std::invalid_argument("synthetic: n " + std::to_string(n) + " < 2 classes");
    const float shift =
        0.5f * opts.separation * opts.sigma / std::sqrt(static_cast<float>(d));
    ds.images.reserve(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
      const int label = i % 2;
      const float mu = 0.5f + (label == 0 ? -shift : shift);
      for (std::size_t j = 0; j < d; ++j)
        ds.images.push_back(clamp01(mu + opts.sigma * normal_unit(rng)));
      ds.labels.push_back(label);
    }
  } else if (kind == "striped-classes") {
    ds.name = "striped";
    ds.class_count = opts.class_count;
    if (n < opts.class_count)
      throw std::invalid_argument("synthetic: n " + std::to_string(n) + " < " +
                                  std::to_string(opts.class_count) + " classes");
    ds.images.reserve(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
      const int label = i % opts.class_count;
      const bool vertical = label % 2 == 1;
      const int half_period = 2 * (1 + label / 2);
      for (int ch = 0; ch < ds.c; ++ch)
        for (int y = 0; y < ds.h; ++y)
          for (int x = 0; x < ds.w; ++x) {
            const int phase = (vertical ? x : y) / half_period;
            const float base = (phase % 2 == 0) ? 0.3f : 0.7f;
            ds.images.push_back(clamp01(base + uniform_range(rng, -0.05f, 0.05f)));
          }
      ds.labels.push_back(label);
    }
  } else {
    throw std::invalid_argument("synthetic: unknown kind '" + kind + "'");
  }
  ds.validate();
  return ds;
}

}  // namespace advlab
