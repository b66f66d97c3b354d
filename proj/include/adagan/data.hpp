#pragma once

// Dataset ingestion and image serialization. Images live in [-1, 1] as
// [N, M, M, 3] tensors. Synthetic datasets stand in for natural-image
// corpora at desk scale; the CIFAR-10 binary format covers real ingestion.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "adagan/rng.hpp"

namespace adagan {

struct Dataset {
  std::string name;
  Tensor images;  // [N, M, M, 3] in [-1, 1]

  int64_t count() const { return images.empty() ? 0 : images.extent(0); }
  int side() const { return images.empty() ? 0 : static_cast<int>(images.extent(1)); }
};

// Covers each epoch as a seeded permutation; a tail shorter than the batch
// is dropped so every training batch has the configured size. (epoch,
// cursor) fully determine the stream, so resume is exact.
class BatchIterator {
 public:
  BatchIterator(const Dataset* ds, int batch_size, uint64_t seed)
      : ds_(ds), batch_(batch_size), seed_(seed) {
    if (batch_ < 1 || batch_ > ds_->count()) {
      throw ContractError("batch size " + std::to_string(batch_) + " invalid for dataset of " +
                          std::to_string(ds_->count()) + " images");
    }
    regenerate();
  }

  Tensor next() {
    if (cursor_ + batch_ > ds_->count()) {
      ++epoch_;
      cursor_ = 0;
      regenerate();
    }
    const int64_t m = ds_->images.extent(1);
    const int64_t img = m * m * 3;
    Tensor out = Tensor::uninit({batch_, m, m, 3});
    for (int64_t b = 0; b < batch_; ++b) {
      const int64_t src = perm_[static_cast<size_t>(cursor_ + b)];
      std::memcpy(out.data() + b * img, ds_->images.data() + src * img,
                  sizeof(float) * static_cast<size_t>(img));
    }
    cursor_ += batch_;
    return out;
  }

  // The permutation for the current epoch (exposed for coverage checks).
  const std::vector<int64_t>& permutation() const { return perm_; }

  int64_t epoch() const { return epoch_; }
  int64_t cursor() const { return cursor_; }

  void restore(int64_t epoch, int64_t cursor) {
    epoch_ = epoch;
    cursor_ = cursor;
    regenerate();
  }

 private:
  void regenerate() {
    perm_.resize(static_cast<size_t>(ds_->count()));
    std::iota(perm_.begin(), perm_.end(), int64_t{0});
    Rng rng = Rng(seed_).split(static_cast<uint64_t>(epoch_));
    shuffle(perm_, rng);
  }

  const Dataset* ds_;
  int64_t batch_;
  uint64_t seed_;
  int64_t epoch_ = 0;
  int64_t cursor_ = 0;
  std::vector<int64_t> perm_;
};

// ---- CIFAR-10 binary -------------------------------------------------------

// Each record: 1 label byte + 3072 pixel bytes (channel-planar R,G,B of
// 32x32). Labels are read and discarded; pixels map to [-1, 1]; planes are
// interleaved to HWC.
inline Dataset load_cifar10_binary(const std::vector<std::string>& paths) {
  constexpr int64_t kRecord = 3073;
  constexpr int64_t kSide = 32;
  std::vector<std::string> blobs;
  int64_t total = 0;
  for (const std::string& path : paths) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() % kRecord != 0) {
      const int64_t offset = static_cast<int64_t>(bytes.size() / kRecord) * kRecord;
      throw FormatError("'" + path + "': size " + std::to_string(bytes.size()) +
                        " is not a multiple of 3073; truncated record at offset " +
                        std::to_string(offset));
    }
    total += static_cast<int64_t>(bytes.size()) / kRecord;
    blobs.push_back(std::move(bytes));
  }
  if (total == 0) throw FormatError("cifar10: no records found");
  Dataset ds;
  ds.name = "cifar10";
  ds.images = Tensor::uninit({total, kSide, kSide, 3});
  int64_t n = 0;
  for (const std::string& bytes : blobs) {
    const int64_t records = static_cast<int64_t>(bytes.size()) / kRecord;
    for (int64_t r = 0; r < records; ++r, ++n) {
      const unsigned char* rec =
          reinterpret_cast<const unsigned char*>(bytes.data()) + r * kRecord;
      (void)rec[0];  // label byte validates framing, then is discarded
      const unsigned char* planes = rec + 1;
      float* img = ds.images.data() + n * kSide * kSide * 3;
      for (int64_t p = 0; p < kSide * kSide; ++p) {
        for (int c = 0; c < 3; ++c) {
          img[p * 3 + c] = static_cast<float>(planes[c * kSide * kSide + p]) / 127.5f - 1.0f;
        }
      }
    }
  }
  return ds;
}

// ---- synthetic datasets ----------------------------------------------------

enum class ShapeKind { kRect, kDisc, kCross, kNone };

inline const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kRect: return "rect";
    case ShapeKind::kDisc: return "disc";
    case ShapeKind::kCross: return "cross";
    default: return "none";
  }
}

namespace detail {

// One image: uniform dark background + one bright shape of a uniformly
// chosen category. The three categories proxy "diverse visual categories"
// in a controlled way.
inline ShapeKind render_shape(float* img, int side, Rng& rng) {
  const int kind_idx = static_cast<int>(rng.next_below(3));
  float bg[3], fg[3];
  for (int c = 0; c < 3; ++c) bg[c] = static_cast<float>(rng.next_uniform(-1.0, -0.5));
  for (int c = 0; c < 3; ++c) fg[c] = static_cast<float>(rng.next_uniform(0.3, 1.0));
  const double cx = rng.next_uniform(side * 0.3, side * 0.7);
  const double cy = rng.next_uniform(side * 0.3, side * 0.7);
  const double size = rng.next_uniform(side * 0.18, side * 0.3);
  const double hw = kind_idx == 0 ? rng.next_uniform(size * 0.6, size) : size;
  const double arm = std::max(1.0, size / 3.0);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double dx = x - cx, dy = y - cy;
      bool inside = false;
      switch (kind_idx) {
        case 0:  // axis-aligned rectangle
          inside = std::abs(dx) <= hw && std::abs(dy) <= size;
          break;
        case 1:  // disc
          inside = dx * dx + dy * dy <= size * size;
          break;
        default:  // cross: two crossed bars
          inside = (std::abs(dx) <= arm && std::abs(dy) <= size) ||
                   (std::abs(dy) <= arm && std::abs(dx) <= size);
          break;
      }
      float* px = img + (y * side + x) * 3;
      for (int c = 0; c < 3; ++c) px[c] = inside ? fg[c] : bg[c];
    }
  }
  return kind_idx == 0 ? ShapeKind::kRect : kind_idx == 1 ? ShapeKind::kDisc : ShapeKind::kCross;
}

// Bimodal blob images: a Gaussian bump at one of two fixed centers.
inline void render_two_gaussians(float* img, int side, Rng& rng) {
  const bool first = rng.next_below(2) == 0;
  const double cx = first ? side / 3.0 : 2.0 * side / 3.0;
  const double cy = cx;
  const double s2 = 2.0 * (side / 8.0) * (side / 8.0);
  const double amp = rng.next_uniform(1.5, 1.9);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      const float v = static_cast<float>(-1.0 + amp * std::exp(-d2 / s2));
      float* px = img + (y * side + x) * 3;
      for (int c = 0; c < 3; ++c) px[c] = v;
    }
  }
}

}  // namespace detail

// kind: "shapes" (rectangles, discs, crosses) or "two-gaussians-image".
inline Dataset synth_dataset(const std::string& kind, int64_t n, int side, uint64_t seed) {
  if (side != 16 && side != 32) {
    throw ContractError("synthetic datasets support side 16 or 32, got " + std::to_string(side));
  }
  if (n < 1) throw ContractError("synthetic dataset needs n >= 1");
  Dataset ds;
  ds.name = kind;
  ds.images = Tensor::uninit({n, side, side, 3});
  Rng rng(seed);
  if (kind == "shapes") {
    for (int64_t i = 0; i < n; ++i) {
      detail::render_shape(ds.images.data() + i * side * side * 3, side, rng);
    }
  } else if (kind == "two-gaussians-image") {
    for (int64_t i = 0; i < n; ++i) {
      detail::render_two_gaussians(ds.images.data() + i * side * side * 3, side, rng);
    }
  } else {
    throw ConfigError("unknown synthetic dataset '" + kind +
                      "' (expected shapes|two-gaussians-image)");
  }
  return ds;
}

// Rule-based category detector for shapes-like images: threshold against
// the border background estimate, then classify by bounding-box fill
// ratio (rect ~1.0, disc ~pi/4, cross ~0.56).
inline ShapeKind detect_shape(const float* img, int side) {
  // Background: mean border color.
  double bg[3] = {0, 0, 0};
  int border = 0;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      if (y != 0 && y != side - 1 && x != 0 && x != side - 1) continue;
      for (int c = 0; c < 3; ++c) bg[c] += img[(y * side + x) * 3 + c];
      ++border;
    }
  }
  for (double& v : bg) v /= border;

  std::vector<bool> mask(static_cast<size_t>(side) * side, false);
  int64_t area = 0;
  int min_x = side, max_x = -1, min_y = side, max_y = -1;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = img[(y * side + x) * 3 + c] - bg[c];
        d2 += d * d;
      }
      if (d2 > 0.8) {  // well above background
        mask[static_cast<size_t>(y) * side + x] = true;
        ++area;
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    }
  }
  if (area < side * side / 32 || max_x < min_x) return ShapeKind::kNone;
  const int64_t bbox = int64_t{max_x - min_x + 1} * (max_y - min_y + 1);
  const double fill = static_cast<double>(area) / static_cast<double>(bbox);
  if (fill > 0.85) return ShapeKind::kRect;
  if (fill > 0.67) return ShapeKind::kDisc;
  if (fill > 0.30) return ShapeKind::kCross;
  return ShapeKind::kNone;
}

// img: one [M,M,3] image.
inline ShapeKind detect_shape(const Tensor& img) {
  if (img.rank() != 3 || img.extent(2) != 3 || img.extent(0) != img.extent(1)) {
    throw ContractError("detect_shape: expected [M,M,3], got " + shape_str(img.shape()));
  }
  return detect_shape(img.data(), static_cast<int>(img.extent(0)));
}

// ---- sample grids (binary PPM / P6) ----------------------------------------

namespace detail {

// [-1,1] -> [0,255], round half up, clamped.
inline unsigned char quantize_pixel(float v) {
  const double scaled = (static_cast<double>(v) + 1.0) * 0.5 * 255.0;
  const double rounded = std::floor(scaled + 0.5);
  return static_cast<unsigned char>(std::clamp(rounded, 0.0, 255.0));
}

}  // namespace detail

// Tiles images row-major into a P6 pixmap with 2-pixel black gutters
// between tiles (no outer border). Bit-exact for fixed input.
inline void write_sample_grid(const Tensor& images, int cols, const std::string& path) {
  if (images.rank() != 4 || images.extent(3) != 3 || images.extent(0) < 1) {
    throw ContractError("write_sample_grid: expected [K,M,M,3] with K >= 1, got " +
                        shape_str(images.shape()));
  }
  if (cols < 1) throw ContractError("write_sample_grid: cols must be >= 1");
  constexpr int kGutter = 2;
  const int64_t k = images.extent(0);
  const int64_t m = images.extent(1);
  const int64_t rows = (k + cols - 1) / cols;
  const int64_t width = cols * m + (cols - 1) * kGutter;
  const int64_t height = rows * m + (rows - 1) * kGutter;
  std::vector<unsigned char> canvas(static_cast<size_t>(width) * height * 3, 0);
  for (int64_t i = 0; i < k; ++i) {
    const int64_t r = i / cols, c = i % cols;
    const int64_t y0 = r * (m + kGutter), x0 = c * (m + kGutter);
    for (int64_t y = 0; y < m; ++y) {
      for (int64_t x = 0; x < m; ++x) {
        for (int ch = 0; ch < 3; ++ch) {
          canvas[(static_cast<size_t>(y0 + y) * width + (x0 + x)) * 3 + ch] =
              detail::quantize_pixel(images[((i * m + y) * m + x) * 3 + ch]);
        }
      }
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "P6\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(canvas.data()),
          static_cast<std::streamsize>(canvas.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

struct PpmImage {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<unsigned char> pixels;  // RGB interleaved
};

inline PpmImage read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string magic;
  f >> magic;
  if (magic != "P6") throw FormatError("'" + path + "': not a P6 pixmap");
  PpmImage img;
  int maxval = 0;
  f >> img.width >> img.height >> maxval;
  if (maxval != 255) throw FormatError("'" + path + "': expected maxval 255");
  f.get();  // single whitespace after header
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw FormatError("'" + path + "': truncated pixel payload");
  }
  return img;
}

}  // namespace adagan
