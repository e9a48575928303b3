#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "peac/image.hpp"

namespace peac {

/// Read-only indexed image source.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual Image image(std::size_t i) const = 0;
  virtual std::string name(std::size_t i) const = 0;
};

class InMemoryDataset : public Dataset {
 public:
  InMemoryDataset() = default;
  InMemoryDataset(std::vector<Image> images, std::vector<std::string> names);

  void add(Image image, std::string name);
  std::size_t size() const override { return images_.size(); }
  Image image(std::size_t i) const override { return images_.at(i); }
  std::string name(std::size_t i) const override { return names_.at(i); }

 private:
  std::vector<Image> images_;
  std::vector<std::string> names_;
};

/// Directory of PNG/JPEG/BMP/TIFF files, decoded on access to single-channel
/// luminance in [0, 1] with the shorter side resized to `target_side`.
class ImageDirDataset : public Dataset {
 public:
  /// Throws DataError when the directory is missing or holds no readable image.
  /// Files without a decodable image signature are skipped and listed in warnings().
  ImageDirDataset(const std::filesystem::path& dir, int target_side);

  std::size_t size() const override { return paths_.size(); }
  /// Throws DataError if decoding fails.
  Image image(std::size_t i) const override;
  std::string name(std::size_t i) const override { return paths_.at(i).filename().string(); }
  const std::filesystem::path& path(std::size_t i) const { return paths_.at(i); }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  std::vector<std::filesystem::path> paths_;
  std::vector<std::string> warnings_;
  int target_side_;
};

inline ImageDirDataset load_image_dir(const std::filesystem::path& dir, int target_side) {
  return ImageDirDataset(dir, target_side);
}

/// Decodes one file to luminance in [0, 1] (0.299 R + 0.587 G + 0.114 B;
/// full-scale 8/16-bit value -> 1.0). Throws DataError.
Image read_image(const std::filesystem::path& path);
/// Writes a 16-bit grayscale PNG (values clamped to [0, 1]). Throws DataError.
void write_png16(const std::filesystem::path& path, const Image& image);
/// Writes an 8-bit label PNG. Throws DataError.
void write_label_png(const std::filesystem::path& path, const LabelImage& labels);
/// Scales so the shorter side equals `target_side`, keeping aspect ratio.
Image resize_shorter_side(const Image& image, int target_side);

// ---------------------------------------------------------------------------
// Synthetic phantoms

/// Elliptical structure in template coordinates (fractions of the side).
struct Organ {
  std::string name;
  double row = 0.5;
  double col = 0.5;
  double radius_row = 0.1;
  double radius_col = 0.1;
  double intensity = 0.0;  ///< added to the background inside the ellipse
};

struct PhantomSpec {
  int class_id = 0;       ///< 0 baseline, 1 enlarged heart, 2 lung nodule
  int side = 128;
  double noise = 0.02;    ///< Gaussian sigma
  double jitter = 0.10;   ///< max relative scale change and translation (fraction of side)
};

struct LandmarkPoint {
  std::string name;
  double row = 0.0;  ///< pixels
  double col = 0.0;
};

struct Phantom {
  Image image;
  std::vector<LandmarkPoint> landmarks;
  int class_id = 0;
  double scale = 1.0;  ///< applied jitter: p_img = c + scale * (p_tpl - c) + shift
  double shift_row = 0.0;
  double shift_col = 0.0;
};

/// Per-class template: shared anatomy plus the class-specific structure.
std::vector<Organ> phantom_template(int class_id);

/// Class-independent draws (jitter, then noise) so two classes rendered from
/// one seed differ only inside the class-specific organ support.
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Pixel mask of an organ after the phantom's jitter.
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> organ_support(const Phantom& phantom, const Organ& organ);

/// Seed of the i-th phantom of a materialized set.
std::uint64_t phantom_seed(std::uint64_t seed, std::size_t index);

/// `count` phantoms with classes cycling 0,1,2. In-memory twin of materialize_phantoms.
std::vector<Phantom> make_phantom_set(std::size_t count, std::uint64_t seed, int side = 128, double noise = 0.02);

/// Writes phantom_NNNN.png, landmarks.csv (image,landmark,row,col) and labels.csv (image,class).
void materialize_phantoms(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed, int side = 128);

/// Reads labels.csv from a dataset directory. Throws DataError.
std::vector<std::pair<std::string, int>> read_labels(const std::filesystem::path& dir);

}  // namespace peac
