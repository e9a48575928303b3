#include "peac/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "peac/errors.hpp"
#include "peac/geometry.hpp"
#include "peac/rng.hpp"

namespace peac {

InMemoryDataset::InMemoryDataset(std::vector<Image> images, std::vector<std::string> names)
    : images_(std::move(images)), names_(std::move(names)) {
  if (images_.size() != names_.size()) throw std::invalid_argument("InMemoryDataset: one name per image");
}

void InMemoryDataset::add(Image image, std::string name) {
  images_.push_back(std::move(image));
  names_.push_back(std::move(name));
}

Image read_image(const std::filesystem::path& path) {
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw DataError("cannot decode image " + path.string());
  double full_scale = 0.0;
  switch (raw.depth()) {
    case CV_8U: full_scale = 255.0; break;
    case CV_16U: full_scale = 65535.0; break;
    default: throw DataError("unsupported pixel depth in " + path.string());
  }
  cv::Mat f;
  raw.convertTo(f, CV_64F, 1.0 / full_scale);
  Image out(f.rows, f.cols);
  const int ch = f.channels();
  for (int r = 0; r < f.rows; ++r) {
    const double* row = f.ptr<double>(r);
    for (int c = 0; c < f.cols; ++c) {
      if (ch == 1 || ch == 2) {
        out(r, c) = row[c * ch];
      } else {
        // OpenCV stores BGR(A).
        const double b = row[c * ch], g = row[c * ch + 1], red = row[c * ch + 2];
        out(r, c) = 0.299 * red + 0.587 * g + 0.114 * b;
      }
    }
  }
  return out;
}

void write_png16(const std::filesystem::path& path, const Image& image) {
  cv::Mat m(static_cast<int>(image.rows()), static_cast<int>(image.cols()), CV_16UC1);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      m.at<std::uint16_t>(r, c) =
          static_cast<std::uint16_t>(std::lround(std::clamp(image(r, c), 0.0, 1.0) * 65535.0));
  if (!cv::imwrite(path.string(), m)) throw DataError("cannot write " + path.string());
}

void write_label_png(const std::filesystem::path& path, const LabelImage& labels) {
  cv::Mat m(static_cast<int>(labels.rows()), static_cast<int>(labels.cols()), CV_8UC1);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) m.at<std::uint8_t>(r, c) = labels(r, c);
  if (!cv::imwrite(path.string(), m)) throw DataError("cannot write " + path.string());
}

Image resize_shorter_side(const Image& image, int target_side) {
  if (target_side < 1) throw ConfigError("target side must be positive");
  const auto rows = static_cast<double>(image.rows());
  const auto cols = static_cast<double>(image.cols());
  const double s = target_side / std::min(rows, cols);
  const int out_r = std::max(1, static_cast<int>(std::lround(rows * s)));
  const int out_c = std::max(1, static_cast<int>(std::lround(cols * s)));
  if (out_r == image.rows() && out_c == image.cols()) return image;
  return resize_bilinear(image, out_r, out_c);
}

ImageDirDataset::ImageDirDataset(const std::filesystem::path& dir, int target_side) : target_side_(target_side) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DataError("image directory not found: " + dir.string());
  static const std::set<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  std::vector<std::filesystem::path> candidates;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (exts.count(ext)) candidates.push_back(entry.path());
  }
  std::sort(candidates.begin(), candidates.end());
  for (const auto& p : candidates) {
    if (cv::haveImageReader(p.string())) paths_.push_back(p);
    else warnings_.push_back("skipping unreadable image " + p.string());
  }
  if (paths_.empty()) throw DataError("no readable images in " + dir.string());
}

Image ImageDirDataset::image(std::size_t i) const {
  return resize_shorter_side(read_image(paths_.at(i)), target_side_);
}

// ---------------------------------------------------------------------------

std::vector<Organ> phantom_template(int class_id) {
  if (class_id < 0 || class_id > 2) throw ConfigError("phantom class must be 0, 1 or 2");
  std::vector<Organ> organs{
      {"left_lung", 0.47, 0.31, 0.27, 0.14, -0.22},
      {"right_lung", 0.47, 0.69, 0.27, 0.14, -0.22},
      {"spine", 0.50, 0.50, 0.48, 0.045, 0.18},
      {"left_clavicle", 0.17, 0.34, 0.03, 0.15, 0.16},
      {"right_clavicle", 0.17, 0.66, 0.03, 0.15, 0.16},
      {"diaphragm", 0.86, 0.50, 0.10, 0.40, 0.12},
  };
  if (class_id == 1) organs.push_back({"heart", 0.60, 0.56, 0.17, 0.19, 0.22});
  else organs.push_back({"heart", 0.60, 0.56, 0.12, 0.13, 0.22});
  if (class_id == 2) organs.push_back({"nodule", 0.38, 0.29, 0.05, 0.05, 0.30});
  return organs;
}

namespace {

constexpr double kEdge = 0.25;  // soft-edge width as a fraction of the radius

struct Jitter {
  double scale = 1.0;
  double shift_row = 0.0;
  double shift_col = 0.0;
};

// Template coordinate (fraction) of an image pixel centre under the jitter.
inline void to_template(const Jitter& j, int side, double y, double x, double& u, double& v) {
  const double c = side / 2.0;
  u = ((y - c - j.shift_row) / j.scale + c) / side;
  v = ((x - c - j.shift_col) / j.scale + c) / side;
}

inline double ellipse_radius(const Organ& o, double u, double v) {
  const double dy = (u - o.row) / o.radius_row;
  const double dx = (v - o.col) / o.radius_col;
  return std::sqrt(dy * dy + dx * dx);
}

inline double background(double u, double v) {
  return 0.40 + 0.15 * u - 0.04 * std::abs(v - 0.5);
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  if (spec.side < 32) throw ConfigError("phantom side must be at least 32");
  const auto organs = phantom_template(spec.class_id);
  Rng rng = make_rng(seed, Stream::Phantom);

  Jitter j;
  j.scale = 1.0 + spec.jitter * uniform_real(rng, -1.0, 1.0);
  j.shift_row = spec.jitter * spec.side * uniform_real(rng, -1.0, 1.0);
  j.shift_col = spec.jitter * spec.side * uniform_real(rng, -1.0, 1.0);

  Phantom ph;
  ph.class_id = spec.class_id;
  ph.scale = j.scale;
  ph.shift_row = j.shift_row;
  ph.shift_col = j.shift_col;
  ph.image.resize(spec.side, spec.side);

  std::normal_distribution<double> noise(0.0, 1.0);
  for (int y = 0; y < spec.side; ++y) {
    for (int x = 0; x < spec.side; ++x) {
      double u, v;
      to_template(j, spec.side, y + 0.5, x + 0.5, u, v);
      double val = background(u, v);
      for (const Organ& o : organs) {
        const double d = ellipse_radius(o, u, v);
        if (d < 1.0) val += o.intensity * std::min(1.0, (1.0 - d) / kEdge);
      }
      // Noise is drawn for every pixel in the same order whatever the class.
      const double n = noise(rng);
      if (spec.noise > 0.0) val += spec.noise * n;
      ph.image(y, x) = std::clamp(val, 0.0, 1.0);
    }
  }

  const double c = spec.side / 2.0;
  for (const Organ& o : organs) {
    LandmarkPoint lp;
    lp.name = o.name;
    lp.row = c + j.scale * (o.row * spec.side - c) + j.shift_row;
    lp.col = c + j.scale * (o.col * spec.side - c) + j.shift_col;
    ph.landmarks.push_back(lp);
  }
  return ph;
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> organ_support(const Phantom& phantom, const Organ& organ) {
  const int side = static_cast<int>(phantom.image.rows());
  Jitter j{phantom.scale, phantom.shift_row, phantom.shift_col};
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      double u, v;
      to_template(j, side, y + 0.5, x + 0.5, u, v);
      mask(y, x) = ellipse_radius(organ, u, v) < 1.0;
    }
  return mask;
}

std::uint64_t phantom_seed(std::uint64_t seed, std::size_t index) {
  Rng rng = make_rng(seed, Stream::Phantom, index, 1);
  return rng();
}

std::vector<Phantom> make_phantom_set(std::size_t count, std::uint64_t seed, int side, double noise) {
  std::vector<Phantom> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.class_id = static_cast<int>(i % 3);
    spec.side = side;
    spec.noise = noise;
    out.push_back(generate_phantom(spec, phantom_seed(seed, i)));
  }
  return out;
}

void materialize_phantoms(const std::filesystem::path& dir, std::size_t count, std::uint64_t seed, int side) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  const auto set = make_phantom_set(count, seed, side);
  std::ofstream landmarks(dir / "landmarks.csv");
  std::ofstream labels(dir / "labels.csv");
  if (!landmarks || !labels) throw DataError("cannot write sidecar files in " + dir.string());
  landmarks << "image,landmark,row,col\n" << std::setprecision(17);
  labels << "image,class\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::ostringstream name;
    name << "phantom_" << std::setw(4) << std::setfill('0') << i << ".png";
    write_png16(dir / name.str(), set[i].image);
    for (const auto& lp : set[i].landmarks)
      landmarks << name.str() << "," << lp.name << "," << lp.row << "," << lp.col << "\n";
    labels << name.str() << "," << set[i].class_id << "\n";
  }
}

std::vector<std::pair<std::string, int>> read_labels(const std::filesystem::path& dir) {
  std::ifstream in(dir / "labels.csv");
  if (!in) throw DataError("missing labels.csv in " + dir.string());
  std::vector<std::pair<std::string, int>> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw DataError("malformed labels.csv line: " + line);
    try {
      out.emplace_back(line.substr(0, comma), std::stoi(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw DataError("malformed labels.csv line: " + line);
    }
  }
  return out;
}

}  // namespace peac
