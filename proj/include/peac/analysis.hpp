#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "peac/config.hpp"
#include "peac/image.hpp"
#include "peac/model.hpp"

namespace peac {

/// Which encoder output fills a dense map cell.
enum class EmbeddingSource {
  Features,  ///< final-norm token features (D wide)
  Local,     ///< local expander output (H wide)
};

EmbeddingSource parse_embedding_source(const std::string& name);
std::string to_string(EmbeddingSource source);

/// Embeddings of every window at pixel offset (r * stride, c * stride).
struct DenseEmbeddingMap {
  int grid = 0;    ///< G
  int window = 0;  ///< pixels
  int stride = 0;  ///< pixels
  std::string image_id;
  Matrix cells;    ///< G*G x dim, row-major cell order

  int dim() const { return static_cast<int>(cells.cols()); }
  int cell_index(int row, int col) const { return row * grid + col; }
  /// Top-left pixel of a cell's window.
  int pixel(int g) const { return g * stride; }
};

/// G = (side - window) / stride + 1.
int dense_grid_size(int side, int window, int stride);

/// Runs one full-grid encoder pass per (row, col) shift in multiples of the
/// stride and scatters each token into its cell. Token (t_r, t_c) of a shifted
/// grid uses positional slot t_r * grid + t_c. Requires a square image with
/// window <= side <= grid * window, window equal to the encoder patch side and
/// stride dividing window; throws ConfigError otherwise.
DenseEmbeddingMap dense_embeddings(const EncoderConfig& config, const ParamSet& params, const Image& image,
                                   int window, int stride, EmbeddingSource source = EmbeddingSource::Features,
                                   std::string image_id = {});

struct BuddyPair {
  int a = 0;  ///< cell index in map A
  int b = 0;  ///< cell index in map B
  double similarity = 0.0;
};

/// Mutual nearest neighbours under cosine similarity, ordered by cell index
/// in A. Ties go to the lowest index. Zero vectors have similarity 0 to everything.
std::vector<BuddyPair> best_buddies(const DenseEmbeddingMap& a, const DenseEmbeddingMap& b);

/// Clusters the pairs (concatenated unit embeddings of both sides) into k
/// groups and keeps the most similar pair of each, sorted by decreasing
/// similarity. With k or fewer pairs, returns them all sorted the same way.
std::vector<BuddyPair> top_pairs(const DenseEmbeddingMap& a, const DenseEmbeddingMap& b,
                                 std::span<const BuddyPair> pairs, int k = 10, std::uint64_t seed = 0);

struct CosegOptions {
  int clusters = 4;
  int window = 8;
  int stride = 4;
  EmbeddingSource source = EmbeddingSource::Features;
  std::uint64_t seed = 0;
};

struct CosegResult {
  std::vector<LabelImage> masks;   ///< pixel masks, 0 = background or non-common
  std::vector<LabelImage> cells;   ///< G x G cell labels before upsampling
  std::vector<int> common;         ///< k-means cluster ids kept (mask label = id + 1)
};

/// Throws ConfigError for fewer than 2 images, clusters < 2 or clusters > 254.
CosegResult cosegment(const EncoderConfig& config, const ParamSet& params, std::span<const Image> images,
                      const CosegOptions& options);

/// Nearest-cell upsampling of a G x G label grid to side x side pixels.
LabelImage upsample_cells(const LabelImage& cells, int side, int window, int stride);

struct StabilityRow {
  std::string checkpoint;
  int pairs = 0;
  double grid_error = 0.0;        ///< mean positional error of grid matching (patch units)
  double similarity_error = 0.0;  ///< mean positional error of similarity matching (patch units)
  int matched = 0;                ///< mutual matches found by similarity matching
  int degenerate = 0;             ///< crop pairs where a nearest-neighbour tie had to be broken
};

struct StabilityReport {
  std::vector<StabilityRow> rows;
  double similarity_error_mean = 0.0;
  double similarity_error_variance = 0.0;  ///< across checkpoints
  double grid_error_max = 0.0;
};

struct StabilityInput {
  std::string name;
  EncoderConfig config;
  ParamSet teacher;
};

/// For `pairs` crop pairs drawn from (seed, Analysis) over `images`, compares
/// the exact grid correspondence with mutual nearest neighbours of teacher
/// local embeddings restricted to the overlap. Throws ConfigError for fewer
/// than 2 checkpoints.
StabilityReport matching_stability(std::span<const StabilityInput> checkpoints, const GridSpec& spec,
                                   std::span<const Image> images, int pairs, std::uint64_t seed);

/// Text header ("PEAC-EMBED 1", grid, dim, window, stride, image, end) then
/// G*G*dim little-endian doubles in row-major cell order. Throws DataError.
void write_embeddings(const std::filesystem::path& path, const DenseEmbeddingMap& map);
DenseEmbeddingMap read_embeddings(const std::filesystem::path& path);

}  // namespace peac
