#include "peac/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "peac/errors.hpp"
#include "peac/geometry.hpp"
#include "peac/kmeans.hpp"
#include "peac/rng.hpp"

namespace peac {

EmbeddingSource parse_embedding_source(const std::string& name) {
  if (name == "features") return EmbeddingSource::Features;
  if (name == "local") return EmbeddingSource::Local;
  throw ConfigError("unknown embedding source '" + name + "' (expected 'features' or 'local')");
}

std::string to_string(EmbeddingSource source) {
  return source == EmbeddingSource::Features ? "features" : "local";
}

int dense_grid_size(int side, int window, int stride) {
  if (window < 1 || stride < 1 || side < window) throw ConfigError("dense grid: need 1 <= window <= side, stride >= 1");
  return (side - window) / stride + 1;
}

DenseEmbeddingMap dense_embeddings(const EncoderConfig& config, const ParamSet& params, const Image& image,
                                   int window, int stride, EmbeddingSource source, std::string image_id) {
  if (image.rows() != image.cols()) throw ConfigError("dense_embeddings: image must be square");
  const int side = static_cast<int>(image.rows());
  if (window != config.patch)
    throw ConfigError("dense_embeddings: window " + std::to_string(window) + " must equal the encoder patch side " +
                      std::to_string(config.patch));
  if (stride < 1 || window % stride != 0) throw ConfigError("dense_embeddings: stride must divide the window");
  if (side < window) throw ConfigError("dense_embeddings: image smaller than one window");
  if (side > config.grid * window)
    throw ConfigError("dense_embeddings: image side " + std::to_string(side) + " exceeds the encoder's " +
                      std::to_string(config.grid * window) + "-pixel positional range");

  DenseEmbeddingMap map;
  map.grid = dense_grid_size(side, window, stride);
  map.window = window;
  map.stride = stride;
  map.image_id = std::move(image_id);
  const int shifts = window / stride;
  const int pix = window * window;
  const EncodeOptions opt{false, source == EmbeddingSource::Local};

  for (int sr = 0; sr < shifts; ++sr) {
    for (int sc = 0; sc < shifts; ++sc) {
      const int r0 = sr * stride, c0 = sc * stride;
      const int nr = (side - r0) / window;
      const int nc = (side - c0) / window;
      if (nr < 1 || nc < 1) continue;
      Matrix patches(nr * nc, pix);
      std::vector<int> slots(static_cast<std::size_t>(nr * nc));
      for (int tr = 0; tr < nr; ++tr) {
        for (int tc = 0; tc < nc; ++tc) {
          const int t = tr * nc + tc;
          const auto block = image.block(r0 + tr * window, c0 + tc * window, window, window);
          for (int y = 0; y < window; ++y)
            for (int x = 0; x < window; ++x) patches(t, y * window + x) = block(y, x);
          slots[static_cast<std::size_t>(t)] = tr * config.grid + tc;
        }
      }
      const EncoderOutput out = encode_patches(config, params, patches, slots, opt);
      const Matrix& emb = source == EmbeddingSource::Local ? out.local_embeds : out.patch_features;
      if (map.cells.size() == 0) map.cells = Matrix::Zero(static_cast<Eigen::Index>(map.grid) * map.grid, emb.cols());
      for (int tr = 0; tr < nr; ++tr) {
        for (int tc = 0; tc < nc; ++tc) {
          const int gr = (r0 + tr * window) / stride;
          const int gc = (c0 + tc * window) / stride;
          map.cells.row(map.cell_index(gr, gc)) = emb.row(tr * nc + tc);
        }
      }
    }
  }
  return map;
}

namespace {

Matrix unit_rows(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

// Lowest index wins ties; `tied` reports whether a tie occurred.
Eigen::Index argmax_row(const Eigen::Ref<const RowVector>& v, bool* tied = nullptr) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < v.size(); ++j)
    if (v(j) > v(best)) best = j;
  if (tied) {
    for (Eigen::Index j = 0; j < v.size(); ++j)
      if (j != best && v(j) == v(best)) *tied = true;
  }
  return best;
}

}  // namespace

std::vector<BuddyPair> best_buddies(const DenseEmbeddingMap& a, const DenseEmbeddingMap& b) {
  if (a.dim() != b.dim()) throw ShapeError("best_buddies: embedding widths differ");
  if (a.cells.rows() == 0 || b.cells.rows() == 0) return {};
  const Matrix sim = unit_rows(a.cells) * unit_rows(b.cells).transpose();
  std::vector<Eigen::Index> col_best(static_cast<std::size_t>(sim.cols()));
  for (Eigen::Index j = 0; j < sim.cols(); ++j) col_best[static_cast<std::size_t>(j)] = argmax_row(sim.col(j).transpose());
  std::vector<BuddyPair> out;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    const Eigen::Index j = argmax_row(sim.row(i));
    if (col_best[static_cast<std::size_t>(j)] == i) out.push_back({static_cast<int>(i), static_cast<int>(j), sim(i, j)});
  }
  return out;
}

std::vector<BuddyPair> top_pairs(const DenseEmbeddingMap& a, const DenseEmbeddingMap& b,
                                 std::span<const BuddyPair> pairs, int k, std::uint64_t seed) {
  if (k < 1) throw ConfigError("top_pairs: k must be >= 1");
  auto by_similarity = [](const BuddyPair& x, const BuddyPair& y) {
    if (x.similarity != y.similarity) return x.similarity > y.similarity;
    return x.a != y.a ? x.a < y.a : x.b < y.b;
  };
  std::vector<BuddyPair> out(pairs.begin(), pairs.end());
  if (static_cast<int>(out.size()) <= k) {
    std::sort(out.begin(), out.end(), by_similarity);
    return out;
  }
  const Matrix ua = unit_rows(a.cells);
  const Matrix ub = unit_rows(b.cells);
  Matrix points(static_cast<Eigen::Index>(pairs.size()), ua.cols() + ub.cols());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    points.row(static_cast<Eigen::Index>(i)) << ua.row(pairs[i].a), ub.row(pairs[i].b);
  }
  const KMeansResult km = kmeans(points, k, seed);
  std::vector<int> best(static_cast<std::size_t>(k), -1);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    int& slot = best[static_cast<std::size_t>(km.labels[i])];
    if (slot < 0 || by_similarity(pairs[i], pairs[static_cast<std::size_t>(slot)])) slot = static_cast<int>(i);
  }
  out.clear();
  for (int idx : best)
    if (idx >= 0) out.push_back(pairs[static_cast<std::size_t>(idx)]);
  std::sort(out.begin(), out.end(), by_similarity);
  return out;
}

LabelImage upsample_cells(const LabelImage& cells, int side, int window, int stride) {
  const int G = static_cast<int>(cells.rows());
  LabelImage out(side, side);
  auto nearest = [&](int p) {
    const double g = (p + 0.5 - window / 2.0) / stride;
    return std::clamp(static_cast<int>(std::lround(g)), 0, G - 1);
  };
  for (int y = 0; y < side; ++y) {
    const int gy = nearest(y);
    for (int x = 0; x < side; ++x) out(y, x) = cells(gy, nearest(x));
  }
  return out;
}

CosegResult cosegment(const EncoderConfig& config, const ParamSet& params, std::span<const Image> images,
                      const CosegOptions& options) {
  if (images.size() < 2) throw ConfigError("cosegment: need at least 2 images");
  if (options.clusters < 2) throw ConfigError("cosegment: need at least 2 clusters");
  if (options.clusters > 254) throw ConfigError("cosegment: at most 254 clusters fit an 8-bit mask");

  std::vector<DenseEmbeddingMap> maps;
  maps.reserve(images.size());
  for (const Image& img : images)
    maps.push_back(dense_embeddings(config, params, img, options.window, options.stride, options.source));
  const Eigen::Index per = maps.front().cells.rows();
  for (const auto& m : maps)
    if (m.cells.rows() != per) throw ConfigError("cosegment: images must share one size");

  Matrix pooled(per * static_cast<Eigen::Index>(maps.size()), maps.front().dim());
  for (std::size_t i = 0; i < maps.size(); ++i)
    pooled.middleRows(static_cast<Eigen::Index>(i) * per, per) = unit_rows(maps[i].cells);
  const KMeansResult km = kmeans(pooled, options.clusters, options.seed);

  std::vector<std::set<int>> present(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i)
    for (Eigen::Index c = 0; c < per; ++c) present[i].insert(km.labels[static_cast<std::size_t>(i * per + c)]);

  CosegResult res;
  std::vector<bool> keep(static_cast<std::size_t>(options.clusters), false);
  for (int c = 0; c < options.clusters; ++c) {
    bool all = true;
    for (const auto& s : present) all = all && s.count(c) > 0;
    if (all) {
      keep[static_cast<std::size_t>(c)] = true;
      res.common.push_back(c);
    }
  }

  const int G = maps.front().grid;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    LabelImage cells(G, G);
    for (int r = 0; r < G; ++r)
      for (int c = 0; c < G; ++c) {
        const int lbl = km.labels[static_cast<std::size_t>(i * per + r * G + c)];
        cells(r, c) = keep[static_cast<std::size_t>(lbl)] ? static_cast<std::uint8_t>(lbl + 1) : 0;
      }
    res.masks.push_back(upsample_cells(cells, static_cast<int>(images[i].rows()), options.window, options.stride));
    res.cells.push_back(std::move(cells));
  }
  return res;
}

StabilityReport matching_stability(std::span<const StabilityInput> checkpoints, const GridSpec& spec,
                                   std::span<const Image> images, int pairs, std::uint64_t seed) {
  if (checkpoints.size() < 2) throw ConfigError("matching_stability: need at least 2 checkpoints");
  if (images.empty()) throw DataError("matching_stability: no images");
  if (pairs < 1) throw ConfigError("matching_stability: need at least one crop pair");
  for (const auto& ck : checkpoints)
    if (ck.config.patch != spec.m || ck.config.grid != spec.k)
      throw ConfigError("matching_stability: checkpoint '" + ck.name + "' does not match the grid spec");

  struct Prepared {
    CropPairPlan plan;
    Correspondence corr;
    Matrix patches_a, patches_b;
  };
  std::vector<Prepared> prepared;
  for (int p = 0; p < pairs; ++p) {
    Rng rng = make_rng(seed, Stream::Analysis, static_cast<std::uint64_t>(p), 1);
    Prepared pr;
    pr.plan = sample_crop_pair(spec, rng);
    const Image inner = prepare_seed_image(images[static_cast<std::size_t>(p) % images.size()], spec,
                                           pr.plan.inner_offset, rng);
    const auto [xa, xb] = extract_crops(inner, pr.plan);
    pr.patches_a = patchify(xa, spec.m);
    pr.patches_b = patchify(xb, spec.m);
    pr.corr = overlap_correspondence(pr.plan);
    prepared.push_back(std::move(pr));
  }

  auto abs_a = [&](const CropPairPlan& pl, int idx) {
    return std::pair<int, int>{pl.offset_a.row + idx / spec.k, pl.offset_a.col + idx % spec.k};
  };
  auto abs_b = [&](const CropPairPlan& pl, int idx) {
    return std::pair<int, int>{pl.offset_b.row + idx / spec.k, pl.offset_b.col + idx % spec.k};
  };
  auto dist = [](std::pair<int, int> u, std::pair<int, int> v) {
    return std::hypot(static_cast<double>(u.first - v.first), static_cast<double>(u.second - v.second));
  };

  StabilityReport report;
  for (const auto& ck : checkpoints) {
    StabilityRow row;
    row.checkpoint = ck.name;
    row.pairs = pairs;
    double grid_acc = 0.0, sim_acc = 0.0;
    int sim_counted = 0;
    for (const Prepared& pr : prepared) {
      double g = 0.0;
      for (const auto& [i, j] : pr.corr.pairs) g += dist(abs_a(pr.plan, i), abs_b(pr.plan, j));
      grid_acc += g / pr.corr.z();

      const EncodeOptions opt{false, true};
      const Matrix la = unit_rows(encode_patches(ck.config, ck.teacher, pr.patches_a, {}, opt).local_embeds);
      const Matrix lb = unit_rows(encode_patches(ck.config, ck.teacher, pr.patches_b, {}, opt).local_embeds);
      std::vector<int> ia, ib;
      for (const auto& [i, j] : pr.corr.pairs) {
        ia.push_back(i);
        ib.push_back(j);
      }
      std::sort(ib.begin(), ib.end());
      Matrix sim(static_cast<Eigen::Index>(ia.size()), static_cast<Eigen::Index>(ib.size()));
      for (std::size_t r = 0; r < ia.size(); ++r)
        for (std::size_t c = 0; c < ib.size(); ++c)
          sim(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = la.row(ia[r]).dot(lb.row(ib[c]));
      bool tied = false;
      std::vector<Eigen::Index> col_best(ib.size());
      for (std::size_t c = 0; c < ib.size(); ++c)
        col_best[c] = argmax_row(sim.col(static_cast<Eigen::Index>(c)).transpose(), &tied);
      double err = 0.0;
      int matched = 0;
      for (std::size_t r = 0; r < ia.size(); ++r) {
        const Eigen::Index c = argmax_row(sim.row(static_cast<Eigen::Index>(r)), &tied);
        if (col_best[static_cast<std::size_t>(c)] != static_cast<Eigen::Index>(r)) continue;
        err += dist(abs_a(pr.plan, ia[r]), abs_b(pr.plan, ib[static_cast<std::size_t>(c)]));
        ++matched;
      }
      if (tied) ++row.degenerate;
      row.matched += matched;
      if (matched > 0) {
        sim_acc += err / matched;
        ++sim_counted;
      }
    }
    row.grid_error = grid_acc / pairs;
    row.similarity_error = sim_counted > 0 ? sim_acc / sim_counted : 0.0;
    report.rows.push_back(row);
  }

  double mean = 0.0;
  for (const auto& r : report.rows) {
    mean += r.similarity_error;
    report.grid_error_max = std::max(report.grid_error_max, r.grid_error);
  }
  mean /= static_cast<double>(report.rows.size());
  double var = 0.0;
  for (const auto& r : report.rows) var += (r.similarity_error - mean) * (r.similarity_error - mean);
  report.similarity_error_mean = mean;
  report.similarity_error_variance = var / static_cast<double>(report.rows.size());
  return report;
}

void write_embeddings(const std::filesystem::path& path, const DenseEmbeddingMap& map) {
  static_assert(std::endian::native == std::endian::little, "embedding export assumes a little-endian host");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "PEAC-EMBED 1\n"
      << "grid " << map.grid << "\n"
      << "dim " << map.dim() << "\n"
      << "window " << map.window << "\n"
      << "stride " << map.stride << "\n"
      << "image " << map.image_id << "\n"
      << "end\n";
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = map.cells;
  out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!out) throw DataError("short write to " + path.string());
}

DenseEmbeddingMap read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "PEAC-EMBED 1") throw DataError(path.string() + " is not an embedding export");
  DenseEmbeddingMap map;
  int dim = -1;
  while (std::getline(in, line) && line != "end") {
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string value = sp == std::string::npos ? "" : line.substr(sp + 1);
    try {
      if (key == "grid") map.grid = std::stoi(value);
      else if (key == "dim") dim = std::stoi(value);
      else if (key == "window") map.window = std::stoi(value);
      else if (key == "stride") map.stride = std::stoi(value);
      else if (key == "image") map.image_id = value;
      else throw DataError("unknown header key '" + key + "' in " + path.string());
    } catch (const std::logic_error&) {
      throw DataError("malformed header line '" + line + "' in " + path.string());
    }
  }
  if (line != "end" || map.grid < 1 || dim < 1) throw DataError("incomplete header in " + path.string());
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
      static_cast<Eigen::Index>(map.grid) * map.grid, dim);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(rm.size() * sizeof(double)))
    throw DataError(path.string() + " is truncated");
  map.cells = rm;
  return map;
}

}  // namespace peac
