#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "peac/analysis.hpp"
#include "peac/data.hpp"
#include "peac/errors.hpp"
#include "peac/kmeans.hpp"

using namespace peac;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.depth = 2;
  c.dim = 16;
  c.heads = 2;
  c.patch = 4;
  c.grid = 4;
  c.mlp_ratio = 2;
  return c;
}

DenseEmbeddingMap map_of(const Matrix& cells) {
  DenseEmbeddingMap m;
  m.grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cells.rows()))));
  m.window = 4;
  m.stride = 4;
  m.cells = cells;
  return m;
}

// Mutual nearest neighbours by direct search over every cell pair.
std::vector<std::pair<int, int>> brute_buddies(const Matrix& a, const Matrix& b) {
  auto cos = [&](int i, int j) { return a.row(i).dot(b.row(j)) / (a.row(i).norm() * b.row(j).norm()); };
  const int na = static_cast<int>(a.rows()), nb = static_cast<int>(b.rows());
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < na; ++i) {
    int best = 0;
    for (int j = 1; j < nb; ++j)
      if (cos(i, j) > cos(i, best)) best = j;
    int back = 0;
    for (int k = 1; k < na; ++k)
      if (cos(k, best) > cos(back, best)) back = k;
    if (back == i) out.emplace_back(i, best);
  }
  return out;
}

}  // namespace

TEST_CASE("dense grid sizes") {
  CHECK(dense_grid_size(224, 16, 4) == 53);
  CHECK(dense_grid_size(64, 8, 4) == 15);
  CHECK(dense_grid_size(224, 16, 16) == 14);
  CHECK(dense_grid_size(16, 16, 1) == 1);
  CHECK_THROWS_AS(dense_grid_size(8, 16, 4), ConfigError);
  CHECK_THROWS_AS(dense_grid_size(64, 8, 0), ConfigError);
}

TEST_CASE("dense maps at stride equal to the window reproduce the token grid") {
  const EncoderConfig c = small_encoder();
  const StudentTeacher st = make_student_teacher(c, 2);
  const Image img = test::random_image(16, 16, 5);
  const EncoderOutput plain = encode(c, st.teacher, img, {false, true});

  const DenseEmbeddingMap f = dense_embeddings(c, st.teacher, img, 4, 4, EmbeddingSource::Features, "x");
  CHECK(f.grid == 4);
  CHECK(f.image_id == "x");
  CHECK(f.cells == plain.patch_features);
  const DenseEmbeddingMap l = dense_embeddings(c, st.teacher, img, 4, 4, EmbeddingSource::Local);
  CHECK(l.cells == plain.local_embeds);

  // At half stride the unshifted pass lands on the even cells.
  const DenseEmbeddingMap h = dense_embeddings(c, st.teacher, img, 4, 2);
  CHECK(h.grid == 7);
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < 4; ++col)
      CHECK(h.cells.row(h.cell_index(2 * r, 2 * col)) == plain.patch_features.row(r * 4 + col));
  for (Eigen::Index i = 0; i < h.cells.rows(); ++i) CHECK(h.cells.row(i).norm() > 0.0);

  CHECK_THROWS_AS(dense_embeddings(c, st.teacher, img, 8, 4), ConfigError);
  CHECK_THROWS_AS(dense_embeddings(c, st.teacher, img, 4, 3), ConfigError);
  CHECK_THROWS_AS(dense_embeddings(c, st.teacher, test::random_image(20, 20, 1), 4, 4), ConfigError);
  CHECK_THROWS_AS(dense_embeddings(c, st.teacher, test::random_image(16, 12, 1), 4, 4), ConfigError);
  CHECK(parse_embedding_source(to_string(EmbeddingSource::Local)) == EmbeddingSource::Local);
}

TEST_CASE("best buddies of a map with itself are the identity") {
  const DenseEmbeddingMap a = map_of(test::random_matrix(25, 8, 1));
  const auto pairs = best_buddies(a, a);
  REQUIRE(pairs.size() == 25);
  for (int i = 0; i < 25; ++i) {
    CHECK(pairs[static_cast<std::size_t>(i)].a == i);
    CHECK(pairs[static_cast<std::size_t>(i)].b == i);
    CHECK(pairs[static_cast<std::size_t>(i)].similarity == doctest::Approx(1.0));
  }

  Matrix swapped = a.cells;
  swapped.row(3).swap(swapped.row(17));
  const auto sw = best_buddies(a, map_of(swapped));
  REQUIRE(sw.size() == 25);
  CHECK(sw[3].b == 17);
  CHECK(sw[17].b == 3);
  CHECK(sw[4].b == 4);
}

TEST_CASE("best buddies agree with a direct search and are symmetric") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix ca = test::random_matrix(25, 6, 100 + seed), cb = test::random_matrix(25, 6, 200 + seed);
    const auto got = best_buddies(map_of(ca), map_of(cb));
    const auto want = brute_buddies(ca, cb);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].a == want[i].first);
      CHECK(got[i].b == want[i].second);
    }
    auto rev = best_buddies(map_of(cb), map_of(ca));
    std::vector<std::pair<int, int>> fwd, back;
    for (const auto& p : got) fwd.emplace_back(p.a, p.b);
    for (const auto& p : rev) back.emplace_back(p.b, p.a);
    std::sort(back.begin(), back.end());
    CHECK(fwd == back);
  }
  CHECK_THROWS_AS(best_buddies(map_of(Matrix::Ones(4, 3)), map_of(Matrix::Ones(4, 2))), ShapeError);
}

TEST_CASE("top pairs keep one representative per cluster") {
  // Two tight direction clusters; each pair matches a cell with itself.
  Matrix cells = 0.01 * test::random_matrix(16, 4, 3);
  for (int i = 0; i < 16; ++i) cells(i, i < 8 ? 0 : 1) += 1.0;
  const DenseEmbeddingMap m = map_of(cells);
  std::vector<BuddyPair> pairs;
  for (int i = 0; i < 16; ++i) pairs.push_back({i, i, 1.0 - 0.01 * i});
  const auto top = top_pairs(m, m, pairs, 2, 5);
  REQUIRE(top.size() == 2);
  CHECK(top[0].a == 0);
  CHECK(top[1].a == 8);

  const std::vector<BuddyPair> few{{1, 1, 0.2}, {2, 2, 0.9}, {3, 3, 0.5}};
  const auto all = top_pairs(m, m, few, 10);
  REQUIRE(all.size() == 3);
  CHECK(all[0].a == 2);
  CHECK(all[1].a == 3);
  CHECK(all[2].a == 1);
  CHECK_THROWS_AS(top_pairs(m, m, few, 0), ConfigError);
}

TEST_CASE("kmeans") {
  Matrix pts(40, 2);
  const Matrix noise = 0.05 * test::random_matrix(40, 2, 7);
  for (int i = 0; i < 40; ++i) pts.row(i) << (i < 20 ? -5.0 : 5.0) + noise(i, 0), noise(i, 1);
  const KMeansResult r = kmeans(pts, 2, 1);
  for (int i = 0; i < 40; ++i) CHECK(r.labels[static_cast<std::size_t>(i)] == r.labels[i < 20 ? 0 : 20]);
  CHECK(r.labels[0] != r.labels[20]);
  const KMeansResult again = kmeans(pts, 2, 1);
  CHECK(again.labels == r.labels);
  CHECK(again.centroids == r.centroids);

  const KMeansResult each = kmeans(pts, 40, 2);
  CHECK(each.inertia == doctest::Approx(0.0));
  double manual = 0.0;
  for (int i = 0; i < 40; ++i) manual += (pts.row(i) - r.centroids.row(r.labels[static_cast<std::size_t>(i)])).squaredNorm();
  CHECK(r.inertia == doctest::Approx(manual));

  CHECK_THROWS_AS(kmeans(pts, 0, 1), ConfigError);
  CHECK_THROWS_AS(kmeans(pts, 41, 1), ConfigError);
}

TEST_CASE("co-segmentation") {
  const EncoderConfig c = small_encoder();
  const StudentTeacher st = make_student_teacher(c, 4);
  const Image img = test::random_image(16, 16, 9);
  const std::vector<Image> twins{img, img};
  CosegOptions opt;
  opt.clusters = 3;
  opt.window = 4;
  opt.stride = 2;
  const CosegResult same = cosegment(c, st.teacher, twins, opt);
  REQUIRE(same.masks.size() == 2);
  CHECK(same.masks[0] == same.masks[1]);
  CHECK(same.masks[0].rows() == 16);
  CHECK(same.cells[0].rows() == 7);
  // Every cluster present in one twin is present in the other.
  CHECK(same.common.size() == 3);

  const std::vector<Image> mixed{img, test::random_image(16, 16, 10), test::random_image(16, 16, 11)};
  const CosegResult r = cosegment(c, st.teacher, mixed, opt);
  for (const LabelImage& m : r.masks)
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const int v = m.data()[i];
      CHECK((v == 0 || std::find(r.common.begin(), r.common.end(), v - 1) != r.common.end()));
    }

  opt.clusters = 1;
  CHECK_THROWS_AS(cosegment(c, st.teacher, twins, opt), ConfigError);
  opt.clusters = 2;
  CHECK_THROWS_AS(cosegment(c, st.teacher, std::span<const Image>(twins.data(), 1), opt), ConfigError);
}

TEST_CASE("cell upsampling picks the nearest window centre") {
  LabelImage cells(2, 2);
  cells << 1, 2, 3, 4;
  const LabelImage up = upsample_cells(cells, 8, 4, 4);
  CHECK(up(0, 0) == 1);
  CHECK(up(3, 3) == 1);
  CHECK(up(0, 7) == 2);
  CHECK(up(7, 0) == 3);
  CHECK(up(4, 4) == 4);
}

TEST_CASE("matching stability") {
  // Desk grid and encoder on phantoms: flat organ interiors make similarity matching ambiguous.
  const TrainConfig tc;
  const GridSpec spec = tc.grid();
  const EncoderConfig c = tc.encoder();
  std::vector<Image> images;
  for (const Phantom& p : make_phantom_set(3, 30)) images.push_back(p.image);
  const std::vector<StabilityInput> cks{{"a", c, make_student_teacher(c, 1).teacher},
                                        {"b", c, make_student_teacher(c, 2).teacher}};
  const StabilityReport rep = matching_stability(cks, spec, images, 12, 3);
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.grid_error_max == 0.0);
  for (const auto& row : rep.rows) {
    CHECK(row.grid_error == 0.0);
    CHECK(row.pairs == 12);
    CHECK(row.matched > 0);
    CHECK(row.similarity_error > 0.0);
  }
  const double m = (rep.rows[0].similarity_error + rep.rows[1].similarity_error) / 2.0;
  CHECK(rep.similarity_error_mean == doctest::Approx(m));
  CHECK(rep.similarity_error_variance ==
        doctest::Approx((std::pow(rep.rows[0].similarity_error - m, 2) + std::pow(rep.rows[1].similarity_error - m, 2)) / 2));
  const StabilityReport again = matching_stability(cks, spec, images, 12, 3);
  CHECK(again.rows[0].similarity_error == rep.rows[0].similarity_error);

  // Flat images and no positions make every embedding equal, so every query ties.
  EncoderConfig flat = c;
  flat.positional = false;
  const std::vector<StabilityInput> ties{{"x", flat, make_student_teacher(flat, 1).teacher},
                                         {"y", flat, make_student_teacher(flat, 2).teacher}};
  const std::vector<Image> blank{Image::Constant(128, 128, 0.5)};
  const StabilityReport deg = matching_stability(ties, spec, blank, 5, 1);
  for (const auto& row : deg.rows) CHECK(row.degenerate == 5);

  CHECK_THROWS_AS(matching_stability(std::span(cks.data(), 1), spec, images, 4, 1), ConfigError);
  EncoderConfig other = c;
  other.grid = 5;
  const std::vector<StabilityInput> bad{cks[0], {"c", other, cks[1].teacher}};
  CHECK_THROWS_AS(matching_stability(bad, spec, images, 4, 1), ConfigError);
}

TEST_CASE("embedding export round trip") {
  const auto dir = test::scratch_dir("embed");
  DenseEmbeddingMap m = map_of(test::random_matrix(9, 5, 4));
  m.image_id = "phantom_0001.png";
  write_embeddings(dir / "e.bin", m);
  const DenseEmbeddingMap r = read_embeddings(dir / "e.bin");
  CHECK(r.grid == 3);
  CHECK(r.window == 4);
  CHECK(r.stride == 4);
  CHECK(r.image_id == m.image_id);
  CHECK(r.cells == m.cells);

  std::ifstream in(dir / "e.bin", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 8);
  CHECK_THROWS_AS(read_embeddings(dir / "short.bin"), DataError);
  std::ofstream(dir / "junk.bin") << "hello\n";
  CHECK_THROWS_AS(read_embeddings(dir / "junk.bin"), DataError);
  CHECK_THROWS_AS(read_embeddings(dir / "missing.bin"), DataError);
}
