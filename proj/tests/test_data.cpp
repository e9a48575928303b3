#include <fstream>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "peac/data.hpp"
#include "peac/errors.hpp"

using namespace peac;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PhantomSpec clean_spec(int class_id) {
  PhantomSpec s;
  s.class_id = class_id;
  s.side = 96;
  s.noise = 0.0;
  s.jitter = 0.0;
  return s;
}

}  // namespace

TEST_CASE("rgb input is reduced to luminance") {
  const auto dir = test::scratch_dir("rgb");
  cv::Mat bgr(4, 5, CV_8UC3, cv::Scalar(0, 0, 0));
  bgr.at<cv::Vec3b>(0, 0) = {0, 0, 255};      // red
  bgr.at<cv::Vec3b>(1, 1) = {0, 255, 0};      // green
  bgr.at<cv::Vec3b>(2, 2) = {255, 0, 0};      // blue
  bgr.at<cv::Vec3b>(3, 3) = {40, 120, 200};
  REQUIRE(cv::imwrite((dir / "c.png").string(), bgr));
  const Image img = read_image(dir / "c.png");
  REQUIRE(img.rows() == 4);
  REQUIRE(img.cols() == 5);
  CHECK(img(0, 0) == doctest::Approx(0.299).epsilon(1e-9));
  CHECK(img(1, 1) == doctest::Approx(0.587).epsilon(1e-9));
  CHECK(img(2, 2) == doctest::Approx(0.114).epsilon(1e-9));
  CHECK(img(3, 3) == doctest::Approx((0.299 * 200 + 0.587 * 120 + 0.114 * 40) / 255.0).epsilon(1e-9));
  CHECK(img(0, 4) == 0.0);
}

TEST_CASE("sixteen-bit full scale reads as one") {
  const auto dir = test::scratch_dir("u16");
  cv::Mat m(3, 3, CV_16UC1, cv::Scalar(0));
  m.at<std::uint16_t>(1, 1) = 65535;
  m.at<std::uint16_t>(2, 0) = 32768;
  REQUIRE(cv::imwrite((dir / "d.png").string(), m));
  const Image img = read_image(dir / "d.png");
  CHECK(img(1, 1) == 1.0);
  CHECK(img(2, 0) == doctest::Approx(32768.0 / 65535.0));
  CHECK(img(0, 0) == 0.0);

  Image src = test::random_image(6, 7, 1);
  write_png16(dir / "rt.png", src);
  const Image back = read_image(dir / "rt.png");
  CHECK((back - src).cwiseAbs().maxCoeff() <= 0.5 / 65535.0 + 1e-12);
}

TEST_CASE("image directories skip undecodable files with a warning") {
  const auto dir = test::scratch_dir("mixed");
  for (int i = 0; i < 5; ++i) write_png16(dir / ("img" + std::to_string(i) + ".png"), test::random_image(40, 60, i));
  std::ofstream(dir / "broken.png") << "not an image at all";
  std::ofstream(dir / "notes.txt") << "ignored";
  const ImageDirDataset ds(dir, 32);
  CHECK(ds.size() == 5);
  CHECK(ds.warnings().size() == 1);
  CHECK(ds.warnings().front().find("broken.png") != std::string::npos);
  const Image first = ds.image(0);
  CHECK(first.rows() == 32);
  CHECK(first.cols() == 48);
  CHECK(ds.name(0) == "img0.png");

  const auto empty = test::scratch_dir("empty");
  CHECK_THROWS_AS(ImageDirDataset(empty, 32), DataError);
  CHECK_THROWS_AS(ImageDirDataset(dir / "nope", 32), DataError);
  CHECK_THROWS_AS(read_image(dir / "broken.png"), DataError);
}

TEST_CASE("shorter-side resize keeps the aspect ratio") {
  const Image wide = test::random_image(50, 100, 2);
  const Image out = resize_shorter_side(wide, 25);
  CHECK(out.rows() == 25);
  CHECK(out.cols() == 50);
  const Image tall = resize_shorter_side(test::random_image(90, 30, 3), 60);
  CHECK(tall.cols() == 60);
  CHECK(tall.rows() == 180);
}

TEST_CASE("noise-free unjittered phantoms are the class template") {
  for (int cls = 0; cls < 3; ++cls) {
    const Phantom a = generate_phantom(clean_spec(cls), 1), b = generate_phantom(clean_spec(cls), 999);
    CHECK(a.image == b.image);
    const auto tpl = phantom_template(cls);
    REQUIRE(a.landmarks.size() == tpl.size());
    for (std::size_t i = 0; i < tpl.size(); ++i) {
      CHECK(a.landmarks[i].name == tpl[i].name);
      CHECK(a.landmarks[i].row == doctest::Approx(tpl[i].row * 96));
      CHECK(a.landmarks[i].col == doctest::Approx(tpl[i].col * 96));
      CHECK(tpl[i].row > 0.0);
      CHECK(tpl[i].row < 1.0);
      CHECK(tpl[i].col > 0.0);
      CHECK(tpl[i].col < 1.0);
    }
  }
}

TEST_CASE("phantoms are reproducible and bounded") {
  PhantomSpec s;
  s.noise = 0.2;
  const Phantom a = generate_phantom(s, 4), b = generate_phantom(s, 4), c = generate_phantom(s, 5);
  CHECK(a.image == b.image);
  CHECK(a.image != c.image);
  CHECK(a.image.minCoeff() >= 0.0);
  CHECK(a.image.maxCoeff() <= 1.0);
  CHECK(std::abs(a.scale - 1.0) <= 0.1);
  CHECK(std::abs(a.shift_row) <= 0.1 * s.side);
}

TEST_CASE("classes from one seed differ only inside class-specific organs") {
  PhantomSpec s;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    s.class_id = 0;
    const Phantom p0 = generate_phantom(s, seed);
    s.class_id = 1;
    const Phantom p1 = generate_phantom(s, seed);
    s.class_id = 2;
    const Phantom p2 = generate_phantom(s, seed);

    auto find = [](int cls, const std::string& name) {
      for (const Organ& o : phantom_template(cls))
        if (o.name == name) return o;
      FAIL("no organ " << name);
      return Organ{};
    };
    const auto heart_mask = organ_support(p0, find(0, "heart")).array() || organ_support(p1, find(1, "heart")).array();
    const auto nodule_mask = organ_support(p2, find(2, "nodule")).array();
    int diff01 = 0, diff02 = 0, leak01 = 0, leak02 = 0;
    for (int y = 0; y < s.side; ++y)
      for (int x = 0; x < s.side; ++x) {
        if (p0.image(y, x) != p1.image(y, x)) (heart_mask(y, x) ? diff01 : leak01)++;
        if (p0.image(y, x) != p2.image(y, x)) (nodule_mask(y, x) ? diff02 : leak02)++;
      }
    CHECK(leak01 == 0);
    CHECK(leak02 == 0);
    CHECK(diff01 > 0);
    CHECK(diff02 > 0);
  }
}

TEST_CASE("landmarks follow the applied jitter") {
  PhantomSpec s;
  s.jitter = 0.1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Phantom p = generate_phantom(s, seed);
    const auto tpl = phantom_template(s.class_id);
    const double c = s.side / 2.0;
    for (std::size_t i = 0; i < tpl.size(); ++i) {
      CHECK(p.landmarks[i].row == doctest::Approx(c + p.scale * (tpl[i].row * s.side - c) + p.shift_row));
      CHECK(p.landmarks[i].col == doctest::Approx(c + p.scale * (tpl[i].col * s.side - c) + p.shift_col));
      // The landmark sits at the centre of its organ's support.
      const auto mask = organ_support(p, tpl[i]);
      const int r = static_cast<int>(p.landmarks[i].row), col = static_cast<int>(p.landmarks[i].col);
      CHECK(mask(r, col));
    }
  }
}

TEST_CASE("materialized phantom sets are byte-identical across runs") {
  const auto a = test::scratch_dir("set_a"), b = test::scratch_dir("set_b");
  materialize_phantoms(a, 6, 7, 64);
  materialize_phantoms(b, 6, 7, 64);
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(a)) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  CHECK(names.size() == 8);
  for (const auto& n : names) CHECK_MESSAGE(slurp(a / n) == slurp(b / n), n);

  const auto labels = read_labels(a);
  REQUIRE(labels.size() == 6);
  CHECK(labels[0] == std::make_pair(std::string("phantom_0000.png"), 0));
  CHECK(labels[4].second == 1);
  const std::string lm = slurp(a / "landmarks.csv");
  CHECK(lm.rfind("image,landmark,row,col\n", 0) == 0);
  CHECK(lm.find("phantom_0005.png,nodule,") != std::string::npos);

  const auto set = make_phantom_set(6, 7, 64);
  const Image disk = read_image(a / "phantom_0003.png");
  CHECK((disk - set[3].image).cwiseAbs().maxCoeff() <= 0.5 / 65535.0 + 1e-12);
  CHECK_THROWS_AS(read_labels(test::scratch_dir("nolabels")), DataError);
}
