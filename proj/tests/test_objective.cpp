#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "peac/errors.hpp"
#include "peac/objective.hpp"

using namespace peac;

namespace {

std::vector<int> identity(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

double cosine(const RowVector& a, const RowVector& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace

TEST_CASE("order loss closed forms") {
  const std::vector<Matrix> uniform{Matrix::Zero(4, 4)};
  const std::vector<std::vector<int>> perm{identity(4)};
  CHECK(order_loss(uniform, perm) == doctest::Approx(4.0 * std::log(4.0)).epsilon(1e-12));

  const std::vector<Matrix> confident{Matrix::Identity(4, 4) * 60.0};
  CHECK(order_loss(confident, perm) < 1e-6);

  // Batch mean: a second sample with the uniform value halves the gap.
  const std::vector<Matrix> mixed{Matrix::Zero(4, 4), Matrix::Identity(4, 4) * 60.0};
  const std::vector<std::vector<int>> perms{identity(4), identity(4)};
  CHECK(order_loss(mixed, perms) == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-9));

  // The target of each slot is the original index held there.
  Matrix logits = Matrix::Zero(3, 3);
  logits(0, 2) = logits(1, 0) = logits(2, 1) = 80.0;
  const std::vector<Matrix> shuffled{logits};
  CHECK(order_loss(shuffled, std::vector<std::vector<int>>{{2, 0, 1}}) < 1e-6);
  CHECK(order_loss(shuffled, std::vector<std::vector<int>>{identity(3)}) > 100.0);

  const std::vector<Matrix> bad{Matrix::Constant(2, 2, INFINITY)};
  CHECK_THROWS_AS(order_loss(bad, std::vector<std::vector<int>>{identity(2)}), NumericError);
}

TEST_CASE("restore loss closed forms") {
  const Matrix target = test::random_matrix(16, 64, 1);
  const double c = 0.3;
  const std::vector<Matrix> pred{target.array() + c}, tgt{target};
  CHECK(restore_loss(pred, tgt) == doctest::Approx(16 * 64 * c * c).epsilon(1e-12));
  const std::vector<Matrix> exact{target};
  CHECK(restore_loss(exact, tgt) == 0.0);

  const std::vector<Matrix> pred2{pred[0], Matrix(target.array() - 0.1)}, tgt2{target, target};
  const double single = restore_loss(pred2, tgt2);
  const std::vector<Matrix> pred4{pred2[0], pred2[1], pred2[0], pred2[1]}, tgt4{target, target, target, target};
  CHECK(restore_loss(pred4, tgt4) == doctest::Approx(single).epsilon(1e-12));

  const std::vector<Matrix> wrong{Matrix::Zero(16, 63)};
  CHECK_THROWS_AS(restore_loss(wrong, tgt), ShapeError);
}

TEST_CASE("global term identities") {
  const RowVector y = test::random_matrix(1, 8, 2).row(0);
  CHECK(global_consistency_term(y, y) == doctest::Approx(0.0));
  RowVector e0 = RowVector::Zero(8), e1 = RowVector::Zero(8);
  e0(0) = 3.0;
  e1(1) = 0.5;
  CHECK(global_consistency_term(e0, e1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(global_consistency_term(y, -y) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_THROWS_AS(global_consistency_term(RowVector::Zero(8), y), NumericError);

  Rng rng = make_rng(3, Stream::Analysis);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    RowVector a(16), b(16);
    for (int j = 0; j < 16; ++j) a(j) = n(rng), b(j) = n(rng);
    const double t = global_consistency_term(a, b);
    worst = std::max(worst, std::abs(t - (2.0 - 2.0 * cosine(a, b))));
    CHECK(t >= 0.0);
    CHECK(t <= 4.0);
    CHECK(global_consistency_term(a * 7.5, b * 0.01) == doctest::Approx(t).epsilon(1e-12));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("global loss is a batch mean of both directions") {
  const RowVector a = test::random_matrix(1, 6, 4).row(0), b = test::random_matrix(1, 6, 5).row(0);
  const std::vector<GlobalPass> fwd{{a, b}, {a, a}}, swp{{b, a}, {b, b}};
  const double want = (global_consistency_term(a, b) + global_consistency_term(b, a)) / 2.0;
  CHECK(global_consistency_loss(fwd, swp) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("local term identities") {
  const Matrix p = test::random_matrix(4, 6, 6), q = test::random_matrix(4, 6, 7);
  const Correspondence all{{{0, 0}, {1, 1}, {2, 2}, {3, 3}}};
  CHECK(local_consistency_term({p, q, all, 0}) == 0.0);
  CHECK(local_consistency_term({p, p, all, 1}) == doctest::Approx(0.0));

  Matrix u = Matrix::Zero(1, 3), v = Matrix::Zero(1, 3);
  u(0, 0) = 2.0;
  v(0, 2) = 5.0;
  CHECK(local_consistency_term({u, v, Correspondence{{{0, 0}}}, 1}) == doctest::Approx(2.0).epsilon(1e-12));

  double manual = 0.0;
  const Correspondence some{{{0, 3}, {2, 1}}};
  for (const auto& [i, j] : some.pairs)
    manual += (p.row(i).normalized() - q.row(j).normalized()).squaredNorm();
  CHECK(local_consistency_term({p, q, some, 1}) == doctest::Approx(manual).epsilon(1e-12));

  CHECK_THROWS_AS(local_consistency_term({p, q, Correspondence{{{0, 4}}}, 1}), std::out_of_range);
}

TEST_CASE("local loss divides by the full batch and uses each pass's indicator") {
  const Matrix p = test::random_matrix(4, 6, 8), q = test::random_matrix(4, 6, 9);
  const Correspondence c{{{0, 1}, {1, 2}, {3, 3}}};
  const double t = local_consistency_term({p, q, c, 1});
  const std::vector<LocalPass> batch{{p, q, c, 1}, {p, q, c, 0}};
  CHECK(local_consistency_loss(batch) == doctest::Approx(t / 2.0).epsilon(1e-12));

  // Exchanging x and x' together with their records leaves the total unchanged.
  const std::vector<LocalPass> fwd{{p, q, c, 1}}, swp{{q, p, c.swapped(), 0}};
  const std::vector<LocalPass> fwd2{{q, p, c.swapped(), 0}}, swp2{{p, q, c, 1}};
  CHECK(local_consistency_loss(fwd, swp) == doctest::Approx(local_consistency_loss(fwd2, swp2)).epsilon(1e-12));
  CHECK(local_consistency_loss(fwd, swp) == doctest::Approx(t).epsilon(1e-12));
}

TEST_CASE("total loss and toggles") {
  const LossBundle parts{1.0, 2.0, 3.0, 4.0, 0.0};
  CHECK(total_loss(parts, {}).total == 10.0);
  CHECK(total_loss(LossBundle{}, {}).total == 0.0);

  const LossBundle no_local = total_loss(parts, LossToggles::from_variant("peac_oag"));
  CHECK(no_local.total == 6.0);
  CHECK(no_local.local_c == 0.0);
  const LossToggles oag = LossToggles::from_variant("peac_oag");
  CHECK(oag.od);
  CHECK(oag.ad);
  CHECK(oag.order);
  CHECK(oag.restore);
  CHECK(oag.global);
  CHECK_FALSE(oag.local);

  LossWeights w;
  w.restore = 0.5;
  CHECK(total_loss(parts, {}, w).total == 9.0);

  for (const std::string& name : LossToggles::variant_names())
    CHECK(LossToggles::from_variant(name).variant() == name);
  CHECK_THROWS_AS(LossToggles::from_variant("peac_xyz"), ConfigError);
  LossToggles odd;
  odd.od = false;
  odd.ad = false;
  odd.order = false;
  CHECK_THROWS_AS(odd.variant(), ConfigError);
}

TEST_CASE("graph terms agree with value losses and with central differences") {
  using namespace ag;
  const Matrix logits = test::random_matrix(5, 5, 10);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  const Matrix restored = test::random_matrix(5, 9, 11), target = test::random_matrix(5, 9, 12);
  const Matrix ys = test::random_matrix(1, 7, 13), yt = test::random_matrix(1, 7, 14);
  const Matrix ps = test::random_matrix(5, 7, 15), pt = test::random_matrix(5, 7, 16);
  const Correspondence corr{{{0, 2}, {1, 3}, {4, 4}}};

  {
    Tape t;
    CHECK(order_term(t.constant(logits), perm).scalar() ==
          doctest::Approx(order_loss(std::vector<Matrix>{logits}, std::vector<std::vector<int>>{perm})));
    CHECK(restore_term(t.constant(restored), target).scalar() ==
          doctest::Approx(restore_loss(std::vector<Matrix>{restored}, std::vector<Matrix>{target})));
    CHECK(global_term(t.constant(ys), t.constant(yt)).scalar() ==
          doctest::Approx(global_consistency_term(ys.row(0), yt.row(0))));
    CHECK(local_term(t.constant(ps), t.constant(pt), corr, 1).scalar() ==
          doctest::Approx(local_consistency_term({ps, pt, corr, 1})));
    CHECK(local_term(t.constant(ps), t.constant(pt), corr, 0).scalar() == 0.0);
  }

  CHECK(test::gradcheck({logits}, [&](Tape&, const auto& v) { return order_term(v[0], perm); }) < 1e-6);
  CHECK(test::gradcheck({restored}, [&](Tape&, const auto& v) { return restore_term(v[0], target); }) < 1e-6);
  CHECK(test::gradcheck({ys}, [&](Tape& t, const auto& v) { return global_term(v[0], t.constant(yt)); }) < 1e-6);
  CHECK(test::gradcheck({ps}, [&](Tape& t, const auto& v) { return local_term(v[0], t.constant(pt), corr, 1); }) <
        1e-6);
}
