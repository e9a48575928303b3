#pragma once

#include <filesystem>
#include <string>

#include "peac/config.hpp"
#include "peac/image.hpp"
#include "peac/model.hpp"
#include "peac/rng.hpp"

namespace peac::test {

inline Image random_image(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Image img(rows, cols);
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < img.cols(); ++c) img(r, c) = uniform_real(rng, 0.0, 1.0);
  return img;
}

/// Fresh empty directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(PEAC_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Small grid and encoder for fast training-path tests.
inline TrainConfig tiny_config() {
  TrainConfig c;
  c.grid_n = 5;
  c.grid_m = 4;
  c.grid_k = 4;
  c.depth = 2;
  c.dim = 16;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.batch_size = 2;
  c.epochs = 2;
  c.warmup_epochs = 1;
  c.lr = 0.01;
  c.max_grad_norm = 1.0;
  c.seed = 11;
  return c;
}

}  // namespace peac::test

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "peac/autograd.hpp"

namespace peac::test {

/// |a - n| / max(|a|, |n|, floor), the largest over all entries.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between reverse-mode gradients and central
/// differences of a scalar graph over every entry of every input.
inline double gradcheck(std::vector<Matrix> inputs,
                        const std::function<ag::Var(ag::Tape&, const std::vector<ag::Var>&)>& build,
                        double step = 1e-4) {
  auto eval = [&](const std::vector<Matrix>& xs, std::vector<Matrix>* grads) {
    ag::Tape tape;
    std::vector<ag::Var> vars;
    for (const Matrix& x : xs) vars.push_back(tape.parameter(x));
    ag::Var out = build(tape, vars);
    if (grads) {
      tape.backward(out);
      grads->clear();
      for (std::size_t i = 0; i < xs.size(); ++i)
        grads->push_back(vars[i].grad().size() ? vars[i].grad() : Matrix::Zero(xs[i].rows(), xs[i].cols()));
    }
    return out.scalar();
  };
  std::vector<Matrix> grads;
  eval(inputs, &grads);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (Eigen::Index j = 0; j < inputs[i].size(); ++j) {
      const double keep = inputs[i].data()[j];
      inputs[i].data()[j] = keep + step;
      const double up = eval(inputs, nullptr);
      inputs[i].data()[j] = keep - step;
      const double down = eval(inputs, nullptr);
      inputs[i].data()[j] = keep;
      worst = std::max(worst, relative_error(grads[i].data()[j], (up - down) / (2 * step)));
    }
  return worst;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace peac::test
