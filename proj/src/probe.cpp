#include "peac/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "json.hpp"
#include "peac/errors.hpp"
#include "peac/geometry.hpp"
#include "peac/rng.hpp"

namespace peac {

namespace {

Image to_crop(const Image& img, int side) {
  if (img.rows() == side && img.cols() == side) return img;
  return resize_bilinear(img, side, side);
}

}  // namespace

Matrix extract_features(const EncoderConfig& config, const ParamSet& params, std::span<const Image> images) {
  Matrix out(static_cast<Eigen::Index>(images.size()), config.dim);
  const EncodeOptions opt{false, false};
  for (std::size_t i = 0; i < images.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = encode(config, params, to_crop(images[i], config.crop_side()), opt).pooled;
  return out;
}

Matrix extract_features(const EncoderConfig& config, const ParamSet& params, const Dataset& data) {
  std::vector<Image> images;
  images.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) images.push_back(data.image(i));
  return extract_features(config, params, images);
}

ProbeResult linear_probe(const Matrix& features, std::span<const int> labels, std::uint64_t seed,
                         const ProbeOptions& options) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (labels.size() != n) throw ShapeError("linear_probe: one label per feature row required");
  if (!features.allFinite()) throw NumericError("linear_probe: non-finite feature values");
  if (!(options.test_fraction > 0.0 && options.test_fraction < 1.0))
    throw ConfigError("linear_probe: test_fraction must lie in (0, 1)");
  int classes = 0;
  for (int l : labels) {
    if (l < 0) throw ConfigError("linear_probe: labels must be >= 0");
    classes = std::max(classes, l + 1);
  }
  std::vector<int> class_count(static_cast<std::size_t>(classes), 0);
  for (int l : labels) ++class_count[static_cast<std::size_t>(l)];
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    const int cnt = class_count[static_cast<std::size_t>(c)];
    if (cnt == 0) continue;
    ++present;
    if (cnt < 10)
      throw ConfigError("linear_probe: class " + std::to_string(c) + " has " + std::to_string(cnt) +
                        " samples, need at least 10");
  }
  if (present < 2) throw ConfigError("linear_probe: need at least 2 classes");

  // Unique (row, label) samples with multiplicities, grouped by row.
  using Key = std::vector<double>;
  std::map<Key, std::size_t> group_of;
  std::vector<int> group_label;
  struct Unique {
    std::size_t row;
    std::size_t group;
    int label;
    double weight;
  };
  std::vector<Unique> uniq;
  std::map<std::pair<std::size_t, int>, std::size_t> uniq_of;
  for (std::size_t i = 0; i < n; ++i) {
    const RowVector r = features.row(static_cast<Eigen::Index>(i));
    Key key(r.data(), r.data() + r.size());
    auto [it, inserted] = group_of.emplace(std::move(key), group_label.size());
    if (inserted) group_label.push_back(labels[i]);
    auto [u, fresh] = uniq_of.emplace(std::make_pair(it->second, labels[i]), uniq.size());
    if (fresh) uniq.push_back({i, it->second, labels[i], 0.0});
    uniq[u->second].weight += 1.0;
  }

  std::vector<bool> is_eval(group_label.size(), false);
  for (int c = 0; c < classes; ++c) {
    std::vector<std::size_t> groups;
    for (std::size_t g = 0; g < group_label.size(); ++g)
      if (group_label[g] == c) groups.push_back(g);
    if (groups.empty()) continue;
    Rng rng = make_rng(seed, Stream::Probe, static_cast<std::uint64_t>(c));
    for (std::size_t i = groups.size(); i > 1; --i)
      std::swap(groups[i - 1], groups[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
    auto n_test = static_cast<std::size_t>(std::ceil(options.test_fraction * static_cast<double>(groups.size())));
    if (groups.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, groups.size() - 1);
    for (std::size_t i = 0; i < n_test && i < groups.size(); ++i) is_eval[groups[i]] = true;
  }

  std::vector<const Unique*> train, eval;
  for (const Unique& u : uniq) (is_eval[u.group] ? eval : train).push_back(&u);
  if (train.empty() || eval.empty()) throw ConfigError("linear_probe: split left an empty side");

  const Eigen::Index d = features.cols();
  double wsum = 0.0;
  RowVector mean = RowVector::Zero(d), sq = RowVector::Zero(d);
  for (const Unique* u : train) {
    mean += u->weight * features.row(static_cast<Eigen::Index>(u->row));
    wsum += u->weight;
  }
  mean /= wsum;
  for (const Unique* u : train)
    sq += u->weight * (features.row(static_cast<Eigen::Index>(u->row)) - mean).array().square().matrix();
  RowVector sd = (sq / wsum).array().sqrt().matrix();
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(sd(j) > 1e-12)) sd(j) = 1.0;

  auto standardize = [&](const std::vector<const Unique*>& set, Matrix& x, Vector& w, std::vector<int>& y) {
    x.resize(static_cast<Eigen::Index>(set.size()), d);
    w.resize(static_cast<Eigen::Index>(set.size()));
    y.clear();
    for (std::size_t i = 0; i < set.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) =
          ((features.row(static_cast<Eigen::Index>(set[i]->row)) - mean).array() / sd.array()).matrix();
      w(static_cast<Eigen::Index>(i)) = set[i]->weight;
      y.push_back(set[i]->label);
    }
  };
  Matrix xt, xe;
  Vector wt, we;
  std::vector<int> yt, ye;
  standardize(train, xt, wt, yt);
  standardize(eval, xe, we, ye);

  Matrix W = Matrix::Zero(d, classes);
  RowVector b = RowVector::Zero(classes);
  Matrix onehot = Matrix::Zero(xt.rows(), classes);
  for (std::size_t i = 0; i < yt.size(); ++i) onehot(static_cast<Eigen::Index>(i), yt[i]) = 1.0;
  const Vector wn = wt / wt.sum();
  for (int it = 0; it < options.iterations; ++it) {
    Matrix logits = (xt * W).rowwise() + b;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double mx = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - mx).exp().matrix();
      logits.row(i) /= logits.row(i).sum();
    }
    const Matrix delta = (logits - onehot).array().colwise() * wn.array();
    const Matrix gW = xt.transpose() * delta + options.l2 * W;
    const RowVector gb = delta.colwise().sum();
    W -= options.learning_rate * gW;
    b -= options.learning_rate * gb;
  }
  if (!W.allFinite()) throw NumericError("linear_probe: weights diverged");

  ProbeResult res;
  res.seed = seed;
  std::vector<double> hit(static_cast<std::size_t>(classes), 0.0), tot(static_cast<std::size_t>(classes), 0.0);
  const Matrix scores = (xe * W).rowwise() + b;
  double correct = 0.0, total = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index pred = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, pred)) pred = c;
    const auto y = static_cast<std::size_t>(ye[static_cast<std::size_t>(i)]);
    const bool ok = static_cast<std::size_t>(pred) == y;
    correct += ok ? we(i) : 0.0;
    total += we(i);
    hit[y] += ok ? we(i) : 0.0;
    tot[y] += we(i);
  }
  res.accuracy = correct / total;
  for (int c = 0; c < classes; ++c) {
    const auto k = static_cast<std::size_t>(c);
    res.per_class.push_back(tot[k] > 0.0 ? hit[k] / tot[k] : std::numeric_limits<double>::quiet_NaN());
  }
  res.n_eval = static_cast<int>(total);
  res.n_train = static_cast<int>(wt.sum());
  return res;
}

std::string to_json(const ProbeResult& r) {
  nlohmann::ordered_json j;
  j["checkpoint"] = r.checkpoint;
  j["seed"] = r.seed;
  j["accuracy"] = r.accuracy;
  auto& pc = j["per_class"] = nlohmann::ordered_json::array();
  for (double v : r.per_class) {
    if (std::isnan(v)) pc.push_back(nullptr);
    else pc.push_back(v);
  }
  j["n_eval"] = r.n_eval;
  j["n_train"] = r.n_train;
  return j.dump();
}

}  // namespace peac
