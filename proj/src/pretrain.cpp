#include "peac/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "peac/checkpoint.hpp"
#include "peac/errors.hpp"

namespace peac {

TrainState init_train_state(const TrainConfig& config, std::size_t dataset_size) {
  config.validate();
  if (dataset_size == 0) throw DataError("pretraining needs at least one image");
  TrainState s;
  s.config = config;
  s.model = make_student_teacher(config.encoder(), config.seed, config.ema_alpha);
  s.velocity = s.model.student.zeros_like();
  s.steps_per_epoch =
      static_cast<std::int64_t>((dataset_size + static_cast<std::size_t>(config.batch_size) - 1) /
                                static_cast<std::size_t>(config.batch_size));
  return s;
}

double lr_schedule(std::int64_t step, const TrainConfig& config, std::int64_t steps_per_epoch) {
  const std::int64_t warmup = static_cast<std::int64_t>(config.warmup_epochs) * steps_per_epoch;
  const std::int64_t total = static_cast<std::int64_t>(config.epochs) * steps_per_epoch;
  if (step < 0) return 0.0;
  if (step >= total) return 0.0;
  if (step < warmup) return config.lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * t));
}

std::vector<std::size_t> batch_indices(const TrainConfig& config, std::int64_t step, std::int64_t steps_per_epoch,
                                       std::size_t dataset_size) {
  const std::int64_t epoch = step / steps_per_epoch;
  const std::int64_t within = step % steps_per_epoch;
  std::vector<std::size_t> order(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
  Rng rng = make_rng(config.seed, Stream::Batch, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = dataset_size; i > 1; --i) {
    const auto j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(order[i - 1], order[j]);
  }
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t begin = static_cast<std::size_t>(within) * bs;
  const std::size_t end = std::min(begin + bs, dataset_size);
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

PreparedSample prepare_sample(const TrainConfig& config, const Image& raw, std::int64_t step, std::size_t index) {
  const GridSpec spec = config.grid();
  PreparedSample s;
  Rng sampling = make_rng(config.seed, Stream::Sampling, static_cast<std::uint64_t>(step), index);
  s.plan = sample_crop_pair(spec, sampling);
  const Image inner = prepare_seed_image(raw, spec, s.plan.inner_offset, sampling);
  std::tie(s.crop_a, s.crop_b) = extract_crops(inner, s.plan);
  s.corr = overlap_correspondence(s.plan);
  Rng distortion = make_rng(config.seed, Stream::Distortion, static_cast<std::uint64_t>(step), index);
  const DistortionConfig dc = config.distortion();
  s.dist_a = maybe_distort(s.crop_a, spec.m, distortion, dc);
  s.dist_b = maybe_distort(s.crop_b, spec.m, distortion, dc);
  return s;
}

namespace {

// Clean patches in the order the student saw them.
Matrix restoration_target(const DistortedCrop& d, int m) {
  const Matrix original = patchify(d.record.original_crop, m);
  Matrix out(original.rows(), original.cols());
  for (Eigen::Index j = 0; j < original.rows(); ++j)
    out.row(j) = original.row(d.record.permutation[static_cast<std::size_t>(j)]);
  return out;
}

void copy_grads(const std::vector<ag::Var>& vars, ParamSet& out) {
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const Matrix& g = vars[i].grad();
    if (g.size() == 0) out.values[i].setZero();
    else out.values[i] = g;
  }
}

double grad_norm(const ParamSet& g) {
  double acc = 0.0;
  for (const Matrix& v : g.values) acc += v.squaredNorm();
  return std::sqrt(acc);
}

std::string describe(const LossBundle& l) {
  std::ostringstream out;
  out << std::setprecision(17) << "order=" << l.order << " restore=" << l.restore << " global=" << l.global_c
      << " local=" << l.local_c << " total=" << l.total;
  return out.str();
}

}  // namespace

LossBundle sample_losses(const EncoderConfig& encoder, const ParamSet& student, const ParamSet& teacher,
                         const PreparedSample& sample, const LossToggles& toggles, const LossWeights& weights,
                         ParamSet* student_grad, double grad_scale, ParamSet* teacher_grad) {
  if (student_grad) *student_grad = student.zeros_like();
  if (teacher_grad) *teacher_grad = teacher.zeros_like();
  const bool heads = toggles.order || toggles.restore;
  const bool expanders = toggles.global || toggles.local;
  if (!heads && !expanders) return {};

  ag::Tape tape;
  tape.set_grad_enabled(student_grad || teacher_grad);
  const auto s_vars = bind_params(tape, student, student_grad != nullptr);
  const auto t_vars = bind_params(tape, teacher, teacher_grad != nullptr);
  const int m = encoder.patch;

  const EncodeOptions s_opt{heads, expanders};
  const EncoderGraph sa = encode(tape, encoder, s_vars, patchify(sample.dist_a.crop, m), {}, s_opt);
  const EncoderGraph sb = encode(tape, encoder, s_vars, patchify(sample.dist_b.crop, m), {}, s_opt);

  ag::Var tg_a, tg_b, tl_a, tl_b;
  if (expanders) {
    const EncodeOptions t_opt{false, true};
    const EncoderGraph ta = encode(tape, encoder, t_vars, patchify(sample.crop_a, m), {}, t_opt);
    const EncoderGraph tb = encode(tape, encoder, t_vars, patchify(sample.crop_b, m), {}, t_opt);
    tg_a = ag::stop_gradient(ta.global_embed);
    tg_b = ag::stop_gradient(tb.global_embed);
    tl_a = ag::stop_gradient(ta.local_embeds);
    tl_b = ag::stop_gradient(tb.local_embeds);
  }

  LossBundle raw;
  std::vector<ag::Var> terms;
  if (toggles.order) {
    ag::Var v = ag::add(order_term(sa.order_logits, sample.dist_a.record.permutation),
                        order_term(sb.order_logits, sample.dist_b.record.permutation));
    raw.order = v.scalar();
    terms.push_back(ag::scale(v, weights.order));
  }
  if (toggles.restore) {
    ag::Var v = ag::add(restore_term(sa.restored, restoration_target(sample.dist_a, m)),
                        restore_term(sb.restored, restoration_target(sample.dist_b, m)));
    raw.restore = v.scalar();
    terms.push_back(ag::scale(v, weights.restore));
  }
  if (toggles.global) {
    ag::Var v = ag::add(global_term(sa.global_embed, tg_b), global_term(sb.global_embed, tg_a));
    raw.global_c = v.scalar();
    terms.push_back(ag::scale(v, weights.global));
  }
  if (toggles.local) {
    ag::Var v = ag::add(local_term(sa.local_embeds, tl_b, sample.corr, sample.dist_a.record.indicator()),
                        local_term(sb.local_embeds, tl_a, sample.corr.swapped(), sample.dist_b.record.indicator()));
    raw.local_c = v.scalar();
    terms.push_back(ag::scale(v, weights.local));
  }

  if (student_grad || teacher_grad) {
    tape.backward(ag::scale(ag::sum(terms), grad_scale));
    if (student_grad) copy_grads(s_vars, *student_grad);
    if (teacher_grad) copy_grads(t_vars, *teacher_grad);
  }
  return total_loss(raw, toggles, weights);
}

BatchGradients compute_batch_gradients(const TrainState& state, std::span<const Image> batch) {
  if (batch.empty()) throw DataError("empty batch");
  const TrainConfig& cfg = state.config;
  const auto B = static_cast<std::ptrdiff_t>(batch.size());
  std::vector<LossBundle> losses(batch.size());
  std::vector<ParamSet> grads(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < B; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      const PreparedSample s = prepare_sample(cfg, batch[idx], state.step, idx);
      losses[idx] = sample_losses(state.model.config, state.model.student, state.model.teacher, s, cfg.toggles,
                                  cfg.weights, &grads[idx], 1.0 / static_cast<double>(B));
    } catch (...) {
      errors[idx] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  // Reduce in index order so the result does not depend on thread scheduling.
  BatchGradients out;
  out.grad = state.model.student.zeros_like();
  const double inv = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t p = 0; p < out.grad.size(); ++p) out.grad.values[p] += grads[i].values[p];
    out.losses.order += losses[i].order * inv;
    out.losses.restore += losses[i].restore * inv;
    out.losses.global_c += losses[i].global_c * inv;
    out.losses.local_c += losses[i].local_c * inv;
  }
  out.losses.total = out.losses.order + out.losses.restore + out.losses.global_c + out.losses.local_c;
  return out;
}

StepRecord train_step(TrainState& state, std::span<const Image> batch) {
  BatchGradients bg = compute_batch_gradients(state, batch);
  StepRecord rec;
  rec.step = state.step;
  rec.losses = bg.losses;
  rec.lr = lr_schedule(state.step, state.config, state.steps_per_epoch);
  rec.grad_norm = grad_norm(bg.grad);
  if (!bg.losses.all_finite() || !std::isfinite(rec.grad_norm)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << state.step << ": " << describe(bg.losses) << " grad_norm=" << rec.grad_norm;
    throw NumericError(msg.str());
  }

  double clip = 1.0;
  const double max_norm = state.config.max_grad_norm;
  if (max_norm > 0.0 && rec.grad_norm > max_norm) clip = max_norm / rec.grad_norm;

  const double mu = state.config.momentum;
  for (std::size_t p = 0; p < bg.grad.size(); ++p) {
    Matrix& v = state.velocity.values[p];
    v = mu * v + clip * bg.grad.values[p];
    state.model.student.values[p] -= rec.lr * v;
  }
  ema_update(state.model);
  ++state.step;
  return rec;
}

std::string log_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["order"] = r.losses.order;
  j["restore"] = r.losses.restore;
  j["global"] = r.losses.global_c;
  j["local"] = r.losses.local_c;
  j["total"] = r.losses.total;
  return j.dump();
}

namespace {

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
  std::ostringstream name;
  name << "step_" << std::setw(8) << std::setfill('0') << step << ".ckpt";
  return dir / name.str();
}

}  // namespace

std::vector<StepRecord> run_pretraining(TrainState& state, const Dataset& data, const PretrainOptions& options) {
  const TrainConfig& cfg = state.config;
  std::int64_t end = state.total_steps();
  if (cfg.max_steps > 0) end = std::min(end, cfg.max_steps);

  std::ofstream log;
  const bool persist = !options.out_dir.empty();
  if (persist) {
    std::error_code ec;
    std::filesystem::create_directories(options.out_dir, ec);
    if (ec) throw DataError("cannot create " + options.out_dir.string() + ": " + ec.message());
    log.open(options.out_dir / "train_log.jsonl", state.step == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError("cannot open training log in " + options.out_dir.string());
    const auto first = checkpoint_path(options.out_dir, state.step);
    if (!std::filesystem::exists(first)) save_checkpoint(state, first);
  }

  std::vector<StepRecord> records;
  while (state.step < end) {
    const auto idx = batch_indices(cfg, state.step, state.steps_per_epoch, data.size());
    std::vector<Image> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(data.image(i));
    const StepRecord rec = train_step(state, batch);
    records.push_back(rec);
    if (persist) log << log_line(rec) << "\n" << std::flush;
    if (options.progress && (rec.step % 10 == 0 || state.step == end))
      *options.progress << "step " << rec.step << " lr " << rec.lr << " " << describe(rec.losses) << "\n";
    if (options.on_step) options.on_step(rec, state);
    const bool periodic = cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0;
    if (persist && (periodic || state.step == end)) save_checkpoint(state, checkpoint_path(options.out_dir, state.step));
  }
  return records;
}

}  // namespace peac
