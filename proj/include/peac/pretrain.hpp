#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "peac/config.hpp"
#include "peac/data.hpp"
#include "peac/distortion.hpp"
#include "peac/geometry.hpp"
#include "peac/model.hpp"
#include "peac/objective.hpp"

namespace peac {

/// Everything needed to continue a run: weights, optimizer state, position.
struct TrainState {
  TrainConfig config;
  StudentTeacher model;
  ParamSet velocity;  ///< SGD momentum buffer, same shapes as the student
  std::int64_t step = 0;
  std::int64_t steps_per_epoch = 1;

  std::int64_t total_steps() const { return steps_per_epoch * config.epochs; }
};

/// Validates the config and initialises weights from (seed, Init).
TrainState init_train_state(const TrainConfig& config, std::size_t dataset_size);

/// Linear warmup from 0 to config.lr over warmup_epochs, then cosine decay
/// reaching 0 at epochs * steps_per_epoch. Zero from there on.
double lr_schedule(std::int64_t step, const TrainConfig& config, std::int64_t steps_per_epoch);

/// Dataset indices of the batch at `step` (epoch-wise shuffle from (seed, Batch, epoch)).
std::vector<std::size_t> batch_indices(const TrainConfig& config, std::int64_t step, std::int64_t steps_per_epoch,
                                       std::size_t dataset_size);

/// Crops, correspondence and student-side distortions for one image of one step.
struct PreparedSample {
  CropPairPlan plan;
  Correspondence corr;
  Image crop_a;  ///< clean x
  Image crop_b;  ///< clean x'
  DistortedCrop dist_a;
  DistortedCrop dist_b;
};

/// Sampling draws come from (seed, Sampling, step, index) and distortion
/// draws from (seed, Distortion, step, index).
PreparedSample prepare_sample(const TrainConfig& config, const Image& raw, std::int64_t step, std::size_t index);

/// Both symmetric passes for one sample. Student passes see the distorted
/// crops, teacher passes the clean ones. Returned components are the
/// unscaled per-sample sums; the gradient (if requested) is that of
/// `grad_scale` times the weighted total of the enabled terms.
///
/// With `teacher_grad` set, teacher weights are placed on the tape as
/// trainable leaves so the stop-gradient can be observed; the returned
/// gradient is then expected to be identically zero.
LossBundle sample_losses(const EncoderConfig& encoder, const ParamSet& student, const ParamSet& teacher,
                         const PreparedSample& sample, const LossToggles& toggles, const LossWeights& weights,
                         ParamSet* student_grad = nullptr, double grad_scale = 1.0,
                         ParamSet* teacher_grad = nullptr);

/// Batch-mean losses and student gradient for a batch of raw images.
struct BatchGradients {
  LossBundle losses;
  ParamSet grad;
};

BatchGradients compute_batch_gradients(const TrainState& state, std::span<const Image> batch);

struct StepRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double grad_norm = 0.0;
  LossBundle losses;
};

/// One optimizer step: batch gradient, optional clipping, SGD with momentum,
/// then one EMA update. Throws NumericError (with step and component values)
/// on a non-finite loss or gradient.
StepRecord train_step(TrainState& state, std::span<const Image> batch);

/// One JSON object per line: step, lr, order, restore, global, local, total.
std::string log_line(const StepRecord& record);

struct PretrainOptions {
  std::filesystem::path out_dir;  ///< checkpoints and train_log.jsonl; empty disables both
  std::ostream* progress = nullptr;
  std::function<void(const StepRecord&, const TrainState&)> on_step;
};

/// Runs from state.step until the schedule (or config.max_steps) ends.
/// Writes step_XXXXXXXX.ckpt at the start, every checkpoint_every steps and at the end.
std::vector<StepRecord> run_pretraining(TrainState& state, const Dataset& data, const PretrainOptions& options = {});

}  // namespace peac
