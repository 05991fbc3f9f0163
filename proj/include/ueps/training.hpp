#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ueps/dataset.hpp"
#include "ueps/unrolled.hpp"

namespace ueps::train {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double base_lr = 3e-4;
  double warmup_fraction = 0.01;
  double final_lr_fraction = 0.10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

double mae_loss(const RealGrid& pred, const RealGrid& target);
/// d(mae)/d(pred): sign(pred - target) / pixels, 0 where equal.
RealGrid mae_grad(const RealGrid& pred, const RealGrid& target);

std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg);
/// Linear 0 -> base_lr over warmup_steps, then cosine down to
/// final_lr_fraction * base_lr at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct OptimizerState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

OptimizerState make_optimizer_state(std::size_t num_params);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, std::string group);
  std::size_t step;
  std::string group;
};

/// One bias-corrected Adam update. Throws TrainingDiverged (naming the
/// parameter group when `groups` is given) if any gradient is not finite;
/// params and state are left untouched in that case.
void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state, double lr,
               const TrainConfig& cfg, const std::vector<unroll::NamedGroup>* groups = nullptr);

/// MAE of the pipeline output on one slice; accumulates scale * gradient
/// into `grads`. The dum variant uses the slice's maps.
double loss_and_grad(const unroll::PipelineConfig& config, const unroll::PipelineParams& params,
                     const data::Slice& slice, const acq::SamplingMask& mask, double scale,
                     unroll::PipelineParams& grads);

/// Final RSS image for one slice (maps only passed for dum).
RealGrid reconstruct(const unroll::PipelineConfig& config, const unroll::PipelineParams& params,
                     const data::Slice& slice, const acq::SamplingMask& mask);

struct LogRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> heldout_psnr;
};

std::string to_ndjson(const LogRecord& r);

struct SliceSet {
  data::Manifest manifest;
  std::vector<std::size_t> indices;
};

/// Held-out split used when no separate set is given: the last
/// max(1, n/10) slices are held out.
std::pair<SliceSet, SliceSet> split_heldout(const data::Manifest& manifest);

struct TrainResult {
  unroll::PipelineParams params;
  std::vector<LogRecord> log;
  double heldout_psnr = 0.0;
  double zero_filled_psnr = 0.0;
};

struct TrainOutput {
  std::filesystem::path dir;            // empty: nothing written
  std::function<void(const LogRecord&)> on_record;
};

/// Deterministic given cfg.seed. Logs every optimizer step, plus one record
/// per epoch carrying the mean training loss and held-out PSNR. Writes
/// checkpoint_epoch_NNN and checkpoint (latest) under out.dir, and
/// metrics.ndjson.
TrainResult train(const unroll::PipelineConfig& config, const SliceSet& train_set, const SliceSet& heldout,
                  const TrainConfig& cfg, const TrainOutput& out = {});

/// Mean held-out PSNR of the pipeline and of zero-filled RSS.
std::pair<double, double> heldout_psnr(const unroll::PipelineConfig& config, const unroll::PipelineParams& params,
                                       const std::vector<data::Slice>& slices, const acq::SamplingMask& mask);

}  // namespace ueps::train
