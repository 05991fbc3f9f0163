#include "ueps/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "ueps/checkpoint.hpp"
#include "ueps/metrics.hpp"

namespace ueps::train {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw std::invalid_argument("TrainConfig: warmup_fraction must lie in (0, 1)");
  }
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
    throw std::invalid_argument("TrainConfig: final_lr_fraction must lie in (0, 1]");
  }
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: base_lr must be positive");
}

double mae_loss(const RealGrid& pred, const RealGrid& target) {
  require_same_shape(pred, target, "mae_loss");
  if (pred.size() == 0) throw InvalidShape("mae_loss: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.data()[i] - target.data()[i]);
  return s / static_cast<double>(pred.size());
}

RealGrid mae_grad(const RealGrid& pred, const RealGrid& target) {
  require_same_shape(pred, target, "mae_grad");
  RealGrid g(pred.height(), pred.width());
  const double w = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    g.data()[i] = d > 0.0 ? w : (d < 0.0 ? -w : 0.0);
  }
  return g;
}

std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg) {
  const auto w = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
  return std::max<std::size_t>(w, 1);
}

double lr_schedule(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0 || step > total_steps) {
    throw std::out_of_range("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
  }
  const std::size_t w = warmup_steps(total_steps, cfg);
  if (step <= w) return cfg.base_lr * static_cast<double>(step) / static_cast<double>(w);
  const double lo = cfg.final_lr_fraction * cfg.base_lr;
  const double frac = static_cast<double>(step - w) / static_cast<double>(total_steps - w);
  return lo + (cfg.base_lr - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

OptimizerState make_optimizer_state(std::size_t num_params) {
  return OptimizerState{0, std::vector<double>(num_params, 0.0), std::vector<double>(num_params, 0.0)};
}

TrainingDiverged::TrainingDiverged(std::size_t s, std::string g)
    : std::runtime_error("training diverged at step " + std::to_string(s) + ": non-finite value in " + g),
      step(s),
      group(std::move(g)) {}

void adam_step(std::span<double> params, std::span<const double> grads, OptimizerState& state, double lr,
               const TrainConfig& cfg, const std::vector<unroll::NamedGroup>* groups) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment lengths differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (std::isfinite(grads[i])) continue;
    std::string name = "parameter " + std::to_string(i);
    if (groups) {
      for (const auto& g : *groups) {
        if (i >= g.offset && i < g.offset + g.size) name = g.name;
      }
    }
    throw TrainingDiverged(state.step + 1, name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mh = state.m[i] / c1;
    const double vh = state.v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
  }
}

namespace {

const acq::CoilSensitivities* maps_for(const unroll::PipelineConfig& config, const data::Slice& slice) {
  return unroll::uses_csm(config.variant) ? &slice.csm : nullptr;
}

}  // namespace

double loss_and_grad(const unroll::PipelineConfig& config, const unroll::PipelineParams& params,
                     const data::Slice& slice, const acq::SamplingMask& mask, double scale,
                     unroll::PipelineParams& grads) {
  unroll::PipelineTape tape;
  const auto result = unroll::run_pipeline_taped(config, slice.kspace, mask, params, maps_for(config, slice), tape);
  const double loss = mae_loss(result.image, slice.target);
  RealGrid g = mae_grad(result.image, slice.target);
  for (auto& v : g.data()) v *= scale;
  unroll::pipeline_backward(tape, g, params, grads);
  return loss;
}

RealGrid reconstruct(const unroll::PipelineConfig& config, const unroll::PipelineParams& params,
                     const data::Slice& slice, const acq::SamplingMask& mask) {
  return unroll::run_pipeline(config, slice.kspace, mask, params, maps_for(config, slice)).image;
}

std::string to_ndjson(const LogRecord& r) {
  nlohmann::json j{{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}};
  if (r.heldout_psnr) j["heldout_psnr"] = *r.heldout_psnr;
  return j.dump();
}

std::pair<SliceSet, SliceSet> split_heldout(const data::Manifest& manifest) {
  const std::size_t n = manifest.slices.size();
  if (n < 2) throw std::invalid_argument("split_heldout: need at least two slices");
  const std::size_t held = std::max<std::size_t>(1, n / 10);
  SliceSet tr{manifest, {}};
  SliceSet ho{manifest, {}};
  for (std::size_t i = 0; i < n; ++i) (i < n - held ? tr : ho).indices.push_back(i);
  return {tr, ho};
}

std::pair<double, double> heldout_psnr(const unroll::PipelineConfig& config, const unroll::PipelineParams& params,
                                       const std::vector<data::Slice>& slices, const acq::SamplingMask& mask) {
  std::vector<double> model(slices.size()), zf(slices.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto& s = slices[i];
    model[i] = metrics::psnr(reconstruct(config, params, s, mask), s.target, s.data_max).db;
    zf[i] = metrics::psnr(acq::rss(acq::zero_filled(s.kspace)), s.target, s.data_max).db;
  }
  return {metrics::summarize(model).mean, metrics::summarize(zf).mean};
}

namespace {

std::vector<data::Slice> load_all(const SliceSet& set) {
  std::vector<data::Slice> out;
  out.reserve(set.indices.size());
  for (auto i : set.indices) out.push_back(data::load_slice(set.manifest, i));
  return out;
}

nlohmann::json data_json(const data::GenParams& p) {
  return {{"height", p.height},
          {"width", p.width},
          {"coils", p.coils},
          {"acceleration", p.acceleration},
          {"center_fraction", p.center_fraction},
          {"noise_sigma", p.noise_sigma}};
}

void save(const fs::path& stem, const unroll::PipelineConfig& config, const unroll::PipelineParams& params,
          const SliceSet& set, std::size_t epoch) {
  ckpt::Checkpoint ck;
  ck.config = config;
  ck.params = params;
  ck.id = stem.filename().string();
  ck.extra = {{"epoch", epoch}, {"data", data_json(set.manifest.params)}, {"dataset", set.manifest.id}};
  ckpt::save_checkpoint(stem, ck);
}

std::string epoch_name(std::size_t e) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint_epoch_%03zu", e);
  return buf;
}

}  // namespace

TrainResult train(const unroll::PipelineConfig& config, const SliceSet& train_set, const SliceSet& heldout,
                  const TrainConfig& cfg, const TrainOutput& out) {
  cfg.validate();
  if (train_set.indices.empty()) throw std::invalid_argument("train: empty training set");
  const auto& geom = train_set.manifest.params;
  config.validate(geom.height, geom.width);
  const acq::SamplingMask& mask = train_set.manifest.mask;

  const std::vector<data::Slice> train_slices = load_all(train_set);
  const std::vector<data::Slice> held_slices = load_all(heldout);

  Rng root = seeded_rng(cfg.seed);
  Rng init_rng = root.split(0);
  TrainResult res;
  res.params = unroll::init_pipeline_params(config, init_rng);
  const auto groups = unroll::pipeline_groups(res.params);
  std::vector<double> flat = unroll::flatten(res.params);
  OptimizerState state = make_optimizer_state(flat.size());

  std::ofstream log;
  if (!out.dir.empty()) {
    fs::create_directories(out.dir);
    log.open(out.dir / "metrics.ndjson");
    save(out.dir / epoch_name(0), config, res.params, train_set, 0);
    save(out.dir / "checkpoint", config, res.params, train_set, 0);
  }
  auto emit = [&](const LogRecord& r) {
    res.log.push_back(r);
    if (log.is_open()) log << to_ndjson(r) << '\n' << std::flush;
    if (out.on_record) out.on_record(r);
  };

  const std::size_t n = train_slices.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = cfg.epochs * batches;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle = root.split(1000 + epoch);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
    }

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(hi - lo);
      auto grads = unroll::zero_pipeline_params(config);
      double batch_loss = 0.0;
      for (std::size_t j = lo; j < hi; ++j) {
        batch_loss += scale * loss_and_grad(config, res.params, train_slices[order[j]], mask, scale, grads);
      }
      if (!std::isfinite(batch_loss)) throw TrainingDiverged(step + 1, "loss");
      ++step;
      const double lr = lr_schedule(step, total, cfg);
      adam_step(flat, unroll::flatten(grads), state, lr, cfg, &groups);
      unroll::unflatten(flat, res.params);
      epoch_loss += batch_loss * static_cast<double>(hi - lo);
      emit({step, epoch, lr, batch_loss, std::nullopt});
    }

    const auto [model_psnr, zf_psnr] =
        held_slices.empty() ? std::pair{0.0, 0.0} : heldout_psnr(config, res.params, held_slices, mask);
    res.heldout_psnr = model_psnr;
    res.zero_filled_psnr = zf_psnr;
    LogRecord r{step, epoch, lr_schedule(step, total, cfg), epoch_loss / static_cast<double>(n), std::nullopt};
    if (!held_slices.empty()) r.heldout_psnr = model_psnr;
    emit(r);
    if (!out.dir.empty()) {
      save(out.dir / epoch_name(epoch), config, res.params, train_set, epoch);
      save(out.dir / "checkpoint", config, res.params, train_set, epoch);
    }
  }
  if (cfg.epochs == 0 && !held_slices.empty()) {
    std::tie(res.heldout_psnr, res.zero_filled_psnr) = heldout_psnr(config, res.params, held_slices, mask);
  }
  return res;
}

}  // namespace ueps::train
