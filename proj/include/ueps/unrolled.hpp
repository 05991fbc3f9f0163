#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ueps/acquisition.hpp"
#include "ueps/denoiser.hpp"
#include "ueps/grid.hpp"

namespace ueps::unroll {

using acq::CoilSensitivities;
using acq::SamplingMask;

enum class Variant { dum, ue, uep, ueps };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
/// Only the standard unrolled model combines coils through sensitivity maps.
constexpr bool uses_csm(Variant v) { return v == Variant::dum; }

struct Stage {
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const Stage&, const Stage&) = default;
};

/// Per-cascade working resolution. Non-decreasing, last stage = full size.
struct ResolutionSchedule {
  std::vector<Stage> stages;

  /// Throws std::invalid_argument unless the stages are non-decreasing, end at
  /// (height, width) and are divisible by `patch`.
  void validate(std::size_t height, std::size_t width, std::size_t patch) const;

  static ResolutionSchedule constant(std::size_t cascades, std::size_t height, std::size_t width);
};

/// Effective acceleration (crop width / sampled lines in the crop) of the
/// centre-cropped mask at each stage.
std::vector<double> stage_accelerations(const ResolutionSchedule& schedule, const SamplingMask& mask);

struct PipelineConfig {
  Variant variant = Variant::ueps;
  ResolutionSchedule schedule;
  vit::DenoiserConfig denoiser;
  double eta_init = 1.0;

  std::size_t cascades() const { return schedule.stages.size(); }
  /// Denoiser configuration actually run: sparse interleaving only for ueps.
  vit::DenoiserConfig effective_denoiser() const;
  void validate(std::size_t height, std::size_t width) const;
};

/// Untied denoiser weights per cascade plus one data-consistency weight each.
struct PipelineParams {
  std::vector<vit::DenoiserParams> denoisers;
  std::vector<double> eta;

  std::size_t num_params() const;
};

PipelineParams init_pipeline_params(const PipelineConfig& config, Rng& rng);
PipelineParams zero_pipeline_params(const PipelineConfig& config);
void check_pipeline_params(const PipelineParams& params, const PipelineConfig& config);

/// Denoiser tensors of cascade 0, 1, ... in visit order, then every eta.
std::vector<double> flatten(const PipelineParams& params);
void unflatten(std::span<const double> flat, PipelineParams& params);

struct NamedGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Flatten layout with names like "cascade.1.blocks.0.attn.q.weight" and "eta".
std::vector<NamedGroup> pipeline_groups(const PipelineParams& params);

/// sum_i conj(S_i) * x_i
ComplexGrid reduce(const ComplexGrid& x, const CoilSensitivities& csm);
/// coil i <- S_i * m
ComplexGrid expand(const ComplexGrid& m, const CoilSensitivities& csm);

/// k - eta * M (k - k0): sampled columns blended toward k0, the rest untouched.
ComplexGrid data_consistency(const ComplexGrid& k, const ComplexGrid& k0, const SamplingMask& mask, double eta);

/// Central h x w block, rows from H/2 - h/2 and columns from W/2 - w/2.
ComplexGrid kspace_center_crop(const ComplexGrid& k, std::size_t h, std::size_t w);
/// Zero-fill a centred block back into an H x W grid (adjoint of the crop).
ComplexGrid kspace_zero_pad(const ComplexGrid& k, std::size_t height, std::size_t width);

/// Grows k_small to (h, w): the centre keeps k_small, the new ring takes the
/// acquired samples of k0_full where mask_full samples the column and zero
/// elsewhere.
ComplexGrid kspace_pad(const ComplexGrid& k_small, const ComplexGrid& k0_full, const SamplingMask& mask_full,
                       std::size_t h, std::size_t w);

/// Coil images upsampled to (height, width) by zero-padding their k-space.
ComplexGrid upsample_kspace(const ComplexGrid& images, std::size_t height, std::size_t width);

struct CascadeOutput {
  Stage stage;
  ComplexGrid kspace;  // after data consistency, at the stage resolution
  ComplexGrid image;   // ifft2c of kspace
  std::vector<vit::AttentionPattern> patterns;
};

struct PipelineResult {
  RealGrid image;  // RSS of the final coil images
  ComplexGrid coil_images;
  std::vector<CascadeOutput> cascades;
};

struct PipelineTape;

/// CSM-based standard unrolled model. Only accepts Variant::dum.
PipelineResult reconstruct_with_csm(const PipelineConfig& config, const ComplexGrid& k0, const SamplingMask& mask,
                                    const PipelineParams& params, const CoilSensitivities& csm);

/// Coil-expanded variants (ue, uep, ueps). There is no CSM parameter: the
/// result depends on (k0, mask, params) only.
PipelineResult reconstruct_expanded(const PipelineConfig& config, const ComplexGrid& k0, const SamplingMask& mask,
                                    const PipelineParams& params);

/// Dispatching entry point. Throws ContractViolation if dum is run without
/// maps or if maps are handed to a CSM-free variant.
PipelineResult run_pipeline(const PipelineConfig& config, const ComplexGrid& k0, const SamplingMask& mask,
                            const PipelineParams& params, const CoilSensitivities* csm);

/// Activations saved by run_pipeline_taped for pipeline_backward.
struct PipelineTape {
  struct Cascade {
    ComplexGrid x_in;
    ComplexGrid kspace_pre_dc;
    ComplexGrid k0_stage;
    SamplingMask mask_stage;
    vit::DenoiserTape denoiser;
  };
  PipelineConfig config;
  std::optional<CoilSensitivities> csm;
  std::vector<Cascade> cascades;
  ComplexGrid final_coils;
  RealGrid final_image;
};

PipelineResult run_pipeline_taped(const PipelineConfig& config, const ComplexGrid& k0, const SamplingMask& mask,
                                  const PipelineParams& params, const CoilSensitivities* csm, PipelineTape& tape);

/// Given dL/d(final RSS image), accumulates dL/d(params) into `grads`.
/// RSS uses the zero subgradient at pixels of exactly zero magnitude.
void pipeline_backward(const PipelineTape& tape, const RealGrid& grad_image, const PipelineParams& params,
                       PipelineParams& grads);

}  // namespace ueps::unroll
