#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ueps/checkpoint.hpp"
#include "ueps/dataset.hpp"

namespace ueps::harness {

struct SliceMetrics {
  std::string id;
  double psnr = 0.0;
  bool psnr_capped = false;
  double ssim = 0.0;
  std::string error;  // non-empty when the slice failed
};

struct EvalReport {
  std::string variant;
  std::string checkpoint_id;
  std::string dataset_id;
  std::vector<SliceMetrics> slices;
  double psnr_mean = 0.0;
  double psnr_std = 0.0;
  double ssim_mean = 0.0;
  double ssim_std = 0.0;
  std::size_t failures = 0;
};

nlohmann::json to_json(const EvalReport& r);

/// Metrics of one reconstruction against its slice target, normalized by
/// the manifest's data_max.
SliceMetrics score(const std::string& id, const RealGrid& recon, const RealGrid& target, double data_max);

/// Reconstructs every slice and scores it against the stored target. A
/// learned checkpoint may be run as another CSM-free variant; `variant`
/// empty keeps the checkpoint's own. Per-slice failures become entries with
/// an error and are excluded from the aggregates.
EvalReport evaluate(const ckpt::Checkpoint& checkpoint, const data::Manifest& manifest,
                    const std::string& variant = "", const std::vector<std::size_t>& indices = {});

struct BenchOptions {
  std::size_t width = 512;
  std::size_t heads = 8;
  std::size_t band_halfwidth = 1;
  std::size_t sparse_threshold = 256;
  std::size_t repeats = 5;
  std::size_t warmup = 2;
  std::size_t cols = 0;  // patch columns; 0 picks a square grid
  std::uint64_t seed = 0;
};

struct BenchRecord {
  std::string pattern;  // "full", "row_band" or "full used"
  std::size_t tokens = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t repeats = 0;
  double median_ms = 0.0;
  double flops = 0.0;
};

/// Times the attention forward pass for the full and the row-band pattern at
/// each token count on a single worker. Below the sparse threshold the
/// sparse entry is the full measurement, labelled "full used".
std::vector<BenchRecord> bench_attention(const std::vector<std::size_t>& tokens, const BenchOptions& opt);

std::string bench_csv(const std::vector<BenchRecord>& records);
void write_bench_plot(const std::filesystem::path& path, const std::vector<BenchRecord>& records);

/// S_i (1 + delta g_i) with a fixed smooth complex field g_i, max |g_i| = 1,
/// determined by `seed`. Not renormalized.
acq::CoilSensitivities perturb_csm(const acq::CoilSensitivities& csm, double delta, std::uint64_t seed);

struct RobustnessRow {
  double delta = 0.0;
  double dum_psnr = 0.0;
  double dum_ssim = 0.0;
  double ue_psnr = 0.0;
  double ue_ssim = 0.0;
};

/// DUM is run with perturbed maps at each delta; UE takes no maps and is
/// evaluated once.
std::vector<RobustnessRow> csm_robustness(const ckpt::Checkpoint& dum, const ckpt::Checkpoint& ue,
                                          const data::Manifest& manifest, const std::vector<double>& deltas,
                                          const std::vector<std::size_t>& indices = {});

std::string robustness_csv(const std::vector<RobustnessRow>& rows);
void write_robustness_plot(const std::filesystem::path& path, const std::vector<RobustnessRow>& rows);

}  // namespace ueps::harness
