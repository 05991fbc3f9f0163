#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ueps/acquisition.hpp"

namespace ueps::data {

struct GenParams {
  std::size_t num_slices = 16;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t coils = 4;
  double acceleration = 4.0;
  double center_fraction = 0.08;
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
};

struct SliceEntry {
  std::string id;
  std::string kspace;  // undersampled (N, H, W)
  std::string csm;     // (N, H, W)
  std::string target;  // RSS of the fully sampled noisy k-space, (H, W)
  double data_max = 0.0;
};

struct Manifest {
  std::filesystem::path dir;
  std::string id;
  GenParams params;
  acq::SamplingMask mask;
  std::vector<SliceEntry> slices;
};

struct Slice {
  std::string id;
  ComplexGrid kspace;
  acq::CoilSensitivities csm;
  RealGrid target;
  double data_max = 0.0;
};

/// Slice s draws everything from seeded_rng(seed).split(s): a random-ellipse
/// phantom with smooth phase, ring-Gaussian maps and measurement noise.
Slice make_slice(const GenParams& params, const acq::SamplingMask& mask, std::size_t index);

/// Writes slice files and manifest.json into `out_dir`.
Manifest generate_dataset(const GenParams& params, const std::filesystem::path& out_dir);

/// `path` is a dataset directory or its manifest.json.
Manifest load_manifest(const std::filesystem::path& path);
Slice load_slice(const Manifest& manifest, std::size_t index);

}  // namespace ueps::data
