#pragma once

#include <vector>

#include "ueps/grid.hpp"

namespace ueps::metrics {

/// Reported instead of +inf when the reconstruction is exact.
inline constexpr double kPsnrCap = 999.0;

struct Psnr {
  double db = 0.0;
  bool capped = false;
};

/// 20 log10(data_max / rmse). data_max comes from the whole volume.
Psnr psnr(const RealGrid& recon, const RealGrid& truth, double data_max);

/// Mean local SSIM over 7x7 uniform windows (sample covariance), K1 = 0.01,
/// K2 = 0.03, averaged over windows that fit entirely inside the image.
double ssim(const RealGrid& recon, const RealGrid& truth, double data_range);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population
};

Summary summarize(const std::vector<double>& values);

}  // namespace ueps::metrics
