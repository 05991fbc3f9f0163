#include "ueps/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace ueps::metrics {

Psnr psnr(const RealGrid& recon, const RealGrid& truth, double data_max) {
  require_same_shape(recon, truth, "psnr");
  if (!(data_max > 0.0)) throw std::invalid_argument("psnr: data_max must be positive");
  if (recon.size() == 0) throw InvalidShape("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double d = recon.data()[i] - truth.data()[i];
    se += d * d;
  }
  const double rmse = std::sqrt(se / static_cast<double>(recon.size()));
  if (rmse == 0.0) return {kPsnrCap, true};
  const double db = 20.0 * std::log10(data_max / rmse);
  if (db >= kPsnrCap) return {kPsnrCap, true};
  return {db, false};
}

double ssim(const RealGrid& recon, const RealGrid& truth, double data_range) {
  require_same_shape(recon, truth, "ssim");
  constexpr std::size_t win = 7;
  if (recon.height() < win || recon.width() < win) throw InvalidShape("ssim: image smaller than the 7x7 window");
  if (!(data_range > 0.0)) throw std::invalid_argument("ssim: data_range must be positive");
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double np = static_cast<double>(win * win);
  const double cov_norm = np / (np - 1.0);

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + win <= recon.height(); ++y0) {
    for (std::size_t x0 = 0; x0 + win <= recon.width(); ++x0) {
      double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (std::size_t dy = 0; dy < win; ++dy) {
        for (std::size_t dx = 0; dx < win; ++dx) {
          const double a = recon(y0 + dy, x0 + dx);
          const double b = truth(y0 + dy, x0 + dx);
          sx += a;
          sy += b;
          sxx += a * a;
          syy += b * b;
          sxy += a * b;
        }
      }
      const double ux = sx / np;
      const double uy = sy / np;
      const double vx = cov_norm * (sxx / np - ux * ux);
      const double vy = cov_norm * (syy / np - uy * uy);
      const double vxy = cov_norm * (sxy / np - ux * uy);
      const double num = (2.0 * ux * uy + c1) * (2.0 * vxy + c2);
      const double den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) return {};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

}  // namespace ueps::metrics
