#include "ueps/acquisition.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ueps/fft.hpp"

namespace ueps::acq {
namespace {

struct Ellipse {
  double value;
  double a;  // semi-axis along x
  double b;  // semi-axis along y
  double x0;
  double y0;
  double phi_deg;
};

// Modified Shepp-Logan (Toft): higher-contrast intensities, same geometry.
constexpr std::array<Ellipse, 10> kSheppLogan{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0},
    {-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0},
    {-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0},
    {0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0},
    {0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0},
    {0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0},
    {0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0},
    {0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0},
}};

// Normalized coordinates in [-1, 1], y pointing up.
double coord_x(std::size_t col, std::size_t w) { return 2.0 * (static_cast<double>(col) + 0.5) / w - 1.0; }
double coord_y(std::size_t row, std::size_t h) { return 1.0 - 2.0 * (static_cast<double>(row) + 0.5) / h; }

bool inside(const Ellipse& e, double x, double y) {
  const double t = e.phi_deg * std::numbers::pi / 180.0;
  const double dx = x - e.x0;
  const double dy = y - e.y0;
  const double u = dx * std::cos(t) + dy * std::sin(t);
  const double v = -dx * std::sin(t) + dy * std::cos(t);
  return (u * u) / (e.a * e.a) + (v * v) / (e.b * e.b) <= 1.0;
}

void apply_smooth_phase(ComplexGrid& img, Rng& rng) {
  const std::size_t h = img.height();
  const std::size_t w = img.width();
  std::array<double, 6> coef{};
  for (auto& c : coef) c = rng.normal();
  std::vector<double> phase(h * w);
  double peak = 0.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = coord_x(x, w);
      const double v = coord_y(y, h);
      const double p = coef[0] + coef[1] * u + coef[2] * v + coef[3] * u * u + coef[4] * u * v + coef[5] * v * v;
      phase[y * w + x] = p;
      peak = std::max(peak, std::abs(p));
    }
  }
  const double target = rng.uniform(0.25, 1.0) * std::numbers::pi / 2.0;
  const double scale = peak > 0.0 ? target / peak : 0.0;
  for (std::size_t i = 0; i < h * w; ++i) img.data()[i] *= std::polar(1.0, phase[i] * scale);
}

}  // namespace

ComplexGrid make_phantom(const PhantomSpec& spec) {
  if (spec.height < 16 || spec.width < 16) {
    throw std::invalid_argument("make_phantom: grid must be at least 16x16");
  }
  Rng rng(spec.seed);
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  ComplexGrid img({1, h, w});

  if (spec.kind == PhantomKind::shepp_logan) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double v = 0.0;
        for (const auto& e : kSheppLogan) {
          if (inside(e, coord_x(x, w), coord_y(y, h))) v += e.value;
        }
        img(0, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  } else {
    const auto count = rng.uniform_int(5, 12);
    std::vector<Ellipse> shapes;
    for (std::int64_t i = 0; i < count; ++i) {
      Ellipse e{};
      e.value = rng.uniform(0.2, 1.0);
      e.a = rng.uniform(0.1, 0.5);
      e.b = rng.uniform(0.1, 0.5);
      e.x0 = rng.uniform(-0.6, 0.6);
      e.y0 = rng.uniform(-0.6, 0.6);
      e.phi_deg = rng.uniform(0.0, 180.0);
      shapes.push_back(e);
    }
    // Painter's order: later ellipses overwrite earlier ones.
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double v = 0.0;
        for (const auto& e : shapes) {
          if (inside(e, coord_x(x, w), coord_y(y, h))) v = e.value;
        }
        img(0, y, x) = v;
      }
    }
  }

  if (spec.phase == PhaseKind::smooth_random) apply_smooth_phase(img, rng);
  return img;
}

std::vector<RingCenter> ring_centers(std::size_t num_coils, std::size_t height, std::size_t width) {
  const double r = 0.45 * static_cast<double>(std::min(height, width));
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  std::vector<RingCenter> out;
  for (std::size_t i = 0; i < num_coils; ++i) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(num_coils);
    out.push_back({cy + r * std::sin(t), cx + r * std::cos(t)});
  }
  return out;
}

ComplexGrid ring_gaussian_profiles(std::size_t num_coils, std::size_t height, std::size_t width, Rng& rng) {
  if (num_coils == 0) throw std::invalid_argument("make_csm: need at least one coil");
  const double sigma = 0.5 * static_cast<double>(std::min(height, width));
  const auto centers = ring_centers(num_coils, height, width);
  ComplexGrid maps({num_coils, height, width});
  for (std::size_t c = 0; c < num_coils; ++c) {
    // Linear phase: at most pi/2 of total drift across the field of view per axis.
    const double slope_x = rng.uniform(-0.5, 0.5) * std::numbers::pi / static_cast<double>(width);
    const double slope_y = rng.uniform(-0.5, 0.5) * std::numbers::pi / static_cast<double>(height);
    const double offset = rng.uniform(-std::numbers::pi, std::numbers::pi);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = static_cast<double>(y) - centers[c].y;
        const double dx = static_cast<double>(x) - centers[c].x;
        const double mag = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        const double ph = offset + slope_x * static_cast<double>(x) + slope_y * static_cast<double>(y);
        maps(c, y, x) = std::polar(mag, ph);
      }
    }
  }
  return maps;
}

CoilSensitivities normalize_csm(ComplexGrid maps) {
  const std::size_t plane = maps.shape().plane();
  for (std::size_t p = 0; p < plane; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < maps.coils(); ++c) s += std::norm(maps.coil(c)[p]);
    if (s == 0.0) continue;
    const double inv = 1.0 / std::sqrt(s);
    for (std::size_t c = 0; c < maps.coils(); ++c) maps.coil(c)[p] *= inv;
  }
  return CoilSensitivities{std::move(maps)};
}

CoilSensitivities make_csm(std::size_t num_coils, std::size_t height, std::size_t width, CsmStyle style,
                           Rng& rng) {
  switch (style) {
    case CsmStyle::ring_gaussian:
      return normalize_csm(ring_gaussian_profiles(num_coils, height, width, rng));
  }
  throw std::invalid_argument("make_csm: unknown style");
}

std::size_t SamplingMask::num_sampled() const {
  return static_cast<std::size_t>(std::count(lines.begin(), lines.end(), std::uint8_t{1}));
}

double SamplingMask::effective_acceleration() const {
  const auto n = num_sampled();
  if (n == 0) throw std::logic_error("effective_acceleration: mask samples no lines");
  return static_cast<double>(width()) / static_cast<double>(n);
}

std::vector<std::size_t> SamplingMask::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i]) out.push_back(i);
  }
  return out;
}

std::size_t center_block_start(std::size_t width, std::size_t count) { return width / 2 - count / 2; }

SamplingMask SamplingMask::center_crop(std::size_t w) const {
  if (w > width() || w == 0) throw std::invalid_argument("SamplingMask::center_crop: bad crop width");
  SamplingMask out = *this;
  const std::size_t start = center_block_start(width(), w);
  out.lines.assign(lines.begin() + static_cast<std::ptrdiff_t>(start),
                   lines.begin() + static_cast<std::ptrdiff_t>(start + w));
  out.num_center = std::min(num_center, w);
  return out;
}

SamplingMask make_equispaced_mask(std::size_t width, double acceleration, double center_fraction,
                                  std::size_t offset) {
  if (width == 0) throw std::invalid_argument("make_equispaced_mask: zero width");
  if (!(acceleration >= 1.0)) throw std::invalid_argument("make_equispaced_mask: acceleration must be >= 1");
  if (!(center_fraction >= 0.0 && center_fraction <= 1.0)) {
    throw std::invalid_argument("make_equispaced_mask: center fraction must lie in [0, 1]");
  }
  if (offset >= width) throw std::invalid_argument("make_equispaced_mask: offset outside the mask");

  const auto num_center = static_cast<std::size_t>(std::lround(static_cast<double>(width) * center_fraction));
  const auto budget = static_cast<std::size_t>(std::lround(static_cast<double>(width) / acceleration));
  if (budget < num_center) {
    throw std::invalid_argument("make_equispaced_mask: center block alone exceeds the line budget");
  }

  std::vector<std::uint8_t> center(width, 0);
  const std::size_t start = center_block_start(width, num_center);
  for (std::size_t i = 0; i < num_center; ++i) center[start + i] = 1;

  std::vector<std::uint8_t> best = center;
  std::size_t best_count = num_center;
  for (std::size_t stride = 1; stride <= width; ++stride) {
    std::vector<std::uint8_t> cand = center;
    for (std::size_t col = offset; col < width; col += stride) cand[col] = 1;
    const auto n = static_cast<std::size_t>(std::count(cand.begin(), cand.end(), std::uint8_t{1}));
    if (n <= budget && n > best_count) {
      best = std::move(cand);
      best_count = n;
    }
  }
  if (best_count == 0) throw std::invalid_argument("make_equispaced_mask: mask would sample no lines");

  SamplingMask mask;
  mask.lines = std::move(best);
  mask.acceleration = acceleration;
  mask.center_fraction = center_fraction;
  mask.num_center = num_center;
  return mask;
}

SamplingMask mask_from_indices(std::size_t width, const std::vector<std::size_t>& indices) {
  SamplingMask mask;
  mask.lines.assign(width, 0);
  for (auto i : indices) {
    if (i >= width) throw std::invalid_argument("mask_from_indices: index outside the mask");
    mask.lines[i] = 1;
  }
  if (mask.num_sampled() == 0) throw std::invalid_argument("mask_from_indices: no sampled lines");
  mask.acceleration = mask.effective_acceleration();
  return mask;
}

ComplexGrid apply_mask(const ComplexGrid& k, const SamplingMask& mask) {
  if (mask.width() != k.width()) throw InvalidShape("apply_mask: mask width does not match k-space width");
  ComplexGrid out = k;
  for (std::size_t c = 0; c < k.coils(); ++c) {
    for (std::size_t y = 0; y < k.height(); ++y) {
      for (std::size_t x = 0; x < k.width(); ++x) {
        if (!mask.sampled(x)) out(c, y, x) = 0.0;
      }
    }
  }
  return out;
}

ComplexGrid forward_model(const ComplexGrid& image, const CoilSensitivities& csm, const SamplingMask& mask,
                          double sigma, Rng& rng) {
  if (image.coils() != 1) throw InvalidShape("forward_model: image must have one coil");
  if (image.height() != csm.height() || image.width() != csm.width()) {
    throw InvalidShape("forward_model: image and CSM planes differ");
  }
  if (mask.width() != image.width()) throw InvalidShape("forward_model: mask width differs from image width");

  const std::size_t n = csm.num_coils();
  ComplexGrid coil_images({n, image.height(), image.width()});
  for (std::size_t c = 0; c < n; ++c) {
    auto s = csm.maps.coil(c);
    auto dst = coil_images.coil(c);
    for (std::size_t p = 0; p < dst.size(); ++p) dst[p] = s[p] * image.data()[p];
  }
  ComplexGrid k = fft2c(coil_images);
  if (sigma > 0.0) {
    k = k + normal(rng, k.shape(), sigma);
  } else if (sigma < 0.0) {
    throw std::invalid_argument("forward_model: sigma must be non-negative");
  }
  return apply_mask(k, mask);
}

ComplexGrid zero_filled(const ComplexGrid& k) { return ifft2c(k); }

RealGrid rss(const ComplexGrid& x) {
  if (x.coils() == 0) throw InvalidShape("rss: need at least one coil");
  RealGrid out(x.height(), x.width());
  const std::size_t plane = x.shape().plane();
  for (std::size_t p = 0; p < plane; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.coils(); ++c) s += std::norm(x.coil(c)[p]);
    out.data()[p] = std::sqrt(s);
  }
  return out;
}

}  // namespace ueps::acq
