#pragma once

#include <cstdint>
#include <vector>

#include "ueps/grid.hpp"
#include "ueps/rng.hpp"

namespace ueps::acq {

enum class PhantomKind { shepp_logan, random_ellipses };
enum class PhaseKind { none, smooth_random };

struct PhantomSpec {
  PhantomKind kind = PhantomKind::shepp_logan;
  std::size_t height = 64;
  std::size_t width = 64;
  PhaseKind phase = PhaseKind::none;
  std::uint64_t seed = 0;
};

/// Magnitudes in [0, 1]. Deterministic in spec.seed; the Shepp-Logan
/// variant only consumes randomness for its optional phase.
ComplexGrid make_phantom(const PhantomSpec& spec);

/// Per-pixel coil maps S_i with sum_i |S_i|^2 = 1.
struct CoilSensitivities {
  ComplexGrid maps;

  std::size_t num_coils() const { return maps.coils(); }
  std::size_t height() const { return maps.height(); }
  std::size_t width() const { return maps.width(); }
};

enum class CsmStyle { ring_gaussian };

struct RingCenter {
  double y;
  double x;
};

/// Bump centres, equally spaced in angle on a ring of radius 0.45*min(H, W).
std::vector<RingCenter> ring_centers(std::size_t num_coils, std::size_t height, std::size_t width);

/// Un-normalized ring-Gaussian maps (Gaussian magnitude times a per-coil linear phase).
ComplexGrid ring_gaussian_profiles(std::size_t num_coils, std::size_t height, std::size_t width, Rng& rng);

CoilSensitivities make_csm(std::size_t num_coils, std::size_t height, std::size_t width, CsmStyle style,
                           Rng& rng);

/// Rescales maps pixelwise so that sum_i |S_i|^2 = 1 (pixels where every coil is zero stay zero).
CoilSensitivities normalize_csm(ComplexGrid maps);

/// Binary line mask along the width (phase-encode) axis.
struct SamplingMask {
  std::vector<std::uint8_t> lines;
  double acceleration = 1.0;     // requested R
  double center_fraction = 0.0;  // requested c
  std::size_t num_center = 0;

  std::size_t width() const { return lines.size(); }
  bool sampled(std::size_t col) const { return lines[col] != 0; }
  std::size_t num_sampled() const;
  /// width / number of sampled lines.
  double effective_acceleration() const;
  std::vector<std::size_t> indices() const;
  /// Central w columns, starting at W/2 - w/2 (integer division).
  SamplingMask center_crop(std::size_t w) const;
};

SamplingMask make_equispaced_mask(std::size_t width, double acceleration, double center_fraction,
                                  std::size_t offset = 0);
SamplingMask mask_from_indices(std::size_t width, const std::vector<std::size_t>& indices);
/// First column of the centred block of `count` lines in a row of `width`.
std::size_t center_block_start(std::size_t width, std::size_t count);

/// Zeroes every unsampled column of every coil.
ComplexGrid apply_mask(const ComplexGrid& k, const SamplingMask& mask);

/// k_i = M F(S_i m) + eps_i. Noise is drawn for every bin and then masked,
/// so unsampled columns are exactly zero.
ComplexGrid forward_model(const ComplexGrid& image, const CoilSensitivities& csm, const SamplingMask& mask,
                          double sigma, Rng& rng);

/// Per-coil inverse transform of k-space.
ComplexGrid zero_filled(const ComplexGrid& k);

/// Pixelwise sqrt(sum_i |x_i|^2).
RealGrid rss(const ComplexGrid& x);

}  // namespace ueps::acq
