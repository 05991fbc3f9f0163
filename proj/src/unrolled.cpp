#include "ueps/unrolled.hpp"

#include <cmath>
#include <stdexcept>

#include "ueps/fft.hpp"

namespace ueps::unroll {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::dum: return "dum";
    case Variant::ue: return "ue";
    case Variant::uep: return "uep";
    case Variant::ueps: return "ueps";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "dum") return Variant::dum;
  if (s == "ue") return Variant::ue;
  if (s == "uep") return Variant::uep;
  if (s == "ueps") return Variant::ueps;
  throw std::invalid_argument("unknown variant '" + s + "' (expected dum, ue, uep or ueps)");
}

void ResolutionSchedule::validate(std::size_t height, std::size_t width, std::size_t patch) const {
  if (stages.empty()) throw std::invalid_argument("schedule: need at least one cascade");
  for (std::size_t t = 0; t < stages.size(); ++t) {
    const Stage& s = stages[t];
    if (s.height == 0 || s.width == 0) throw std::invalid_argument("schedule: empty stage");
    if (s.height % patch != 0 || s.width % patch != 0) {
      throw std::invalid_argument("schedule: stage " + std::to_string(t) + " is not divisible by the patch size");
    }
    if (t > 0 && (s.height < stages[t - 1].height || s.width < stages[t - 1].width)) {
      throw std::invalid_argument("schedule: stage shapes must be non-decreasing");
    }
  }
  if (stages.back().height != height || stages.back().width != width) {
    throw std::invalid_argument("schedule: final stage must equal the acquisition size " + std::to_string(height) +
                                "x" + std::to_string(width));
  }
}

ResolutionSchedule ResolutionSchedule::constant(std::size_t cascades, std::size_t height, std::size_t width) {
  return ResolutionSchedule{std::vector<Stage>(cascades, Stage{height, width})};
}

std::vector<double> stage_accelerations(const ResolutionSchedule& schedule, const SamplingMask& mask) {
  std::vector<double> out;
  for (const auto& s : schedule.stages) out.push_back(mask.center_crop(s.width).effective_acceleration());
  return out;
}

vit::DenoiserConfig PipelineConfig::effective_denoiser() const {
  vit::DenoiserConfig d = denoiser;
  d.sparse_enabled = variant == Variant::ueps;
  return d;
}

void PipelineConfig::validate(std::size_t height, std::size_t width) const {
  denoiser.validate();
  schedule.validate(height, width, denoiser.patch_size);
  if (variant == Variant::dum || variant == Variant::ue) {
    for (const auto& s : schedule.stages) {
      if (s.height != height || s.width != width) {
        throw std::invalid_argument("pipeline: " + to_string(variant) + " runs every cascade at full resolution");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t PipelineParams::num_params() const {
  std::size_t n = eta.size();
  for (const auto& d : denoisers) n += d.num_params();
  return n;
}

PipelineParams init_pipeline_params(const PipelineConfig& config, Rng& rng) {
  PipelineParams p;
  for (std::size_t t = 0; t < config.cascades(); ++t) {
    Rng sub = rng.split(t);
    p.denoisers.push_back(vit::init_params(config.denoiser, sub));
  }
  p.eta.assign(config.cascades(), config.eta_init);
  return p;
}

PipelineParams zero_pipeline_params(const PipelineConfig& config) {
  PipelineParams p;
  for (std::size_t t = 0; t < config.cascades(); ++t) p.denoisers.push_back(vit::zero_params(config.denoiser));
  p.eta.assign(config.cascades(), 0.0);
  return p;
}

void check_pipeline_params(const PipelineParams& params, const PipelineConfig& config) {
  if (params.denoisers.size() != config.cascades() || params.eta.size() != config.cascades()) {
    throw std::invalid_argument("pipeline params: cascade count does not match the configuration");
  }
  for (const auto& d : params.denoisers) vit::check_params(d, config.denoiser);
}

std::vector<double> flatten(const PipelineParams& params) {
  std::vector<double> out;
  out.reserve(params.num_params());
  for (const auto& d : params.denoisers) {
    const auto f = vit::flatten(d);
    out.insert(out.end(), f.begin(), f.end());
  }
  out.insert(out.end(), params.eta.begin(), params.eta.end());
  return out;
}

void unflatten(std::span<const double> flat, PipelineParams& params) {
  if (flat.size() != params.num_params()) throw std::invalid_argument("unflatten: length mismatch");
  std::size_t off = 0;
  for (auto& d : params.denoisers) {
    const std::size_t n = d.num_params();
    vit::unflatten(flat.subspan(off, n), d);
    off += n;
  }
  std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off), flat.end(), params.eta.begin());
}

std::vector<NamedGroup> pipeline_groups(const PipelineParams& params) {
  std::vector<NamedGroup> out;
  std::size_t off = 0;
  for (std::size_t t = 0; t < params.denoisers.size(); ++t) {
    for (const auto& g : vit::param_groups(params.denoisers[t])) {
      out.push_back({"cascade." + std::to_string(t) + "." + g.name, off + g.offset, g.size});
    }
    off += params.denoisers[t].num_params();
  }
  out.push_back({"eta", off, params.eta.size()});
  return out;
}

// ---------------------------------------------------------------------------
// Coil reduction / expansion, data consistency, crop and pad

namespace {

void require_csm_plane(const ComplexGrid& x, const CoilSensitivities& csm, const char* what) {
  if (x.height() != csm.height() || x.width() != csm.width()) {
    throw InvalidShape(std::string(what) + ": image plane does not match the CSM plane");
  }
}

}  // namespace

ComplexGrid reduce(const ComplexGrid& x, const CoilSensitivities& csm) {
  require_csm_plane(x, csm, "reduce");
  if (x.coils() != csm.num_coils()) throw InvalidShape("reduce: coil count does not match the CSM");
  ComplexGrid m({1, x.height(), x.width()});
  for (std::size_t c = 0; c < x.coils(); ++c) {
    auto s = csm.maps.coil(c);
    auto xc = x.coil(c);
    for (std::size_t p = 0; p < xc.size(); ++p) m.data()[p] += std::conj(s[p]) * xc[p];
  }
  return m;
}

ComplexGrid expand(const ComplexGrid& m, const CoilSensitivities& csm) {
  require_csm_plane(m, csm, "expand");
  if (m.coils() != 1) throw InvalidShape("expand: expected a single-coil image");
  ComplexGrid x({csm.num_coils(), m.height(), m.width()});
  for (std::size_t c = 0; c < x.coils(); ++c) {
    auto s = csm.maps.coil(c);
    auto xc = x.coil(c);
    for (std::size_t p = 0; p < xc.size(); ++p) xc[p] = s[p] * m.data()[p];
  }
  return x;
}

ComplexGrid data_consistency(const ComplexGrid& k, const ComplexGrid& k0, const SamplingMask& mask, double eta) {
  require_same_shape(k, k0, "data_consistency");
  if (mask.width() != k.width()) throw InvalidShape("data_consistency: mask width does not match k-space");
  ComplexGrid out = k;
  for (std::size_t c = 0; c < k.coils(); ++c) {
    for (std::size_t y = 0; y < k.height(); ++y) {
      for (std::size_t x = 0; x < k.width(); ++x) {
        if (mask.sampled(x)) out(c, y, x) = (1.0 - eta) * k(c, y, x) + eta * k0(c, y, x);
      }
    }
  }
  return out;
}

ComplexGrid kspace_center_crop(const ComplexGrid& k, std::size_t h, std::size_t w) {
  if (h > k.height() || w > k.width() || h == 0 || w == 0) {
    throw std::invalid_argument("kspace_center_crop: crop " + std::to_string(h) + "x" + std::to_string(w) +
                                " does not fit in " + to_string(k.shape()));
  }
  const std::size_t y0 = k.height() / 2 - h / 2;
  const std::size_t x0 = k.width() / 2 - w / 2;
  ComplexGrid out({k.coils(), h, w});
  for (std::size_t c = 0; c < k.coils(); ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out(c, y, x) = k(c, y0 + y, x0 + x);
    }
  }
  return out;
}

ComplexGrid kspace_zero_pad(const ComplexGrid& k, std::size_t height, std::size_t width) {
  if (height < k.height() || width < k.width()) throw std::invalid_argument("kspace_zero_pad: target is smaller than input");
  const std::size_t y0 = height / 2 - k.height() / 2;
  const std::size_t x0 = width / 2 - k.width() / 2;
  ComplexGrid out({k.coils(), height, width});
  for (std::size_t c = 0; c < k.coils(); ++c) {
    for (std::size_t y = 0; y < k.height(); ++y) {
      for (std::size_t x = 0; x < k.width(); ++x) out(c, y0 + y, x0 + x) = k(c, y, x);
    }
  }
  return out;
}

ComplexGrid kspace_pad(const ComplexGrid& k_small, const ComplexGrid& k0_full, const SamplingMask& mask_full,
                       std::size_t h, std::size_t w) {
  if (k_small.coils() != k0_full.coils()) throw InvalidShape("kspace_pad: coil count mismatch");
  if (mask_full.width() != k0_full.width()) throw InvalidShape("kspace_pad: mask width does not match k0");
  if (k_small.height() > h || k_small.width() > w || h > k0_full.height() || w > k0_full.width()) {
    throw std::invalid_argument("kspace_pad: sizes must satisfy small <= target <= full");
  }
  const ComplexGrid ref = kspace_center_crop(k0_full, h, w);
  const SamplingMask mask = mask_full.center_crop(w);
  ComplexGrid out({k_small.coils(), h, w});
  for (std::size_t c = 0; c < out.coils(); ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out(c, y, x) = mask.sampled(x) ? ref(c, y, x) : cplx{};
    }
  }
  const std::size_t y0 = h / 2 - k_small.height() / 2;
  const std::size_t x0 = w / 2 - k_small.width() / 2;
  for (std::size_t c = 0; c < out.coils(); ++c) {
    for (std::size_t y = 0; y < k_small.height(); ++y) {
      for (std::size_t x = 0; x < k_small.width(); ++x) out(c, y0 + y, x0 + x) = k_small(c, y, x);
    }
  }
  return out;
}

ComplexGrid upsample_kspace(const ComplexGrid& images, std::size_t height, std::size_t width) {
  if (images.height() == height && images.width() == width) return images;
  return ifft2c(kspace_zero_pad(fft2c(images), height, width));
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

PipelineResult run_impl(const PipelineConfig& config, const ComplexGrid& k0, const SamplingMask& mask,
                        const PipelineParams& params, const CoilSensitivities* csm, PipelineTape* tape) {
  config.validate(k0.height(), k0.width());
  check_pipeline_params(params, config);
  if (mask.width() != k0.width()) throw InvalidShape("pipeline: mask width does not match k0");
  if (csm) {
    if (csm->num_coils() != k0.coils() || csm->height() != k0.height() || csm->width() != k0.width()) {
      throw InvalidShape("pipeline: CSM shape does not match k0");
    }
  }
  const auto& stages = config.schedule.stages;
  if (mask.num_center > stages.front().width) {
    throw std::invalid_argument("pipeline: the fully sampled centre block does not fit in the first stage");
  }

  const vit::DenoiserConfig dcfg = config.effective_denoiser();
  const bool dum = config.variant == Variant::dum;
  if (tape) {
    tape->config = config;
    tape->csm = csm ? std::optional<CoilSensitivities>(*csm) : std::nullopt;
    tape->cascades.clear();
  }

  PipelineResult result;
  ComplexGrid x = ifft2c(kspace_center_crop(k0, stages.front().height, stages.front().width));
  for (std::size_t t = 0; t < stages.size(); ++t) {
    const Stage& s = stages[t];
    const ComplexGrid k0_stage = kspace_center_crop(k0, s.height, s.width);
    const SamplingMask mask_stage = mask.center_crop(s.width);

    CascadeOutput out;
    out.stage = s;
    vit::PatternTrace trace;
    PipelineTape::Cascade* tc = nullptr;
    if (tape) {
      tape->cascades.emplace_back();
      tc = &tape->cascades.back();
      tc->x_in = x;
    }

    ComplexGrid refined;
    if (dum) {
      const ComplexGrid m = reduce(x, *csm);
      const ComplexGrid d = tc ? vit::denoiser_forward(m, params.denoisers[t], dcfg, tc->denoiser)
                               : vit::denoiser_forward(m, params.denoisers[t], dcfg, &trace);
      refined = x + expand(d, *csm);
    } else {
      const ComplexGrid d = tc ? vit::denoiser_forward(x, params.denoisers[t], dcfg, tc->denoiser)
                               : vit::denoiser_forward(x, params.denoisers[t], dcfg, &trace);
      refined = x + d;
    }
    const ComplexGrid k = fft2c(refined);
    ComplexGrid k_dc = data_consistency(k, k0_stage, mask_stage, params.eta[t]);
    if (tc) {
      tc->kspace_pre_dc = k;
      tc->k0_stage = k0_stage;
      tc->mask_stage = mask_stage;
    }

    out.image = ifft2c(k_dc);
    out.patterns = std::move(trace.layers);
    if (t + 1 < stages.size()) {
      const Stage& next = stages[t + 1];
      x = ifft2c(kspace_pad(k_dc, k0, mask, next.height, next.width));
    } else {
      x = out.image;
    }
    out.kspace = std::move(k_dc);
    result.cascades.push_back(std::move(out));
  }

  result.coil_images = x;
  result.image = acq::rss(x);
  if (tape) {
    tape->final_coils = result.coil_images;
    tape->final_image = result.image;
  }
  return result;
}

void check_csm_contract(Variant v, const CoilSensitivities* csm) {
  if (uses_csm(v) && !csm) {
    throw ContractViolation("pipeline: variant dum requires coil sensitivity maps");
  }
  if (!uses_csm(v) && csm) {
    throw ContractViolation("pipeline: variant " + to_string(v) + " is CSM-free and does not accept maps");
  }
}

}  // namespace

PipelineResult reconstruct_with_csm(const PipelineConfig& config, const ComplexGrid& k0, const SamplingMask& mask,
                                    const PipelineParams& params, const CoilSensitivities& csm) {
  check_csm_contract(config.variant, &csm);
  return run_impl(config, k0, mask, params, &csm, nullptr);
}

PipelineResult reconstruct_expanded(const PipelineConfig& config, const ComplexGrid& k0, const SamplingMask& mask,
                                    const PipelineParams& params) {
  check_csm_contract(config.variant, nullptr);
  return run_impl(config, k0, mask, params, nullptr, nullptr);
}

PipelineResult run_pipeline(const PipelineConfig& config, const ComplexGrid& k0, const SamplingMask& mask,
                            const PipelineParams& params, const CoilSensitivities* csm) {
  check_csm_contract(config.variant, csm);
  return run_impl(config, k0, mask, params, csm, nullptr);
}

PipelineResult run_pipeline_taped(const PipelineConfig& config, const ComplexGrid& k0, const SamplingMask& mask,
                                  const PipelineParams& params, const CoilSensitivities* csm, PipelineTape& tape) {
  check_csm_contract(config.variant, csm);
  return run_impl(config, k0, mask, params, csm, &tape);
}

void pipeline_backward(const PipelineTape& tape, const RealGrid& grad_image, const PipelineParams& params,
                       PipelineParams& grads) {
  const PipelineConfig& config = tape.config;
  const vit::DenoiserConfig dcfg = config.effective_denoiser();
  const auto& stages = config.schedule.stages;
  const ComplexGrid& xf = tape.final_coils;
  if (grad_image.height() != xf.height() || grad_image.width() != xf.width()) {
    throw InvalidShape("pipeline_backward: gradient image shape mismatch");
  }
  if (tape.cascades.size() != stages.size()) throw std::logic_error("pipeline_backward: incomplete tape");

  // RSS: d|x|/dx = x / |x|, zero where the magnitude vanishes.
  ComplexGrid gx(xf.shape());
  for (std::size_t c = 0; c < xf.coils(); ++c) {
    for (std::size_t p = 0; p < xf.shape().plane(); ++p) {
      const double r = tape.final_image.data()[p];
      gx.coil(c)[p] = r > 0.0 ? grad_image.data()[p] * xf.coil(c)[p] / r : cplx{};
    }
  }

  for (std::size_t t = stages.size(); t-- > 0;) {
    const auto& tc = tape.cascades[t];
    const Stage& s = stages[t];
    // x_next = ifft2c(pad(k_dc)) or ifft2c(k_dc); the ring of pad holds only k0.
    ComplexGrid gk = fft2c(gx);
    if (t + 1 < stages.size()) gk = kspace_center_crop(gk, s.height, s.width);

    // k_dc = (1 - eta) k + eta k0 on sampled columns
    const double eta = params.eta[t];
    double geta = 0.0;
    for (std::size_t c = 0; c < gk.coils(); ++c) {
      for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
          if (!tc.mask_stage.sampled(x)) continue;
          const cplx diff = tc.kspace_pre_dc(c, y, x) - tc.k0_stage(c, y, x);
          geta -= (std::conj(gk(c, y, x)) * diff).real();
          gk(c, y, x) *= (1.0 - eta);
        }
      }
    }
    grads.eta[t] += geta;

    // refined = x + E(D(R(x))) for dum, x + D(x) otherwise.
    const ComplexGrid grefined = ifft2c(gk);
    if (config.variant == Variant::dum) {
      const ComplexGrid gd = reduce(grefined, *tape.csm);
      const ComplexGrid gm = vit::denoiser_backward(tc.denoiser, gd, params.denoisers[t], dcfg, grads.denoisers[t]);
      gx = grefined + expand(gm, *tape.csm);
    } else {
      gx = grefined + vit::denoiser_backward(tc.denoiser, grefined, params.denoisers[t], dcfg, grads.denoisers[t]);
    }
  }
}

}  // namespace ueps::unroll
