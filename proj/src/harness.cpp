#include "ueps/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "ueps/fft.hpp"
#include "ueps/kernels.hpp"
#include "ueps/metrics.hpp"
#include "ueps/plot.hpp"
#include "ueps/training.hpp"

namespace ueps::harness {

using nlohmann::json;

json to_json(const EvalReport& r) {
  json slices = json::array();
  for (const auto& s : r.slices) {
    json e{{"id", s.id}};
    if (s.error.empty()) {
      e["psnr"] = s.psnr;
      e["psnr_capped"] = s.psnr_capped;
      e["ssim"] = s.ssim;
    } else {
      e["error"] = s.error;
    }
    slices.push_back(e);
  }
  return json{{"variant", r.variant},
              {"checkpoint", r.checkpoint_id},
              {"dataset", r.dataset_id},
              {"num_slices", r.slices.size()},
              {"failures", r.failures},
              {"psnr", {{"mean", r.psnr_mean}, {"std", r.psnr_std}}},
              {"ssim", {{"mean", r.ssim_mean}, {"std", r.ssim_std}}},
              {"slices", slices}};
}

SliceMetrics score(const std::string& id, const RealGrid& recon, const RealGrid& target, double data_max) {
  const auto p = metrics::psnr(recon, target, data_max);
  return {id, p.db, p.capped, metrics::ssim(recon, target, data_max), {}};
}

namespace {

std::vector<std::size_t> all_or(const std::vector<std::size_t>& indices, std::size_t n) {
  if (!indices.empty()) return indices;
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

unroll::PipelineConfig with_variant(const ckpt::Checkpoint& ck, const std::string& variant) {
  unroll::PipelineConfig cfg = ck.config;
  if (variant.empty()) return cfg;
  const auto v = unroll::parse_variant(variant);
  if (unroll::uses_csm(v) != unroll::uses_csm(cfg.variant)) {
    throw std::invalid_argument("evaluate: checkpoint of variant " + unroll::to_string(cfg.variant) +
                                " cannot be run as " + variant);
  }
  cfg.variant = v;
  return cfg;
}

void finish(EvalReport& r) {
  std::vector<double> p, s;
  for (const auto& e : r.slices) {
    if (!e.error.empty()) {
      ++r.failures;
      continue;
    }
    p.push_back(e.psnr);
    s.push_back(e.ssim);
  }
  const auto ps = metrics::summarize(p);
  const auto ss = metrics::summarize(s);
  r.psnr_mean = ps.mean;
  r.psnr_std = ps.std;
  r.ssim_mean = ss.mean;
  r.ssim_std = ss.std;
}

}  // namespace

EvalReport evaluate(const ckpt::Checkpoint& ck, const data::Manifest& manifest, const std::string& variant,
                    const std::vector<std::size_t>& indices) {
  EvalReport r;
  r.checkpoint_id = ck.id;
  r.dataset_id = manifest.id;
  const bool zf = ck.kind == ckpt::Kind::zero_filled;
  unroll::PipelineConfig cfg;
  if (zf) {
    r.variant = "zero-filled";
  } else {
    cfg = with_variant(ck, variant);
    r.variant = unroll::to_string(cfg.variant);
  }
  const auto idx = all_or(indices, manifest.slices.size());
  r.slices.resize(idx.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::string id = idx[i] < manifest.slices.size() ? manifest.slices[idx[i]].id : std::to_string(idx[i]);
    try {
      const data::Slice s = data::load_slice(manifest, idx[i]);
      const RealGrid recon =
          zf ? acq::rss(acq::zero_filled(s.kspace)) : train::reconstruct(cfg, ck.params, s, manifest.mask);
      r.slices[i] = score(s.id, recon, s.target, s.data_max);
    } catch (const std::exception& e) {
      r.slices[i].id = id;
      r.slices[i].error = e.what();
    }
  }
  finish(r);
  return r;
}

// ---------------------------------------------------------------------------
// Attention benchmark

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double time_attention(const vit::AttentionPattern& pattern, const BenchOptions& opt, Rng& rng) {
  const kernels::AttentionDims dims{opt.heads, pattern.tokens(), opt.width / opt.heads};
  const std::size_t n = dims.heads * dims.tokens * dims.head_dim;
  std::vector<double> q(n), k(n), v(n), out(n);
  for (auto* buf : {&q, &k, &v}) {
    for (auto& x : *buf) x = rng.normal();
  }
  std::vector<double> times;
  for (std::size_t r = 0; r < opt.warmup + opt.repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    kernels::omp::attention_forward(q.data(), k.data(), v.data(), out.data(), dims, pattern, nullptr);
    const auto t1 = std::chrono::steady_clock::now();
    if (r >= opt.warmup) times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return median(times);
}

}  // namespace

std::vector<BenchRecord> bench_attention(const std::vector<std::size_t>& tokens, const BenchOptions& opt) {
  if (opt.repeats < 5) throw std::invalid_argument("bench_attention: need at least 5 timed repeats");
  if (opt.warmup < 2) throw std::invalid_argument("bench_attention: need at least 2 warmup runs");
  if (opt.heads == 0 || opt.width % opt.heads != 0) throw std::invalid_argument("bench_attention: bad head split");
  struct Grid {
    std::size_t rows, cols;
  };
  std::vector<Grid> grids;
  for (auto t : tokens) {
    std::size_t cols = opt.cols;
    if (cols == 0) {
      cols = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(t))));
      if (cols * cols != t) {
        throw std::invalid_argument("bench_attention: " + std::to_string(t) +
                                    " tokens do not form a square patch grid (pass cols)");
      }
    }
    if (t == 0 || t % cols != 0) {
      throw std::invalid_argument("bench_attention: " + std::to_string(t) + " tokens do not fill " +
                                  std::to_string(cols) + " patch columns");
    }
    grids.push_back({t / cols, cols});
  }

  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  std::vector<BenchRecord> out;
  Rng rng = seeded_rng(opt.seed);
  try {
    for (const auto& g : grids) {
      const auto full = vit::AttentionPattern::full(g.rows, g.cols);
      const double t_full = time_attention(full, opt, rng);
      out.push_back({"full", full.tokens(), g.rows, g.cols, opt.repeats, t_full, vit::attention_flops(full, opt.width)});
      if (full.tokens() <= opt.sparse_threshold) {
        out.push_back({"full used", full.tokens(), g.rows, g.cols, opt.repeats, t_full, vit::attention_flops(full, opt.width)});
      } else {
        const auto band = vit::AttentionPattern::row_band(g.rows, g.cols, opt.band_halfwidth);
        out.push_back({"row_band", band.tokens(), g.rows, g.cols, opt.repeats, time_attention(band, opt, rng),
                       vit::attention_flops(band, opt.width)});
      }
    }
  } catch (...) {
    omp_set_num_threads(saved);
    throw;
  }
  omp_set_num_threads(saved);
  return out;
}

std::string bench_csv(const std::vector<BenchRecord>& records) {
  std::ostringstream o;
  o << "pattern,tokens,rows,cols,repeats,median_ms,flops,time_ratio_vs_full,flop_ratio_vs_full\n";
  const BenchRecord* full = nullptr;
  for (const auto& r : records) {
    if (r.pattern == "full") full = &r;
    const double tr = full && full->tokens == r.tokens ? r.median_ms / full->median_ms : 1.0;
    const double fr = full && full->tokens == r.tokens ? r.flops / full->flops : 1.0;
    o << r.pattern << ',' << r.tokens << ',' << r.rows << ',' << r.cols << ',' << r.repeats << ',' << r.median_ms
      << ',' << r.flops << ',' << tr << ',' << fr << '\n';
  }
  return o.str();
}

void write_bench_plot(const std::filesystem::path& path, const std::vector<BenchRecord>& records) {
  plot::Series full{"full", {}, {}};
  plot::Series sparse{"row-band (n=1)", {}, {}};
  for (const auto& r : records) {
    auto& s = r.pattern == "full" ? full : sparse;
    s.x.push_back(static_cast<double>(r.tokens));
    s.y.push_back(std::max(r.median_ms, 1e-6));
  }
  plot::write_svg(path, {"Attention forward time", "tokens (patches per image)", "median time [ms]", true, true},
                  {full, sparse});
}

// ---------------------------------------------------------------------------
// CSM robustness

acq::CoilSensitivities perturb_csm(const acq::CoilSensitivities& csm, double delta, std::uint64_t seed) {
  if (delta < 0.0) throw std::invalid_argument("perturb_csm: delta must be non-negative");
  const std::size_t H = csm.height();
  const std::size_t W = csm.width();
  acq::CoilSensitivities out = csm;
  Rng rng = seeded_rng(seed);
  for (std::size_t c = 0; c < csm.num_coils(); ++c) {
    // Lowest spatial frequencies only: |u|, |v| <= 1 cycles per image.
    std::vector<cplx> coef;
    for (int i = 0; i < 9; ++i) coef.emplace_back(rng.normal(), rng.normal());
    std::vector<cplx> g(H * W);
    double mx = 0.0;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        cplx s{};
        int i = 0;
        for (int u = -1; u <= 1; ++u) {
          for (int v = -1; v <= 1; ++v) {
            const double ang = 2.0 * std::numbers::pi *
                               (u * static_cast<double>(y) / static_cast<double>(H) +
                                v * static_cast<double>(x) / static_cast<double>(W));
            s += coef[i++] * cplx(std::cos(ang), std::sin(ang));
          }
        }
        g[y * W + x] = s;
        mx = std::max(mx, std::abs(s));
      }
    }
    auto maps = out.maps.coil(c);
    for (std::size_t p = 0; p < H * W; ++p) maps[p] *= 1.0 + delta * g[p] / mx;
  }
  return out;
}

std::vector<RobustnessRow> csm_robustness(const ckpt::Checkpoint& dum, const ckpt::Checkpoint& ue,
                                          const data::Manifest& manifest, const std::vector<double>& deltas,
                                          const std::vector<std::size_t>& indices) {
  if (dum.kind != ckpt::Kind::learned || dum.config.variant != unroll::Variant::dum) {
    throw std::invalid_argument("csm_robustness: first checkpoint must be a learned dum model");
  }
  if (ue.kind != ckpt::Kind::learned || unroll::uses_csm(ue.config.variant)) {
    throw std::invalid_argument("csm_robustness: second checkpoint must be a learned CSM-free model");
  }
  if (dum.extra.contains("data") && ue.extra.contains("data") && dum.extra["data"] != ue.extra["data"]) {
    throw std::invalid_argument("csm_robustness: checkpoints were trained on different data configurations");
  }
  const auto& g = manifest.params;
  for (const auto* ck : {&dum, &ue}) {
    const auto& last = ck->config.schedule.stages.back();
    if (last.height != g.height || last.width != g.width) {
      throw std::invalid_argument("csm_robustness: checkpoint " + ck->id + " does not match the dataset geometry");
    }
  }

  const auto idx = all_or(indices, manifest.slices.size());
  std::vector<data::Slice> slices(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) slices[i] = data::load_slice(manifest, idx[i]);

  std::vector<double> ue_p(idx.size()), ue_s(idx.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& s = slices[i];
    const RealGrid img = unroll::reconstruct_expanded(ue.config, s.kspace, manifest.mask, ue.params).image;
    const auto m = score(s.id, img, s.target, s.data_max);
    ue_p[i] = m.psnr;
    ue_s[i] = m.ssim;
  }
  const double ue_psnr = metrics::summarize(ue_p).mean;
  const double ue_ssim = metrics::summarize(ue_s).mean;

  std::vector<RobustnessRow> rows;
  for (double delta : deltas) {
    std::vector<double> p(idx.size()), q(idx.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& s = slices[i];
      const auto maps = perturb_csm(s.csm, delta, 0x5eed0000ULL + idx[i]);
      const RealGrid img = unroll::reconstruct_with_csm(dum.config, s.kspace, manifest.mask, dum.params, maps).image;
      const auto m = score(s.id, img, s.target, s.data_max);
      p[i] = m.psnr;
      q[i] = m.ssim;
    }
    rows.push_back({delta, metrics::summarize(p).mean, metrics::summarize(q).mean, ue_psnr, ue_ssim});
  }
  return rows;
}

std::string robustness_csv(const std::vector<RobustnessRow>& rows) {
  std::ostringstream o;
  o.precision(17);
  o << "delta,dum_psnr,dum_ssim,ue_psnr,ue_ssim\n";
  for (const auto& r : rows) {
    o << r.delta << ',' << r.dum_psnr << ',' << r.dum_ssim << ',' << r.ue_psnr << ',' << r.ue_ssim << '\n';
  }
  return o.str();
}

void write_robustness_plot(const std::filesystem::path& path, const std::vector<RobustnessRow>& rows) {
  plot::Series dum{"DUM (perturbed CSM)", {}, {}};
  plot::Series ue{"UE (no CSM)", {}, {}};
  for (const auto& r : rows) {
    dum.x.push_back(r.delta);
    dum.y.push_back(r.dum_psnr);
    ue.x.push_back(r.delta);
    ue.y.push_back(r.ue_psnr);
  }
  plot::write_svg(path, {"CSM perturbation robustness", "perturbation delta", "PSNR [dB]", false, false}, {dum, ue});
}

}  // namespace ueps::harness
