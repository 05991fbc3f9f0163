#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "support.hpp"
#include "ueps/acquisition.hpp"
#include "ueps/checkpoint.hpp"
#include "ueps/dataset.hpp"
#include "ueps/fft.hpp"
#include "ueps/harness.hpp"
#include "ueps/training.hpp"
#include "ueps/unrolled.hpp"

namespace fs = std::filesystem;
using namespace ueps;
using unroll::PipelineConfig;
using unroll::PipelineParams;
using unroll::Variant;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Shared by the training criteria.
struct Task {
  fs::path work;
  data::Manifest train;
  data::Manifest heldout;
};

data::GenParams task_params(std::size_t slices, std::uint64_t seed) {
  data::GenParams g;
  g.num_slices = slices;
  g.height = 64;
  g.width = 64;
  g.coils = 4;
  g.acceleration = 4.0;
  g.center_fraction = 0.08;
  g.noise_sigma = 0.01;
  g.seed = seed;
  return g;
}

Task& task(const fs::path& work) {
  static std::unique_ptr<Task> t;
  if (!t) {
    t = std::make_unique<Task>();
    t->work = work;
    t->train = data::generate_dataset(task_params(200, 11), work / "data_train");
    t->heldout = data::generate_dataset(task_params(20, 12), work / "data_heldout");
  }
  return *t;
}

train::SliceSet whole(const data::Manifest& m) {
  train::SliceSet s{m, {}};
  for (std::size_t i = 0; i < m.slices.size(); ++i) s.indices.push_back(i);
  return s;
}

vit::DenoiserConfig tiny_denoiser(std::size_t sparse_threshold) {
  auto d = vit::DenoiserConfig::small(4, 2, 32, 2, 64);
  d.full_layers = {0};
  d.sparse_threshold = sparse_threshold;
  return d;
}

PipelineConfig pipeline(Variant v, std::vector<unroll::Stage> stages, vit::DenoiserConfig d) {
  PipelineConfig c;
  c.variant = v;
  c.schedule.stages = std::move(stages);
  c.denoiser = std::move(d);
  return c;
}

void randomize_output_layers(PipelineParams& p, Rng& rng, double scale) {
  for (auto& d : p.denoisers) {
    for (auto& w : d.unembed.weight) w = scale * rng.truncated_normal(2.0);
    for (auto& w : d.unembed.bias) w = scale * rng.truncated_normal(2.0);
  }
}

Outcome fft_suite() {
  const auto t0 = Clock::now();
  Rng rng = seeded_rng(101);
  double worst_rt = 0.0, worst_parseval = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Shape s{static_cast<std::size_t>(rng.uniform_int(1, 3)), static_cast<std::size_t>(rng.uniform_int(1, 64)),
                  static_cast<std::size_t>(rng.uniform_int(1, 64))};
    const ComplexGrid x = testing::random_grid(rng, s);
    const ComplexGrid k = fft2c(x);
    const double nx = norm(x);
    worst_rt = std::max(worst_rt, norm(ifft2c(k) - x) / nx);
    const double nk = norm(k);
    worst_parseval = std::max(worst_parseval, std::abs(nk * nk - nx * nx) / (nx * nx));
  }
  const double secs = seconds_since(t0);
  return {worst_rt < 1e-10 && worst_parseval < 1e-12 && secs < 5.0,
          fmt("round trip %.2e, Parseval %.2e over 200 grids in %.2f s", worst_rt, worst_parseval, secs)};
}

Outcome acquisition_identity() {
  const auto m = acq::make_phantom({acq::PhantomKind::random_ellipses, 64, 64, acq::PhaseKind::smooth_random, 4});
  const RealGrid mag = magnitude(m);
  const auto full = acq::make_equispaced_mask(64, 1.0, 0.0);
  double worst = 0.0;
  for (std::size_t n : {1, 4, 8}) {
    Rng rng = seeded_rng(20 + n);
    const auto csm = acq::make_csm(n, 64, 64, acq::CsmStyle::ring_gaussian, rng);
    const auto k = acq::forward_model(m, csm, full, 0.0, rng);
    worst = std::max(worst, max_abs_diff(acq::rss(acq::zero_filled(k)), mag));
  }
  const auto mask = acq::make_equispaced_mask(320, 4.0, 0.08);
  const bool ok = worst < 1e-8 && mask.num_center == 26 && mask.num_sampled() <= 80;
  return {ok, fmt("max |rss - |m|| %.2e for N in {1,4,8}; W=320 mask: %zu centre, %zu total", worst, mask.num_center,
                  mask.num_sampled())};
}

Outcome dc_contract() {
  Rng rng = seeded_rng(303);
  const auto m = acq::make_phantom({acq::PhantomKind::random_ellipses, 64, 64, acq::PhaseKind::smooth_random, 9});
  const auto csm = acq::make_csm(4, 64, 64, acq::CsmStyle::ring_gaussian, rng);
  const auto mask = acq::make_equispaced_mask(64, 4.0, 0.08);
  const auto k0 = acq::forward_model(m, csm, mask, 0.01, rng);

  const std::vector<std::pair<Variant, std::vector<unroll::Stage>>> cases = {
      {Variant::dum, {{64, 64}, {64, 64}, {64, 64}}},
      {Variant::ue, {{64, 64}, {64, 64}, {64, 64}}},
      {Variant::uep, {{32, 32}, {48, 48}, {64, 64}}},
      {Variant::ueps, {{32, 32}, {48, 48}, {64, 64}}},
  };
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& [v, stages] : cases) {
    const auto cfg = pipeline(v, stages, tiny_denoiser(32));
    auto params = unroll::init_pipeline_params(cfg, rng);
    randomize_output_layers(params, rng, 0.05);
    std::fill(params.eta.begin(), params.eta.end(), 1.0);
    const auto res = unroll::run_pipeline(cfg, k0, mask, params, unroll::uses_csm(v) ? &csm : nullptr);
    for (const auto& out : res.cascades) {
      const auto k0s = unroll::kspace_center_crop(k0, out.stage.height, out.stage.width);
      const auto ms = mask.center_crop(out.stage.width);
      for (std::size_t c = 0; c < k0s.coils(); ++c)
        for (std::size_t y = 0; y < k0s.height(); ++y)
          for (std::size_t x = 0; x < k0s.width(); ++x)
            if (ms.sampled(x)) worst = std::max(worst, std::abs(out.kspace(c, y, x) - k0s(c, y, x)));
      ++checked;
    }
  }
  return {worst < 1e-10, fmt("max sampled-bin deviation %.2e over %zu cascade outputs of dum/ue/uep/ueps", worst, checked)};
}

Outcome sparse_equivalence() {
  Rng rng = seeded_rng(404);
  double worst = 0.0;
  bool counts_ok = true;
  std::size_t queries = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t rows = rng.uniform_int(1, 8), cols = rng.uniform_int(1, 8);
    const std::size_t heads = std::size_t{1} << rng.uniform_int(0, 2);
    const std::size_t d = heads * 2 * rng.uniform_int(1, 4);
    const std::size_t T = rows * cols;
    std::vector<double> q(T * d), k(T * d), v(T * d);
    for (auto* buf : {&q, &k, &v})
      for (auto& e : *buf) e = rng.normal();

    const auto full = vit::attention(q, k, v, heads, vit::AttentionPattern::full(rows, cols));
    const auto band = vit::attention(q, k, v, heads, vit::AttentionPattern::row_band(rows, cols, rows - 1));
    for (std::size_t j = 0; j < full.size(); ++j) worst = std::max(worst, std::abs(full[j] - band[j]));

    // Admissible keys of row-band(1) from 2D patch coordinates.
    const auto w = vit::attention_weights(q, k, heads, vit::AttentionPattern::row_band(rows, cols, 1));
    for (std::size_t qr = 0; qr < rows; ++qr) {
      for (std::size_t qc = 0; qc < cols; ++qc) {
        std::set<std::pair<std::size_t, std::size_t>> oracle;
        for (std::size_t kr = 0; kr < rows; ++kr)
          for (std::size_t kc = 0; kc < cols; ++kc)
            if (std::max(kr, qr) - std::min(kr, qr) <= 1) oracle.insert({kr, kc});
        const std::size_t qi = qr * cols + qc;
        for (std::size_t h = 0; h < heads; ++h) {
          std::size_t n = 0;
          for (std::size_t ki = 0; ki < T; ++ki) n += w[(h * T + qi) * T + ki] > 0.0;
          counts_ok = counts_ok && n == oracle.size();
        }
        ++queries;
      }
    }
  }
  return {worst < 1e-12 && counts_ok,
          fmt("max |band(R_p-1) - full| %.2e on 50 configs; band(1) key counts %s on %zu queries", worst,
              counts_ok ? "match" : "MISMATCH", queries)};
}

Outcome padding_contract() {
  Rng rng = seeded_rng(505);
  struct Case {
    std::size_t H, W, h, w, h2, w2;
  };
  const std::vector<Case> cases = {
      {64, 64, 32, 32, 48, 48}, {64, 64, 16, 16, 64, 64}, {33, 47, 9, 11, 20, 30}, {40, 30, 40, 10, 40, 29}};
  double ring_err = 0.0, centre_err = 0.0, full_err = 0.0;
  std::size_t ring_bins = 0;
  for (const auto& c : cases) {
    const Shape S{3, c.H, c.W};
    const ComplexGrid k0 = testing::random_grid(rng, S);
    std::vector<std::size_t> idx;
    for (std::size_t x = 0; x < c.W; ++x)
      if (rng.uniform() < 0.4) idx.push_back(x);
    const auto mask = acq::mask_from_indices(c.W, idx);
    const ComplexGrid small = testing::random_grid(rng, {3, c.h, c.w});
    const ComplexGrid out = unroll::kspace_pad(small, k0, mask, c.h2, c.w2);
    const ComplexGrid k0c = unroll::kspace_center_crop(k0, c.h2, c.w2);
    const auto mc = mask.center_crop(c.w2);
    const std::size_t y0 = c.h2 / 2 - c.h / 2, x0 = c.w2 / 2 - c.w / 2;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t y = 0; y < c.h2; ++y) {
        for (std::size_t x = 0; x < c.w2; ++x) {
          const bool inner = y >= y0 && y < y0 + c.h && x >= x0 && x < x0 + c.w;
          if (inner) {
            centre_err = std::max(centre_err, std::abs(out(ch, y, x) - small(ch, y - y0, x - x0)));
          } else {
            const cplx want = mc.sampled(x) ? k0c(ch, y, x) : cplx{};
            ring_err = std::max(ring_err, std::abs(out(ch, y, x) - want));
            ++ring_bins;
          }
        }
      }
    }
    const auto all = acq::make_equispaced_mask(c.W, 1.0, 0.0);
    const auto pure = unroll::kspace_pad(unroll::kspace_center_crop(k0, c.h, c.w), k0, all, c.h2, c.w2);
    full_err = std::max(full_err, max_abs_diff(pure, k0c));
  }
  return {ring_err == 0.0 && centre_err == 0.0 && full_err == 0.0,
          fmt("ring deviation %.1e over %zu bins, centre %.1e, fully sampled vs crop %.1e", ring_err, ring_bins,
              centre_err, full_err)};
}

Outcome gradient_oracle() {
  const auto cfg = pipeline(Variant::ueps, {{16, 16}, {32, 32}}, tiny_denoiser(32));
  const auto m = acq::make_phantom({acq::PhantomKind::shepp_logan, 32, 32, acq::PhaseKind::smooth_random, 1});
  Rng rng = seeded_rng(606);
  const auto csm = acq::make_csm(1, 32, 32, acq::CsmStyle::ring_gaussian, rng);
  const auto mask = acq::make_equispaced_mask(32, 4.0, 0.08);
  const auto k0 = acq::forward_model(m, csm, mask, 0.01, rng);
  const auto target = acq::rss(acq::zero_filled(acq::forward_model(m, csm, acq::make_equispaced_mask(32, 1.0, 0.0),
                                                                   0.0, rng)));
  auto params = unroll::init_pipeline_params(cfg, rng);
  randomize_output_layers(params, rng, 0.05);
  params.eta = {0.7, 0.9};

  const auto t0 = Clock::now();
  auto loss = [&] { return train::mae_loss(unroll::reconstruct_expanded(cfg, k0, mask, params).image, target); };
  unroll::PipelineTape tape;
  const auto res = unroll::run_pipeline_taped(cfg, k0, mask, params, nullptr, tape);
  auto grads = unroll::zero_pipeline_params(cfg);
  unroll::pipeline_backward(tape, train::mae_grad(res.image, target), params, grads);

  const double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  std::size_t count = 0;
  auto check = [&](const std::string& name, std::vector<double>& p, const std::vector<double>& g) {
    double num = 0.0, den = 0.0, ga = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double lp = loss();
      p[i] = keep - h;
      const double lm = loss();
      p[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      num += (g[i] - fd) * (g[i] - fd);
      den += fd * fd;
      ga += g[i] * g[i];
    }
    count += p.size();
    const double rel = std::sqrt(num) / std::max({std::sqrt(den), std::sqrt(ga), 1e-12});
    if (rel >= worst) {
      worst = rel;
      worst_name = name;
    }
  };
  for (std::size_t t = 0; t < params.denoisers.size(); ++t) {
    std::vector<const std::vector<double>*> g;
    vit::visit_tensors(grads.denoisers[t], [&](const std::string&, const std::vector<double>& v) { g.push_back(&v); });
    std::size_t i = 0;
    vit::visit_tensors(params.denoisers[t], [&](const std::string& name, std::vector<double>& v) {
      check("cascade." + std::to_string(t) + "." + name, v, *g[i++]);
    });
  }
  check("eta", params.eta, grads.eta);
  const double secs = seconds_since(t0);
  return {worst < 5e-4 && secs < 120.0,
          fmt("%zu parameters, worst group error %.2e (%s) in %.1f s", count, worst, worst_name.c_str(), secs)};
}

// Desk-scale training configuration.
PipelineConfig tiny_ueps() {
  return pipeline(Variant::ueps, {{32, 32}, {48, 48}, {64, 64}, {64, 64}}, tiny_denoiser(128));
}

train::TrainConfig tiny_training(std::size_t epochs) {
  train::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.base_lr = 2e-3;
  t.seed = 0;
  return t;
}

train::TrainOutput progress(const fs::path& dir, const char* tag) {
  return {dir, [tag](const train::LogRecord& r) {
            if (r.heldout_psnr) {
              std::printf("  [%s] epoch %zu  loss %.5f  held-out PSNR %.3f dB\n", tag, r.epoch, r.loss,
                          *r.heldout_psnr);
              std::fflush(stdout);
            }
          }};
}

Outcome desk_training(const fs::path& work) {
  auto& t = task(work);
  const auto t0 = Clock::now();
  const auto res =
      train::train(tiny_ueps(), whole(t.train), whole(t.heldout), tiny_training(30), progress(work / "ueps", "ueps"));
  const double secs = seconds_since(t0);
  const double gain = res.heldout_psnr - res.zero_filled_psnr;
  return {gain >= 3.0 && secs < 1800.0, fmt("held-out %.3f dB vs zero-filled %.3f dB (gain %.3f dB) in %.0f s",
                                            res.heldout_psnr, res.zero_filled_psnr, gain, secs)};
}

Outcome attention_scaling() {
  harness::BenchOptions opt;
  const auto recs = harness::bench_attention({400, 1600, 6400}, opt);
  auto ms = [&](const std::string& pattern, std::size_t tokens) {
    for (const auto& r : recs)
      if (r.pattern == pattern && r.tokens == tokens) return r.median_ms;
    throw std::runtime_error("missing bench record " + pattern + " " + std::to_string(tokens));
  };
  const double full_ratio = ms("full", 1600) / ms("full", 400);
  const double sparse_ratio = ms("row_band", 1600) / ms("row_band", 400);
  const double at6400 = ms("row_band", 6400) / ms("full", 6400);
  return {full_ratio > sparse_ratio && at6400 < 0.5,
          fmt("1600/400 ratio full %.2f vs sparse %.2f; sparse/full at 6400 = %.3f (%.0f vs %.0f ms)", full_ratio,
              sparse_ratio, at6400, ms("row_band", 6400), ms("full", 6400))};
}

Outcome csm_robustness(const fs::path& work) {
  auto& t = task(work);
  const std::vector<double> deltas = {0.0, 0.05, 0.1, 0.2, 0.4};
  auto learned = [&](Variant v, std::size_t epochs) {
    const auto cfg = pipeline(v, {{64, 64}, {64, 64}, {64, 64}, {64, 64}}, tiny_denoiser(128));
    const auto tag = unroll::to_string(v);
    ckpt::Checkpoint ck;
    ck.config = cfg;
    ck.id = tag;
    ck.params = train::train(cfg, whole(t.train), whole(t.heldout), tiny_training(epochs),
                             progress(work / tag, tag == "dum" ? "dum" : "ue"))
                    .params;
    return ck;
  };
  const auto dum = learned(Variant::dum, 30);
  const auto ue = learned(Variant::ue, 2);
  const auto rows = harness::csm_robustness(dum, ue, t.heldout, deltas);
  {
    std::ofstream(work / "csm_robustness.csv") << harness::robustness_csv(rows);
  }

  bool decreasing = true;
  for (std::size_t i = 1; i < rows.size(); ++i) decreasing = decreasing && rows[i].dum_psnr < rows[i - 1].dum_psnr;
  const double drop = rows.front().dum_psnr - rows.back().dum_psnr;

  // UE reconstructions per delta, compared byte for byte.
  bool identical = true;
  for (std::size_t i = 0; i < t.heldout.slices.size(); ++i) {
    auto s = data::load_slice(t.heldout, i);
    const auto maps = s.csm;
    const auto ref = train::reconstruct(ue.config, ue.params, s, t.heldout.mask);
    for (double d : deltas) {
      s.csm = harness::perturb_csm(maps, d, 0x5eed0000ULL + i);
      const auto img = train::reconstruct(ue.config, ue.params, s, t.heldout.mask);
      identical = identical && std::memcmp(img.data().data(), ref.data().data(), ref.size() * sizeof(double)) == 0;
    }
  }
  std::string curve;
  for (const auto& r : rows) curve += fmt("%s%.2f", curve.empty() ? "" : " > ", r.dum_psnr);
  return {decreasing && drop >= 2.0 && identical,
          fmt("DUM PSNR %s dB (drop %.2f dB); UE %s across deltas", curve.c_str(), drop,
              identical ? "bit-identical" : "NOT identical")};
}

Outcome progressive_monotonicity() {
  const auto mask = acq::make_equispaced_mask(320, 4.0, 0.08);
  unroll::ResolutionSchedule s;
  for (std::size_t w : {64, 128, 256, 320}) s.stages.push_back({w, w});
  const auto r = unroll::stage_accelerations(s, mask);
  const bool ok = std::is_sorted(r.begin(), r.end());
  return {ok, fmt("effective acceleration %.3f, %.3f, %.3f, %.3f", r[0], r[1], r[2], r[3])};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path work = fs::temp_directory_path() / "ueps_acceptance";
  std::vector<int> only, known_red;
  app.add_option("--work", work, "Scratch directory for datasets and checkpoints");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--known-red", known_red, "Criteria whose FAIL does not set the exit code")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"FFT suite", fft_suite},
      {"acquisition identity", acquisition_identity},
      {"DC contract", dc_contract},
      {"sparse equals full", sparse_equivalence},
      {"padding contract", padding_contract},
      {"gradient oracle", gradient_oracle},
      {"desk-scale training", [&] { return desk_training(work); }},
      {"attention scaling", attention_scaling},
      {"CSM robustness", [&] { return csm_robustness(work); }},
      {"progressive monotonicity", progressive_monotonicity},
  };

  nlohmann::json summary = nlohmann::json::array();
  int failed = 0, tolerated = 0;
  auto listed = [](const std::vector<int>& v, int id) { return std::find(v.begin(), v.end(), id) != v.end(); };
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !listed(only, id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++(listed(known_red, id) ? tolerated : failed);
    std::printf("%s  %2d  %-26s %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
    summary.push_back({{"criterion", id}, {"name", criteria[i].first}, {"pass", o.pass}, {"detail", o.detail}});
  }
  std::ofstream(work / "acceptance.json") << summary.dump(2) << '\n';
  if (tolerated) std::printf("%d known-red criterion(s) still failing\n", tolerated);
  return failed == 0 ? 0 : 1;
}
