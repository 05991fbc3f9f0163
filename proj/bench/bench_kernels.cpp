// Serial reference vs OpenMP kernels, plus denoiser and pipeline throughput.
#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "ueps/acquisition.hpp"
#include "ueps/denoiser.hpp"
#include "ueps/kernels.hpp"
#include "ueps/unrolled.hpp"

using namespace ueps;

namespace {

double median_ms(const std::function<void()>& fn, int repeats) {
  fn();
  std::vector<double> t;
  for (int i = 0; i < repeats; ++i) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double, std::milli>(b - a).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

std::vector<double> randn(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void row(const char* name, double serial, double par) {
  std::printf("%-34s %10.3f %10.3f %8.2fx\n", name, serial, par, serial / par);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel benchmarks"};
  int repeats = 5;
  std::size_t tokens = 1600, width = 512, heads = 8;
  app.add_option("--repeats", repeats)->capture_default_str();
  app.add_option("--tokens", tokens, "square patch grid")->capture_default_str();
  app.add_option("--width", width)->capture_default_str();
  app.add_option("--heads", heads)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::size_t side = 1;
  while ((side + 1) * (side + 1) <= tokens) ++side;
  tokens = side * side;

  Rng rng(1);
  std::printf("threads %d, T=%zu (%zux%zu), d=%zu, heads=%zu\n", omp_get_max_threads(), tokens, side, side, width,
              heads);
  std::printf("%-34s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

  const auto x = randn(rng, tokens * width), w = randn(rng, width * width), dy = randn(rng, tokens * width);
  std::vector<double> y(tokens * width), dw(width * width);
  row("matmul T x d x d",
      median_ms([&] { kernels::serial::matmul(x.data(), w.data(), nullptr, y.data(), tokens, width, width); }, repeats),
      median_ms([&] { kernels::omp::matmul(x.data(), w.data(), nullptr, y.data(), tokens, width, width); }, repeats));
  row("matmul_nt",
      median_ms([&] { kernels::serial::matmul_nt(dy.data(), w.data(), y.data(), tokens, width, width); }, repeats),
      median_ms([&] { kernels::omp::matmul_nt(dy.data(), w.data(), y.data(), tokens, width, width); }, repeats));
  row("matmul_tn_acc",
      median_ms([&] { kernels::serial::matmul_tn_acc(x.data(), dy.data(), dw.data(), tokens, width, width); },
                repeats),
      median_ms([&] { kernels::omp::matmul_tn_acc(x.data(), dy.data(), dw.data(), tokens, width, width); }, repeats));

  const kernels::AttentionDims dims{heads, tokens, width / heads};
  const auto q = randn(rng, tokens * width), k = randn(rng, tokens * width), v = randn(rng, tokens * width);
  std::vector<double> out(tokens * width);
  for (const auto& p : {vit::AttentionPattern::full(side, side), vit::AttentionPattern::row_band(side, side, 1)}) {
    const std::string name = "attention " + p.name();
    row(name.c_str(),
        median_ms([&] { kernels::serial::attention_forward(q.data(), k.data(), v.data(), out.data(), dims, p, nullptr); },
                  repeats),
        median_ms([&] { kernels::omp::attention_forward(q.data(), k.data(), v.data(), out.data(), dims, p, nullptr); },
                  repeats));
  }

  // Tiny pipeline, one 64x64 4-coil slice.
  unroll::PipelineConfig cfg;
  cfg.variant = unroll::Variant::ueps;
  cfg.schedule.stages = {{32, 32}, {64, 64}};
  cfg.denoiser = vit::DenoiserConfig::small(4, 2, 32, 2, 64);
  cfg.denoiser.full_layers = {0};
  cfg.denoiser.sparse_threshold = 128;
  auto params = unroll::init_pipeline_params(cfg, rng);
  for (auto& d : params.denoisers) {
    for (auto& u : d.unembed.weight) u = 0.02 * rng.normal();
  }
  const auto img = acq::make_phantom({acq::PhantomKind::shepp_logan, 64, 64, acq::PhaseKind::smooth_random, 1});
  const auto csm = acq::make_csm(4, 64, 64, acq::CsmStyle::ring_gaussian, rng);
  const auto mask = acq::make_equispaced_mask(64, 4.0, 0.08);
  const auto k0 = acq::forward_model(img, csm, mask, 0.01, rng);
  const double fwd = median_ms([&] { unroll::reconstruct_expanded(cfg, k0, mask, params); }, repeats);
  const double fb = median_ms(
      [&] {
        unroll::PipelineTape tape;
        const auto r = unroll::run_pipeline_taped(cfg, k0, mask, params, nullptr, tape);
        auto g = unroll::zero_pipeline_params(cfg);
        unroll::pipeline_backward(tape, r.image, params, g);
      },
      repeats);
  std::printf("tiny ueps 64x64x4: forward %.3f ms, forward+backward %.3f ms\n", fwd, fb);
}
