#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numbers>

#include "support.hpp"
#include "ueps/checkpoint.hpp"
#include "ueps/dataset.hpp"
#include "ueps/fft.hpp"
#include "ueps/training.hpp"

using namespace ueps;
using namespace ueps::train;
namespace train = ueps::train;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ueps_test_training_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

data::GenParams small_data(std::size_t n, std::uint64_t seed) {
  data::GenParams g;
  g.num_slices = n;
  g.height = 32;
  g.width = 32;
  g.coils = 2;
  g.seed = seed;
  return g;
}

unroll::PipelineConfig tiny_ueps() {
  unroll::PipelineConfig c;
  c.variant = unroll::Variant::ueps;
  c.schedule.stages = {{16, 16}, {32, 32}};
  c.denoiser = vit::DenoiserConfig::small(4, 2, 16, 2, 32);
  c.denoiser.full_layers = {0};
  c.denoiser.sparse_threshold = 32;
  return c;
}

SliceSet all_of(const data::Manifest& m) {
  SliceSet s{m, {}};
  for (std::size_t i = 0; i < m.slices.size(); ++i) s.indices.push_back(i);
  return s;
}

}  // namespace

TEST_CASE("mae loss and gradient") {
  RealGrid a(2, 3), b(2, 3);
  for (std::size_t i = 0; i < 6; ++i) a.data()[i] = b.data()[i] = 0.1 * static_cast<double>(i);
  CHECK(mae_loss(a, b) == 0.0);
  for (auto& v : a.data()) v += 1.0;
  CHECK(mae_loss(a, b) == doctest::Approx(1.0).epsilon(1e-15));
  const auto g = mae_grad(a, b);
  for (double v : g.data()) CHECK(v == 1.0 / 6.0);
  const RealGrid p(1, 2, std::vector<double>{0.0, 0.0}), t(1, 2, std::vector<double>{3.0, -1.0});
  CHECK(mae_loss(p, t) == 2.0);
  const auto gp = mae_grad(p, t);
  CHECK(gp(0, 0) == -0.5);
  CHECK(gp(0, 1) == 0.5);
  CHECK(mae_grad(t, t)(0, 0) == 0.0);
  CHECK_THROWS_AS(mae_loss(a, p), InvalidShape);
}

TEST_CASE("gradient of |fft2c(x)|^2 is 2x") {
  Rng rng(1);
  auto x = testing::random_grid(rng, {1, 6, 8});
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int part = 0; part < 2; ++part) {
      const cplx orig = x.data()[i];
      const cplx step = part ? cplx(0, h) : cplx(h, 0);
      x.data()[i] = orig + step;
      const double lp = std::pow(norm(fft2c(x)), 2);
      x.data()[i] = orig - step;
      const double lm = std::pow(norm(fft2c(x)), 2);
      x.data()[i] = orig;
      const double expect = 2.0 * (part ? orig.imag() : orig.real());
      worst = std::max(worst, std::abs((lp - lm) / (2 * h) - expect));
    }
  }
  CHECK(worst < 1e-7);
}

TEST_CASE("learning-rate schedule") {
  const TrainConfig cfg;
  CHECK(warmup_steps(1500, cfg) == 15);
  CHECK(warmup_steps(1501, cfg) == 16);
  CHECK(warmup_steps(10, cfg) == 1);
  CHECK(lr_schedule(0, 1500, cfg) == 0.0);
  CHECK(lr_schedule(15, 1500, cfg) == doctest::Approx(3e-4).epsilon(1e-14));
  CHECK(lr_schedule(1500, 1500, cfg) == doctest::Approx(3e-5).epsilon(1e-12));
  CHECK(lr_schedule(5, 1500, cfg) == doctest::Approx(1e-4).epsilon(1e-14));
  const double mid = lr_schedule(15 + (1500 - 15) / 2, 1500, cfg);
  CHECK(mid == doctest::Approx(3e-5 + 0.5 * (3e-4 - 3e-5) * (1 + std::cos(std::numbers::pi * 742.0 / 1485.0)))
                   .epsilon(1e-12));
  CHECK_THROWS_AS(lr_schedule(1501, 1500, cfg), std::out_of_range);

  for (std::size_t total : {7, 100, 1500}) {
    const double bound = cfg.base_lr * (1.0 / static_cast<double>(warmup_steps(total, cfg)) +
                                        std::numbers::pi / static_cast<double>(total));
    for (std::size_t s = 0; s < total; ++s) {
      CHECK(std::abs(lr_schedule(s + 1, total, cfg) - lr_schedule(s, total, cfg)) <= bound);
      CHECK(lr_schedule(s, total, cfg) >= 0.0);
      CHECK(lr_schedule(s, total, cfg) <= cfg.base_lr * (1 + 1e-12));
    }
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.warmup_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.final_lr_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("adam") {
  const TrainConfig cfg;
  SUBCASE("zero gradients leave parameters in place") {
    std::vector<double> p{1.0, -2.0, 3.0};
    const auto before = p;
    auto st = make_optimizer_state(3);
    adam_step(p, std::vector<double>(3, 0.0), st, 1e-3, cfg);
    CHECK(p == before);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves every parameter by about lr") {
    std::vector<double> p{1.0, -2.0, 3.0, 0.0};
    const std::vector<double> g{1e-3, -5.0, 1e4, 2e-2};
    auto st = make_optimizer_state(4);
    adam_step(p, g, st, 0.01, cfg);
    CHECK(std::abs((1.0 - p[0]) - 0.01) < 1e-6);
    CHECK(std::abs((p[1] + 2.0) - 0.01) < 1e-6);
    CHECK(std::abs((3.0 - p[2]) - 0.01) < 1e-6);
    CHECK(std::abs(-p[3] - 0.01) < 1e-6);
  }
  SUBCASE("matches a reference implementation") {
    Rng rng(2);
    std::vector<double> p(5), ref_p(5), m(5, 0.0), v(5, 0.0);
    for (std::size_t i = 0; i < 5; ++i) p[i] = ref_p[i] = rng.normal();
    auto st = make_optimizer_state(5);
    for (int t = 1; t <= 20; ++t) {
      std::vector<double> g(5);
      for (auto& x : g) x = rng.normal();
      const double lr = 1e-2 / t;
      adam_step(p, g, st, lr, cfg);
      for (std::size_t i = 0; i < 5; ++i) {
        m[i] = 0.9 * m[i] + 0.1 * g[i];
        v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
        const double mh = m[i] / (1 - std::pow(0.9, t));
        const double vh = v[i] / (1 - std::pow(0.999, t));
        ref_p[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      }
    }
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(p[i] - ref_p[i]) < 1e-12);
  }
  SUBCASE("momentum makes two steps differ from one double step") {
    std::vector<double> a{1.0, 2.0}, b{1.0, 2.0};
    const std::vector<double> g{0.3, -0.7};
    auto sa = make_optimizer_state(2), sb = make_optimizer_state(2);
    adam_step(a, g, sa, 1e-2, cfg);
    adam_step(a, g, sa, 1e-2, cfg);
    adam_step(b, g, sb, 2e-2, cfg);
    CHECK(a != b);
  }
  SUBCASE("non-finite gradients abort with the step and group") {
    std::vector<double> p{1.0, 2.0, 3.0};
    const auto before = p;
    auto st = make_optimizer_state(3);
    adam_step(p, std::vector<double>{0.1, 0.1, 0.1}, st, 1e-3, cfg);
    const auto after1 = p;
    const std::vector<unroll::NamedGroup> groups{{"cascade.0.embed.weight", 0, 2}, {"eta", 2, 1}};
    try {
      adam_step(p, std::vector<double>{0.1, 0.1, std::nan("")}, st, 1e-3, cfg, &groups);
      FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
      CHECK(e.step == 2);
      CHECK(e.group == "eta");
      CHECK(std::string(e.what()).find("eta") != std::string::npos);
    }
    CHECK(p == after1);
    CHECK(st.step == 1);
    CHECK(p != before);
    CHECK_THROWS_AS(adam_step(p, std::vector<double>{0.1}, st, 1e-3, cfg), std::invalid_argument);
  }
}

TEST_CASE("dataset generation round trip") {
  const auto dir = scratch("data");
  const auto params = small_data(3, 5);
  const auto m = data::generate_dataset(params, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  const auto back = data::load_manifest(dir);
  CHECK(back.slices.size() == 3);
  CHECK(back.mask.lines == m.mask.lines);
  CHECK(back.params.coils == 2);
  CHECK(back.id == m.id);
  CHECK(data::load_manifest(dir / "manifest.json").slices.size() == 3);

  const auto direct = data::make_slice(params, m.mask, 1);
  const auto loaded = data::load_slice(back, 1);
  CHECK(max_abs_diff(loaded.kspace, direct.kspace) < 1e-6);
  CHECK(max_abs_diff(loaded.target, direct.target) < 1e-6);
  CHECK(loaded.data_max == direct.data_max);
  CHECK(direct.data_max == direct.target.max());
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        if (!m.mask.sampled(x)) CHECK(direct.kspace(c, y, x) == cplx(0.0));
      }
    }
  }
  CHECK(max_abs_diff(data::make_slice(params, m.mask, 1).kspace, direct.kspace) == 0.0);
  CHECK(max_abs_diff(data::make_slice(params, m.mask, 2).kspace, direct.kspace) > 0.0);

  const auto j = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  CHECK(j["mask"]["indices"].size() == m.mask.num_sampled());
  CHECK(j["generation"]["seed"] == 5);
  fs::remove_all(dir);
  CHECK_THROWS(data::load_manifest(dir));
}

TEST_CASE("held-out split takes the last tenth") {
  data::Manifest m;
  m.slices.resize(25);
  const auto [tr, he] = split_heldout(m);
  CHECK(tr.indices.size() == 23);
  CHECK(he.indices == std::vector<std::size_t>{23, 24});
  m.slices.resize(4);
  CHECK(split_heldout(m).second.indices == std::vector<std::size_t>{3});
}

TEST_CASE("training: initialization, determinism and logging") {
  const auto dir = scratch("train");
  const auto m = data::generate_dataset(small_data(6, 7), dir / "data");
  const auto set = all_of(m);
  const auto cfg_p = tiny_ueps();

  TrainConfig cfg;
  cfg.seed = 3;
  cfg.base_lr = 1e-3;

  SUBCASE("zero epochs returns the initialization") {
    cfg.epochs = 0;
    const auto r = train::train(cfg_p, set, {}, cfg, {dir / "zero", {}});
    Rng init = seeded_rng(3).split(0);
    CHECK(unroll::flatten(r.params) == unroll::flatten(unroll::init_pipeline_params(cfg_p, init)));
    CHECK(r.log.empty());
    const auto ck = ckpt::load_checkpoint(dir / "zero" / "checkpoint");
    const auto a = unroll::flatten(ck.params), b = unroll::flatten(r.params);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == static_cast<double>(static_cast<float>(b[i])));
  }

  SUBCASE("first loss is the identity-plus-consistency reconstruction error") {
    cfg.epochs = 1;
    cfg.batch_size = 6;
    const auto r = train::train(cfg_p, set, {}, cfg);
    REQUIRE(!r.log.empty());
    Rng init = seeded_rng(3).split(0);
    const auto p0 = unroll::init_pipeline_params(cfg_p, init);
    double expect = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      const auto s = data::load_slice(m, i);
      expect += mae_loss(reconstruct(cfg_p, p0, s, m.mask), s.target) / 6.0;
      // The denoisers output zero at init, so this is also the plain cascade of DC and padding.
      const auto k16 = unroll::kspace_center_crop(s.kspace, 16, 16);
      const auto k32 = unroll::kspace_pad(k16, s.kspace, m.mask, 32, 32);
      CHECK(max_abs_diff(reconstruct(cfg_p, p0, s, m.mask), acq::rss(ifft2c(k32))) < 1e-10);
    }
    CHECK(r.log[0].step == 1);
    CHECK(r.log[0].loss == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("same seed gives a bit-identical trajectory") {
    cfg.epochs = 9;
    cfg.batch_size = 1;
    const auto a = train::train(cfg_p, set, {}, cfg);
    const auto b = train::train(cfg_p, set, {}, cfg);
    REQUIRE(a.log.size() == b.log.size());
    std::size_t steps = 0;
    for (std::size_t i = 0; i < a.log.size(); ++i) {
      CHECK(a.log[i].loss == b.log[i].loss);
      CHECK(a.log[i].lr == b.log[i].lr);
      steps = std::max(steps, a.log[i].step);
    }
    CHECK(steps >= 50);
    CHECK(unroll::flatten(a.params) == unroll::flatten(b.params));
    cfg.seed = 4;
    const auto c = train::train(cfg_p, set, {}, cfg);
    CHECK(c.log[0].loss != a.log[0].loss);
  }

  SUBCASE("loss falls and the outputs are written") {
    cfg.epochs = 3;
    cfg.batch_size = 1;
    cfg.base_lr = 3e-3;
    const auto held = data::generate_dataset(small_data(2, 8), dir / "held");
    std::size_t seen = 0;
    const auto r = train::train(cfg_p, set, all_of(held), cfg, {dir / "run", [&](const LogRecord&) { ++seen; }});
    CHECK(seen == r.log.size());
    std::vector<double> step_losses;
    std::vector<LogRecord> epochs;
    for (const auto& rec : r.log) {
      if (rec.heldout_psnr) {
        epochs.push_back(rec);
      } else {
        step_losses.push_back(rec.loss);
      }
    }
    REQUIRE(epochs.size() == 3);
    REQUIRE(step_losses.size() == 18);
    double tail = 0.0;
    for (std::size_t i = step_losses.size() - 6; i < step_losses.size(); ++i) tail += step_losses[i] / 6.0;
    double head = 0.0;
    for (std::size_t i = 0; i < 6; ++i) head += step_losses[i] / 6.0;
    CHECK(tail < head);
    CHECK(r.heldout_psnr == *epochs.back().heldout_psnr);
    CHECK(std::isfinite(r.zero_filled_psnr));

    for (int e = 0; e <= 3; ++e) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%03d.json", e);
      CHECK(fs::exists(dir / "run" / name));
    }
    std::ifstream log(dir / "run" / "metrics.ndjson");
    std::string line;
    std::size_t lines = 0, with_psnr = 0;
    while (std::getline(log, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("step"));
      CHECK(j.contains("lr"));
      CHECK(j.contains("loss"));
      with_psnr += j.contains("heldout_psnr");
      ++lines;
    }
    CHECK(lines == r.log.size());
    CHECK(with_psnr == 3);
    const auto ck = ckpt::load_checkpoint(dir / "run" / "checkpoint");
    CHECK(ck.extra["epoch"] == 3);
  }
  fs::remove_all(dir);
}

TEST_CASE("the standard model trains with the slice maps") {
  const auto dir = scratch("dum");
  const auto m = data::generate_dataset(small_data(2, 9), dir);
  auto c = tiny_ueps();
  c.variant = unroll::Variant::dum;
  c.schedule = unroll::ResolutionSchedule::constant(2, 32, 32);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  const auto r = train::train(c, all_of(m), {}, cfg);
  CHECK(std::isfinite(r.log.back().loss));
  fs::remove_all(dir);
}
