#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ueps/cgrid_io.hpp"
#include "ueps/checkpoint.hpp"
#include "ueps/dataset.hpp"
#include "ueps/harness.hpp"
#include "ueps/training.hpp"

namespace fs = std::filesystem;
using namespace ueps;

namespace {

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) throw std::invalid_argument("--size expects HxW, got '" + s + "'");
  return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

fs::path svg_beside(const fs::path& csv) { return fs::path(csv).replace_extension(".svg"); }

// Configuration for recon: --config overrides the checkpoint's, which must
// then agree on every parameter shape.
ckpt::Checkpoint resolve_model(const std::string& config_path, const std::string& ckpt_path,
                               const std::string& variant) {
  ckpt::Checkpoint ck;
  if (!ckpt_path.empty()) {
    ck = ckpt::load_checkpoint(ckpt_path);
    if (ck.kind == ckpt::Kind::zero_filled) throw std::invalid_argument("recon: zero-filled checkpoint has no model");
  }
  if (!config_path.empty()) {
    auto cfg = ckpt::load_pipeline_config(config_path);
    if (!ckpt_path.empty()) {
      unroll::check_pipeline_params(ck.params, cfg);
    } else {
      Rng rng = seeded_rng(0);
      ck.params = unroll::init_pipeline_params(cfg, rng);
      ck.id = "init";
    }
    ck.config = cfg;
  }
  if (ckpt_path.empty() && config_path.empty()) throw std::invalid_argument("recon: need --checkpoint or --config");
  if (!variant.empty()) {
    const auto v = unroll::parse_variant(variant);
    if (unroll::uses_csm(v) != unroll::uses_csm(ck.config.variant)) {
      throw std::invalid_argument("recon: model of variant " + unroll::to_string(ck.config.variant) +
                                  " cannot run as " + variant);
    }
    ck.config.variant = v;
  }
  return ck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unrolled multi-coil MRI reconstruction toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Synthesize a multi-coil dataset and manifest");
  data::GenParams gp;
  std::string size = "64x64";
  std::string gen_out;
  gen->add_option("--num-slices", gp.num_slices, "Number of slices")->capture_default_str();
  gen->add_option("--size", size, "Image size HxW")->capture_default_str();
  gen->add_option("--coils", gp.coils, "Coil count")->capture_default_str();
  gen->add_option("--accel", gp.acceleration, "Acceleration R")->capture_default_str();
  gen->add_option("--center-frac", gp.center_fraction, "Fully sampled centre fraction")->capture_default_str();
  gen->add_option("--noise-sigma", gp.noise_sigma, "k-space noise sigma")->capture_default_str();
  gen->add_option("--seed", gp.seed, "Seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  // recon
  auto* rec = app.add_subcommand("recon", "Reconstruct one k-space file");
  std::string rec_variant, rec_config, rec_ckpt, rec_kspace, rec_manifest, rec_out, rec_dump, rec_csm;
  rec->add_option("--variant", rec_variant, "dum, ue, uep or ueps (default: the model's)");
  rec->add_option("--config", rec_config, "Pipeline configuration JSON");
  rec->add_option("--checkpoint", rec_ckpt, "Checkpoint (stem, .json or .cgrid)");
  rec->add_option("--kspace", rec_kspace, "Undersampled k-space CGRID (N, H, W)")->required();
  rec->add_option("--mask-from-manifest", rec_manifest, "Manifest (or dataset dir) holding the mask")->required();
  rec->add_option("--csm", rec_csm, "Coil maps CGRID (dum only)");
  rec->add_option("--out", rec_out, "Output magnitude image CGRID")->required();
  rec->add_option("--dump-intermediates", rec_dump, "Directory for per-cascade k-space and images");

  // train
  auto* tr = app.add_subcommand("train", "Train a pipeline on a generated dataset");
  std::string tr_variant, tr_config, tr_data, tr_heldout, tr_out;
  train::TrainConfig tc;
  tr->add_option("--variant", tr_variant, "Override the configuration's variant");
  tr->add_option("--config", tr_config, "Pipeline configuration JSON")->required();
  tr->add_option("--data", tr_data, "Training dataset directory")->required();
  tr->add_option("--heldout", tr_heldout, "Held-out dataset (default: last 10% of --data)");
  tr->add_option("--epochs", tc.epochs, "Epochs")->capture_default_str();
  tr->add_option("--batch", tc.batch_size, "Slices per batch")->capture_default_str();
  tr->add_option("--lr", tc.base_lr, "Base learning rate")->capture_default_str();
  tr->add_option("--seed", tc.seed, "Seed")->capture_default_str();
  tr->add_option("--out", tr_out, "Output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint over a dataset");
  std::string ev_ckpt, ev_data, ev_variant, ev_report;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint, or 'zero-filled' for the baseline")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--variant", ev_variant, "Run a CSM-free checkpoint as another CSM-free variant");
  ev->add_option("--report", ev_report, "Output JSON report");

  // bench-attn
  auto* be = app.add_subcommand("bench-attn", "Time full vs row-band attention");
  std::vector<std::size_t> be_tokens{100, 400, 1600, 6400};
  harness::BenchOptions bo;
  std::string be_csv, be_plot;
  be->add_option("--tokens", be_tokens, "Token counts")->delimiter(',')->capture_default_str();
  be->add_option("--repeats", bo.repeats, "Timed repeats (>= 5)")->capture_default_str();
  be->add_option("--warmup", bo.warmup, "Discarded warmup runs (>= 2)")->capture_default_str();
  be->add_option("--width", bo.width, "Model width")->capture_default_str();
  be->add_option("--heads", bo.heads, "Attention heads")->capture_default_str();
  be->add_option("--cols", bo.cols, "Patch columns (0: square grids)")->capture_default_str();
  be->add_option("--csv", be_csv, "Output CSV")->required();
  be->add_option("--plot", be_plot, "Output SVG (default: next to the CSV)");

  // csm-robustness
  auto* cr = app.add_subcommand("csm-robustness", "DUM vs UE under perturbed coil maps");
  std::string cr_dum, cr_ue, cr_data, cr_csv, cr_plot;
  std::vector<double> cr_deltas{0.0, 0.05, 0.1, 0.2, 0.4};
  cr->add_option("--dum", cr_dum, "DUM checkpoint")->required();
  cr->add_option("--ue", cr_ue, "UE checkpoint")->required();
  cr->add_option("--data", cr_data, "Dataset directory")->required();
  cr->add_option("--deltas", cr_deltas, "Perturbation levels")->delimiter(',')->capture_default_str();
  cr->add_option("--csv", cr_csv, "Output CSV")->required();
  cr->add_option("--plot", cr_plot, "Output SVG (default: next to the CSV)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      std::tie(gp.height, gp.width) = parse_size(size);
      const auto m = data::generate_dataset(gp, gen_out);
      std::printf("wrote %zu slices to %s (mask: %zu lines, effective acceleration %.3f)\n", m.slices.size(),
                  gen_out.c_str(), m.mask.num_sampled(), m.mask.effective_acceleration());
      return 0;
    }

    if (rec->parsed()) {
      const auto ck = resolve_model(rec_config, rec_ckpt, rec_variant);
      const auto manifest = data::load_manifest(rec_manifest);
      const ComplexGrid k = read_grid(rec_kspace);
      std::optional<acq::CoilSensitivities> csm;
      if (!rec_csm.empty()) csm = acq::CoilSensitivities{read_grid(rec_csm)};
      const auto result = unroll::run_pipeline(ck.config, k, manifest.mask, ck.params, csm ? &*csm : nullptr);
      write_image(rec_out, result.image);
      if (!rec_dump.empty()) {
        fs::create_directories(rec_dump);
        for (std::size_t t = 0; t < result.cascades.size(); ++t) {
          const auto& c = result.cascades[t];
          const std::string pre = "cascade_" + std::to_string(t);
          write_grid(fs::path(rec_dump) / (pre + "_kspace.cgrid"), c.kspace);
          write_grid(fs::path(rec_dump) / (pre + "_coils.cgrid"), c.image);
          write_image(fs::path(rec_dump) / (pre + "_rss.cgrid"), acq::rss(c.image));
        }
      }
      std::printf("wrote %s (%zux%zu)\n", rec_out.c_str(), result.image.height(), result.image.width());
      return 0;
    }

    if (tr->parsed()) {
      auto cfg = ckpt::load_pipeline_config(tr_config);
      if (!tr_variant.empty()) cfg.variant = unroll::parse_variant(tr_variant);
      const auto manifest = data::load_manifest(tr_data);
      train::SliceSet train_set, held;
      if (tr_heldout.empty()) {
        std::tie(train_set, held) = train::split_heldout(manifest);
      } else {
        train_set = {manifest, {}};
        for (std::size_t i = 0; i < manifest.slices.size(); ++i) train_set.indices.push_back(i);
        const auto hm = data::load_manifest(tr_heldout);
        held = {hm, {}};
        for (std::size_t i = 0; i < hm.slices.size(); ++i) held.indices.push_back(i);
      }
      train::TrainOutput out{tr_out, [](const train::LogRecord& r) {
                               if (r.heldout_psnr) {
                                 std::printf("epoch %zu  step %zu  loss %.6f  heldout PSNR %.3f dB\n", r.epoch, r.step,
                                             r.loss, *r.heldout_psnr);
                                 std::fflush(stdout);
                               }
                             }};
      const auto res = train::train(cfg, train_set, held, tc, out);
      std::printf("held-out PSNR %.3f dB (zero-filled %.3f dB)\n", res.heldout_psnr, res.zero_filled_psnr);
      return 0;
    }

    if (ev->parsed()) {
      const auto ck = ev_ckpt == "zero-filled" ? ckpt::zero_filled_checkpoint() : ckpt::load_checkpoint(ev_ckpt);
      const auto manifest = data::load_manifest(ev_data);
      const auto report = harness::evaluate(ck, manifest, ev_variant);
      const std::string text = harness::to_json(report).dump(2) + "\n";
      if (ev_report.empty()) {
        std::cout << text;
      } else {
        write_text(ev_report, text);
      }
      std::printf("%s: PSNR %.3f +- %.3f dB, SSIM %.4f +- %.4f over %zu slices, %zu failed\n", report.variant.c_str(),
                  report.psnr_mean, report.psnr_std, report.ssim_mean, report.ssim_std, report.slices.size(),
                  report.failures);
      return report.failures == 0 ? 0 : 1;
    }

    if (be->parsed()) {
      const auto records = harness::bench_attention(be_tokens, bo);
      write_text(be_csv, harness::bench_csv(records));
      harness::write_bench_plot(be_plot.empty() ? svg_beside(be_csv) : fs::path(be_plot), records);
      std::cout << harness::bench_csv(records);
      return 0;
    }

    if (cr->parsed()) {
      const auto dum = ckpt::load_checkpoint(cr_dum);
      const auto ue = ckpt::load_checkpoint(cr_ue);
      const auto manifest = data::load_manifest(cr_data);
      const auto rows = harness::csm_robustness(dum, ue, manifest, cr_deltas);
      write_text(cr_csv, harness::robustness_csv(rows));
      harness::write_robustness_plot(cr_plot.empty() ? svg_beside(cr_csv) : fs::path(cr_plot), rows);
      std::cout << harness::robustness_csv(rows);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
