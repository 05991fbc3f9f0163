#include "ueps/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "ueps/cgrid_io.hpp"

namespace ueps::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

Slice make_slice(const GenParams& p, const acq::SamplingMask& mask, std::size_t index) {
  Rng rng = seeded_rng(p.seed).split(index);
  acq::PhantomSpec spec{acq::PhantomKind::random_ellipses, p.height, p.width, acq::PhaseKind::smooth_random,
                        rng.next_u64()};
  const ComplexGrid image = acq::make_phantom(spec);
  Rng csm_rng = rng.split(1);
  Rng noise_rng = rng.split(2);

  Slice s;
  char id[32];
  std::snprintf(id, sizeof id, "slice_%04zu", index);
  s.id = id;
  s.csm = acq::make_csm(p.coils, p.height, p.width, acq::CsmStyle::ring_gaussian, csm_rng);
  const auto full = acq::make_equispaced_mask(p.width, 1.0, 0.0);
  const ComplexGrid k_full = acq::forward_model(image, s.csm, full, p.noise_sigma, noise_rng);
  s.kspace = acq::apply_mask(k_full, mask);
  s.target = acq::rss(acq::zero_filled(k_full));
  s.data_max = s.target.max();
  return s;
}

Manifest generate_dataset(const GenParams& p, const fs::path& out_dir) {
  if (p.num_slices == 0) throw std::invalid_argument("gen-data: need at least one slice");
  fs::create_directories(out_dir);
  Manifest m;
  m.dir = out_dir;
  m.params = p;
  m.id = "synthetic-" + std::to_string(p.height) + "x" + std::to_string(p.width) + "-seed" + std::to_string(p.seed);
  m.mask = acq::make_equispaced_mask(p.width, p.acceleration, p.center_fraction);
  for (std::size_t i = 0; i < p.num_slices; ++i) {
    const Slice s = make_slice(p, m.mask, i);
    SliceEntry e{s.id, s.id + "_kspace.cgrid", s.id + "_csm.cgrid", s.id + "_target.cgrid", s.data_max};
    write_grid(out_dir / e.kspace, s.kspace);
    write_grid(out_dir / e.csm, s.csm.maps);
    write_image(out_dir / e.target, s.target);
    m.slices.push_back(e);
  }

  json j;
  j["id"] = m.id;
  j["generation"] = {{"num_slices", p.num_slices}, {"height", p.height},
                     {"width", p.width},           {"coils", p.coils},
                     {"acceleration", p.acceleration}, {"center_fraction", p.center_fraction},
                     {"noise_sigma", p.noise_sigma}, {"seed", p.seed},
                     {"phantom", "random-ellipses"}, {"phase", "smooth-random"},
                     {"csm", "ring-gaussian"}};
  j["mask"] = {{"width", m.mask.width()},
               {"indices", m.mask.indices()},
               {"num_center", m.mask.num_center},
               {"acceleration", m.mask.acceleration},
               {"center_fraction", m.mask.center_fraction},
               {"effective_acceleration", m.mask.effective_acceleration()}};
  json slices = json::array();
  for (const auto& e : m.slices) {
    slices.push_back({{"id", e.id}, {"kspace", e.kspace}, {"csm", e.csm}, {"target", e.target}, {"data_max", e.data_max}});
  }
  j["slices"] = slices;
  std::ofstream out(out_dir / "manifest.json");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (out_dir / "manifest.json").string());
  return m;
}

Manifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open manifest " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(file.string() + ": " + e.what());
  }
  Manifest m;
  m.dir = file.parent_path();
  m.id = j.value("id", m.dir.filename().string());
  const json& g = j.at("generation");
  m.params.num_slices = g.at("num_slices");
  m.params.height = g.at("height");
  m.params.width = g.at("width");
  m.params.coils = g.at("coils");
  m.params.acceleration = g.at("acceleration");
  m.params.center_fraction = g.at("center_fraction");
  m.params.noise_sigma = g.at("noise_sigma");
  m.params.seed = g.at("seed");
  const json& mk = j.at("mask");
  m.mask = acq::mask_from_indices(mk.at("width"), mk.at("indices").get<std::vector<std::size_t>>());
  m.mask.num_center = mk.value("num_center", std::size_t{0});
  m.mask.acceleration = mk.value("acceleration", 1.0);
  m.mask.center_fraction = mk.value("center_fraction", 0.0);
  for (const auto& s : j.at("slices")) {
    m.slices.push_back({s.at("id"), s.at("kspace"), s.at("csm"), s.at("target"), s.at("data_max")});
  }
  return m;
}

Slice load_slice(const Manifest& m, std::size_t index) {
  const SliceEntry& e = m.slices.at(index);
  Slice s;
  s.id = e.id;
  s.kspace = read_grid(m.dir / e.kspace);
  s.csm.maps = read_grid(m.dir / e.csm);
  s.target = read_image(m.dir / e.target);
  s.data_max = e.data_max;
  if (s.kspace.width() != m.mask.width() || s.csm.maps.shape() != s.kspace.shape() ||
      s.target.height() != s.kspace.height() || s.target.width() != s.kspace.width()) {
    throw InvalidShape("slice " + e.id + ": file shapes disagree with the manifest");
  }
  return s;
}

}  // namespace ueps::data
