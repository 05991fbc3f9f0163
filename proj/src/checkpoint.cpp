#include "ueps/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "ueps/cgrid_io.hpp"

namespace ueps::ckpt {

namespace fs = std::filesystem;

json to_json(const vit::DenoiserConfig& c) {
  return json{{"patch_size", c.patch_size},         {"depth", c.depth},
              {"width", c.width},                   {"heads", c.heads},
              {"mlp_hidden", c.mlp_hidden},         {"band_halfwidth", c.band_halfwidth},
              {"sparse_threshold", c.sparse_threshold}, {"full_layers", c.full_layers},
              {"sparse_enabled", c.sparse_enabled}, {"use_rope", c.use_rope},
              {"rope_base", c.rope_base},           {"norm_eps", c.norm_eps}};
}

vit::DenoiserConfig denoiser_from_json(const json& j) {
  vit::DenoiserConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("patch_size", c.patch_size);
  get("depth", c.depth);
  get("width", c.width);
  get("heads", c.heads);
  get("mlp_hidden", c.mlp_hidden);
  get("band_halfwidth", c.band_halfwidth);
  get("sparse_threshold", c.sparse_threshold);
  if (j.contains("full_layers")) {
    j.at("full_layers").get_to(c.full_layers);
  } else if (j.contains("depth")) {
    c.full_layers = c.depth > 1 ? std::vector<std::size_t>{0, c.depth - 1} : std::vector<std::size_t>{0};
  }
  get("sparse_enabled", c.sparse_enabled);
  get("use_rope", c.use_rope);
  get("rope_base", c.rope_base);
  get("norm_eps", c.norm_eps);
  c.validate();
  return c;
}

json to_json(const unroll::PipelineConfig& c) {
  json stages = json::array();
  for (const auto& s : c.schedule.stages) stages.push_back({s.height, s.width});
  return json{{"variant", unroll::to_string(c.variant)},
              {"schedule", stages},
              {"eta_init", c.eta_init},
              {"denoiser", to_json(c.denoiser)}};
}

unroll::PipelineConfig pipeline_from_json(const json& j) {
  unroll::PipelineConfig c;
  if (j.contains("variant")) c.variant = unroll::parse_variant(j.at("variant").get<std::string>());
  if (!j.contains("schedule")) throw std::invalid_argument("pipeline config: missing \"schedule\"");
  for (const auto& s : j.at("schedule")) {
    if (!s.is_array() || s.size() != 2) throw std::invalid_argument("pipeline config: stages are [height, width]");
    c.schedule.stages.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
  }
  if (j.contains("eta_init")) c.eta_init = j.at("eta_init").get<double>();
  c.denoiser = denoiser_from_json(j.value("denoiser", json::object()));
  return c;
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path strip(const fs::path& p) {
  if (p.extension() == ".json" || p.extension() == ".cgrid") return fs::path(p).replace_extension();
  return p;
}

}  // namespace

unroll::PipelineConfig load_pipeline_config(const fs::path& path) { return pipeline_from_json(read_json(path)); }

void save_pipeline_config(const fs::path& path, const unroll::PipelineConfig& cfg) {
  write_json(path, to_json(cfg));
}

void save_checkpoint(const fs::path& stem_in, const Checkpoint& ck) {
  const fs::path stem = strip(stem_in);
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  json side;
  side["format"] = "ueps-checkpoint";
  side["version"] = 1;
  side["id"] = ck.id.empty() ? stem.filename().string() : ck.id;
  side["extra"] = ck.extra;
  if (ck.kind == Kind::zero_filled) {
    side["kind"] = "zero-filled";
    write_json(fs::path(stem).replace_extension(".json"), side);
    return;
  }
  unroll::check_pipeline_params(ck.params, ck.config);
  side["kind"] = "learned";
  side["pipeline"] = to_json(ck.config);
  side["params_file"] = stem.filename().string() + ".cgrid";
  side["num_params"] = ck.params.num_params();
  side["dtype"] = "float32";
  json groups = json::array();
  for (const auto& g : unroll::pipeline_groups(ck.params)) {
    groups.push_back({{"name", g.name}, {"offset", g.offset}, {"size", g.size}});
  }
  side["flatten_order"] = groups;
  write_vector(fs::path(stem).replace_extension(".cgrid"), unroll::flatten(ck.params));
  write_json(fs::path(stem).replace_extension(".json"), side);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const fs::path stem = strip(path);
  const fs::path side_path = fs::path(stem).replace_extension(".json");
  const json side = read_json(side_path);
  if (side.value("format", "") != "ueps-checkpoint") {
    throw std::runtime_error(side_path.string() + ": not a checkpoint sidecar");
  }
  Checkpoint ck;
  ck.id = side.value("id", stem.filename().string());
  ck.extra = side.value("extra", json::object());
  if (side.value("kind", "learned") == "zero-filled") {
    ck.kind = Kind::zero_filled;
    return ck;
  }
  ck.config = pipeline_from_json(side.at("pipeline"));
  ck.params = unroll::zero_pipeline_params(ck.config);
  const auto flat = read_vector(stem.parent_path() / side.at("params_file").get<std::string>());
  if (flat.size() != ck.params.num_params()) {
    throw std::runtime_error(side_path.string() + ": parameter count " + std::to_string(flat.size()) +
                             " does not match the configuration (" + std::to_string(ck.params.num_params()) + ")");
  }
  unroll::unflatten(flat, ck.params);
  return ck;
}

Checkpoint zero_filled_checkpoint() {
  Checkpoint ck;
  ck.kind = Kind::zero_filled;
  ck.id = "zero-filled";
  return ck;
}

}  // namespace ueps::ckpt
