#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ueps/unrolled.hpp"

namespace ueps::ckpt {

using json = nlohmann::json;

json to_json(const vit::DenoiserConfig& cfg);
vit::DenoiserConfig denoiser_from_json(const json& j);

/// {"variant", "schedule": [[h, w], ...], "eta_init", "denoiser": {...}}.
/// Missing denoiser fields keep their defaults.
json to_json(const unroll::PipelineConfig& cfg);
unroll::PipelineConfig pipeline_from_json(const json& j);

unroll::PipelineConfig load_pipeline_config(const std::filesystem::path& path);
void save_pipeline_config(const std::filesystem::path& path, const unroll::PipelineConfig& cfg);

enum class Kind { learned, zero_filled };

/// A learned checkpoint is <stem>.cgrid (flat float32 parameter vector) plus
/// the <stem>.json sidecar describing configuration and flatten order. The
/// zero-filled baseline has a sidecar only.
struct Checkpoint {
  Kind kind = Kind::learned;
  std::string id;
  unroll::PipelineConfig config;
  unroll::PipelineParams params;
  json extra = json::object();
};

/// Writes <stem>.cgrid and <stem>.json. `stem` may carry either extension.
void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ck);
/// Accepts <stem>, <stem>.json or <stem>.cgrid.
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint zero_filled_checkpoint();

}  // namespace ueps::ckpt
