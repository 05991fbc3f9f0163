#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ueps/attention_pattern.hpp"
#include "ueps/grid.hpp"
#include "ueps/kernels.hpp"
#include "ueps/rng.hpp"

namespace ueps::vit {

/// Vision-transformer denoiser hyperparameters. Defaults are the full-scale
/// model: 8x8 patches, 10 layers of width 512, 8 heads, SwiGLU hidden 1280,
/// row-band attention with one neighbouring patch row on each side in every
/// layer except the first and last, and only above 256 tokens.
struct DenoiserConfig {
  std::size_t patch_size = 8;
  std::size_t depth = 10;
  std::size_t width = 512;
  std::size_t heads = 8;
  std::size_t mlp_hidden = 1280;
  std::size_t band_halfwidth = 1;
  std::size_t sparse_threshold = 256;
  std::vector<std::size_t> full_layers{0, 9};
  bool sparse_enabled = true;
  bool use_rope = true;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;

  std::size_t head_dim() const { return width / heads; }
  std::size_t token_dim() const { return 2 * patch_size * patch_size; }
  bool is_full_layer(std::size_t layer) const;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;

  /// Convenience constructor for small models; full layers default to {0, depth-1}.
  static DenoiserConfig small(std::size_t patch, std::size_t depth, std::size_t width, std::size_t heads,
                              std::size_t mlp_hidden);
};

/// Pattern used by `layer` for a rows x cols patch grid.
AttentionPattern layer_pattern(const DenoiserConfig& cfg, std::size_t layer, std::size_t rows, std::size_t cols);

struct Linear {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // in x out, row-major (y = x W + b)
  std::vector<double> bias;    // out, or empty
};

struct Norm {
  std::vector<double> scale;
  std::vector<double> offset;
};

struct Block {
  Norm norm1;
  Linear q, k, v, o;
  Norm norm2;
  Linear gate, up, down;
};

struct DenoiserParams {
  Linear embed;
  std::vector<Block> blocks;
  Norm final_norm;
  Linear unembed;

  std::size_t num_params() const;
};

/// Visits every parameter tensor in the fixed flatten order:
/// embed.weight, embed.bias, then per block norm1.{scale,offset},
/// attn.{q,k,v,o}.weight, norm2.{scale,offset}, ffn.{gate,up,down}.weight,
/// then final_norm.{scale,offset}, unembed.weight, unembed.bias.
template <class Params, class Fn>
void visit_tensors(Params& p, Fn&& fn) {
  fn(std::string("embed.weight"), p.embed.weight);
  fn(std::string("embed.bias"), p.embed.bias);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "blocks." + std::to_string(i) + ".";
    fn(pre + "norm1.scale", b.norm1.scale);
    fn(pre + "norm1.offset", b.norm1.offset);
    fn(pre + "attn.q.weight", b.q.weight);
    fn(pre + "attn.k.weight", b.k.weight);
    fn(pre + "attn.v.weight", b.v.weight);
    fn(pre + "attn.o.weight", b.o.weight);
    fn(pre + "norm2.scale", b.norm2.scale);
    fn(pre + "norm2.offset", b.norm2.offset);
    fn(pre + "ffn.gate.weight", b.gate.weight);
    fn(pre + "ffn.up.weight", b.up.weight);
    fn(pre + "ffn.down.weight", b.down.weight);
  }
  fn(std::string("final_norm.scale"), p.final_norm.scale);
  fn(std::string("final_norm.offset"), p.final_norm.offset);
  fn(std::string("unembed.weight"), p.unembed.weight);
  fn(std::string("unembed.bias"), p.unembed.bias);
}

/// Correctly shaped parameters, all zero (gradient accumulators).
DenoiserParams zero_params(const DenoiserConfig& cfg);
/// Training initialization: linear maps truncated-normal (std 0.02, cut at
/// 2 std), biases zero, norm scales one, and a zero unembed so the
/// denoiser initially outputs exactly zero.
DenoiserParams init_params(const DenoiserConfig& cfg, Rng& rng);
/// Throws std::invalid_argument if any tensor does not match cfg.
void check_params(const DenoiserParams& params, const DenoiserConfig& cfg);

struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

std::vector<ParamGroup> param_groups(const DenoiserParams& params);
std::vector<double> flatten(const DenoiserParams& params);
/// Inverse of flatten; `params` supplies the shapes.
void unflatten(std::span<const double> flat, DenoiserParams& params);

/// rows x cols tokens of `dim` reals, row-major.
struct TokenGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  std::size_t tokens() const { return rows * cols; }
};

/// Splits a (1, H, W) image into p x p patches. Token (r, c) holds the real
/// plane then the imaginary plane of its patch, each row-major.
TokenGrid patchify(const ComplexGrid& image, std::size_t patch);
ComplexGrid unpatchify(const TokenGrid& tokens, std::size_t patch);

/// Rotates one head vector in place for patch position (row, col). The first
/// half of the vector encodes the row, the second half the column, each as
/// consecutive pairs with frequencies base^(-j / (head_dim/4)).
void rope2d(std::span<double> head_vec, std::size_t row, std::size_t col, double base, bool inverse = false);

/// Applies rope2d to every token of a head-major [heads][T][head_dim] buffer
/// whose tokens lie row-major on a grid with `cols` columns.
void rope2d_heads(std::span<double> buf, kernels::AttentionDims dims, std::size_t cols, double base,
                  bool inverse = false);

/// Multi-head masked attention on T x d token sets (no projections, no
/// rotary encoding).
std::vector<double> attention(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                              std::size_t heads, const AttentionPattern& pattern);

/// The per-head [heads][T][T] attention weights that attention() uses.
std::vector<double> attention_weights(std::span<const double> q, std::span<const double> k, std::size_t heads,
                                      const AttentionPattern& pattern);

/// Multiply count for one attention pass: QK^T scores plus the weighted sum
/// of V, i.e. 2 * T * keys_per_query * d summed over queries.
double attention_flops(const AttentionPattern& pattern, std::size_t width);

/// Per-layer patterns actually used by a forward call (shared by every coil).
struct PatternTrace {
  std::vector<AttentionPattern> layers;
};

/// Residual predicted by the denoiser. Coils are a batch dimension: every
/// coil plane is processed independently with the same parameters.
ComplexGrid denoiser_forward(const ComplexGrid& x, const DenoiserParams& params, const DenoiserConfig& cfg,
                             PatternTrace* trace = nullptr);

/// Saved activations for denoiser_backward (one entry per coil).
struct DenoiserTape {
  struct Image;
  std::vector<std::shared_ptr<const Image>> images;
  Shape shape;
};

ComplexGrid denoiser_forward(const ComplexGrid& x, const DenoiserParams& params, const DenoiserConfig& cfg,
                             DenoiserTape& tape);

/// Back-propagates grad_out (same shape as the forward output). Accumulates
/// parameter gradients into `grads` and returns the gradient w.r.t. the input.
/// Complex gradients use the convention g = dL/dRe + i dL/dIm.
ComplexGrid denoiser_backward(const DenoiserTape& tape, const ComplexGrid& grad_out, const DenoiserParams& params,
                              const DenoiserConfig& cfg, DenoiserParams& grads);

}  // namespace ueps::vit
