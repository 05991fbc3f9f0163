#include "ueps/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ueps::vit {

namespace kn = kernels::omp;

bool DenoiserConfig::is_full_layer(std::size_t layer) const {
  return std::find(full_layers.begin(), full_layers.end(), layer) != full_layers.end();
}

void DenoiserConfig::validate() const {
  if (patch_size == 0 || depth == 0 || width == 0 || heads == 0 || mlp_hidden == 0) {
    throw std::invalid_argument("DenoiserConfig: sizes must be positive");
  }
  if (width % heads != 0) throw std::invalid_argument("DenoiserConfig: width must be divisible by heads");
  if (head_dim() % 4 != 0) {
    throw std::invalid_argument("DenoiserConfig: head dimension must be divisible by 4 for 2D rotary encoding");
  }
  for (auto l : full_layers) {
    if (l >= depth) throw std::invalid_argument("DenoiserConfig: full layer index out of range");
  }
}

DenoiserConfig DenoiserConfig::small(std::size_t patch, std::size_t depth, std::size_t width, std::size_t heads,
                                     std::size_t mlp_hidden) {
  DenoiserConfig c;
  c.patch_size = patch;
  c.depth = depth;
  c.width = width;
  c.heads = heads;
  c.mlp_hidden = mlp_hidden;
  c.full_layers = depth > 1 ? std::vector<std::size_t>{0, depth - 1} : std::vector<std::size_t>{0};
  return c;
}

AttentionPattern layer_pattern(const DenoiserConfig& cfg, std::size_t layer, std::size_t rows, std::size_t cols) {
  const bool sparse = cfg.sparse_enabled && !cfg.is_full_layer(layer) && rows * cols > cfg.sparse_threshold;
  return sparse ? AttentionPattern::row_band(rows, cols, cfg.band_halfwidth) : AttentionPattern::full(rows, cols);
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t DenoiserParams::num_params() const {
  std::size_t n = 0;
  visit_tensors(*this, [&](const std::string&, const std::vector<double>& t) { n += t.size(); });
  return n;
}

namespace {

Linear make_linear(std::size_t in, std::size_t out, bool bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight.assign(in * out, 0.0);
  if (bias) l.bias.assign(out, 0.0);
  return l;
}

Norm make_norm(std::size_t d, double scale) {
  return Norm{std::vector<double>(d, scale), std::vector<double>(d, 0.0)};
}

DenoiserParams make_params(const DenoiserConfig& cfg, double norm_scale) {
  cfg.validate();
  const std::size_t d = cfg.width;
  DenoiserParams p;
  p.embed = make_linear(cfg.token_dim(), d, true);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    Block b;
    b.norm1 = make_norm(d, norm_scale);
    b.q = make_linear(d, d, false);
    b.k = make_linear(d, d, false);
    b.v = make_linear(d, d, false);
    b.o = make_linear(d, d, false);
    b.norm2 = make_norm(d, norm_scale);
    b.gate = make_linear(d, cfg.mlp_hidden, false);
    b.up = make_linear(d, cfg.mlp_hidden, false);
    b.down = make_linear(cfg.mlp_hidden, d, false);
    p.blocks.push_back(std::move(b));
  }
  p.final_norm = make_norm(d, norm_scale);
  p.unembed = make_linear(d, cfg.token_dim(), true);
  return p;
}

void fill_trunc_normal(std::vector<double>& w, Rng& rng) {
  for (auto& x : w) x = 0.02 * rng.truncated_normal(2.0);
}

}  // namespace

DenoiserParams zero_params(const DenoiserConfig& cfg) { return make_params(cfg, 0.0); }

DenoiserParams init_params(const DenoiserConfig& cfg, Rng& rng) {
  DenoiserParams p = make_params(cfg, 1.0);
  fill_trunc_normal(p.embed.weight, rng);
  for (auto& b : p.blocks) {
    for (Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.gate, &b.up, &b.down}) fill_trunc_normal(l->weight, rng);
  }
  return p;
}

void check_params(const DenoiserParams& params, const DenoiserConfig& cfg) {
  cfg.validate();
  if (params.blocks.size() != cfg.depth) {
    throw std::invalid_argument("denoiser params: layer count does not match the configuration");
  }
  const std::size_t d = cfg.width;
  const std::size_t h = cfg.mlp_hidden;
  const std::size_t t = cfg.token_dim();
  constexpr std::size_t top = static_cast<std::size_t>(-1);
  auto expect = [](const std::vector<double>& v, std::size_t n, std::size_t layer, const char* name) {
    if (v.size() == n) return;
    const std::string pre = layer == top ? "" : "blocks." + std::to_string(layer) + ".";
    throw std::invalid_argument("denoiser params: tensor " + pre + name + " does not match the configuration");
  };
  expect(params.embed.weight, t * d, top, "embed.weight");
  expect(params.embed.bias, d, top, "embed.bias");
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const Block& b = params.blocks[i];
    expect(b.norm1.scale, d, i, "norm1.scale");
    expect(b.norm1.offset, d, i, "norm1.offset");
    expect(b.q.weight, d * d, i, "attn.q.weight");
    expect(b.k.weight, d * d, i, "attn.k.weight");
    expect(b.v.weight, d * d, i, "attn.v.weight");
    expect(b.o.weight, d * d, i, "attn.o.weight");
    expect(b.norm2.scale, d, i, "norm2.scale");
    expect(b.norm2.offset, d, i, "norm2.offset");
    expect(b.gate.weight, d * h, i, "ffn.gate.weight");
    expect(b.up.weight, d * h, i, "ffn.up.weight");
    expect(b.down.weight, h * d, i, "ffn.down.weight");
  }
  expect(params.final_norm.scale, d, top, "final_norm.scale");
  expect(params.final_norm.offset, d, top, "final_norm.offset");
  expect(params.unembed.weight, d * t, top, "unembed.weight");
  expect(params.unembed.bias, t, top, "unembed.bias");
}

std::vector<ParamGroup> param_groups(const DenoiserParams& params) {
  std::vector<ParamGroup> out;
  std::size_t off = 0;
  visit_tensors(params, [&](const std::string& name, const std::vector<double>& t) {
    out.push_back({name, off, t.size()});
    off += t.size();
  });
  return out;
}

std::vector<double> flatten(const DenoiserParams& params) {
  std::vector<double> out;
  out.reserve(params.num_params());
  visit_tensors(params, [&](const std::string&, const std::vector<double>& t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

void unflatten(std::span<const double> flat, DenoiserParams& params) {
  if (flat.size() != params.num_params()) throw std::invalid_argument("unflatten: length mismatch");
  std::size_t off = 0;
  visit_tensors(params, [&](const std::string&, std::vector<double>& t) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.begin());
    off += t.size();
  });
}

// ---------------------------------------------------------------------------
// Tokenization and rotary encoding

TokenGrid patchify(const ComplexGrid& image, std::size_t patch) {
  if (image.coils() != 1) throw InvalidShape("patchify: expected a single-coil image");
  if (patch == 0 || image.height() % patch != 0 || image.width() % patch != 0) {
    throw std::invalid_argument("patchify: patch size must divide the image shape " + to_string(image.shape()));
  }
  TokenGrid t;
  t.rows = image.height() / patch;
  t.cols = image.width() / patch;
  t.dim = 2 * patch * patch;
  t.data.resize(t.tokens() * t.dim);
  const std::size_t pp = patch * patch;
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t c = 0; c < t.cols; ++c) {
      double* tok = t.data.data() + (r * t.cols + c) * t.dim;
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          const cplx v = image(0, r * patch + y, c * patch + x);
          tok[y * patch + x] = v.real();
          tok[pp + y * patch + x] = v.imag();
        }
      }
    }
  }
  return t;
}

ComplexGrid unpatchify(const TokenGrid& t, std::size_t patch) {
  if (t.dim != 2 * patch * patch) throw std::invalid_argument("unpatchify: token width does not match patch size");
  ComplexGrid image({1, t.rows * patch, t.cols * patch});
  const std::size_t pp = patch * patch;
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t c = 0; c < t.cols; ++c) {
      const double* tok = t.data.data() + (r * t.cols + c) * t.dim;
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          image(0, r * patch + y, c * patch + x) = {tok[y * patch + x], tok[pp + y * patch + x]};
        }
      }
    }
  }
  return image;
}

void rope2d(std::span<double> v, std::size_t row, std::size_t col, double base, bool inverse) {
  const std::size_t dh = v.size();
  if (dh % 4 != 0) throw std::invalid_argument("rope2d: head dimension must be divisible by 4");
  const std::size_t half = dh / 2;
  const std::size_t pairs = half / 2;
  const double sign = inverse ? -1.0 : 1.0;
  for (std::size_t axis = 0; axis < 2; ++axis) {
    const double pos = static_cast<double>(axis == 0 ? row : col);
    double* seg = v.data() + axis * half;
    for (std::size_t j = 0; j < pairs; ++j) {
      const double freq = std::pow(base, -static_cast<double>(j) / static_cast<double>(pairs));
      const double ang = sign * pos * freq;
      const double cs = std::cos(ang);
      const double sn = std::sin(ang);
      const double a = seg[2 * j];
      const double b = seg[2 * j + 1];
      seg[2 * j] = a * cs - b * sn;
      seg[2 * j + 1] = a * sn + b * cs;
    }
  }
}

void rope2d_heads(std::span<double> buf, kernels::AttentionDims dims, std::size_t cols, double base, bool inverse) {
  const std::size_t dh = dims.head_dim;
  if (dh % 4 != 0) throw std::invalid_argument("rope2d: head dimension must be divisible by 4");
  const std::size_t half = dh / 2;
  const std::size_t pairs = half / 2;
  const double sign = inverse ? -1.0 : 1.0;
  // cos/sin per (token, axis, pair), shared by every head. A few recent
  // geometries are kept per thread.
  struct Table {
    std::size_t tokens, cols, half;
    double base, sign;
    std::vector<double> cs, sn;
  };
  thread_local std::vector<Table> tables;
  auto it = std::find_if(tables.begin(), tables.end(), [&](const Table& t) {
    return t.tokens == dims.tokens && t.cols == cols && t.half == half && t.base == base && t.sign == sign;
  });
  if (it == tables.end()) {
    if (tables.size() >= 8) tables.erase(tables.begin());
    std::vector<double> freq(pairs);
    for (std::size_t j = 0; j < pairs; ++j) freq[j] = std::pow(base, -static_cast<double>(j) / static_cast<double>(pairs));
    Table t{dims.tokens, cols, half, base, sign, std::vector<double>(dims.tokens * half),
            std::vector<double>(dims.tokens * half)};
    for (std::size_t tok = 0; tok < dims.tokens; ++tok) {
      for (std::size_t axis = 0; axis < 2; ++axis) {
        const double pos = static_cast<double>(axis == 0 ? tok / cols : tok % cols);
        for (std::size_t j = 0; j < pairs; ++j) {
          const double ang = sign * pos * freq[j];
          t.cs[tok * half + axis * pairs + j] = std::cos(ang);
          t.sn[tok * half + axis * pairs + j] = std::sin(ang);
        }
      }
    }
    tables.push_back(std::move(t));
    it = tables.end() - 1;
  }
  const Table& tab = *it;
  const std::vector<double>& cs = tab.cs;
  const std::vector<double>& sn = tab.sn;
  for (std::size_t h = 0; h < dims.heads; ++h) {
    for (std::size_t t = 0; t < dims.tokens; ++t) {
      double* v = buf.data() + (h * dims.tokens + t) * dh;
      const double* c = cs.data() + t * half;
      const double* s = sn.data() + t * half;
      for (std::size_t j = 0; j < half; ++j) {
        const double a = v[2 * j];
        const double b = v[2 * j + 1];
        v[2 * j] = a * c[j] - b * s[j];
        v[2 * j + 1] = a * s[j] + b * c[j];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Attention on token sets

namespace {

// T x d  ->  [heads][T][dh]
std::vector<double> split_heads(std::span<const double> x, std::size_t tokens, std::size_t heads) {
  const std::size_t d = x.size() / tokens;
  const std::size_t dh = d / heads;
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t h = 0; h < heads; ++h) {
      std::copy_n(x.data() + t * d + h * dh, dh, out.data() + (h * tokens + t) * dh);
    }
  }
  return out;
}

std::vector<double> merge_heads(std::span<const double> x, std::size_t tokens, std::size_t heads) {
  const std::size_t d = x.size() / tokens;
  const std::size_t dh = d / heads;
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t h = 0; h < heads; ++h) {
      std::copy_n(x.data() + (h * tokens + t) * dh, dh, out.data() + t * d + h * dh);
    }
  }
  return out;
}

kernels::AttentionDims check_attention_inputs(std::span<const double> q, std::span<const double> k,
                                              std::size_t heads, const AttentionPattern& pattern) {
  const std::size_t T = pattern.tokens();
  if (T == 0 || heads == 0 || q.size() != k.size() || q.size() % T != 0 || (q.size() / T) % heads != 0) {
    throw std::invalid_argument("attention: token sets do not match the pattern");
  }
  if (pattern.kind == PatternKind::row_band && pattern.cols == 0) {
    throw std::invalid_argument("attention: empty pattern");
  }
  return {heads, T, q.size() / T / heads};
}

}  // namespace

std::vector<double> attention(std::span<const double> q, std::span<const double> k, std::span<const double> v,
                              std::size_t heads, const AttentionPattern& pattern) {
  const auto dims = check_attention_inputs(q, k, heads, pattern);
  if (v.size() != q.size()) throw std::invalid_argument("attention: value set does not match queries");
  const auto qh = split_heads(q, dims.tokens, heads);
  const auto kh = split_heads(k, dims.tokens, heads);
  const auto vh = split_heads(v, dims.tokens, heads);
  std::vector<double> out(q.size());
  kn::attention_forward(qh.data(), kh.data(), vh.data(), out.data(), dims, pattern, nullptr);
  return merge_heads(out, dims.tokens, heads);
}

std::vector<double> attention_weights(std::span<const double> q, std::span<const double> k, std::size_t heads,
                                      const AttentionPattern& pattern) {
  const auto dims = check_attention_inputs(q, k, heads, pattern);
  const auto qh = split_heads(q, dims.tokens, heads);
  const auto kh = split_heads(k, dims.tokens, heads);
  std::vector<double> vh(qh.size(), 0.0);
  std::vector<double> out(qh.size());
  std::vector<double> probs(heads * dims.tokens * dims.tokens, 0.0);
  kn::attention_forward(qh.data(), kh.data(), vh.data(), out.data(), dims, pattern, probs.data());
  return probs;
}

double attention_flops(const AttentionPattern& pattern, std::size_t width) {
  const double T = static_cast<double>(pattern.tokens());
  double keys = 0.0;
  if (pattern.kind == PatternKind::full) {
    keys = T * T;
  } else {
    for (std::size_t q = 0; q < pattern.tokens(); ++q) {
      const auto [lo, hi] = pattern.key_range(q);
      keys += static_cast<double>(hi - lo);
    }
  }
  return 2.0 * keys * static_cast<double>(width);
}

// ---------------------------------------------------------------------------
// Transformer forward / backward

struct BlockCache {
  AttentionPattern pattern;
  std::vector<double> x_in, xhat1, rstd1, z1;
  std::vector<double> qh, kh, vh, probs, cat;
  std::vector<double> x_mid, xhat2, rstd2, z2;
  std::vector<double> gate_pre, up_pre, act;
};

struct DenoiserTape::Image {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> tokens_in;
  std::vector<BlockCache> blocks;
  std::vector<double> x_final, xhatf, rstdf, zf;
};

namespace {

void layer_norm(std::span<const double> x, std::size_t tokens, const Norm& n, double eps, std::span<double> z,
                std::vector<double>* xhat, std::vector<double>* rstd) {
  const std::size_t d = n.scale.size();
  if (xhat) xhat->resize(tokens * d);
  if (rstd) rstd->resize(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    const double* xr = x.data() + t * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    if (rstd) (*rstd)[t] = rs;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mean) * rs;
      if (xhat) (*xhat)[t * d + i] = h;
      z[t * d + i] = h * n.scale[i] + n.offset[i];
    }
  }
}

// dx += LN backward(dz)
void layer_norm_backward(std::span<const double> dz, std::span<const double> xhat, std::span<const double> rstd,
                         const Norm& n, Norm& gn, std::span<double> dx) {
  const std::size_t d = n.scale.size();
  const std::size_t tokens = rstd.size();
  for (std::size_t t = 0; t < tokens; ++t) {
    const double* g = dz.data() + t * d;
    const double* h = xhat.data() + t * d;
    double mean_g = 0.0;
    double mean_gh = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double gh = g[i] * n.scale[i];
      gn.scale[i] += g[i] * h[i];
      gn.offset[i] += g[i];
      mean_g += gh;
      mean_gh += gh * h[i];
    }
    mean_g /= static_cast<double>(d);
    mean_gh /= static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double gh = g[i] * n.scale[i];
      dx[t * d + i] += rstd[t] * (gh - mean_g - h[i] * mean_gh);
    }
  }
}

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

void linear(std::span<const double> x, std::size_t tokens, const Linear& l, std::vector<double>& y) {
  y.resize(tokens * l.out);
  kn::matmul(x.data(), l.weight.data(), l.bias.empty() ? nullptr : l.bias.data(), y.data(), tokens, l.in, l.out);
}

// dx (overwritten when accumulate is false) and parameter grads of y = x W + b.
void linear_backward(std::span<const double> x, std::span<const double> dy, std::size_t tokens, const Linear& l,
                     Linear& gl, std::vector<double>* dx, bool accumulate) {
  kn::matmul_tn_acc(x.data(), dy.data(), gl.weight.data(), tokens, l.in, l.out);
  if (!gl.bias.empty()) {
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t j = 0; j < l.out; ++j) gl.bias[j] += dy[t * l.out + j];
    }
  }
  if (!dx) return;
  std::vector<double> tmp(tokens * l.in);
  kn::matmul_nt(dy.data(), l.weight.data(), tmp.data(), tokens, l.in, l.out);
  if (accumulate) {
    for (std::size_t i = 0; i < tmp.size(); ++i) (*dx)[i] += tmp[i];
  } else {
    *dx = std::move(tmp);
  }
}

std::vector<double> forward_tokens(const TokenGrid& in, const DenoiserParams& p, const DenoiserConfig& cfg,
                                   DenoiserTape::Image* cache, PatternTrace* trace) {
  const std::size_t T = in.tokens();
  const std::size_t d = cfg.width;
  const std::size_t H = cfg.heads;
  const kernels::AttentionDims dims{H, T, cfg.head_dim()};

  std::vector<double> x;
  linear(in.data, T, p.embed, x);
  if (cache) {
    cache->rows = in.rows;
    cache->cols = in.cols;
    cache->tokens_in = in.data;
    cache->blocks.resize(cfg.depth);
  }

  std::vector<double> z(T * d), q, k, v, attn(T * d), o, gate, up, down;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const Block& b = p.blocks[l];
    const AttentionPattern pattern = layer_pattern(cfg, l, in.rows, in.cols);
    if (trace) trace->layers.push_back(pattern);
    BlockCache* bc = cache ? &cache->blocks[l] : nullptr;
    if (bc) {
      bc->pattern = pattern;
      bc->x_in = x;
    }

    layer_norm(x, T, b.norm1, cfg.norm_eps, z, bc ? &bc->xhat1 : nullptr, bc ? &bc->rstd1 : nullptr);
    linear(z, T, b.q, q);
    linear(z, T, b.k, k);
    linear(z, T, b.v, v);
    auto qh = split_heads(q, T, H);
    auto kh = split_heads(k, T, H);
    auto vh = split_heads(v, T, H);
    if (cfg.use_rope) {
      rope2d_heads(qh, dims, in.cols, cfg.rope_base);
      rope2d_heads(kh, dims, in.cols, cfg.rope_base);
    }
    std::vector<double> probs;
    if (bc) probs.assign(H * T * T, 0.0);
    kn::attention_forward(qh.data(), kh.data(), vh.data(), attn.data(), dims, pattern,
                          bc ? probs.data() : nullptr);
    auto cat = merge_heads(attn, T, H);
    linear(cat, T, b.o, o);
    for (std::size_t i = 0; i < T * d; ++i) x[i] += o[i];
    if (bc) {
      bc->z1 = z;
      bc->qh = std::move(qh);
      bc->kh = std::move(kh);
      bc->vh = std::move(vh);
      bc->probs = std::move(probs);
      bc->cat = std::move(cat);
      bc->x_mid = x;
    }

    layer_norm(x, T, b.norm2, cfg.norm_eps, z, bc ? &bc->xhat2 : nullptr, bc ? &bc->rstd2 : nullptr);
    linear(z, T, b.gate, gate);
    linear(z, T, b.up, up);
    std::vector<double> act(gate.size());
    for (std::size_t i = 0; i < act.size(); ++i) act[i] = gate[i] * sigmoid(gate[i]) * up[i];
    linear(act, T, b.down, down);
    for (std::size_t i = 0; i < T * d; ++i) x[i] += down[i];
    if (bc) {
      bc->z2 = z;
      bc->gate_pre = gate;
      bc->up_pre = up;
      bc->act = std::move(act);
    }
  }

  layer_norm(x, T, p.final_norm, cfg.norm_eps, z, cache ? &cache->xhatf : nullptr, cache ? &cache->rstdf : nullptr);
  std::vector<double> out;
  linear(z, T, p.unembed, out);
  if (cache) {
    cache->x_final = std::move(x);
    cache->zf = z;
  }
  return out;
}

// Returns d(loss)/d(input tokens).
std::vector<double> backward_tokens(const DenoiserTape::Image& c, std::span<const double> dout,
                                    const DenoiserParams& p, const DenoiserConfig& cfg, DenoiserParams& g) {
  const std::size_t T = c.rows * c.cols;
  const std::size_t d = cfg.width;
  const std::size_t H = cfg.heads;
  const kernels::AttentionDims dims{H, T, cfg.head_dim()};

  std::vector<double> dz;
  linear_backward(c.zf, dout, T, p.unembed, g.unembed, &dz, false);
  std::vector<double> dx(T * d, 0.0);
  layer_norm_backward(dz, c.xhatf, c.rstdf, p.final_norm, g.final_norm, dx);

  for (std::size_t li = cfg.depth; li-- > 0;) {
    const Block& b = p.blocks[li];
    Block& gb = g.blocks[li];
    const BlockCache& bc = c.blocks[li];

    // Feedforward branch: x_out = x_mid + down(silu(gate(z2)) * up(z2)).
    std::vector<double> dact;
    linear_backward(bc.act, dx, T, b.down, gb.down, &dact, false);
    std::vector<double> dgate(dact.size());
    std::vector<double> dup(dact.size());
    for (std::size_t i = 0; i < dact.size(); ++i) {
      const double a = bc.gate_pre[i];
      const double s = sigmoid(a);
      dup[i] = dact[i] * a * s;
      dgate[i] = dact[i] * bc.up_pre[i] * s * (1.0 + a * (1.0 - s));
    }
    std::vector<double> dz2;
    linear_backward(bc.z2, dgate, T, b.gate, gb.gate, &dz2, false);
    linear_backward(bc.z2, dup, T, b.up, gb.up, &dz2, true);
    layer_norm_backward(dz2, bc.xhat2, bc.rstd2, b.norm2, gb.norm2, dx);

    // Attention branch: x_mid = x_in + o(attn(rope(q), rope(k), v)).
    std::vector<double> dcat;
    linear_backward(bc.cat, dx, T, b.o, gb.o, &dcat, false);
    const auto dattn = split_heads(dcat, T, H);
    std::vector<double> dqh(dattn.size()), dkh(dattn.size()), dvh(dattn.size());
    std::vector<double> dscores(H * T * T);
    kn::attention_backward(bc.qh.data(), bc.kh.data(), bc.vh.data(), bc.probs.data(), dattn.data(), dqh.data(),
                           dkh.data(), dvh.data(), dscores.data(), dims, bc.pattern);
    if (cfg.use_rope) {
      rope2d_heads(dqh, dims, c.cols, cfg.rope_base, true);
      rope2d_heads(dkh, dims, c.cols, cfg.rope_base, true);
    }
    const auto dq = merge_heads(dqh, T, H);
    const auto dk = merge_heads(dkh, T, H);
    const auto dv = merge_heads(dvh, T, H);
    std::vector<double> dz1;
    linear_backward(bc.z1, dq, T, b.q, gb.q, &dz1, false);
    linear_backward(bc.z1, dk, T, b.k, gb.k, &dz1, true);
    linear_backward(bc.z1, dv, T, b.v, gb.v, &dz1, true);
    layer_norm_backward(dz1, bc.xhat1, bc.rstd1, b.norm1, gb.norm1, dx);
  }

  std::vector<double> din;
  linear_backward(c.tokens_in, dx, T, p.embed, g.embed, &din, false);
  return din;
}

void check_input(const ComplexGrid& x, const DenoiserParams& params, const DenoiserConfig& cfg) {
  cfg.validate();
  check_params(params, cfg);
  if (x.shape().empty()) throw InvalidShape("denoiser_forward: empty input");
  if (x.height() % cfg.patch_size != 0 || x.width() % cfg.patch_size != 0) {
    throw std::invalid_argument("denoiser_forward: patch size does not divide input " + to_string(x.shape()));
  }
}

}  // namespace

ComplexGrid denoiser_forward(const ComplexGrid& x, const DenoiserParams& params, const DenoiserConfig& cfg,
                             PatternTrace* trace) {
  check_input(x, params, cfg);
  std::vector<ComplexGrid> outs;
  for (std::size_t c = 0; c < x.coils(); ++c) {
    TokenGrid tokens = patchify(x.coil_grid(c), cfg.patch_size);
    TokenGrid out = tokens;
    out.data = forward_tokens(tokens, params, cfg, nullptr, c == 0 ? trace : nullptr);
    outs.push_back(unpatchify(out, cfg.patch_size));
  }
  return ComplexGrid::stack(outs);
}

ComplexGrid denoiser_forward(const ComplexGrid& x, const DenoiserParams& params, const DenoiserConfig& cfg,
                             DenoiserTape& tape) {
  check_input(x, params, cfg);
  tape.images.clear();
  tape.shape = x.shape();
  std::vector<ComplexGrid> outs;
  for (std::size_t c = 0; c < x.coils(); ++c) {
    TokenGrid tokens = patchify(x.coil_grid(c), cfg.patch_size);
    auto img = std::make_shared<DenoiserTape::Image>();
    TokenGrid out = tokens;
    out.data = forward_tokens(tokens, params, cfg, img.get(), nullptr);
    tape.images.push_back(std::move(img));
    outs.push_back(unpatchify(out, cfg.patch_size));
  }
  return ComplexGrid::stack(outs);
}

ComplexGrid denoiser_backward(const DenoiserTape& tape, const ComplexGrid& grad_out, const DenoiserParams& params,
                              const DenoiserConfig& cfg, DenoiserParams& grads) {
  if (grad_out.shape() != tape.shape) throw InvalidShape("denoiser_backward: gradient shape differs from forward");
  std::vector<ComplexGrid> dins;
  for (std::size_t c = 0; c < grad_out.coils(); ++c) {
    // The map from image to tokens is a permutation of reals, so its adjoint
    // is the inverse permutation: patchify the gradient, unpatchify the result.
    TokenGrid gout = patchify(grad_out.coil_grid(c), cfg.patch_size);
    TokenGrid gin = gout;
    gin.data = backward_tokens(*tape.images[c], gout.data, params, cfg, grads);
    dins.push_back(unpatchify(gin, cfg.patch_size));
  }
  return ComplexGrid::stack(dins);
}

}  // namespace ueps::vit
