#include "ueps/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ueps::kernels {
namespace {

constexpr std::size_t kBlock = 32;

// y[0:n] = bias + x[0:k] W, accumulated in column blocks held in registers.
inline void matmul_row(const double* __restrict x, const double* __restrict w, const double* __restrict bias,
                       double* __restrict y, std::size_t k, std::size_t n) {
  std::size_t j0 = 0;
  for (; j0 + kBlock <= n; j0 += kBlock) {
    double acc[kBlock];
    for (std::size_t j = 0; j < kBlock; ++j) acc[j] = bias ? bias[j0 + j] : 0.0;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double a = x[kk];
      const double* wr = w + kk * n + j0;
      for (std::size_t j = 0; j < kBlock; ++j) acc[j] += a * wr[j];
    }
    for (std::size_t j = 0; j < kBlock; ++j) y[j0 + j] = acc[j];
  }
  for (std::size_t j = j0; j < n; ++j) y[j] = bias ? bias[j] : 0.0;
  if (j0 < n) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double a = x[kk];
      const double* wr = w + kk * n;
      for (std::size_t j = j0; j < n; ++j) y[j] += a * wr[j];
    }
  }
}

// Four interleaved partial sums, combined in a fixed order.
inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void matmul_nt_row(const double* __restrict dy, const double* __restrict w, double* __restrict dx,
                          std::size_t k, std::size_t n) {
  for (std::size_t kk = 0; kk < k; ++kk) dx[kk] = dot(dy, w + kk * n, n);
}

// dW[kk, :] += sum_i x[i, kk] dy[i, :]
inline void matmul_tn_row(const double* __restrict x, const double* __restrict dy, double* __restrict dw_row,
                          std::size_t kk, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t j0 = 0;
  for (; j0 + kBlock <= n; j0 += kBlock) {
    double acc[kBlock];
    for (std::size_t j = 0; j < kBlock; ++j) acc[j] = dw_row[j0 + j];
    for (std::size_t i = 0; i < m; ++i) {
      const double a = x[i * k + kk];
      const double* dyr = dy + i * n + j0;
      for (std::size_t j = 0; j < kBlock; ++j) acc[j] += a * dyr[j];
    }
    for (std::size_t j = 0; j < kBlock; ++j) dw_row[j0 + j] = acc[j];
  }
  for (std::size_t i = 0; i < m && j0 < n; ++i) {
    const double a = x[i * k + kk];
    const double* dyr = dy + i * n;
    for (std::size_t j = j0; j < n; ++j) dw_row[j] += a * dyr[j];
  }
}

// One (head, query) row of masked attention. `scores` is scratch of length T.
inline void attention_query(const double* q, const double* k, const double* v, double* out, AttentionDims d,
                            const vit::AttentionPattern& pattern, double* probs, std::size_t h, std::size_t qi,
                            double* scores) {
  const std::size_t dh = d.head_dim;
  const std::size_t T = d.tokens;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* qrow = q + (h * T + qi) * dh;
  const double* kh = k + h * T * dh;
  const double* vh = v + h * T * dh;
  const auto [lo, hi] = pattern.key_range(qi);

  double mx = -INFINITY;
  for (std::size_t j = lo; j < hi; ++j) {
    scores[j] = scale * dot(qrow, kh + j * dh, dh);
    mx = std::max(mx, scores[j]);
  }
  double sum = 0.0;
  for (std::size_t j = lo; j < hi; ++j) {
    scores[j] = std::exp(scores[j] - mx);
    sum += scores[j];
  }
  const double inv = 1.0 / sum;
  double* orow = out + (h * T + qi) * dh;
  std::fill(orow, orow + dh, 0.0);
  for (std::size_t j = lo; j < hi; ++j) {
    const double p = scores[j] * inv;
    const double* vr = vh + j * dh;
    for (std::size_t c = 0; c < dh; ++c) orow[c] += p * vr[c];
    if (probs) probs[(h * T + qi) * T + j] = p;
  }
}

// dS row and dq for one (head, query).
inline void attention_backward_query(const double* k, const double* v, const double* probs, const double* dout,
                                     double* dq, double* dscores, AttentionDims d,
                                     const vit::AttentionPattern& pattern, std::size_t h, std::size_t qi) {
  const std::size_t dh = d.head_dim;
  const std::size_t T = d.tokens;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* kh = k + h * T * dh;
  const double* vh = v + h * T * dh;
  const double* prow = probs + (h * T + qi) * T;
  double* srow = dscores + (h * T + qi) * T;
  const double* go = dout + (h * T + qi) * dh;
  const auto [lo, hi] = pattern.key_range(qi);

  double rowdot = 0.0;
  for (std::size_t j = lo; j < hi; ++j) {
    srow[j] = dot(go, vh + j * dh, dh);
    rowdot += prow[j] * srow[j];
  }
  double* gq = dq + (h * T + qi) * dh;
  std::fill(gq, gq + dh, 0.0);
  for (std::size_t j = lo; j < hi; ++j) {
    srow[j] = prow[j] * (srow[j] - rowdot);
    const double a = scale * srow[j];
    const double* kr = kh + j * dh;
    for (std::size_t c = 0; c < dh; ++c) gq[c] += a * kr[c];
  }
}

// dk and dv for one (head, key). Patterns are symmetric, so the queries that
// admit key j are exactly key_range(j).
inline void attention_backward_key(const double* q, const double* probs, const double* dout, const double* dscores,
                                   double* dk, double* dv, AttentionDims d, const vit::AttentionPattern& pattern,
                                   std::size_t h, std::size_t kj) {
  const std::size_t dh = d.head_dim;
  const std::size_t T = d.tokens;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  double* gk = dk + (h * T + kj) * dh;
  double* gv = dv + (h * T + kj) * dh;
  std::fill(gk, gk + dh, 0.0);
  std::fill(gv, gv + dh, 0.0);
  const auto [lo, hi] = pattern.key_range(kj);
  for (std::size_t qi = lo; qi < hi; ++qi) {
    const double p = probs[(h * T + qi) * T + kj];
    const double s = scale * dscores[(h * T + qi) * T + kj];
    const double* go = dout + (h * T + qi) * dh;
    const double* qr = q + (h * T + qi) * dh;
    for (std::size_t c = 0; c < dh; ++c) {
      gv[c] += p * go[c];
      gk[c] += s * qr[c];
    }
  }
}

}  // namespace

namespace serial {

void matmul(const double* x, const double* w, const double* bias, double* y, std::size_t m, std::size_t k,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(x + i * k, w, bias, y + i * n, k, n);
}

void matmul_nt(const double* dy, const double* w, double* dx, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(dy + i * n, w, dx + i * k, k, n);
}

void matmul_tn_acc(const double* x, const double* dy, double* dw, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t kk = 0; kk < k; ++kk) matmul_tn_row(x, dy, dw + kk * n, kk, m, k, n);
}

void attention_forward(const double* q, const double* k, const double* v, double* out, AttentionDims dims,
                       const vit::AttentionPattern& pattern, double* probs) {
  std::vector<double> scores(dims.tokens);
  for (std::size_t h = 0; h < dims.heads; ++h) {
    for (std::size_t qi = 0; qi < dims.tokens; ++qi) {
      attention_query(q, k, v, out, dims, pattern, probs, h, qi, scores.data());
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, double* dscores,
                        AttentionDims dims, const vit::AttentionPattern& pattern) {
  for (std::size_t h = 0; h < dims.heads; ++h) {
    for (std::size_t qi = 0; qi < dims.tokens; ++qi) {
      attention_backward_query(k, v, probs, dout, dq, dscores, dims, pattern, h, qi);
    }
  }
  for (std::size_t h = 0; h < dims.heads; ++h) {
    for (std::size_t kj = 0; kj < dims.tokens; ++kj) {
      attention_backward_key(q, probs, dout, dscores, dk, dv, dims, pattern, h, kj);
    }
  }
}

}  // namespace serial

namespace omp {

void matmul(const double* x, const double* w, const double* bias, double* y, std::size_t m, std::size_t k,
            std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) matmul_row(x + i * k, w, bias, y + i * n, k, n);
}

void matmul_nt(const double* dy, const double* w, double* dx, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(dy + i * n, w, dx + i * k, k, n);
}

void matmul_tn_acc(const double* x, const double* dy, double* dw, std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t kk = 0; kk < k; ++kk) matmul_tn_row(x, dy, dw + kk * n, kk, m, k, n);
}

void attention_forward(const double* q, const double* k, const double* v, double* out, AttentionDims dims,
                       const vit::AttentionPattern& pattern, double* probs) {
  const std::size_t total = dims.heads * dims.tokens;
#pragma omp parallel
  {
    std::vector<double> scores(dims.tokens);
#pragma omp for schedule(static)
    for (std::size_t idx = 0; idx < total; ++idx) {
      attention_query(q, k, v, out, dims, pattern, probs, idx / dims.tokens, idx % dims.tokens, scores.data());
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, double* dscores,
                        AttentionDims dims, const vit::AttentionPattern& pattern) {
  const std::size_t total = dims.heads * dims.tokens;
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (std::size_t idx = 0; idx < total; ++idx) {
      attention_backward_query(k, v, probs, dout, dq, dscores, dims, pattern, idx / dims.tokens, idx % dims.tokens);
    }
#pragma omp for schedule(static)
    for (std::size_t idx = 0; idx < total; ++idx) {
      attention_backward_key(q, probs, dout, dscores, dk, dv, dims, pattern, idx / dims.tokens, idx % dims.tokens);
    }
  }
}

}  // namespace omp

}  // namespace ueps::kernels
