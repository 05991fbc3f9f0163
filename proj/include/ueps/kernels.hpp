#pragma once

#include <cstddef>

#include "ueps/attention_pattern.hpp"

// Dense kernels used by the denoiser. Every kernel exists twice: a serial
// reference and an OpenMP version. Both compute each output element with
// the same sequence of operations, so their results are bit-identical.
//
// Matrices are row-major. Attention tensors are head-major,
// [heads][tokens][head_dim].

namespace ueps::kernels {

struct AttentionDims {
  std::size_t heads = 0;
  std::size_t tokens = 0;
  std::size_t head_dim = 0;
};

namespace serial {

/// y[m,n] = x[m,k] w[k,n] (+ bias[n] when non-null).
void matmul(const double* x, const double* w, const double* bias, double* y, std::size_t m, std::size_t k,
            std::size_t n);
/// dx[m,k] = dy[m,n] w[k,n]^T.
void matmul_nt(const double* dy, const double* w, double* dx, std::size_t m, std::size_t k, std::size_t n);
/// dw[k,n] += x[m,k]^T dy[m,n].
void matmul_tn_acc(const double* x, const double* dy, double* dw, std::size_t m, std::size_t k, std::size_t n);
/// Masked softmax attention. `probs`, when non-null, receives the
/// [heads][T][T] weights; entries outside the pattern are left untouched.
void attention_forward(const double* q, const double* k, const double* v, double* out, AttentionDims dims,
                       const vit::AttentionPattern& pattern, double* probs);
/// Gradients of attention_forward from its saved probs. `dscores` is [heads][T][T] scratch.
void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, double* dscores,
                        AttentionDims dims, const vit::AttentionPattern& pattern);

}  // namespace serial

namespace omp {

void matmul(const double* x, const double* w, const double* bias, double* y, std::size_t m, std::size_t k,
            std::size_t n);
void matmul_nt(const double* dy, const double* w, double* dx, std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(const double* x, const double* dy, double* dw, std::size_t m, std::size_t k, std::size_t n);
void attention_forward(const double* q, const double* k, const double* v, double* out, AttentionDims dims,
                       const vit::AttentionPattern& pattern, double* probs);
void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, double* dscores,
                        AttentionDims dims, const vit::AttentionPattern& pattern);

}  // namespace omp

}  // namespace ueps::kernels
