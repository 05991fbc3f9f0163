#pragma once

#include <cmath>
#include <complex>
#include <numbers>

#include "ueps/grid.hpp"
#include "ueps/rng.hpp"

namespace testing {

using ueps::ComplexGrid;
using ueps::cplx;

inline ComplexGrid random_grid(ueps::Rng& rng, ueps::Shape s) {
  ComplexGrid g(s);
  for (auto& v : g.data()) v = {rng.normal(), rng.normal()};
  return g;
}

inline double rel_diff(const ComplexGrid& a, const ComplexGrid& b) {
  return ueps::norm(a - b) / std::max(ueps::norm(b), 1e-300);
}

/// Direct O(N^2) centred unitary DFT: X[k] = sum_n x[n] exp(-+2 pi i (k-c)(n-c)/N) / sqrt(N), c = N/2.
inline ComplexGrid dft2c_direct(const ComplexGrid& x, bool inverse = false) {
  const std::size_t H = x.height(), W = x.width();
  const double sign = inverse ? 1.0 : -1.0;
  const double cy = static_cast<double>(H / 2), cx = static_cast<double>(W / 2);
  ComplexGrid out(x.shape());
  for (std::size_t c = 0; c < x.coils(); ++c) {
    for (std::size_t ky = 0; ky < H; ++ky) {
      for (std::size_t kx = 0; kx < W; ++kx) {
        cplx s{};
        for (std::size_t ny = 0; ny < H; ++ny) {
          for (std::size_t nx = 0; nx < W; ++nx) {
            const double ang = sign * 2.0 * std::numbers::pi *
                               ((ky - cy) * (ny - cy) / static_cast<double>(H) +
                                (kx - cx) * (nx - cx) / static_cast<double>(W));
            s += x(c, ny, nx) * cplx(std::cos(ang), std::sin(ang));
          }
        }
        out(c, ky, kx) = s / std::sqrt(static_cast<double>(H * W));
      }
    }
  }
  return out;
}

inline double inner_re(const ComplexGrid& a, const ComplexGrid& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (std::conj(a.data()[i]) * b.data()[i]).real();
  return s;
}

inline cplx inner(const ComplexGrid& a, const ComplexGrid& b) {
  cplx s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a.data()[i]) * b.data()[i];
  return s;
}

}  // namespace testing
