#pragma once

#include "ueps/grid.hpp"

namespace ueps {

/// Centered, unitary 2D DFT applied to every coil plane independently.
/// DC sits at index (H/2, W/2) (integer division) and ||fft2c(x)|| = ||x||.
ComplexGrid fft2c(const ComplexGrid& x);

/// Exact inverse (and adjoint) of fft2c.
ComplexGrid ifft2c(const ComplexGrid& k);

}  // namespace ueps
