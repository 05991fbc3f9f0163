#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ueps {

using cplx = std::complex<double>;

/// Thrown when a grid has a zero extent or two grids disagree on shape.
class InvalidShape : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a caller breaks an interface contract that the type system
/// cannot rule out (for example running a CSM-based pipeline without maps).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Shape {
  std::size_t coils = 1;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t plane() const { return height * width; }
  std::size_t size() const { return coils * height * width; }
  bool empty() const { return size() == 0; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense complex array of shape (coils, height, width), row-major, one
/// contiguous plane per coil. Image-space or k-space depending on context.
class ComplexGrid {
 public:
  ComplexGrid() = default;
  explicit ComplexGrid(Shape shape);
  ComplexGrid(Shape shape, std::vector<cplx> data);

  const Shape& shape() const { return shape_; }
  std::size_t coils() const { return shape_.coils; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  std::span<cplx> data() { return data_; }
  std::span<const cplx> data() const { return data_; }

  std::span<cplx> coil(std::size_t c);
  std::span<const cplx> coil(std::size_t c) const;

  cplx& operator()(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  const cplx& operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  /// Copy of one coil as a (1, H, W) grid.
  ComplexGrid coil_grid(std::size_t c) const;

  /// Concatenate single-coil grids of identical plane shape along coils.
  static ComplexGrid stack(std::span<const ComplexGrid> coils);

 private:
  Shape shape_;
  std::vector<cplx> data_;
};

/// Real-valued (height, width) image, e.g. an RSS magnitude.
class RealGrid {
 public:
  RealGrid() = default;
  RealGrid(std::size_t height, std::size_t width, double fill = 0.0);
  RealGrid(std::size_t height, std::size_t width, std::vector<double> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  double operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }

  double max() const;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

void require_same_shape(const ComplexGrid& a, const ComplexGrid& b, const char* what);
void require_same_shape(const RealGrid& a, const RealGrid& b, const char* what);

double norm(const ComplexGrid& x);
double max_abs_diff(const ComplexGrid& a, const ComplexGrid& b);
double max_abs_diff(const RealGrid& a, const RealGrid& b);
bool all_finite(const ComplexGrid& x);

ComplexGrid operator+(const ComplexGrid& a, const ComplexGrid& b);
ComplexGrid operator-(const ComplexGrid& a, const ComplexGrid& b);
ComplexGrid operator*(cplx s, const ComplexGrid& a);

/// Elementwise |x| of a single-coil grid.
RealGrid magnitude(const ComplexGrid& x);
/// Real image lifted to a (1, H, W) complex grid with zero imaginary part.
ComplexGrid to_complex(const RealGrid& r);

}  // namespace ueps
