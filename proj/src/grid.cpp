#include "ueps/grid.hpp"

#include <algorithm>
#include <cmath>

namespace ueps {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.coils) + ", " + std::to_string(s.height) + ", " +
         std::to_string(s.width) + ")";
}

ComplexGrid::ComplexGrid(Shape shape) : shape_(shape), data_(shape.size()) {}

ComplexGrid::ComplexGrid(Shape shape, std::vector<cplx> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw InvalidShape("ComplexGrid: data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
  }
}

std::span<cplx> ComplexGrid::coil(std::size_t c) {
  return std::span<cplx>(data_).subspan(c * shape_.plane(), shape_.plane());
}

std::span<const cplx> ComplexGrid::coil(std::size_t c) const {
  return std::span<const cplx>(data_).subspan(c * shape_.plane(), shape_.plane());
}

ComplexGrid ComplexGrid::coil_grid(std::size_t c) const {
  auto src = coil(c);
  return ComplexGrid({1, shape_.height, shape_.width}, std::vector<cplx>(src.begin(), src.end()));
}

ComplexGrid ComplexGrid::stack(std::span<const ComplexGrid> coils) {
  if (coils.empty()) throw InvalidShape("ComplexGrid::stack: no inputs");
  const std::size_t h = coils[0].height();
  const std::size_t w = coils[0].width();
  std::size_t n = 0;
  for (const auto& g : coils) {
    if (g.height() != h || g.width() != w) throw InvalidShape("ComplexGrid::stack: plane mismatch");
    n += g.coils();
  }
  std::vector<cplx> data;
  data.reserve(n * h * w);
  for (const auto& g : coils) data.insert(data.end(), g.data().begin(), g.data().end());
  return ComplexGrid({n, h, w}, std::move(data));
}

RealGrid::RealGrid(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), data_(height * width, fill) {}

RealGrid::RealGrid(std::size_t height, std::size_t width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != height_ * width_) throw InvalidShape("RealGrid: data length mismatch");
}

double RealGrid::max() const {
  if (data_.empty()) return 0.0;
  return *std::max_element(data_.begin(), data_.end());
}

void require_same_shape(const ComplexGrid& a, const ComplexGrid& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InvalidShape(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                       to_string(b.shape()));
  }
}

void require_same_shape(const RealGrid& a, const RealGrid& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw InvalidShape(std::string(what) + ": image shape mismatch");
  }
}

double norm(const ComplexGrid& x) {
  double s = 0.0;
  for (const auto& v : x.data()) s += std::norm(v);
  return std::sqrt(s);
}

double max_abs_diff(const ComplexGrid& a, const ComplexGrid& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double max_abs_diff(const RealGrid& a, const RealGrid& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

bool all_finite(const ComplexGrid& x) {
  return std::all_of(x.data().begin(), x.data().end(),
                     [](const cplx& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); });
}

ComplexGrid operator+(const ComplexGrid& a, const ComplexGrid& b) {
  require_same_shape(a, b, "operator+");
  ComplexGrid out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

ComplexGrid operator-(const ComplexGrid& a, const ComplexGrid& b) {
  require_same_shape(a, b, "operator-");
  ComplexGrid out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  return out;
}

ComplexGrid operator*(cplx s, const ComplexGrid& a) {
  ComplexGrid out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = s * a.data()[i];
  return out;
}

RealGrid magnitude(const ComplexGrid& x) {
  if (x.coils() != 1) throw InvalidShape("magnitude: expected a single-coil grid");
  RealGrid out(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::abs(x.data()[i]);
  return out;
}

ComplexGrid to_complex(const RealGrid& r) {
  ComplexGrid out({1, r.height(), r.width()});
  for (std::size_t i = 0; i < r.size(); ++i) out.data()[i] = r.data()[i];
  return out;
}

}  // namespace ueps
