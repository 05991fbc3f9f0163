#include "ueps/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

namespace ueps {
namespace {

// FFTW planning is not thread-safe; execution on new arrays is.
fftw_plan plan_for(std::size_t h, std::size_t w, int sign) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto key = std::make_tuple(h, w, sign);
  auto it = plans.find(key);
  if (it != plans.end()) return it->second;
  std::vector<cplx> a(h * w), b(h * w);
  fftw_plan p = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), reinterpret_cast<fftw_complex*>(a.data()),
                                 reinterpret_cast<fftw_complex*>(b.data()), sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans.emplace(key, p);
  return p;
}

ComplexGrid transform(const ComplexGrid& x, int sign, const char* what) {
  if (x.shape().empty()) throw InvalidShape(std::string(what) + ": empty grid " + to_string(x.shape()));
  const std::size_t h = x.height();
  const std::size_t w = x.width();
  const fftw_plan plan = plan_for(h, w, sign);
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  // ifftshift moves the centre (h/2, w/2) to the origin; fftshift moves it back.
  const std::size_t sy = h / 2;
  const std::size_t sx = w / 2;
  ComplexGrid out(x.shape());
  std::vector<cplx> in(h * w), res(h * w);
  for (std::size_t c = 0; c < x.coils(); ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) in[((y + h - sy) % h) * w + (xx + w - sx) % w] = x(c, y, xx);
    }
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(res.data()));
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) out(c, (y + sy) % h, (xx + sx) % w) = res[y * w + xx] * scale;
    }
  }
  return out;
}

}  // namespace

ComplexGrid fft2c(const ComplexGrid& x) { return transform(x, FFTW_FORWARD, "fft2c"); }

ComplexGrid ifft2c(const ComplexGrid& k) { return transform(k, FFTW_BACKWARD, "ifft2c"); }

}  // namespace ueps
