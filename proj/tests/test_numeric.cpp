#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "ueps/cgrid_io.hpp"
#include "ueps/fft.hpp"
#include "ueps/grid.hpp"
#include "ueps/rng.hpp"

using namespace ueps;
using testing::random_grid;
using testing::rel_diff;

TEST_CASE("fft2c of a constant 4x4 grid is a single centre bin of 4") {
  ComplexGrid x({1, 4, 4});
  for (auto& v : x.data()) v = 1.0;
  const auto k = fft2c(x);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t xx = 0; xx < 4; ++xx) {
      const cplx expect = (y == 2 && xx == 2) ? cplx(4.0) : cplx(0.0);
      CHECK(std::abs(k(0, y, xx) - expect) < 1e-14);
    }
  }
}

TEST_CASE("fft2c of a centred impulse is flat with modulus 1/8") {
  ComplexGrid x({1, 8, 8});
  x(0, 4, 4) = 1.0;
  const auto k = fft2c(x);
  for (const auto& v : k.data()) CHECK(std::abs(std::abs(v) - 0.125) < 1e-15);
}

TEST_CASE("ifft2c of constant k-space is a centre impulse of 8") {
  ComplexGrid k({1, 8, 8});
  for (auto& v : k.data()) v = 1.0;
  const auto x = ifft2c(k);
  CHECK(std::abs(x(0, 4, 4) - 8.0) < 1e-13);
  double off = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i != 4 * 8 + 4) off = std::max(off, std::abs(x.data()[i]));
  }
  CHECK(off < 1e-13);
}

TEST_CASE("fft2c matches the direct DFT for odd, even and mixed sizes") {
  Rng rng(3);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{16, 16}, {7, 9}, {12, 5}, {1, 6}, {15, 15}}) {
    const auto x = random_grid(rng, {2, h, w});
    CHECK(rel_diff(fft2c(x), testing::dft2c_direct(x)) < 1e-12);
    CHECK(rel_diff(ifft2c(x), testing::dft2c_direct(x, true)) < 1e-12);
  }
}

TEST_CASE("Parseval on a random 16x16 grid") {
  Rng rng(4);
  const auto x = random_grid(rng, {1, 16, 16});
  CHECK(std::abs(norm(fft2c(x)) - norm(x)) / norm(x) < 1e-12);
}

TEST_CASE("round trip on random 32x32") {
  Rng rng(5);
  const auto x = random_grid(rng, {1, 32, 32});
  CHECK(max_abs_diff(ifft2c(fft2c(x)), x) < 1e-10);
}

TEST_CASE("shifted impulse gives the analytic linear phase ramp") {
  const std::size_t H = 16, W = 12;
  for (auto [dy, dx] : {std::pair<int, int>{1, 0}, {0, 3}, {-2, 5}, {7, -6}}) {
    ComplexGrid x({1, H, W});
    x(0, H / 2 + dy, W / 2 + dx) = 1.0;
    const auto k = fft2c(x);
    double err = 0.0;
    for (std::size_t ky = 0; ky < H; ++ky) {
      for (std::size_t kx = 0; kx < W; ++kx) {
        const double u = static_cast<double>(ky) - static_cast<double>(H / 2);
        const double v = static_cast<double>(kx) - static_cast<double>(W / 2);
        const double ang = -2.0 * std::numbers::pi * (u * dy / double(H) + v * dx / double(W));
        err = std::max(err, std::abs(k(0, ky, kx) - std::polar(1.0 / std::sqrt(double(H * W)), ang)));
      }
    }
    CHECK(err < 1e-10);
  }
}

TEST_CASE("fft2c is linear") {
  Rng rng(6);
  const auto x = random_grid(rng, {1, 10, 14});
  const auto y = random_grid(rng, {1, 10, 14});
  const cplx a(0.3, -1.2), b(-2.0, 0.5);
  CHECK(rel_diff(fft2c(a * x + b * y), a * fft2c(x) + b * fft2c(y)) < 1e-12);
}

TEST_CASE("coils are transformed independently") {
  Rng rng(7);
  const auto x = random_grid(rng, {3, 8, 10});
  const auto k = fft2c(x);
  for (std::size_t c = 0; c < 3; ++c) CHECK(max_abs_diff(k.coil_grid(c), fft2c(x.coil_grid(c))) == 0.0);
}

TEST_CASE("zero extents are rejected") {
  CHECK_THROWS_AS(fft2c(ComplexGrid({1, 0, 4})), InvalidShape);
  CHECK_THROWS_AS(ifft2c(ComplexGrid({0, 4, 4})), InvalidShape);
}

TEST_CASE("adjoint of fft2c is ifft2c") {
  Rng rng(8);
  const auto x = random_grid(rng, {2, 9, 6});
  const auto y = random_grid(rng, {2, 9, 6});
  CHECK(std::abs(testing::inner(fft2c(x), y) - testing::inner(x, ifft2c(y))) < 1e-10);
}

TEST_CASE("grid construction checks data length") {
  CHECK_THROWS_AS(ComplexGrid({2, 3, 3}, std::vector<cplx>(17)), InvalidShape);
  ComplexGrid g({2, 3, 4});
  g(1, 2, 3) = {1.0, 2.0};
  CHECK(g.coil(1)[11] == cplx(1.0, 2.0));
  CHECK(g.coil_grid(1)(0, 2, 3) == cplx(1.0, 2.0));
  const std::vector<ComplexGrid> parts{g.coil_grid(0), g.coil_grid(1)};
  CHECK(max_abs_diff(ComplexGrid::stack(parts), g) == 0.0);
}

TEST_CASE("rng is deterministic and splits into distinct streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  const Rng s1 = c.split(1), s2 = c.split(2);
  CHECK(c.counter() == 0);
  Rng t1 = s1, t2 = s2;
  CHECK(t1.next_u64() != t2.next_u64());
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    const auto k = u.uniform_int(-3, 3);
    CHECK((k >= -3 && k <= 3));
    CHECK(std::abs(u.truncated_normal(2.0)) <= 2.0);
  }
}

TEST_CASE("complex normal draws") {
  Rng z(1);
  CHECK_THROWS_AS(normal(z, {1, 2, 2}, -1.0), std::invalid_argument);
  const auto zeros = normal(z, {1, 4, 4}, 0.0);
  for (const auto& v : zeros.data()) CHECK(v == cplx(0.0));
  Rng a = seeded_rng(7), b = seeded_rng(7);
  CHECK(max_abs_diff(normal(a, {2, 5, 5}, 1.0), normal(b, {2, 5, 5}, 1.0)) == 0.0);
  Rng r = seeded_rng(9);
  const auto g = normal(r, {1, 100, 1000}, 1.0);
  double m = 0.0, re2 = 0.0;
  for (const auto& v : g.data()) {
    m += std::norm(v);
    re2 += v.real() * v.real();
  }
  m /= static_cast<double>(g.size());
  re2 /= static_cast<double>(g.size());
  CHECK(m >= 0.99);
  CHECK(m <= 1.01);
  CHECK(std::abs(re2 - 0.5) < 0.01);
}

TEST_CASE("cgrid files round trip at float32 precision") {
  const auto dir = std::filesystem::temp_directory_path() / "ueps_test_numeric";
  std::filesystem::create_directories(dir);
  Rng rng(10);
  const auto g = random_grid(rng, {3, 5, 7});
  write_grid(dir / "g.cgrid", g);
  const auto back = read_grid(dir / "g.cgrid");
  CHECK(back.shape() == g.shape());
  CHECK(max_abs_diff(back, g) < 1e-6);

  std::ifstream in(dir / "g.cgrid", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() == 4 + 1 + 1 + 3 * 8 + 3 * 5 * 7 * 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CGRD");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 3);
  CHECK(bytes[6] == 3);
  CHECK(bytes[14] == 5);
  CHECK(bytes[22] == 7);
  float re;
  std::memcpy(&re, bytes.data() + 30, 4);
  CHECK(re == static_cast<float>(g.data()[0].real()));

  RealGrid img(4, 6);
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = 0.25 * static_cast<double>(i);
  write_image(dir / "i.cgrid", img);
  CHECK(max_abs_diff(read_image(dir / "i.cgrid"), img) == 0.0);

  const std::vector<double> v{1.0, -2.5, 3.25};
  write_vector(dir / "v.cgrid", v);
  CHECK(read_vector(dir / "v.cgrid") == v);

  std::ofstream bad(dir / "bad.cgrid", std::ios::binary);
  bad << "XXXX";
  bad.close();
  CHECK_THROWS(read_cgrid(dir / "bad.cgrid"));
  std::filesystem::remove_all(dir);
}
