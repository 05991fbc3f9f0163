#include "ueps/cgrid_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ueps {
namespace {

constexpr std::array<char, 4> kMagic{'C', 'G', 'R', 'D'};
constexpr std::uint8_t kVersion = 1;

void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 8);
}

void put_f32(std::vector<char>& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

float get_f32(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace

void write_cgrid(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                 std::span<const cplx> data) {
  if (dims.size() > 255) throw std::invalid_argument("write_cgrid: too many dimensions");
  std::uint64_t count = 1;
  for (auto d : dims) count *= d;
  if (count != data.size()) throw InvalidShape("write_cgrid: dims do not match data length");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_cgrid: cannot open " + path.string());
  os.write(kMagic.data(), 4);
  os.put(static_cast<char>(kVersion));
  os.put(static_cast<char>(dims.size()));
  for (auto d : dims) put_u64(os, d);
  std::vector<char> payload;
  payload.reserve(data.size() * 8);
  for (const auto& v : data) {
    put_f32(payload, static_cast<float>(v.real()));
    put_f32(payload, static_cast<float>(v.imag()));
  }
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!os) throw std::runtime_error("write_cgrid: write failed for " + path.string());
}

CgridFile read_cgrid(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_cgrid: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    throw std::runtime_error("read_cgrid: bad magic in " + path.string());
  }
  if (bytes[4] != kVersion) throw std::runtime_error("read_cgrid: unsupported version in " + path.string());
  const std::size_t ndim = bytes[5];
  std::size_t off = 6;
  if (bytes.size() < off + 8 * ndim) throw std::runtime_error("read_cgrid: truncated header");
  CgridFile f;
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i, off += 8) {
    f.dims.push_back(get_u64(bytes.data() + off));
    count *= f.dims.back();
  }
  if (bytes.size() != off + count * 8) throw std::runtime_error("read_cgrid: payload size mismatch in " + path.string());
  f.data.resize(count);
  for (std::size_t i = 0; i < count; ++i, off += 8) {
    f.data[i] = {get_f32(bytes.data() + off), get_f32(bytes.data() + off + 4)};
  }
  return f;
}

void write_grid(const std::filesystem::path& path, const ComplexGrid& g) {
  const std::array<std::uint64_t, 3> dims{g.coils(), g.height(), g.width()};
  write_cgrid(path, dims, g.data());
}

ComplexGrid read_grid(const std::filesystem::path& path) {
  auto f = read_cgrid(path);
  if (f.dims.size() == 2) return ComplexGrid({1, f.dims[0], f.dims[1]}, std::move(f.data));
  if (f.dims.size() == 3) return ComplexGrid({f.dims[0], f.dims[1], f.dims[2]}, std::move(f.data));
  throw InvalidShape("read_grid: expected ndim 2 or 3 in " + path.string());
}

void write_image(const std::filesystem::path& path, const RealGrid& img) {
  const std::array<std::uint64_t, 2> dims{img.height(), img.width()};
  std::vector<cplx> data(img.data().begin(), img.data().end());
  write_cgrid(path, dims, data);
}

RealGrid read_image(const std::filesystem::path& path) {
  auto g = read_grid(path);
  if (g.coils() != 1) throw InvalidShape("read_image: expected a single plane in " + path.string());
  RealGrid out(g.height(), g.width());
  for (std::size_t i = 0; i < g.size(); ++i) out.data()[i] = g.data()[i].real();
  return out;
}

void write_vector(const std::filesystem::path& path, std::span<const double> v) {
  const std::array<std::uint64_t, 1> dims{v.size()};
  std::vector<cplx> data(v.begin(), v.end());
  write_cgrid(path, dims, data);
}

std::vector<double> read_vector(const std::filesystem::path& path) {
  auto f = read_cgrid(path);
  if (f.dims.size() != 1) throw InvalidShape("read_vector: expected ndim 1 in " + path.string());
  std::vector<double> out(f.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f.data[i].real();
  return out;
}

}  // namespace ueps
