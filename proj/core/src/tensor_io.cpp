#include "relpose/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "relpose/errors.hpp"

namespace relpose {
namespace io {
namespace {

template <typename T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), sizeof(T))) {
    throw FormatError("unexpected end of file");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_magic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

void expect_magic(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size()))) {
    throw FormatError("unexpected end of file while reading magic");
  }
  if (got != magic) {
    throw FormatError("bad magic: expected " + std::string(magic));
  }
}

void write_u32(std::ostream& out, std::uint32_t value) { write_le(out, value); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
void write_f64(std::ostream& out, double value) { write_le(out, value); }
double read_f64(std::istream& in) { return read_le<double>(in); }
void write_f32(std::ostream& out, float value) { write_le(out, value); }
float read_f32(std::istream& in) { return read_le<float>(in); }

}  // namespace io

void write_tensor(std::ostream& out, const Tensor& tensor) {
  io::write_magic(out, "TNSR");
  io::write_u32(out, kTensorFormatVersion);
  io::write_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) io::write_u32(out, static_cast<std::uint32_t>(d));
  for (double v : tensor.data()) io::write_f64(out, v);
}

Tensor read_tensor(std::istream& in) {
  io::expect_magic(in, "TNSR");
  const std::uint32_t version = io::read_u32(in);
  if (version != kTensorFormatVersion) {
    throw FormatError("unsupported TNSR version " + std::to_string(version));
  }
  const std::uint32_t rank = io::read_u32(in);
  if (rank > 16) throw FormatError("implausible TNSR rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = io::read_u32(in);
  const std::size_t n = shape_numel(shape);
  if (n > (std::size_t{1} << 31)) throw FormatError("implausible TNSR size");
  std::vector<double> data(n);
  for (double& v : data) v = io::read_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace relpose
