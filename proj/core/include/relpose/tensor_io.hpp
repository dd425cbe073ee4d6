#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string_view>

#include "relpose/tensor.hpp"

namespace relpose {

// "TNSR" binary layout: magic, u32 version (=1), u32 rank, u32 dims[rank],
// then the row-major payload as little-endian f64. Every integer is
// little-endian.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

namespace io {

// Little-endian primitives shared by the binary formats of the library.
void write_magic(std::ostream& out, std::string_view magic);
void expect_magic(std::istream& in, std::string_view magic);
void write_u32(std::ostream& out, std::uint32_t value);
std::uint32_t read_u32(std::istream& in);
void write_f64(std::ostream& out, double value);
double read_f64(std::istream& in);
void write_f32(std::ostream& out, float value);
float read_f32(std::istream& in);

}  // namespace io
}  // namespace relpose
