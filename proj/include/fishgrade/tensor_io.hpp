#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fishgrade {

// Dense float tensor, row-major, last dimension fastest.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::uint32_t> d);

  std::size_t rank() const noexcept { return dims.size(); }
  std::size_t element_count() const noexcept;
  float& at(std::initializer_list<std::uint32_t> idx);
  float at(std::initializer_list<std::uint32_t> idx) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// "FGT1" tensor file:
//   bytes 0..3   magic "FGT1"
//   u32 LE       rank
//   rank x u32   dims
//   u8           dtype tag (0 = f32 little-endian)
//   raw data     element_count * 4 bytes
inline constexpr std::uint8_t kDtypeF32 = 0;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
// `name` labels the tensor in FormatError messages.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& name = "tensor");

void write_tensor(const std::filesystem::path& path, const Tensor& t);
// Errors name the tensor as `name` (plus file name) when given.
Tensor read_tensor(const std::filesystem::path& path, const std::string& name = {});

}  // namespace fishgrade
