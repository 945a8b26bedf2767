#include "fishgrade/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fishgrade/error.hpp"

namespace fishgrade {

namespace {

constexpr char kMagic[4] = {'F', 'G', 'T', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

}  // namespace

Tensor::Tensor(std::vector<std::uint32_t> d) : dims(std::move(d)) {
  data.assign(element_count(), 0.0f);
}

std::size_t Tensor::element_count() const noexcept {
  if (dims.empty()) return 0;
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

float& Tensor::at(std::initializer_list<std::uint32_t> idx) {
  std::size_t off = 0, k = 0;
  for (auto i : idx) off = off * dims[k++] + i;
  return data[off];
}

float Tensor::at(std::initializer_list<std::uint32_t> idx) const {
  std::size_t off = 0, k = 0;
  for (auto i : idx) off = off * dims[k++] + i;
  return data[off];
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.data.size() != t.element_count()) throw FormatError("tensor data size does not match dims");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) put_u32(out, d);
  out.push_back(kDtypeF32);
  out.reserve(out.size() + t.data.size() * 4);
  for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> b, const std::string& name) {
  if (b.size() < 9 || std::memcmp(b.data(), kMagic, 4) != 0)
    throw FormatError(name + ": missing FGT1 magic");
  const std::uint32_t rank = get_u32(b, 4);
  if (rank == 0 || rank > 8) throw FormatError(name + ": unsupported rank " + std::to_string(rank));
  const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank) + 1;
  if (b.size() < header) throw FormatError(name + ": truncated header");
  Tensor t;
  for (std::uint32_t i = 0; i < rank; ++i) t.dims.push_back(get_u32(b, 8 + 4 * i));
  if (b[header - 1] != kDtypeF32) throw FormatError(name + ": unsupported dtype tag");
  const std::size_t n = t.element_count();
  if (b.size() != header + 4 * n)
    throw FormatError(name + ": payload is " + std::to_string(b.size() - header) + " bytes, expected " +
                      std::to_string(4 * n));
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.data[i] = std::bit_cast<float>(get_u32(b, header + 4 * i));
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_tensor(const std::filesystem::path& path, const std::string& name) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes, name.empty() ? path.filename().string() : name + " (" + path.filename().string() + ")");
}

}  // namespace fishgrade
