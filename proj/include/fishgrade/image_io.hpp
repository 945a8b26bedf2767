#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fishgrade/image.hpp"

namespace fishgrade {

// Which file colour plane feeds each channel. Default convention is
// R = HER2, G = CEP17, B = DAPI.
struct ChannelMap {
  char dapi = 'B';
  char her2 = 'R';
  char cep17 = 'G';
};

// Parses strings like "R=HER2,G=CEP17,B=DAPI" (any order, case-insensitive).
ChannelMap parse_channel_map(const std::string& spec);

using Bytes = std::vector<std::uint8_t>;

// 8- or 16-bit PNG/TIFF, grey or colour. Throws InputError if undecodable.
MultiChannelImage decode_image(std::span<const std::uint8_t> bytes, const ChannelMap& map = {});
MultiChannelImage read_image(const std::filesystem::path& path, const ChannelMap& map = {});

// 16-bit RGB PNG under the default channel convention.
Bytes encode_png16(const MultiChannelImage& image);
void write_png16(const std::filesystem::path& path, const MultiChannelImage& image);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file(const std::filesystem::path& path, const std::string& text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace fishgrade
