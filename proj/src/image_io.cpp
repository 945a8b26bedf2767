#include "fishgrade/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <openssl/sha.h>

#include "fishgrade/error.hpp"

namespace fishgrade {

namespace {

// OpenCV stores colour planes as B, G, R.
int plane_index(char c) {
  switch (c) {
    case 'B':
      return 0;
    case 'G':
      return 1;
    case 'R':
      return 2;
  }
  throw ConfigError("channel_map", std::string("unknown colour plane '") + c + "'");
}

MultiChannelImage from_mat(const cv::Mat& raw, const ChannelMap& map) {
  if (raw.empty() || raw.dims != 2) throw InputError("image could not be decoded");
  double scale = 0.0;
  switch (raw.depth()) {
    case CV_8U:
      scale = 1.0 / 255.0;
      break;
    case CV_16U:
      scale = 1.0 / 65535.0;
      break;
    default:
      throw InputError("only 8- and 16-bit images are supported");
  }
  cv::Mat m;
  if (raw.channels() == 1)
    cv::merge(std::vector<cv::Mat>{raw, raw, raw}, m);
  else if (raw.channels() == 4) {
    std::vector<cv::Mat> p;
    cv::split(raw, p);
    p.resize(3);  // drop alpha
    cv::merge(p, m);
  }
  else if (raw.channels() == 3)
    m = raw;
  else
    throw InputError("unsupported channel count " + std::to_string(raw.channels()));

  std::vector<cv::Mat> planes;
  cv::split(m, planes);
  MultiChannelImage img(m.cols, m.rows);
  const std::array<std::pair<Channel, char>, 3> routes = {
      {{Channel::Dapi, map.dapi}, {Channel::Her2, map.her2}, {Channel::Cep17, map.cep17}}};
  for (const auto& [ch, src] : routes) {
    cv::Mat f;
    planes[plane_index(src)].convertTo(f, CV_32F, scale);
    auto& dst = img.plane(ch);
    for (int y = 0; y < f.rows; ++y) {
      const float* row = f.ptr<float>(y);
      std::copy(row, row + f.cols, &dst.at(0, y));
    }
  }
  img.clamp();
  return img;
}

}  // namespace

ChannelMap parse_channel_map(const std::string& spec) {
  ChannelMap map{0, 0, 0};
  std::size_t pos = 0;
  while (pos < spec.size()) {
    std::size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    std::string item = spec.substr(pos, comma - pos);
    pos = comma + 1;
    const auto eq = item.find('=');
    if (eq != 1) throw ConfigError("channel_map", "expected entries like R=HER2");
    const char plane = static_cast<char>(std::toupper(static_cast<unsigned char>(item[0])));
    std::string name = item.substr(2);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::toupper(c); });
    plane_index(plane);
    if (name == "DAPI")
      map.dapi = plane;
    else if (name == "HER2")
      map.her2 = plane;
    else if (name == "CEP17")
      map.cep17 = plane;
    else
      throw ConfigError("channel_map", "unknown channel " + name);
  }
  if (!map.dapi || !map.her2 || !map.cep17) throw ConfigError("channel_map", "all of DAPI, HER2, CEP17 must be mapped");
  return map;
}

MultiChannelImage decode_image(std::span<const std::uint8_t> bytes, const ChannelMap& map) {
  if (bytes.empty()) throw InputError("empty image data");
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat raw;
  try {
    raw = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw InputError(std::string("image could not be decoded: ") + e.what());
  }
  return from_mat(raw, map);
}

MultiChannelImage read_image(const std::filesystem::path& path, const ChannelMap& map) {
  return decode_image(read_file(path), map);
}

Bytes encode_png16(const MultiChannelImage& image) {
  cv::Mat m(image.height(), image.width(), CV_16UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = m.ptr<cv::Vec3w>(y);
    for (int x = 0; x < image.width(); ++x) {
      auto q = [&](Channel c) {
        return static_cast<std::uint16_t>(std::lround(std::clamp(image.at(c, x, y), 0.0f, 1.0f) * 65535.0));
      };
      row[x] = {q(Channel::Dapi), q(Channel::Cep17), q(Channel::Her2)};
    }
  }
  std::vector<uchar> out;
  if (!cv::imencode(".png", m, out)) throw InputError("PNG encoding failed");
  return Bytes(out.begin(), out.end());
}

void write_png16(const std::filesystem::path& path, const MultiChannelImage& image) {
  write_file(path, encode_png16(image));
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("short write to " + path.string());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(bytes.data(), bytes.size(), digest);
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned char c : digest) {
    s += hex[c >> 4];
    s += hex[c & 15];
  }
  return s;
}

}  // namespace fishgrade
