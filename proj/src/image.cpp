#include "fishgrade/image.hpp"

#include <algorithm>
#include <cmath>

namespace fishgrade {

std::string_view channel_name(Channel c) {
  switch (c) {
    case Channel::Dapi:
      return "DAPI";
    case Channel::Her2:
      return "HER2";
    case Channel::Cep17:
      return "CEP17";
  }
  return "?";
}

MultiChannelImage::MultiChannelImage(int width, int height) {
  if (width <= 0 || height <= 0) throw InputError("image dimensions must be positive");
  for (auto& p : planes_) p = FloatGrid(width, height, 0.0f);
}

void MultiChannelImage::clamp() {
  for (auto& p : planes_)
    for (float& v : p.values()) v = std::clamp(v, 0.0f, 1.0f);
}

void MultiChannelImage::validate() const {
  if (empty() || width() <= 0 || height() <= 0) throw InputError("image is empty");
  for (const auto& p : planes_) {
    if (p.width() != width() || p.height() != height())
      throw InputError("image planes disagree in size");
    for (float v : p.values())
      if (!(v >= 0.0f && v <= 1.0f)) throw InputError("image intensity outside [0,1]");
  }
}

}  // namespace fishgrade
