#pragma once

#include <array>
#include <string_view>

#include "fishgrade/error.hpp"
#include "fishgrade/grid.hpp"

namespace fishgrade {

enum class Channel { Dapi = 0, Her2 = 1, Cep17 = 2 };

inline constexpr std::array<Channel, 3> kAllChannels = {Channel::Dapi, Channel::Her2,
                                                        Channel::Cep17};

std::string_view channel_name(Channel c);

// Three-plane fluorescence raster; every intensity lives in [0, 1].
class MultiChannelImage {
 public:
  MultiChannelImage() = default;
  MultiChannelImage(int width, int height);

  int width() const noexcept { return planes_[0].width(); }
  int height() const noexcept { return planes_[0].height(); }
  bool empty() const noexcept { return planes_[0].empty(); }

  FloatGrid& plane(Channel c) { return planes_[static_cast<int>(c)]; }
  const FloatGrid& plane(Channel c) const { return planes_[static_cast<int>(c)]; }

  float at(Channel c, int x, int y) const { return plane(c).at(x, y); }
  float& at(Channel c, int x, int y) { return plane(c).at(x, y); }

  // Clamp all planes to [0, 1].
  void clamp();

  // Throws InputError when planes disagree in size or leave [0, 1].
  void validate() const;

  friend bool operator==(const MultiChannelImage&, const MultiChannelImage&) = default;

 private:
  std::array<FloatGrid, 3> planes_;
};

}  // namespace fishgrade
