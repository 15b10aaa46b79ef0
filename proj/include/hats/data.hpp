#pragma once

#include <string>
#include <vector>

#include "hats/image.hpp"

namespace hats::data {

/// One partially labeled training example: a P×P RGB window plus the binary
/// mask of exactly one class. `present` records, per taxonomy class, whether
/// any of that class's tissue falls inside the window (peer availability).
struct PatchRecord {
  int patch_id = -1;
  int scene_id = -1;
  int class_index = -1;
  int magnification = 0;
  double micron_per_pixel = 0.0;
  std::string split;  // train | val | test, empty until assigned
  image::Image image;
  image::Image mask;
  std::vector<uint8_t> present;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<PatchRecord> patches;
};

}  // namespace hats::data
