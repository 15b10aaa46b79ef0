#include "hats/image.hpp"

#include <doctest.h>

#include <filesystem>

#include "hats/rng.hpp"
#include "hats/util.hpp"

using namespace hats;
using namespace hats::image;

TEST_CASE("raster round-trips both channel counts") {
  Rng rng(42);
  const auto dir = std::filesystem::temp_directory_path() / "hats_image_test";
  std::filesystem::create_directories(dir);

  for (int c : {1, 3}) {
    Image img = Image::make(13, 7, c);
    for (auto& v : img.pix) v = static_cast<uint8_t>(rng.below(256));
    const auto path = dir / ("t" + std::to_string(c) + ".pnm");
    write_raster(img, path);
    CHECK(read_raster(path) == img);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("raster read rejects junk") {
  const auto dir = std::filesystem::temp_directory_path() / "hats_image_test2";
  std::filesystem::create_directories(dir);
  util::write_file(dir / "bad.pnm", "P4\n2 2\n255\nxxxx");
  CHECK_THROWS_AS(read_raster(dir / "bad.pnm"), Error);
  util::write_file(dir / "short.pnm", "P5\n4 4\n255\nxx");
  CHECK_THROWS_AS(read_raster(dir / "short.pnm"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("box_downsample averages blocks") {
  Image img = Image::make(4, 4, 1);
  // One 2x2 block all 100, one all 0, one mixed.
  img.at(0, 0) = img.at(1, 0) = img.at(0, 1) = img.at(1, 1) = 100;
  img.at(2, 0) = 200;  // block mean (200+0+0+0)/4 = 50
  const auto out = box_downsample(img, 2);
  CHECK(out.w == 2);
  CHECK(out.h == 2);
  CHECK(out.at(0, 0) == 100);
  CHECK(out.at(1, 0) == 50);
  CHECK(out.at(0, 1) == 0);
  CHECK_THROWS_AS(box_downsample(img, 3), Error);  // 4 % 3 != 0
  CHECK(box_downsample(img, 1) == img);
}

TEST_CASE("threshold_mask is idempotent on binary masks") {
  Image m = Image::make(3, 1, 1);
  m.at(0, 0) = 127;
  m.at(1, 0) = 128;
  m.at(2, 0) = 255;
  const auto t = threshold_mask(m);
  CHECK(t.at(0, 0) == 0);
  CHECK(t.at(1, 0) == 255);
  CHECK(t.at(2, 0) == 255);
  CHECK(threshold_mask(t) == t);
}

TEST_CASE("crop_pad zero-fills outside the source") {
  Image img = Image::make(4, 4, 1, 9);
  const auto out = crop_pad(img, 2, 2, 4);  // lower-right quadrant + padding
  CHECK(out.at(0, 0) == 9);
  CHECK(out.at(1, 1) == 9);
  CHECK(out.at(2, 2) == 0);
  CHECK(out.at(3, 0) == 0);
  const auto all = crop_pad(img, 0, 0, 4);
  CHECK(all == img);
  const auto neg = crop_pad(img, -1, -1, 3);
  CHECK(neg.at(0, 0) == 0);
  CHECK(neg.at(1, 1) == 9);
}

TEST_CASE("count_foreground") {
  Image m = Image::make(2, 2, 1);
  CHECK(count_foreground(m) == 0);
  m.at(0, 0) = 255;
  m.at(1, 1) = 200;
  CHECK(count_foreground(m) == 2);
  Image rgb = Image::make(2, 2, 3);
  CHECK_THROWS_AS(count_foreground(rgb), Error);
}

TEST_CASE("nearest_downsample picks block centers and keeps masks binary") {
  Image m = Image::make(4, 4, 1);
  // Foreground only at the four block centers used for factor 2: (1,1),
  // (3,1), (1,3), (3,3).
  m.at(1, 1) = 255;
  m.at(3, 3) = 255;
  m.at(0, 0) = 255;  // off-center; must not leak into the output
  const auto out = nearest_downsample(m, 2);
  CHECK(out.w == 2);
  CHECK(out.h == 2);
  CHECK(out.at(0, 0) == 255);
  CHECK(out.at(1, 0) == 0);
  CHECK(out.at(0, 1) == 0);
  CHECK(out.at(1, 1) == 255);
  CHECK(nearest_downsample(m, 1) == m);
  CHECK_THROWS_AS(nearest_downsample(m, 3), Error);
}

TEST_CASE("nearest_downsample preserves containment and disjointness") {
  // Point sampling cannot create a pixel that both of two disjoint masks
  // claim, and cannot move a child pixel outside its parent. Check on a
  // randomized pair, factor 4.
  Image parent = Image::make(16, 16, 1);
  Image child = Image::make(16, 16, 1);
  Image rival = Image::make(16, 16, 1);
  uint32_t x = 123456789;  // tiny LCG, fixed seed
  for (int i = 0; i < 16 * 16; ++i) {
    x = x * 1664525u + 1013904223u;
    const uint8_t roll = static_cast<uint8_t>(x >> 28);
    if (roll < 8) parent.pix[static_cast<std::size_t>(i)] = 255;
    if (roll < 3) child.pix[static_cast<std::size_t>(i)] = 255;   // child ⊆ parent
    if (roll >= 8 && roll < 11) rival.pix[static_cast<std::size_t>(i)] = 255;
  }
  const auto p4 = nearest_downsample(parent, 4);
  const auto c4 = nearest_downsample(child, 4);
  const auto r4 = nearest_downsample(rival, 4);
  for (std::size_t i = 0; i < p4.pix.size(); ++i) {
    CHECK((c4.pix[i] && !p4.pix[i]) == false);
    CHECK((r4.pix[i] && p4.pix[i]) == false);
  }
}
