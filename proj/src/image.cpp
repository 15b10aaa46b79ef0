#include "hats/image.hpp"

#include <sstream>

#include "hats/util.hpp"

namespace hats::image {

Image Image::make(int w, int h, int c, uint8_t fill) {
  if (w <= 0 || h <= 0 || (c != 1 && c != 3)) throw Error("Image::make: bad dimensions");
  Image img;
  img.w = w;
  img.h = h;
  img.c = c;
  img.pix.assign(static_cast<std::size_t>(w) * h * c, fill);
  return img;
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istringstream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(in, rest);
  }
  throw Error("raster: truncated header");
}

}  // namespace

Image read_raster(const std::filesystem::path& path) {
  const std::string bytes = util::read_file(path);
  if (bytes.size() < 2) throw Error("raster: file too short: " + path.string());
  const std::string magic = bytes.substr(0, 2);
  int channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw Error("raster: unsupported magic '" + magic + "' in " + path.string());

  std::istringstream header(bytes.substr(2));
  const int w = static_cast<int>(util::parse_long(next_token(header)));
  const int h = static_cast<int>(util::parse_long(next_token(header)));
  const long maxval = util::parse_long(next_token(header));
  if (maxval != 255) throw Error("raster: expected maxval 255 in " + path.string());

  // Pixel data starts one byte after the maxval token.
  const std::size_t offset = 2 + static_cast<std::size_t>(header.tellg()) + 1;
  Image img = Image::make(w, h, channels);
  if (bytes.size() < offset + img.pix.size())
    throw Error("raster: truncated pixel data in " + path.string());
  std::copy_n(bytes.data() + offset, img.pix.size(), reinterpret_cast<char*>(img.pix.data()));
  return img;
}

void write_raster(const Image& img, const std::filesystem::path& path) {
  if (img.c != 1 && img.c != 3) throw Error("raster: unsupported channel count");
  std::string out = (img.c == 3 ? "P6\n" : "P5\n");
  out += std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pix.data()), img.pix.size());
  util::write_file(path, out);
}

Image box_downsample(const Image& img, int factor) {
  if (factor <= 0 || img.w % factor != 0 || img.h % factor != 0)
    throw Error("box_downsample: size not divisible by factor");
  if (factor == 1) return img;
  Image out = Image::make(img.w / factor, img.h / factor, img.c);
  const int area = factor * factor;
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        int sum = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) sum += img.at(x * factor + dx, y * factor + dy, ch);
        out.at(x, y, ch) = static_cast<uint8_t>((sum + area / 2) / area);
      }
  return out;
}

Image nearest_downsample(const Image& img, int factor) {
  if (factor <= 0 || img.w % factor != 0 || img.h % factor != 0)
    throw Error("nearest_downsample: size not divisible by factor");
  if (factor == 1) return img;
  Image out = Image::make(img.w / factor, img.h / factor, img.c);
  const int off = factor / 2;
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int ch = 0; ch < img.c; ++ch)
        out.at(x, y, ch) = img.at(x * factor + off, y * factor + off, ch);
  return out;
}

Image threshold_mask(const Image& img) {
  if (img.c != 1) throw Error("threshold_mask: mask must be single-channel");
  Image out = img;
  for (auto& v : out.pix) v = v >= 128 ? 255 : 0;
  return out;
}

Image crop_pad(const Image& img, int x0, int y0, int side) {
  if (side <= 0) throw Error("crop_pad: side must be positive");
  Image out = Image::make(side, side, img.c);
  for (int y = 0; y < side; ++y) {
    const int sy = y0 + y;
    if (sy < 0 || sy >= img.h) continue;
    for (int x = 0; x < side; ++x) {
      const int sx = x0 + x;
      if (sx < 0 || sx >= img.w) continue;
      for (int ch = 0; ch < img.c; ++ch) out.at(x, y, ch) = img.at(sx, sy, ch);
    }
  }
  return out;
}

long count_foreground(const Image& mask) {
  if (mask.c != 1) throw Error("count_foreground: mask must be single-channel");
  long n = 0;
  for (uint8_t v : mask.pix) n += v >= 128;
  return n;
}

}  // namespace hats::image
