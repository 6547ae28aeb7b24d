#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "spritetree/errors.hpp"

namespace spritetree {

// An exact RGB color. Ordering follows the packed 0xRRGGBB value, which is
// also the "smallest color" used to break background ties.
struct Color {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  constexpr std::uint32_t value() const noexcept {
    return (std::uint32_t{r} << 16) | (std::uint32_t{g} << 8) | std::uint32_t{b};
  }
  static constexpr Color from_value(std::uint32_t v) noexcept {
    return Color{static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
                 static_cast<std::uint8_t>(v)};
  }

  friend constexpr bool operator==(Color a, Color b) noexcept { return a.value() == b.value(); }
  friend constexpr auto operator<=>(Color a, Color b) noexcept { return a.value() <=> b.value(); }
};

// Rectangular, row-major grid of colors. Dimensions are fixed at
// construction and always positive.
class Frame {
 public:
  Frame(int width, int height, Color fill = {}) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw DimensionError("frame dimensions must be positive, got " + std::to_string(width) +
                           "x" + std::to_string(height));
    }
    pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return pixels_.size(); }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  Color at(int x, int y) const { return pixels_[index(x, y)]; }
  void set(int x, int y, Color c) { pixels_[index(x, y)] = c; }

  // Paints [x0, x0+w) x [y0, y0+h), clipped to the frame.
  void fill_rect(int x0, int y0, int w, int h, Color c) {
    const int xa = std::max(x0, 0), xb = std::min(x0 + w, width_);
    const int ya = std::max(y0, 0), yb = std::min(y0 + h, height_);
    for (int y = ya; y < yb; ++y) {
      for (int x = xa; x < xb; ++x) pixels_[index(x, y)] = c;
    }
  }

  std::span<const Color> pixels() const noexcept { return pixels_; }

  friend bool operator==(const Frame&, const Frame&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_;
  int height_;
  std::vector<Color> pixels_;
};

// Stride-2 subsampling: output (x, y) is input (2x, 2y). Averaging would
// create colors that belong to no sprite, so it is never used.
inline Frame downsample(const Frame& f) {
  if (f.width() % 2 != 0 || f.height() % 2 != 0) {
    throw DimensionError("downsample needs even dimensions, got " + std::to_string(f.width()) +
                         "x" + std::to_string(f.height()));
  }
  Frame out(f.width() / 2, f.height() / 2);
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) out.set(x, y, f.at(2 * x, 2 * y));
  }
  return out;
}

// Per-pixel, per-channel maximum of two frames of equal size.
inline Frame framemax(const Frame& a, const Frame& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw DimensionError("framemax dimension mismatch: " + std::to_string(a.width()) + "x" +
                         std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                         std::to_string(b.height()));
  }
  Frame out(a.width(), a.height());
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      const Color p = a.at(x, y), q = b.at(x, y);
      out.set(x, y, Color{std::max(p.r, q.r), std::max(p.g, q.g), std::max(p.b, q.b)});
    }
  }
  return out;
}

// --- Binary portable pixmap (P6, maxval 255) --------------------------------

inline std::string encode_ppm(const Frame& f) {
  std::string out = "P6\n" + std::to_string(f.width()) + " " + std::to_string(f.height()) +
                    "\n255\n";
  out.reserve(out.size() + f.size() * 3);
  for (Color c : f.pixels()) {
    out.push_back(static_cast<char>(c.r));
    out.push_back(static_cast<char>(c.g));
    out.push_back(static_cast<char>(c.b));
  }
  return out;
}

namespace detail {

class PpmReader {
 public:
  explicit PpmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void expect_magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P') throw ParseError("missing PPM magic", 0);
    if (bytes_[1] != '6') throw ParseError("unsupported pixmap format (only P6)", 1);
    pos_ = 2;
  }

  // Skips whitespace and '#' comments, then reads a decimal field.
  long read_header_int() {
    skip_space();
    if (pos_ >= bytes_.size()) throw ParseError("truncated PPM header", pos_);
    if (bytes_[pos_] < '0' || bytes_[pos_] > '9') throw ParseError("expected decimal field", pos_);
    long v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) throw ParseError("header field out of range", pos_);
      ++pos_;
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  void expect_single_space() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
      throw ParseError("expected whitespace before raster", pos_);
    }
    ++pos_;
  }

  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::uint8_t take() { return bytes_[pos_++]; }

 private:
  static bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  }
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Frame decode_ppm(std::span<const std::uint8_t> bytes) {
  detail::PpmReader in(bytes);
  in.expect_magic();
  const std::size_t width_at = in.pos();
  const long width = in.read_header_int();
  const long height = in.read_header_int();
  if (width <= 0 || height <= 0) throw ParseError("non-positive image dimensions", width_at);
  const std::size_t maxval_at = in.pos();
  const long maxval = in.read_header_int();
  if (maxval != 255) throw ParseError("unsupported maxval (only 8-bit channels)", maxval_at);
  in.expect_single_space();

  const std::size_t need = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
  if (in.remaining() < need) {
    throw ParseError("truncated raster: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(in.remaining()),
                     in.pos() + in.remaining());
  }
  if (in.remaining() > need) throw ParseError("trailing bytes after raster", in.pos() + need);

  Frame f(static_cast<int>(width), static_cast<int>(height));
  for (int y = 0; y < f.height(); ++y) {
    for (int x = 0; x < f.width(); ++x) {
      const std::uint8_t r = in.take(), g = in.take(), b = in.take();
      f.set(x, y, Color{r, g, b});
    }
  }
  return f;
}

inline Frame decode_ppm(const std::string& bytes) {
  return decode_ppm(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

inline Frame read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image for reading: " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

inline void write_image(const Frame& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open image for writing: " + path);
  const std::string bytes = encode_ppm(f);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing image: " + path);
}

}  // namespace spritetree
