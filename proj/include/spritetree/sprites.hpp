#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <compare>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spritetree/errors.hpp"
#include "spritetree/pixelgrid.hpp"

namespace spritetree {

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(Point, Point) = default;
};

// Screen-raster order: top row first, then left to right.
constexpr bool raster_less(Point a, Point b) noexcept {
  return a.y != b.y ? a.y < b.y : a.x < b.x;
}

// Ordering of same-signature instances: by x, then y.
constexpr bool anchor_less(Point a, Point b) noexcept {
  return a.x != b.x ? a.x < b.x : a.y < b.y;
}

// 64-bit FNV-1a digest of a sprite's canonical shape signature.
using SignatureHash = std::uint64_t;

inline std::string signature_hex(SignatureHash h) {
  std::array<char, 16> buf{};
  buf.fill('0');
  char tmp[16];
  auto [end, ec] = std::to_chars(tmp, tmp + sizeof tmp, h, 16);
  const auto n = static_cast<std::size_t>(end - tmp);
  std::copy(tmp, end, buf.data() + (16 - n));
  return std::string(buf.data(), buf.size());
}

inline SignatureHash parse_signature_hex(const std::string& s) {
  SignatureHash h = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), h, 16);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.size() != 16) {
    throw ParseError("bad signature hash '" + s + "'", 0);
  }
  return h;
}

namespace detail {

class Fnv1a {
 public:
  void add(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      state_ ^= (v >> (8 * i)) & 0xFFu;
      state_ *= 0x100000001B3ULL;
    }
  }
  void add_int(int v) { add(static_cast<std::uint32_t>(v)); }
  std::uint64_t value() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

}  // namespace detail

// Translation-invariant signature: the color plus the pixel offsets from the
// anchor in raster order. Two sprites share a signature hash iff (barring
// collisions) their pixel sets are equal up to translation.
inline SignatureHash shape_signature(Color color, std::vector<Point> pixels) {
  std::sort(pixels.begin(), pixels.end(), raster_less);
  const Point anchor = pixels.front();
  detail::Fnv1a h;
  h.add(color.value());
  h.add(static_cast<std::uint32_t>(pixels.size()));
  for (Point p : pixels) {
    h.add_int(p.x - anchor.x);
    h.add_int(p.y - anchor.y);
  }
  return h.value();
}

// Signature of a solid w x h rectangle.
inline SignatureHash rect_signature(Color color, int w, int h) {
  std::vector<Point> px;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) px.push_back({x, y});
  }
  return shape_signature(color, std::move(px));
}

struct Sprite {
  Color color;
  std::vector<Point> pixels;  // raster order, non-empty
  Point anchor;               // raster-minimal pixel
  SignatureHash signature = 0;

  static Sprite from_pixels(Color color, std::vector<Point> pixels) {
    if (pixels.empty()) throw InvariantError("sprite with no pixels");
    std::sort(pixels.begin(), pixels.end(), raster_less);
    Sprite s;
    s.color = color;
    s.anchor = pixels.front();
    s.signature = shape_signature(color, pixels);
    s.pixels = std::move(pixels);
    return s;
  }

  // Offsets from the anchor; the explicit form of the signature.
  std::vector<Point> offsets() const {
    std::vector<Point> out;
    out.reserve(pixels.size());
    for (Point p : pixels) out.push_back({p.x - anchor.x, p.y - anchor.y});
    return out;
  }
};

struct SpriteDecomposition {
  std::vector<Sprite> sprites;  // ordered by anchor (x, then y)
  Color background;
  int width = 0;
  int height = 0;
};

// Plurality color; ties go to the smallest color value.
inline Color infer_background(const Frame& f) {
  std::map<std::uint32_t, std::size_t> counts;
  for (Color c : f.pixels()) ++counts[c.value()];
  std::uint32_t best = 0;
  std::size_t best_count = 0;
  for (const auto& [value, count] : counts) {
    if (count > best_count) {
      best = value;
      best_count = count;
    }
  }
  return Color::from_value(best);
}

// Greedy pixel-wise sprite identification: pick the background color, then
// flood every unvisited non-background pixel (raster order) over 4-connected
// same-colored neighbors. Each flood is one sprite.
inline SpriteDecomposition identify_sprites(const Frame& f) {
  SpriteDecomposition out;
  out.background = infer_background(f);
  out.width = f.width();
  out.height = f.height();

  const int w = f.width(), h = f.height();
  std::vector<std::uint8_t> visited(f.size(), 0);
  std::vector<Point> stack;
  auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * w + x; };

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Color c = f.at(x, y);
      if (c == out.background || visited[idx(x, y)]) continue;

      std::vector<Point> component;
      visited[idx(x, y)] = 1;
      stack.push_back({x, y});
      while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        component.push_back(p);
        constexpr std::array<Point, 4> kNeighbors{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
        for (Point d : kNeighbors) {
          const int nx = p.x + d.x, ny = p.y + d.y;
          if (!f.contains(nx, ny) || visited[idx(nx, ny)] || f.at(nx, ny) != c) continue;
          visited[idx(nx, ny)] = 1;
          stack.push_back({nx, ny});
        }
      }
      out.sprites.push_back(Sprite::from_pixels(c, std::move(component)));
    }
  }
  std::stable_sort(out.sprites.begin(), out.sprites.end(),
                   [](const Sprite& a, const Sprite& b) { return anchor_less(a.anchor, b.anchor); });
  return out;
}

// Inverse of identify_sprites: paint the background, then every sprite.
// Rejects overlapping, out-of-bounds, or background-colored sprite pixels.
inline Frame reconstruct(const SpriteDecomposition& d) {
  Frame f(d.width, d.height, d.background);
  std::vector<std::uint8_t> owned(f.size(), 0);
  for (const Sprite& s : d.sprites) {
    if (s.pixels.empty()) throw InvariantError("sprite with no pixels");
    if (s.color == d.background) throw InvariantError("sprite has the background color");
    for (Point p : s.pixels) {
      if (!f.contains(p.x, p.y)) {
        throw InvariantError("sprite pixel (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                             ") out of bounds");
      }
      auto& o = owned[static_cast<std::size_t>(p.y) * d.width + p.x];
      if (o) {
        throw InvariantError("sprites overlap at (" + std::to_string(p.x) + "," +
                             std::to_string(p.y) + ")");
      }
      o = 1;
      f.set(p.x, p.y, s.color);
    }
  }
  return f;
}

inline std::string color_hex(Color c) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s = "#";
  for (std::uint8_t ch : {c.r, c.g, c.b}) {
    s.push_back(kDigits[ch >> 4]);
    s.push_back(kDigits[ch & 0xF]);
  }
  return s;
}

// Debug record: a header line, then one line per sprite.
inline std::string to_record(const SpriteDecomposition& d) {
  std::ostringstream os;
  os << "decomposition " << d.width << "x" << d.height << " background=" << color_hex(d.background)
     << " sprites=" << d.sprites.size() << "\n";
  for (const Sprite& s : d.sprites) {
    os << "sprite sig=" << signature_hex(s.signature) << " color=" << color_hex(s.color)
       << " anchor=" << s.anchor.x << "," << s.anchor.y << " pixels=" << s.pixels.size() << "\n";
  }
  return os.str();
}

}  // namespace spritetree
