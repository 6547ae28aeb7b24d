#pragma once

// Shared helpers for the unit tests and the acceptance suite: random frame
// generation, an independent component labeler, and a few tiny builders.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "spritetree/features.hpp"
#include "spritetree/pixelgrid.hpp"
#include "spritetree/random.hpp"
#include "spritetree/sprites.hpp"
#include "spritetree/trees.hpp"

namespace testsupport {

using namespace spritetree;

// Frame whose background covers at least `min_background` of the pixels,
// decorated with random single-color blobs (rectangles and random walks)
// from a small palette, so same-colored blobs often touch and merge.
inline Frame random_blob_frame(Rng& rng, int w, int h, double min_background = 0.6) {
  static const std::vector<Color> palette{{0, 0, 0},     {255, 255, 255}, {200, 72, 72},
                                          {66, 72, 200}, {72, 160, 72},   {162, 162, 42},
                                          {236, 236, 236}};
  const Color bg = palette[uniform_index(rng, palette.size())];
  Frame f(w, h, bg);
  const auto budget = static_cast<std::size_t>((1.0 - min_background) * static_cast<double>(w * h));
  std::size_t painted = 0;
  const int blobs = 1 + static_cast<int>(uniform_index(rng, 12));
  for (int b = 0; b < blobs; ++b) {
    Color c = bg;
    while (c == bg) c = palette[uniform_index(rng, palette.size())];
    std::vector<std::pair<int, int>> cells;
    if (uniform_index(rng, 2) == 0) {
      const int bw = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(std::max(1, w / 3))));
      const int bh = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(std::max(1, h / 3))));
      const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(w)));
      const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(h)));
      for (int y = y0; y < std::min(h, y0 + bh); ++y) {
        for (int x = x0; x < std::min(w, x0 + bw); ++x) cells.push_back({x, y});
      }
    } else {
      int x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(w)));
      int y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(h)));
      const int steps = 1 + static_cast<int>(uniform_index(rng, 40));
      for (int s = 0; s < steps; ++s) {
        cells.push_back({x, y});
        switch (uniform_index(rng, 4)) {
          case 0: x = std::min(w - 1, x + 1); break;
          case 1: x = std::max(0, x - 1); break;
          case 2: y = std::min(h - 1, y + 1); break;
          default: y = std::max(0, y - 1); break;
        }
      }
    }
    std::size_t fresh = 0;
    for (auto [x, y] : cells) fresh += f.at(x, y) == bg;
    if (painted + fresh > budget) continue;
    for (auto [x, y] : cells) f.set(x, y, c);
    painted += fresh;
  }
  return f;
}

// Union-find labeling of 4-connected same-colored non-background pixels.
// Returns each component as a sorted set of (x, y).
inline std::vector<std::set<std::pair<int, int>>> oracle_components(const Frame& f, Color bg) {
  const int w = f.width(), h = f.height();
  std::vector<std::size_t> parent(static_cast<std::size_t>(w * h));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  auto id = [w](int x, int y) { return static_cast<std::size_t>(y * w + x); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (f.at(x, y) == bg) continue;
      if (x + 1 < w && f.at(x + 1, y) == f.at(x, y)) parent[find(id(x, y))] = find(id(x + 1, y));
      if (y + 1 < h && f.at(x, y + 1) == f.at(x, y)) parent[find(id(x, y))] = find(id(x, y + 1));
    }
  }
  std::map<std::size_t, std::set<std::pair<int, int>>> groups;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!(f.at(x, y) == bg)) groups[find(id(x, y))].insert({x, y});
    }
  }
  std::vector<std::set<std::pair<int, int>>> out;
  for (auto& [root, g] : groups) out.push_back(std::move(g));
  std::sort(out.begin(), out.end());
  return out;
}

inline std::set<std::pair<int, int>> pixel_set(const Sprite& s) {
  std::set<std::pair<int, int>> out;
  for (Point p : s.pixels) out.insert({p.x, p.y});
  return out;
}

// Plurality color by direct counting, smallest packed value on ties.
inline Color oracle_background(const Frame& f) {
  std::vector<std::pair<std::uint32_t, std::size_t>> counts;
  for (Color c : f.pixels()) {
    auto it = std::find_if(counts.begin(), counts.end(),
                           [&](const auto& e) { return e.first == c.value(); });
    if (it == counts.end()) counts.push_back({c.value(), 1});
    else ++it->second;
  }
  auto best = counts.front();
  for (const auto& e : counts) {
    if (e.second > best.second || (e.second == best.second && e.first < best.first)) best = e;
  }
  return Color::from_value(best.first);
}

// Dataset over `m` integer-valued features with labels from `label_of`.
template <class LabelFn>
LabeledDataset grid_dataset(std::size_t m, int classes, std::size_t rows, Rng& rng, int max_value,
                            LabelFn label_of) {
  std::vector<Slot> slots;
  // One slot gives five columns; the schema is only used for its size here.
  const std::size_t nslots = (m + kFeaturesPerSlot - 1) / kFeaturesPerSlot;
  for (std::size_t s = 0; s < nslots; ++s) slots.push_back({static_cast<SignatureHash>(s + 1), 0});
  LabeledDataset d{FeatureSchema(slots, false, classes), {}, "synthetic"};
  for (std::size_t i = 0; i < rows; ++i) {
    DatasetRow r;
    r.state.values.assign(d.schema.feature_count(), 0.0);
    for (std::size_t f = 0; f < m; ++f) {
      r.state.values[f] = static_cast<double>(uniform_index(rng, static_cast<std::uint64_t>(max_value + 1)));
    }
    r.label = label_of(r.state.values, rng);
    r.traj = static_cast<int>(i % 30);
    r.t = static_cast<int>(i);
    d.rows.push_back(std::move(r));
  }
  return d;
}

}  // namespace testsupport
