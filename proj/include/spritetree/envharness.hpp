#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spritetree/errors.hpp"
#include "spritetree/features.hpp"
#include "spritetree/pixelgrid.hpp"
#include "spritetree/random.hpp"
#include "spritetree/sprites.hpp"

namespace spritetree {

enum class GameId { kMiniPong, kMiniBreakout };

inline std::string to_string(GameId g) {
  return g == GameId::kMiniPong ? "mini-pong" : "mini-breakout";
}

inline GameId parse_game(const std::string& s) {
  if (s == "mini-pong") return GameId::kMiniPong;
  if (s == "mini-breakout") return GameId::kMiniBreakout;
  throw ConfigError("unknown game '" + s + "' (expected mini-pong or mini-breakout)");
}

// Raw screen geometry, matching the Atari frame size.
inline constexpr int kRawWidth = 160;
inline constexpr int kRawHeight = 210;
inline constexpr int kFrameSkip = 4;
inline constexpr int kDefaultEpisodeCap = 1000;
inline constexpr int kNoopAction = 0;

// Axis-aligned box in raw pixels; all coordinates stay even so that the
// stride-2 downsample maps it exactly onto a box of half the size.
struct Rect {
  int x = 0, y = 0, w = 0, h = 0;

  bool overlaps(const Rect& o) const noexcept {
    return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
  }
  Rect moved(int dx, int dy) const noexcept { return {x + dx, y + dy, w, h}; }
  Rect halved() const noexcept { return {x / 2, y / 2, w / 2, h / 2}; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

// True when two pixel boxes share a pixel or a 4-neighbor edge.
inline bool rects_touch(const Rect& a, const Rect& b) noexcept {
  const int gap_x = std::max(a.x, b.x) - std::min(a.x + a.w, b.x + b.w);
  const int gap_y = std::max(a.y, b.y) - std::min(a.y + a.h, b.y + b.h);
  return (gap_x < 0 && gap_y <= 0) || (gap_x <= 0 && gap_y < 0);
}

enum class EntityRole { kBall, kPaddle, kOpponent, kBrick };

struct Entity {
  EntityRole role;
  std::string label;
  Color color;
  Rect rect;
  bool alive = true;
};

struct StepResult {
  Frame observation;
  double reward = 0;
  bool done = false;
};

// Signature knowledge a scripted policy needs: which shapes are the ball
// and the player's paddle, and their sizes in observation pixels.
struct SpriteCatalog {
  std::map<SignatureHash, std::string> labels;
  std::set<SignatureHash> ball;
  std::set<SignatureHash> paddle;
  int ball_extent = 0;    // along the tracking axis, observation pixels
  int paddle_extent = 0;  // along the tracking axis, observation pixels
  bool track_vertical = true;
};

// Small Atari-style game rendered at 210x160 and observed at 105x80 after
// max-pooling raw frames 3 and 4 of every 4-frame skip.
class MiniEnv {
 public:
  MiniEnv(GameId game, std::uint64_t seed) : game_(game) { reset(seed); }

  GameId game() const noexcept { return game_; }
  int action_count() const noexcept { return 3; }
  std::vector<std::string> action_names() const {
    if (game_ == GameId::kMiniPong) return {"noop", "up", "down"};
    return {"noop", "left", "right"};
  }

  Frame reset(std::uint64_t seed) {
    rng_.seed(seed);
    entities_.clear();
    done_ = false;
    score_player_ = score_opponent_ = 0;
    lives_ = 5;
    opponent_tick_ = 0;
    if (game_ == GameId::kMiniPong) {
      entities_.push_back({EntityRole::kBall, "Ball", kPongWhite, {0, 0, 4, 4}, false});
      entities_.push_back({EntityRole::kPaddle, "Paddle", kPongWhite, {140, 92, 4, 24}, true});
      entities_.push_back({EntityRole::kOpponent, "Opponent", kPongOrange, {16, 98, 4, 12}, true});
    } else {
      entities_.push_back({EntityRole::kBall, "Ball", kBreakoutRed, {0, 0, 4, 4}, false});
      entities_.push_back({EntityRole::kPaddle, "Paddle", kBreakoutRed, {68, 190, 24, 4}, true});
      for (int row = 0; row < 3; ++row) {
        for (int i = 0; i < kBricksPerRow; ++i) {
          entities_.push_back({EntityRole::kBrick, "Brick row " + std::to_string(row + 1),
                               kBrickColors[row], {8 + 20 * i, 40 + 8 * row, 16, 4}, true});
        }
      }
    }
    spawn_ball();
    frame3_ = frame4_ = snapshot();
    return observe();
  }

  bool done() const noexcept { return done_; }

  // Repeats `action` for four raw frames; the observation is
  // downsample(framemax(raw frame 3, raw frame 4)).
  StepResult step(int action) {
    if (done_) throw EnvError("step called on a finished episode");
    if (action < 0 || action >= action_count()) {
      throw EnvError("action " + std::to_string(action) + " out of range");
    }
    double reward = 0;
    if (!ball().alive) spawn_ball();
    for (int raw = 1; raw <= kFrameSkip; ++raw) {
      if (!done_) reward += advance_raw_frame(action);
      if (raw == 3) frame3_ = snapshot();
      if (raw == 4) frame4_ = snapshot();
    }
    return {observe(), reward, done_};
  }

  // Internal ball box in raw pixels (alive or not).
  Rect ball_rect() const { return ball().rect; }
  Rect paddle_rect() const { return entity(EntityRole::kPaddle).rect; }
  bool ball_alive() const { return ball().alive; }
  void set_ball(Rect r, int vx, int vy) {
    Entity& b = ball_mut();
    b.rect = r;
    b.alive = true;
    ball_vx_ = vx;
    ball_vy_ = vy;
  }

  // Entities visible in the latest observation (alive in raw frame 3 or 4).
  std::size_t live_entity_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < entities_.size(); ++i) n += frame3_[i].alive || frame4_[i].alive;
    return n;
  }

  // Connected components the latest observation must contain, derived from
  // entity geometry alone: same-colored entities whose observed boxes touch
  // form one component.
  std::size_t expected_sprite_count() const { return components().size(); }

  // Whether the ball and the same-colored paddle fused into one component
  // in the latest observation.
  bool ball_paddle_merged() const {
    const auto comps = components();
    const std::size_t ball_i = index_of(EntityRole::kBall);
    const std::size_t pad_i = index_of(EntityRole::kPaddle);
    for (const auto& c : comps) {
      const bool has_ball = std::find(c.begin(), c.end(), ball_i) != c.end();
      const bool has_pad = std::find(c.begin(), c.end(), pad_i) != c.end();
      if (has_ball && has_pad) return true;
    }
    return false;
  }

  std::vector<Color> palette() const {
    std::vector<Color> p{kBackground};
    for (const Entity& e : entities_) p.push_back(e.color);
    return p;
  }

  SpriteCatalog catalog() const {
    SpriteCatalog cat;
    cat.track_vertical = game_ == GameId::kMiniPong;
    const std::vector<Point> ball_moves{{0, 0}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
    // Paddles move up to kPaddleSpeed raw pixels per raw frame; clamping at
    // the screen edge can shorten a move.
    std::vector<Point> paddle_moves{{0, 0}};
    for (int d = 1; d <= kPaddleSpeed / 2; ++d) {
      for (int sign : {-1, 1}) {
        paddle_moves.push_back(cat.track_vertical ? Point{0, sign * d} : Point{sign * d, 0});
      }
    }
    for (const Entity& e : entities_) {
      const Rect r = e.rect.halved();
      std::vector<Point> moves{{0, 0}};
      if (e.role == EntityRole::kBall) moves = ball_moves;
      if (e.role == EntityRole::kPaddle || e.role == EntityRole::kOpponent) moves = paddle_moves;
      for (Point d : moves) {
        const SignatureHash sig = swept_signature(e.color, r.w, r.h, d);
        cat.labels[sig] = e.label;
        if (e.role == EntityRole::kBall) cat.ball.insert(sig);
        if (e.role == EntityRole::kPaddle) cat.paddle.insert(sig);
      }
      if (e.role == EntityRole::kBall) cat.ball_extent = cat.track_vertical ? r.h : r.w;
      if (e.role == EntityRole::kPaddle) cat.paddle_extent = cat.track_vertical ? r.h : r.w;
    }
    return cat;
  }

 private:
  static constexpr Color kBackground{0, 0, 0};
  static constexpr Color kPongWhite{236, 236, 236};
  static constexpr Color kPongOrange{213, 130, 74};
  static constexpr Color kBreakoutRed{200, 72, 72};
  static constexpr std::array<Color, 3> kBrickColors{
      {Color{66, 72, 200}, Color{72, 160, 72}, Color{162, 162, 42}}};
  static constexpr int kBricksPerRow = 7;
  static constexpr int kPointsToWin = 60;
  static constexpr int kBallSpeed = 2;
  static constexpr int kPaddleSpeed = 4;
  static constexpr int kOpponentSpeed = 2;

  struct Snapshot {
    Rect rect;
    bool alive;
  };

  // Signature of a w x h box unioned with itself shifted by d.
  static SignatureHash swept_signature(Color c, int w, int h, Point d) {
    std::set<std::pair<int, int>> px;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        px.insert({x, y});
        px.insert({x + d.x, y + d.y});
      }
    }
    std::vector<Point> pts;
    for (auto [x, y] : px) pts.push_back({x, y});
    return shape_signature(c, std::move(pts));
  }

  std::size_t index_of(EntityRole role) const {
    for (std::size_t i = 0; i < entities_.size(); ++i) {
      if (entities_[i].role == role) return i;
    }
    throw EnvError("entity role not present in this game");
  }
  const Entity& entity(EntityRole role) const { return entities_[index_of(role)]; }
  const Entity& ball() const { return entity(EntityRole::kBall); }
  Entity& ball_mut() { return entities_[index_of(EntityRole::kBall)]; }

  std::vector<Snapshot> snapshot() const {
    std::vector<Snapshot> s;
    s.reserve(entities_.size());
    for (const Entity& e : entities_) s.push_back({e.rect, e.alive});
    return s;
  }

  Frame render(const std::vector<Snapshot>& snap) const {
    Frame f(kRawWidth, kRawHeight, kBackground);
    for (std::size_t i = 0; i < entities_.size(); ++i) {
      if (!snap[i].alive) continue;
      const Rect& r = snap[i].rect;
      f.fill_rect(r.x, r.y, r.w, r.h, entities_[i].color);
    }
    return f;
  }

  Frame observe() const { return downsample(framemax(render(frame3_), render(frame4_))); }

  // Groups of entity indices forming one connected component in the latest
  // observation.
  std::vector<std::vector<std::size_t>> components() const {
    const std::size_t n = entities_.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    auto pieces = [&](std::size_t i) {
      std::vector<Rect> p;
      if (frame3_[i].alive) p.push_back(frame3_[i].rect.halved());
      if (frame4_[i].alive) p.push_back(frame4_[i].rect.halved());
      return p;
    };
    for (std::size_t i = 0; i < n; ++i) {
      const auto pi = pieces(i);
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!(entities_[i].color == entities_[j].color)) continue;
        bool touch = false;
        for (const Rect& a : pieces(j)) {
          for (const Rect& b : pi) touch = touch || rects_touch(a, b);
        }
        if (touch) parent[find(i)] = find(j);
      }
    }
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) {
      if (frame3_[i].alive || frame4_[i].alive) groups[find(i)].push_back(i);
    }
    std::vector<std::vector<std::size_t>> out;
    for (auto& [root, members] : groups) out.push_back(std::move(members));
    return out;
  }

  void spawn_ball() {
    Entity& b = ball_mut();
    const int dir = uniform_index(rng_, 2) == 0 ? -kBallSpeed : kBallSpeed;
    const int dir2 = uniform_index(rng_, 2) == 0 ? -kBallSpeed : kBallSpeed;
    if (game_ == GameId::kMiniPong) {
      const int y = 40 + 2 * static_cast<int>(uniform_index(rng_, 60));
      b.rect = {78, y, 4, 4};
      ball_vx_ = dir;
      ball_vy_ = dir2;
    } else {
      const int x = 20 + 2 * static_cast<int>(uniform_index(rng_, 60));
      b.rect = {x, 100, 4, 4};
      ball_vx_ = dir;
      ball_vy_ = kBallSpeed;
    }
    b.alive = true;
  }

  bool blocked_for_paddle(const Rect& r, std::size_t self) const {
    for (std::size_t i = 0; i < entities_.size(); ++i) {
      if (i == self || !entities_[i].alive) continue;
      if (r.overlaps(entities_[i].rect)) return true;
      if (entities_[i].role == EntityRole::kBall && r.overlaps(ball_prev_)) return true;
    }
    return false;
  }

  void move_paddle(std::size_t idx, int dx, int dy) {
    Entity& p = entities_[idx];
    Rect next = p.rect.moved(dx, dy);
    next.x = std::clamp(next.x, 0, kRawWidth - next.w);
    next.y = std::clamp(next.y, 0, kRawHeight - next.h);
    if (!blocked_for_paddle(next, idx)) p.rect = next;
  }

  // Solid obstacles for the ball: paddles and bricks. Paddles only move after
  // the ball within a raw frame, so their current box is also the box shown
  // in the previous raw frame.
  bool ball_hits(const Rect& r, std::vector<std::size_t>* bricks_hit) const {
    bool hit = false;
    for (std::size_t i = 0; i < entities_.size(); ++i) {
      const Entity& e = entities_[i];
      if (!e.alive || e.role == EntityRole::kBall) continue;
      if (r.overlaps(e.rect)) {
        hit = true;
        if (bricks_hit && e.role == EntityRole::kBrick) bricks_hit->push_back(i);
      }
    }
    return hit;
  }

  double advance_ball() {
    Entity& b = ball_mut();
    ball_prev_ = b.rect;
    if (!b.alive) return 0;
    double reward = 0;
    const Rect cur = b.rect;
    const Rect next = cur.moved(ball_vx_, ball_vy_);

    // A ball that has slipped past a paddle's front face is lost; letting it
    // bounce on can wedge it between the paddle and a wall.
    const Rect& pad = entity(EntityRole::kPaddle).rect;
    if (game_ == GameId::kMiniBreakout && cur.y + cur.h > pad.y) {
      b.alive = false;
      if (--lives_ == 0) done_ = true;
      return 0;
    }
    if (game_ == GameId::kMiniPong) {
      const Rect& opp = entity(EntityRole::kOpponent).rect;
      const bool player_missed = cur.x + cur.w > pad.x;
      if (player_missed || cur.x < opp.x + opp.w) {
        b.alive = false;
        if (player_missed) {
          ++score_opponent_;
          reward = -1;
        } else {
          ++score_player_;
          reward = 1;
        }
        if (score_player_ >= kPointsToWin || score_opponent_ >= kPointsToWin) done_ = true;
        return reward;
      }
    }

    bool flip_x = false, flip_y = false;
    if (next.y < 0 || next.y + next.h > kRawHeight) flip_y = true;
    if (next.x < 0 || next.x + next.w > kRawWidth) flip_x = true;

    std::vector<std::size_t> bricks;
    bool paddle_hit = false;
    if (!flip_x && !flip_y && ball_hits(next, &bricks)) {
      const bool hit_x = ball_hits(cur.moved(ball_vx_, 0), nullptr);
      const bool hit_y = ball_hits(cur.moved(0, ball_vy_), nullptr);
      flip_x = hit_x || !hit_y;
      flip_y = hit_y || !hit_x;
      for (std::size_t i : bricks) {
        entities_[i].alive = false;
        reward += 1;
      }
      paddle_hit = next.overlaps(entity(EntityRole::kPaddle).rect);
      if (game_ == GameId::kMiniBreakout &&
          std::none_of(entities_.begin(), entities_.end(), [](const Entity& e) {
            return e.role == EntityRole::kBrick && e.alive;
          })) {
        done_ = true;
      }
    }
    if (flip_x) ball_vx_ = -ball_vx_;
    if (flip_y) ball_vy_ = -ball_vy_;
    if (paddle_hit) steer_off_paddle(entity(EntityRole::kPaddle).rect, cur, flip_x, flip_y);
    if (!flip_x && !flip_y) b.rect = next;
    return reward;
  }

  // A face hit on the paddle's outer thirds steers the ball along the
  // paddle's axis.
  void steer_off_paddle(const Rect& pad, const Rect& ball_box, bool flip_x, bool flip_y) {
    if (game_ == GameId::kMiniPong && flip_x && !flip_y) {
      const int rel = (ball_box.y + ball_box.h / 2) - pad.y;
      if (rel < pad.h / 3) ball_vy_ = -kBallSpeed;
      else if (rel >= 2 * pad.h / 3) ball_vy_ = kBallSpeed;
    } else if (game_ == GameId::kMiniBreakout && flip_y && !flip_x) {
      const int rel = (ball_box.x + ball_box.w / 2) - pad.x;
      if (rel < pad.w / 3) ball_vx_ = -kBallSpeed;
      else if (rel >= 2 * pad.w / 3) ball_vx_ = kBallSpeed;
    }
  }

  double advance_raw_frame(int action) {
    const double reward = advance_ball();

    const std::size_t pad = index_of(EntityRole::kPaddle);
    const int dir = action == 1 ? -kPaddleSpeed : action == 2 ? kPaddleSpeed : 0;
    if (dir != 0) {
      if (game_ == GameId::kMiniPong) move_paddle(pad, 0, dir);
      else move_paddle(pad, dir, 0);
    }

    if (game_ == GameId::kMiniPong) {
      // The opponent chases the ball on every other raw frame, so it lags
      // behind and concedes points.
      const std::size_t opp = index_of(EntityRole::kOpponent);
      if (++opponent_tick_ % 2 == 0 && ball().alive) {
        const Rect& o = entities_[opp].rect;
        const int target = ball().rect.y + ball().rect.h / 2;
        const int centre = o.y + o.h / 2;
        if (target < centre - 2) move_paddle(opp, 0, -kOpponentSpeed);
        else if (target > centre + 2) move_paddle(opp, 0, kOpponentSpeed);
      }
    }
    return reward;
  }

  GameId game_;
  Rng rng_;
  std::vector<Entity> entities_;
  std::vector<Snapshot> frame3_, frame4_;
  Rect ball_prev_;
  int ball_vx_ = 0, ball_vy_ = 0;
  int score_player_ = 0, score_opponent_ = 0;
  int lives_ = 5;
  int opponent_tick_ = 0;
  bool done_ = false;
};

// --- Target policies -----------------------------------------------------------

struct PlacedSprite {
  SignatureHash signature = 0;
  Point anchor;
};

// Sprites ordered by (signature, anchor x, anchor y): the same order the
// feature slots use, so both views pick the same instance first.
using SpriteConfiguration = std::vector<PlacedSprite>;

inline SpriteConfiguration configuration_of(const SpriteDecomposition& d) {
  SpriteConfiguration c;
  for (const Sprite& s : d.sprites) c.push_back({s.signature, s.anchor});
  std::sort(c.begin(), c.end(), [](const PlacedSprite& a, const PlacedSprite& b) {
    return a.signature != b.signature ? a.signature < b.signature
                                      : anchor_less(a.anchor, b.anchor);
  });
  return c;
}

inline SpriteConfiguration configuration_of(const SymbolicState& s, const FeatureSchema& schema) {
  if (s.values.size() != schema.feature_count()) throw SchemaError("state does not match schema");
  SpriteConfiguration c;
  for (std::size_t slot = 0; slot < schema.slots().size(); ++slot) {
    if (s.values[schema.feature_index(slot, FeatureKind::kPresent)] == 0.0) continue;
    c.push_back({schema.slots()[slot].signature,
                 {static_cast<int>(s.values[schema.feature_index(slot, FeatureKind::kX)]),
                  static_cast<int>(s.values[schema.feature_index(slot, FeatureKind::kY)])}});
  }
  return c;
}

enum class PolicyKind { kScriptedTracker, kScriptedEpsilon };

inline std::string to_string(PolicyKind p) {
  return p == PolicyKind::kScriptedTracker ? "scripted-tracker" : "scripted-epsilon";
}

inline PolicyKind parse_policy(const std::string& s) {
  if (s == "scripted-tracker") return PolicyKind::kScriptedTracker;
  if (s == "scripted-epsilon") return PolicyKind::kScriptedEpsilon;
  throw ConfigError("unknown policy '" + s + "' (expected scripted-tracker or scripted-epsilon)");
}

// Stand-in for the trained agent. The tracker moves the paddle toward the
// ball along the game's axis when their centres differ by more than the
// deadzone; the epsilon variant replaces that choice with a uniform random
// action with probability epsilon.
class TargetPolicy {
 public:
  TargetPolicy(PolicyKind kind, SpriteCatalog catalog, int deadzone = 2, double epsilon = 0.1)
      : kind_(kind), catalog_(std::move(catalog)), deadzone_(deadzone), epsilon_(epsilon) {
    if (deadzone_ < 0) throw ConfigError("deadzone must be non-negative");
    if (epsilon_ < 0 || epsilon_ > 1) throw ConfigError("epsilon must be in [0, 1]");
  }

  PolicyKind kind() const noexcept { return kind_; }
  const SpriteCatalog& catalog() const noexcept { return catalog_; }

  int greedy_action(const SpriteConfiguration& config) const {
    const PlacedSprite* ball = nullptr;
    const PlacedSprite* paddle = nullptr;
    for (const PlacedSprite& s : config) {
      if (!ball && catalog_.ball.count(s.signature)) ball = &s;
      if (!paddle && catalog_.paddle.count(s.signature)) paddle = &s;
    }
    if (!ball || !paddle) return kNoopAction;
    const auto coord = [&](const PlacedSprite& s) {
      return catalog_.track_vertical ? s.anchor.y : s.anchor.x;
    };
    // Compare doubled centres to stay in integers.
    const int diff = (2 * coord(*ball) + catalog_.ball_extent) -
                     (2 * coord(*paddle) + catalog_.paddle_extent);
    if (diff > 2 * deadzone_) return 2;
    if (diff < -2 * deadzone_) return 1;
    return kNoopAction;
  }

  int act(const SpriteConfiguration& config, Rng& rng) const {
    if (kind_ == PolicyKind::kScriptedEpsilon && uniform_unit(rng) < epsilon_) {
      return static_cast<int>(uniform_index(rng, 3));
    }
    return greedy_action(config);
  }

 private:
  PolicyKind kind_;
  SpriteCatalog catalog_;
  int deadzone_;
  double epsilon_;
};

// --- Trajectory sampling -------------------------------------------------------

struct SamplingOptions {
  int noop_start = 0;
  bool sticky = false;
  double zeta = 0.25;
  std::uint64_t seed = 0;
  int max_steps = kDefaultEpisodeCap;

  void validate() const {
    if (noop_start < 0 || noop_start > 29) {
      throw ConfigError("noop start must be in [0, 29], got " + std::to_string(noop_start));
    }
    if (!(zeta >= 0 && zeta < 1)) throw ConfigError("zeta must be in [0, 1)");
    if (max_steps <= 0) throw ConfigError("max_steps must be positive");
  }
};

struct Trajectory {
  GameId game = GameId::kMiniPong;
  int noop_start = 0;
  bool sticky = false;
  double zeta = 0;
  std::uint64_t seed = 0;
  std::vector<Frame> frames;         // observation the decision was made on
  std::vector<int> actions;          // executed
  std::vector<int> agent_actions;    // policy's choice before sticky substitution
  std::vector<double> rewards;
  std::vector<std::uint8_t> substituted;

  std::size_t size() const noexcept { return frames.size(); }
};

// Reset, run k noops without consulting the policy, then record
// (observation, executed action) until the episode ends or hits the cap.
// With sticky actions the previously executed action replaces the policy's
// choice with probability zeta.
inline Trajectory sample_trajectory(GameId game, const TargetPolicy& policy,
                                    const SamplingOptions& opt) {
  opt.validate();
  MiniEnv env(game, mix_seed(opt.seed, 0));
  Rng agent_rng(mix_seed(opt.seed, 1));
  Rng sticky_rng(mix_seed(opt.seed, 2));

  Trajectory tr;
  tr.game = game;
  tr.noop_start = opt.noop_start;
  tr.sticky = opt.sticky;
  tr.zeta = opt.zeta;
  tr.seed = opt.seed;

  Frame obs = env.reset(mix_seed(opt.seed, 0));
  for (int i = 0; i < opt.noop_start && !env.done(); ++i) obs = env.step(kNoopAction).observation;

  int previous = kNoopAction;
  while (!env.done() && static_cast<int>(tr.size()) < opt.max_steps) {
    const int intended = policy.act(configuration_of(identify_sprites(obs)), agent_rng);
    int executed = intended;
    bool swapped = false;
    if (opt.sticky && uniform_unit(sticky_rng) < opt.zeta) {
      executed = previous;
      swapped = true;
    }
    StepResult r = env.step(executed);
    tr.frames.push_back(std::move(obs));
    tr.actions.push_back(executed);
    tr.agent_actions.push_back(intended);
    tr.rewards.push_back(r.reward);
    tr.substituted.push_back(swapped ? 1 : 0);
    previous = executed;
    obs = std::move(r.observation);
  }
  return tr;
}

// One trajectory per noop start in [k_from, k_to]; seeds derive from
// (seed, k).
inline std::vector<Trajectory> sample_suite(GameId game, const TargetPolicy& policy, int k_from,
                                            int k_to, const SamplingOptions& base) {
  if (k_from > k_to) throw ConfigError("noop range is empty");
  std::vector<Trajectory> out;
  for (int k = k_from; k <= k_to; ++k) {
    SamplingOptions opt = base;
    opt.noop_start = k;
    opt.seed = mix_seed(base.seed, 1000 + static_cast<std::uint64_t>(k));
    out.push_back(sample_trajectory(game, policy, opt));
  }
  return out;
}

inline DecomposedTrajectory decompose(const Trajectory& tr) {
  DecomposedTrajectory d;
  d.id = tr.noop_start;
  d.frames.reserve(tr.size());
  for (const Frame& f : tr.frames) d.frames.push_back(identify_sprites(f));
  d.actions = tr.actions;
  return d;
}

// --- Trajectory directories ----------------------------------------------------
//
//   <dir>/manifest        key=value lines
//   <dir>/actions         step,executed,intended,reward
//   <dir>/frame_NNNNN.ppm one observation per step

struct TrajectoryManifest {
  std::string game;
  std::string policy;
  int noop_start = 0;
  bool sticky = false;
  double zeta = 0;
  std::uint64_t seed = 0;
  std::size_t length = 0;
};

inline std::string frame_filename(std::size_t step) {
  std::string n = std::to_string(step);
  return "frame_" + std::string(n.size() < 5 ? 5 - n.size() : 0, '0') + n + ".ppm";
}

inline void write_trajectory(const Trajectory& tr, const std::string& policy_name,
                             const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir / "manifest", std::ios::binary | std::ios::trunc);
    if (!m) throw Error("cannot write manifest in " + dir.string());
    m << "game=" << to_string(tr.game) << "\n"
      << "policy=" << policy_name << "\n"
      << "k=" << tr.noop_start << "\n"
      << "sticky=" << (tr.sticky ? 1 : 0) << "\n"
      << "zeta=" << format_number(tr.zeta) << "\n"
      << "seed=" << tr.seed << "\n"
      << "length=" << tr.size() << "\n";
  }
  {
    std::ofstream a(dir / "actions", std::ios::binary | std::ios::trunc);
    if (!a) throw Error("cannot write actions in " + dir.string());
    a << "step,executed,intended,reward\n";
    for (std::size_t i = 0; i < tr.size(); ++i) {
      a << i << "," << tr.actions[i] << "," << tr.agent_actions[i] << ","
        << format_number(tr.rewards[i]) << "\n";
    }
  }
  for (std::size_t i = 0; i < tr.size(); ++i) write_image(tr.frames[i], (dir / frame_filename(i)).string());
}

inline TrajectoryManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest");
  if (!in) throw Error("missing manifest in " + dir.string());
  TrajectoryManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "game") m.game = value;
    else if (key == "policy") m.policy = value;
    else if (key == "k") m.noop_start = static_cast<int>(parse_number(value, lineno));
    else if (key == "sticky") m.sticky = value == "1";
    else if (key == "zeta") m.zeta = parse_number(value, lineno);
    else if (key == "seed") m.seed = std::stoull(value);
    else if (key == "length") m.length = static_cast<std::size_t>(parse_number(value, lineno));
  }
  return m;
}

// Loads the action table and, when `with_frames`, every frame file.
inline Trajectory read_trajectory(const std::filesystem::path& dir, bool with_frames = true) {
  const TrajectoryManifest m = read_manifest(dir);
  Trajectory tr;
  tr.game = parse_game(m.game);
  tr.noop_start = m.noop_start;
  tr.sticky = m.sticky;
  tr.zeta = m.zeta;
  tr.seed = m.seed;

  std::ifstream a(dir / "actions");
  if (!a) throw Error("missing actions table in " + dir.string());
  std::string line;
  std::getline(a, line);
  std::size_t lineno = 1;
  while (std::getline(a, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 4) throw ParseError("bad actions row in " + dir.string(), lineno);
    tr.actions.push_back(static_cast<int>(parse_number(cells[1], lineno)));
    tr.agent_actions.push_back(static_cast<int>(parse_number(cells[2], lineno)));
    tr.rewards.push_back(parse_number(cells[3], lineno));
    tr.substituted.push_back(0);
  }
  if (tr.actions.size() != m.length) {
    throw InvariantError("trajectory " + dir.string() + ": manifest length " +
                         std::to_string(m.length) + " but " + std::to_string(tr.actions.size()) +
                         " action rows");
  }
  if (with_frames) {
    for (std::size_t i = 0; i < m.length; ++i) tr.frames.push_back(read_image((dir / frame_filename(i)).string()));
  }
  return tr;
}

}  // namespace spritetree
