#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spritetree/errors.hpp"
#include "spritetree/sprites.hpp"

namespace spritetree {

// Features emitted for each sprite slot, in column order.
enum class FeatureKind { kPresent = 0, kX = 1, kY = 2, kVx = 3, kVy = 4 };
inline constexpr std::size_t kFeaturesPerSlot = 5;

inline const char* feature_kind_suffix(FeatureKind k) {
  switch (k) {
    case FeatureKind::kPresent: return "present";
    case FeatureKind::kX: return "x";
    case FeatureKind::kY: return "y";
    case FeatureKind::kVx: return "vx";
    case FeatureKind::kVy: return "vy";
  }
  return "?";
}

inline const char* feature_kind_title(FeatureKind k) {
  switch (k) {
    case FeatureKind::kPresent: return "present";
    case FeatureKind::kX: return "X position";
    case FeatureKind::kY: return "Y position";
    case FeatureKind::kVx: return "X velocity";
    case FeatureKind::kVy: return "Y velocity";
  }
  return "?";
}

// Shortest round-trip decimal form; used by every text format here.
inline std::string format_number(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double parse_number(const std::string& s, std::size_t line) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ParseError("bad number '" + s + "' on line " + std::to_string(line), line);
  }
  return v;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

struct Slot {
  SignatureHash signature = 0;
  int instance = 0;
  friend bool operator==(const Slot&, const Slot&) = default;
};

// Fixed feature layout: five columns per (signature, instance) slot plus an
// optional trailing last-action column.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  FeatureSchema(std::vector<Slot> slots, bool include_last_action, int action_count)
      : slots_(std::move(slots)), include_last_action_(include_last_action),
        action_count_(action_count) {
    if (action_count_ <= 0) throw SchemaError("action_count must be positive");
    std::sort(slots_.begin(), slots_.end(), [](const Slot& a, const Slot& b) {
      return a.signature != b.signature ? a.signature < b.signature : a.instance < b.instance;
    });
    slots_.erase(std::unique(slots_.begin(), slots_.end()), slots_.end());
  }

  std::span<const Slot> slots() const noexcept { return slots_; }
  bool include_last_action() const noexcept { return include_last_action_; }
  int action_count() const noexcept { return action_count_; }

  std::size_t feature_count() const noexcept {
    return slots_.size() * kFeaturesPerSlot + (include_last_action_ ? 1 : 0);
  }
  std::size_t feature_index(std::size_t slot, FeatureKind k) const noexcept {
    return slot * kFeaturesPerSlot + static_cast<std::size_t>(k);
  }
  std::size_t last_action_index() const {
    if (!include_last_action_) throw SchemaError("schema has no last-action column");
    return slots_.size() * kFeaturesPerSlot;
  }
  // Slot owning a feature column, or nullopt for the last-action column.
  std::optional<std::size_t> slot_of_feature(std::size_t feature) const noexcept {
    if (feature >= slots_.size() * kFeaturesPerSlot) return std::nullopt;
    return feature / kFeaturesPerSlot;
  }

  std::optional<std::size_t> find_slot(SignatureHash sig, int instance) const {
    auto it = std::lower_bound(slots_.begin(), slots_.end(), Slot{sig, instance},
                               [](const Slot& a, const Slot& b) {
                                 return a.signature != b.signature ? a.signature < b.signature
                                                                   : a.instance < b.instance;
                               });
    if (it == slots_.end() || !(*it == Slot{sig, instance})) return std::nullopt;
    return static_cast<std::size_t>(it - slots_.begin());
  }

  // Human-readable names for signatures (e.g. "Paddle"); cosmetic only and
  // excluded from the schema hash.
  void set_label(SignatureHash sig, std::string name) {
    if (name.find_first_of(",\n") != std::string::npos) {
      throw SchemaError("sprite label may not contain ',' or newline: " + name);
    }
    labels_[sig] = std::move(name);
  }
  const std::map<SignatureHash, std::string>& labels() const noexcept { return labels_; }

  std::string slot_name(std::size_t slot) const {
    const Slot& s = slots_.at(slot);
    auto it = labels_.find(s.signature);
    std::string base = it != labels_.end() ? it->second : "Sprite " + signature_hex(s.signature).substr(0, 6);
    if (s.instance > 0) base += " #" + std::to_string(s.instance + 1);
    return base;
  }

  // Column header: <sigHash>_<idx>_<kind> or last_action.
  std::string column_name(std::size_t feature) const {
    if (auto slot = slot_of_feature(feature)) {
      const Slot& s = slots_[*slot];
      return signature_hex(s.signature) + "_" + std::to_string(s.instance) + "_" +
             feature_kind_suffix(static_cast<FeatureKind>(feature % kFeaturesPerSlot));
    }
    return "last_action";
  }

  // Display name used in tree exports and reports, e.g. "Paddle X position".
  std::string display_name(std::size_t feature) const {
    if (auto slot = slot_of_feature(feature)) {
      return slot_name(*slot) + " " +
             feature_kind_title(static_cast<FeatureKind>(feature % kFeaturesPerSlot));
    }
    return "Last action";
  }

  std::uint64_t hash() const {
    detail::Fnv1a h;
    h.add(static_cast<std::uint32_t>(slots_.size()));
    for (const Slot& s : slots_) {
      h.add(static_cast<std::uint32_t>(s.signature));
      h.add(static_cast<std::uint32_t>(s.signature >> 32));
      h.add_int(s.instance);
    }
    h.add(include_last_action_ ? 1u : 0u);
    h.add_int(action_count_);
    return h.value();
  }

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
    return a.slots_ == b.slots_ && a.include_last_action_ == b.include_last_action_ &&
           a.action_count_ == b.action_count_;
  }

 private:
  std::vector<Slot> slots_;
  bool include_last_action_ = false;
  int action_count_ = 1;
  std::map<SignatureHash, std::string> labels_;
};

struct SymbolicState {
  std::vector<double> values;
  friend bool operator==(const SymbolicState&, const SymbolicState&) = default;
};

// One slot per (signature, instance) up to the largest number of
// simultaneous instances of that signature in any single decomposition.
inline FeatureSchema build_schema(std::span<const SpriteDecomposition> corpus,
                                  bool include_last_action, int action_count) {
  if (corpus.empty()) throw SchemaError("cannot build a schema from an empty corpus");
  std::map<SignatureHash, int> max_count;
  for (const SpriteDecomposition& d : corpus) {
    std::map<SignatureHash, int> count;
    for (const Sprite& s : d.sprites) ++count[s.signature];
    for (const auto& [sig, n] : count) max_count[sig] = std::max(max_count[sig], n);
  }
  std::vector<Slot> slots;
  for (const auto& [sig, n] : max_count) {
    for (int i = 0; i < n; ++i) slots.push_back({sig, i});
  }
  return FeatureSchema(std::move(slots), include_last_action, action_count);
}

namespace detail {

// Slot index -> anchor for every sprite of `d` that has a slot. Instances of
// a signature take slots in (x, y) anchor order.
inline std::vector<std::optional<Point>> place_sprites(const SpriteDecomposition& d,
                                                       const FeatureSchema& schema,
                                                       std::size_t* dropped) {
  std::map<SignatureHash, std::vector<Point>> by_sig;
  for (const Sprite& s : d.sprites) by_sig[s.signature].push_back(s.anchor);
  std::vector<std::optional<Point>> placed(schema.slots().size());
  for (auto& [sig, anchors] : by_sig) {
    std::sort(anchors.begin(), anchors.end(), anchor_less);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      if (auto slot = schema.find_slot(sig, static_cast<int>(i))) {
        placed[*slot] = anchors[i];
      } else if (dropped) {
        ++*dropped;
      }
    }
  }
  return placed;
}

}  // namespace detail

// Symbolic feature vector for one observation. Velocities are anchor
// differences against `prev` for slots present in both frames, else 0.
// Sprites without a slot are skipped and counted in `*dropped`.
inline SymbolicState vectorize(const SpriteDecomposition& d, const SpriteDecomposition* prev,
                               const FeatureSchema& schema, std::optional<int> last_action,
                               std::size_t* dropped = nullptr) {
  if (schema.include_last_action() && !last_action) {
    throw SchemaError("schema expects a last action but none was given");
  }
  SymbolicState out;
  out.values.assign(schema.feature_count(), 0.0);
  const auto now = detail::place_sprites(d, schema, dropped);
  std::vector<std::optional<Point>> before;
  if (prev) before = detail::place_sprites(*prev, schema, nullptr);

  for (std::size_t slot = 0; slot < now.size(); ++slot) {
    if (!now[slot]) continue;
    const Point p = *now[slot];
    out.values[schema.feature_index(slot, FeatureKind::kPresent)] = 1.0;
    out.values[schema.feature_index(slot, FeatureKind::kX)] = p.x;
    out.values[schema.feature_index(slot, FeatureKind::kY)] = p.y;
    if (prev && before[slot]) {
      out.values[schema.feature_index(slot, FeatureKind::kVx)] = p.x - before[slot]->x;
      out.values[schema.feature_index(slot, FeatureKind::kVy)] = p.y - before[slot]->y;
    }
  }
  if (schema.include_last_action()) {
    out.values[schema.last_action_index()] = static_cast<double>(*last_action);
  }
  return out;
}

struct DatasetRow {
  SymbolicState state;
  int label = 0;
  int traj = 0;  // trajectory id; equals the noop-start count for recorded suites
  int t = 0;     // timestep within the trajectory
  friend bool operator==(const DatasetRow&, const DatasetRow&) = default;
};

struct LabeledDataset {
  FeatureSchema schema;
  std::vector<DatasetRow> rows;
  std::string game;  // free-form provenance tag; empty when unknown

  std::size_t size() const noexcept { return rows.size(); }

  void validate() const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].state.values.size() != schema.feature_count()) {
        throw SchemaError("row " + std::to_string(i) + " has " +
                          std::to_string(rows[i].state.values.size()) + " features, schema has " +
                          std::to_string(schema.feature_count()));
      }
      if (rows[i].label < 0 || rows[i].label >= schema.action_count()) {
        throw SchemaError("row " + std::to_string(i) + " label out of range");
      }
    }
  }

  LabeledDataset subset(std::span<const std::size_t> indices) const {
    LabeledDataset out{schema, {}, game};
    out.rows.reserve(indices.size());
    for (std::size_t i : indices) out.rows.push_back(rows.at(i));
    return out;
  }
};

// A trajectory already passed through identify_sprites. actions[t] is the
// action executed at step t.
struct DecomposedTrajectory {
  int id = 0;
  std::vector<SpriteDecomposition> frames;
  std::vector<int> actions;
};

// One row per timestep. Velocity and last action come from the previous
// step of the same trajectory; the first row uses no previous frame and
// last action 0 (noop).
inline LabeledDataset assemble_dataset(std::span<const DecomposedTrajectory> trajectories,
                                       const FeatureSchema& schema,
                                       std::size_t* dropped = nullptr) {
  LabeledDataset out{schema, {}, {}};
  for (const DecomposedTrajectory& tr : trajectories) {
    if (tr.frames.size() != tr.actions.size()) {
      throw InvariantError("trajectory " + std::to_string(tr.id) + " has " +
                           std::to_string(tr.frames.size()) + " frames but " +
                           std::to_string(tr.actions.size()) + " actions");
    }
    for (std::size_t t = 0; t < tr.frames.size(); ++t) {
      const SpriteDecomposition* prev = t > 0 ? &tr.frames[t - 1] : nullptr;
      const int last = t > 0 ? tr.actions[t - 1] : 0;
      DatasetRow row;
      row.state = vectorize(tr.frames[t], prev, schema, last, dropped);
      row.label = tr.actions[t];
      row.traj = tr.id;
      row.t = static_cast<int>(t);
      out.rows.push_back(std::move(row));
    }
  }
  out.validate();
  return out;
}

// --- Delimited text form -----------------------------------------------------
//
//   # spritetree-dataset v1
//   # game=<tag>
//   # action_count=<n>
//   # include_last_action=<0|1>
//   # schema_hash=<hex>
//   # label=<sighex>,<name>          (zero or more)
//   <col>,...,[last_action,]label,traj,t
//   rows...

inline std::string schema_header_lines(const FeatureSchema& schema) {
  std::ostringstream os;
  os << "# action_count=" << schema.action_count() << "\n";
  os << "# include_last_action=" << (schema.include_last_action() ? 1 : 0) << "\n";
  os << "# schema_hash=" << signature_hex(schema.hash()) << "\n";
  for (const auto& [sig, name] : schema.labels()) {
    os << "# label=" << signature_hex(sig) << "," << name << "\n";
  }
  return os.str();
}

inline std::string encode_dataset(const LabeledDataset& data) {
  std::ostringstream os;
  os << "# spritetree-dataset v1\n";
  os << "# game=" << data.game << "\n";
  os << schema_header_lines(data.schema);
  const std::size_t nf = data.schema.feature_count();
  for (std::size_t f = 0; f < nf; ++f) os << data.schema.column_name(f) << ",";
  os << "label,traj,t\n";
  for (const DatasetRow& r : data.rows) {
    for (double v : r.state.values) os << format_number(v) << ",";
    os << r.label << "," << r.traj << "," << r.t << "\n";
  }
  return os.str();
}

namespace detail {

struct SchemaHeader {
  int action_count = 0;
  bool include_last_action = false;
  std::optional<std::uint64_t> hash;
  std::vector<std::pair<SignatureHash, std::string>> labels;
  std::map<std::string, std::string> extra;
};

// Consumes one "# key=value" line; returns false for lines that are not
// metadata.
inline bool parse_header_line(const std::string& line, std::size_t lineno, SchemaHeader& h) {
  if (line.rfind("# ", 0) != 0) return false;
  const auto eq = line.find('=');
  if (eq == std::string::npos) return true;
  const std::string key = line.substr(2, eq - 2);
  const std::string value = line.substr(eq + 1);
  if (key == "action_count") {
    h.action_count = static_cast<int>(parse_number(value, lineno));
  } else if (key == "include_last_action") {
    h.include_last_action = value == "1";
  } else if (key == "schema_hash") {
    h.hash = parse_signature_hex(value);
  } else if (key == "label") {
    const auto comma = value.find(',');
    if (comma == std::string::npos) throw ParseError("bad label line", lineno);
    h.labels.emplace_back(parse_signature_hex(value.substr(0, comma)), value.substr(comma + 1));
  } else {
    h.extra[key] = value;
  }
  return true;
}

// Recover slots from a column header row.
inline std::vector<Slot> slots_from_columns(const std::vector<std::string>& cols,
                                            std::size_t feature_cols, std::size_t lineno) {
  if (feature_cols % kFeaturesPerSlot != 0) throw ParseError("ragged slot columns", lineno);
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < feature_cols; i += kFeaturesPerSlot) {
    const std::string& c = cols[i];
    const auto a = c.find('_');
    const auto b = c.find('_', a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw ParseError("bad slot column '" + c + "'", lineno);
    }
    slots.push_back({parse_signature_hex(c.substr(0, a)),
                     static_cast<int>(parse_number(c.substr(a + 1, b - a - 1), lineno))});
  }
  return slots;
}

}  // namespace detail

inline LabeledDataset decode_dataset(std::istream& in) {
  detail::SchemaHeader header;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> cols;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::parse_header_line(line, lineno, header)) continue;
    cols = split(line, ',');
    break;
  }
  if (cols.size() < 3 || cols[cols.size() - 3] != "label" || cols[cols.size() - 2] != "traj" ||
      cols.back() != "t") {
    throw ParseError("dataset header must end with label,traj,t", lineno);
  }
  std::size_t feature_cols = cols.size() - 3;
  const bool has_last = feature_cols > 0 && cols[feature_cols - 1] == "last_action";
  if (has_last != header.include_last_action) {
    throw ParseError("last_action column disagrees with metadata", lineno);
  }
  if (has_last) --feature_cols;

  FeatureSchema schema(detail::slots_from_columns(cols, feature_cols, lineno), has_last,
                       header.action_count);
  for (auto& [sig, name] : header.labels) schema.set_label(sig, name);
  if (header.hash && *header.hash != schema.hash()) {
    throw SchemaError("dataset schema hash does not match its columns");
  }

  LabeledDataset data{std::move(schema), {}, header.extra.count("game") ? header.extra["game"] : ""};
  const std::size_t nf = data.schema.feature_count();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != nf + 3) {
      throw ParseError("row has " + std::to_string(cells.size()) + " cells, expected " +
                           std::to_string(nf + 3) + " (line " + std::to_string(lineno) + ")",
                       lineno);
    }
    DatasetRow row;
    row.state.values.reserve(nf);
    for (std::size_t f = 0; f < nf; ++f) row.state.values.push_back(parse_number(cells[f], lineno));
    row.label = static_cast<int>(parse_number(cells[nf], lineno));
    row.traj = static_cast<int>(parse_number(cells[nf + 1], lineno));
    row.t = static_cast<int>(parse_number(cells[nf + 2], lineno));
    data.rows.push_back(std::move(row));
  }
  data.validate();
  return data;
}

inline LabeledDataset decode_dataset(const std::string& text) {
  std::istringstream is(text);
  return decode_dataset(is);
}

inline void write_dataset(const LabeledDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open dataset for writing: " + path);
  out << encode_dataset(data);
  if (!out) throw Error("failed writing dataset: " + path);
}

inline LabeledDataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset: " + path);
  return decode_dataset(in);
}

}  // namespace spritetree
