#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spritetree/adversarial.hpp"
#include "spritetree/envharness.hpp"
#include "spritetree/errors.hpp"
#include "spritetree/features.hpp"
#include "spritetree/pixelgrid.hpp"
#include "spritetree/shap.hpp"
#include "spritetree/sprites.hpp"
#include "spritetree/trees.hpp"

namespace spritetree::cli {

namespace fs = std::filesystem;

// Everything a pipeline run depends on. Values come from (lowest to
// highest precedence) built-in defaults, the config file, SPRITETREE_<KEY>
// environment variables, then command-line flags.
struct RunConfig {
  GameId game = GameId::kMiniPong;
  PolicyKind policy = PolicyKind::kScriptedTracker;
  int deadzone = 2;
  double epsilon = 0.1;
  int noop_from = 0;
  int noop_to = 29;
  bool sticky = false;
  double zeta = 0.25;
  bool last_action = false;
  std::uint64_t seed = 0;
  int max_steps = kDefaultEpisodeCap;
  int kfolds = 5;
  int trees = 100;
  int heldout_from = 25;
  int adversarial_traj = 24;
  int adversarial_pairs = 200;
  std::string out = "run";

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  void validate() const {
    if (deadzone < 0) throw ConfigError("deadzone must be >= 0");
    if (!(epsilon >= 0 && epsilon <= 1)) throw ConfigError("epsilon must be in [0, 1]");
    if (noop_from < 0 || noop_to > 29 || noop_from > noop_to) {
      throw ConfigError("noop range must satisfy 0 <= noop_from <= noop_to <= 29");
    }
    if (!(zeta >= 0 && zeta < 1)) throw ConfigError("zeta must be in [0, 1)");
    if (max_steps <= 0) throw ConfigError("max_steps must be positive");
    if (kfolds < 2) throw ConfigError("kfolds must be >= 2");
    if (trees < 1) throw ConfigError("trees must be >= 1");
    if (heldout_from < 0 || heldout_from > 30) throw ConfigError("heldout_from must be in [0, 30]");
    if (adversarial_pairs < 1) throw ConfigError("adversarial_pairs must be >= 1");
    if (out.empty()) throw ConfigError("out must not be empty");
  }
};

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "game",  "policy",     "deadzone", "epsilon",      "noop_from",    "noop_to",
      "sticky", "zeta",      "last_action", "seed",      "max_steps",    "kfolds",
      "trees", "heldout_from", "adversarial_traj", "adversarial_pairs", "out"};
  return keys;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

inline int parse_small_int(const std::string& key, const std::string& v) {
  const long long n = parse_int(key, v);
  if (n < -1000000000LL || n > 1000000000LL) throw ConfigError(key + ": value out of range");
  return static_cast<int>(n);
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

}  // namespace detail

inline void apply_setting(RunConfig& c, const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  try {
    if (key == "game") c.game = parse_game(v);
    else if (key == "policy") c.policy = parse_policy(v);
    else if (key == "deadzone") c.deadzone = parse_small_int(key, v);
    else if (key == "epsilon") c.epsilon = parse_real(key, v);
    else if (key == "noop_from") c.noop_from = parse_small_int(key, v);
    else if (key == "noop_to") c.noop_to = parse_small_int(key, v);
    else if (key == "sticky") c.sticky = parse_bool(key, v);
    else if (key == "zeta") c.zeta = parse_real(key, v);
    else if (key == "last_action") c.last_action = parse_bool(key, v);
    else if (key == "seed") c.seed = parse_seed(key, v);
    else if (key == "max_steps") c.max_steps = parse_small_int(key, v);
    else if (key == "kfolds") c.kfolds = parse_small_int(key, v);
    else if (key == "trees") c.trees = parse_small_int(key, v);
    else if (key == "heldout_from") c.heldout_from = parse_small_int(key, v);
    else if (key == "adversarial_traj") c.adversarial_traj = parse_small_int(key, v);
    else if (key == "adversarial_pairs") c.adversarial_pairs = parse_small_int(key, v);
    else if (key == "out") c.out = v;
    else throw ConfigError("unknown config key '" + key + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

inline std::string encode_config(const RunConfig& c) {
  std::ostringstream os;
  os << "game = " << to_string(c.game) << "\n";
  os << "policy = " << to_string(c.policy) << "\n";
  os << "deadzone = " << c.deadzone << "\n";
  os << "epsilon = " << format_number(c.epsilon) << "\n";
  os << "noop_from = " << c.noop_from << "\n";
  os << "noop_to = " << c.noop_to << "\n";
  os << "sticky = " << (c.sticky ? "true" : "false") << "\n";
  os << "zeta = " << format_number(c.zeta) << "\n";
  os << "last_action = " << (c.last_action ? "true" : "false") << "\n";
  os << "seed = " << c.seed << "\n";
  os << "max_steps = " << c.max_steps << "\n";
  os << "kfolds = " << c.kfolds << "\n";
  os << "trees = " << c.trees << "\n";
  os << "heldout_from = " << c.heldout_from << "\n";
  os << "adversarial_traj = " << c.adversarial_traj << "\n";
  os << "adversarial_pairs = " << c.adversarial_pairs << "\n";
  os << "out = " << c.out << "\n";
  return os.str();
}

// `key = value` lines; blank lines and lines starting with '#' are skipped.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_setting(c, detail::trim(t.substr(0, eq)), t.substr(eq + 1));
  }
}

inline RunConfig decode_config(const std::string& text) {
  RunConfig c;
  apply_config_text(c, text);
  return c;
}

inline std::string env_name(const std::string& key) {
  std::string out = "SPRITETREE_";
  for (char ch : key) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  return out;
}

using EnvLookup = std::function<const char*(const char*)>;

inline RunConfig load_config(const std::optional<fs::path>& file,
                             const std::map<std::string, std::string>& flags,
                             const EnvLookup& env = [](const char* n) { return std::getenv(n); }) {
  RunConfig c;
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file: " + file->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    apply_config_text(c, ss.str());
  }
  for (const std::string& key : config_keys()) {
    if (const char* v = env(env_name(key).c_str())) apply_setting(c, key, v);
  }
  for (const auto& [key, value] : flags) apply_setting(c, key, value);
  c.validate();
  return c;
}

// --- Workspace layout -----------------------------------------------------------
//
//   <workdir>/<out>/config
//   <workdir>/<out>/trajectories/k_NN/
//   <workdir>/<out>/dataset.csv
//   <workdir>/<out>/model_tree.txt, model_ensemble.txt
//   <workdir>/<out>/report.txt, metrics.csv
//   <workdir>/<out>/adversarial.txt, adversarial_pairs.csv, adversarial_table.txt

struct Workspace {
  fs::path root = ".";
  RunConfig config;

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : root / p; }
  fs::path out() const { return resolve(config.out); }
  fs::path trajectories() const { return out() / "trajectories"; }
  fs::path dataset() const { return out() / "dataset.csv"; }
  fs::path tree_model() const { return out() / "model_tree.txt"; }
  fs::path ensemble_model() const { return out() / "model_ensemble.txt"; }
};

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

inline std::string trajectory_dirname(int k) {
  return std::string("k_") + (k < 10 ? "0" : "") + std::to_string(k);
}

inline TargetPolicy make_policy(const RunConfig& c) {
  return TargetPolicy(c.policy, MiniEnv(c.game, 0).catalog(), c.deadzone, c.epsilon);
}

inline std::vector<std::string> action_names(GameId g) { return MiniEnv(g, 0).action_names(); }

// --- record ---------------------------------------------------------------------

struct RecordSummary {
  std::vector<int> noop_starts;
  std::vector<std::size_t> lengths;
};

inline RecordSummary cmd_record(const Workspace& ws, std::ostream& log) {
  const RunConfig& c = ws.config;
  c.validate();
  fs::create_directories(ws.trajectories());
  write_text(ws.out() / "config", encode_config(c));

  const TargetPolicy policy = make_policy(c);
  SamplingOptions base;
  base.sticky = c.sticky;
  base.zeta = c.zeta;
  base.seed = c.seed;
  base.max_steps = c.max_steps;

  RecordSummary s;
  log << "k    length  reward\n";
  for (int k = c.noop_from; k <= c.noop_to; ++k) {
    // One at a time so only a single trajectory's frames are held in memory.
    const Trajectory tr = sample_suite(c.game, policy, k, k, base).front();
    const fs::path dir = ws.trajectories() / trajectory_dirname(k);
    if (fs::exists(dir)) fs::remove_all(dir);
    write_trajectory(tr, to_string(c.policy), dir);
    double reward = 0;
    for (double r : tr.rewards) reward += r;
    log << std::left << std::setw(5) << k << std::setw(8) << tr.size() << format_number(reward)
        << "\n";
    s.noop_starts.push_back(k);
    s.lengths.push_back(tr.size());
  }
  return s;
}

// --- dataset --------------------------------------------------------------------

inline std::vector<fs::path> trajectory_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error("no trajectory directory at " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "manifest")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw Error("no recorded trajectories under " + root.string());
  return dirs;
}

// The slot layout comes from the training trajectories (noop start below
// heldout_from) so held-out sprites never widen the schema.
inline LabeledDataset cmd_dataset(const Workspace& ws, std::ostream& log) {
  const RunConfig& c = ws.config;
  std::vector<DecomposedTrajectory> all;
  for (const fs::path& dir : trajectory_dirs(ws.trajectories())) {
    const Trajectory tr = read_trajectory(dir, true);
    if (tr.game != c.game) {
      throw SchemaError(dir.string() + " was recorded for " + to_string(tr.game) +
                        ", config says " + to_string(c.game));
    }
    all.push_back(decompose(tr));
  }
  std::vector<SpriteDecomposition> corpus;
  for (const DecomposedTrajectory& d : all) {
    if (d.id < c.heldout_from) corpus.insert(corpus.end(), d.frames.begin(), d.frames.end());
  }
  if (corpus.empty()) {
    for (const DecomposedTrajectory& d : all) corpus.insert(corpus.end(), d.frames.begin(), d.frames.end());
  }
  MiniEnv env(c.game, 0);
  FeatureSchema schema = build_schema(corpus, c.last_action, env.action_count());
  for (const auto& [sig, name] : env.catalog().labels) schema.set_label(sig, name);

  std::size_t dropped = 0;
  LabeledDataset data = assemble_dataset(all, schema, &dropped);
  data.game = to_string(c.game);
  write_dataset(data, ws.dataset().string());
  log << "trajectories " << all.size() << ", rows " << data.size() << ", slots "
      << schema.slots().size() << ", features " << schema.feature_count() << ", unslotted sprites "
      << dropped << "\n";
  return data;
}

// --- train-eval -----------------------------------------------------------------

struct EvalLine {
  MeanStderr accuracy;
  MeanStderr cross_entropy;
  std::size_t rows = 0;
};

struct TrainEvalResult {
  EvalLine kfold;
  std::optional<EvalLine> heldout;
  std::optional<EvalLine> sticky_kfold;
  std::optional<EvalLine> sticky_heldout;
  std::string table;
};

namespace detail {

inline void check_dataset_matches(const LabeledDataset& data, const RunConfig& c, bool sticky) {
  if (!data.game.empty() && data.game != to_string(c.game)) {
    throw SchemaError("dataset is for " + data.game + ", config says " + to_string(c.game));
  }
  // The sticky companion dataset always carries the last-action column.
  const bool want_last = sticky || c.last_action;
  if (data.schema.include_last_action() != want_last) {
    throw SchemaError(std::string("dataset schema ") + signature_hex(data.schema.hash()) +
                      (data.schema.include_last_action() ? " has" : " lacks") +
                      " a last-action column, config expects the opposite");
  }
}

inline std::pair<LabeledDataset, LabeledDataset> split_heldout(const LabeledDataset& data,
                                                               int heldout_from) {
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data.rows[i].traj < heldout_from ? train : test).push_back(i);
  }
  return {data.subset(train), data.subset(test)};
}

// Per-row mean and standard error of correctness and log loss.
inline EvalLine score_rows(const TreeModel& model, const LabeledDataset& data) {
  std::vector<double> hit, nll;
  for (const DatasetRow& r : data.rows) {
    const auto p = model.predict_proba(r.state.values);
    hit.push_back(argmax(p) == r.label ? 1.0 : 0.0);
    nll.push_back(-std::log(std::clamp(p[static_cast<std::size_t>(r.label)], kProbabilityFloor, 1.0)));
  }
  return {summarize(hit), summarize(nll), data.size()};
}

inline std::string pct(const MeanStderr& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100 * m.mean << " ± " << 100 * m.stderr_;
  return os.str();
}

inline std::string ce(const MeanStderr& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << m.mean << " ± " << m.stderr_;
  return os.str();
}

struct Evaluated {
  EvalLine kfold;
  std::optional<EvalLine> heldout;
  TreeModel tree;
  TreeEnsemble ensemble;
};

inline Evaluated evaluate_dataset(const LabeledDataset& data, const RunConfig& c) {
  auto [train, test] = split_heldout(data, c.heldout_from);
  if (train.rows.empty()) throw Error("dataset has no training rows (noop start < heldout_from)");
  Evaluated out;
  const KFoldReport kf = kfold_evaluate(train, c.kfolds, mix_seed(c.seed, 10));
  out.kfold = {kf.accuracy, kf.cross_entropy, train.size()};
  out.tree = fit_tree(train, {}, mix_seed(c.seed, 11));
  if (!test.rows.empty()) out.heldout = score_rows(out.tree, test);
  out.ensemble = fit_ensemble(train, c.trees, mix_seed(c.seed, 12));
  return out;
}

}  // namespace detail

inline TrainEvalResult cmd_train_eval(const Workspace& ws, const fs::path& dataset_path,
                                      const std::optional<fs::path>& sticky_dataset,
                                      std::ostream& log) {
  const RunConfig& c = ws.config;
  const LabeledDataset data = read_dataset(ws.resolve(dataset_path).string());
  detail::check_dataset_matches(data, c, false);
  const detail::Evaluated main = detail::evaluate_dataset(data, c);

  TrainEvalResult r;
  r.kfold = main.kfold;
  r.heldout = main.heldout;
  std::optional<detail::Evaluated> sticky;
  std::optional<FeatureSchema> sticky_schema;
  if (sticky_dataset) {
    const LabeledDataset sd = read_dataset(ws.resolve(*sticky_dataset).string());
    detail::check_dataset_matches(sd, c, true);
    sticky = detail::evaluate_dataset(sd, c);
    sticky_schema = sd.schema;
    r.sticky_kfold = sticky->kfold;
    r.sticky_heldout = sticky->heldout;
  }

  fs::create_directories(ws.out());
  TreeEnsemble single;
  single.trees.push_back(main.tree);
  save_model(single, data.schema, ws.tree_model().string(), true);
  save_model(main.ensemble, data.schema, ws.ensemble_model().string(), false);
  if (sticky) {
    TreeEnsemble st;
    st.trees.push_back(sticky->tree);
    save_model(st, *sticky_schema, (ws.out() / "model_tree_sticky.txt").string(), true);
  }

  std::ostringstream t;
  t << "Surrogate fidelity: " << to_string(c.game) << ", " << to_string(c.policy) << "\n\n";
  t << std::left << std::setw(22) << "Evaluation" << std::setw(20) << "Accuracy (%)" << std::setw(20)
    << "Cross Entropy";
  if (sticky) t << std::setw(26) << "Accuracy (%) (Sticky)" << "Cross Entropy (Sticky)";
  t << "\n";
  const auto row = [&](const std::string& name, const std::optional<EvalLine>& a,
                       const std::optional<EvalLine>& b) {
    t << std::setw(22) << name << std::setw(20) << (a ? detail::pct(a->accuracy) : "n/a")
      << std::setw(20) << (a ? detail::ce(a->cross_entropy) : "n/a");
    if (sticky) {
      t << std::setw(26) << (b ? detail::pct(b->accuracy) : "n/a")
        << (b ? detail::ce(b->cross_entropy) : "n/a");
    }
    t << "\n";
  };
  row(std::to_string(c.kfolds) + "-fold", r.kfold, r.sticky_kfold);
  row("held-out (k >= " + std::to_string(c.heldout_from) + ")", r.heldout, r.sticky_heldout);
  if (!r.heldout) t << "\nno held-out trajectories (noop start >= " << c.heldout_from << ")\n";
  r.table = t.str();

  std::ostringstream m;
  m << "evaluation,dataset,rows,accuracy,accuracy_stderr,cross_entropy,cross_entropy_stderr\n";
  const auto csv = [&](const std::string& ev, const std::string& ds, const std::optional<EvalLine>& e) {
    if (!e) return;
    m << ev << "," << ds << "," << e->rows << "," << format_number(e->accuracy.mean) << ","
      << format_number(e->accuracy.stderr_) << "," << format_number(e->cross_entropy.mean) << ","
      << format_number(e->cross_entropy.stderr_) << "\n";
  };
  csv("kfold", "default", r.kfold);
  csv("heldout", "default", r.heldout);
  csv("kfold", "sticky", r.sticky_kfold);
  csv("heldout", "sticky", r.sticky_heldout);

  write_text(ws.out() / "report.txt", r.table);
  write_text(ws.out() / "metrics.csv", m.str());
  log << r.table;
  return r;
}

// --- explain --------------------------------------------------------------------

struct ExplainResult {
  std::vector<SpriteRank> ranking;  // top five at most
  Attribution attribution;
  std::string table;
  Frame overlay{1, 1};
};

namespace detail {

inline const char* kind_word(FeatureKind k) {
  switch (k) {
    case FeatureKind::kPresent: return "presence";
    case FeatureKind::kX:
    case FeatureKind::kY: return "position";
    case FeatureKind::kVx:
    case FeatureKind::kVy: return "velocity";
  }
  return "?";
}

inline const char* axis_word(FeatureKind k) {
  switch (k) {
    case FeatureKind::kX:
    case FeatureKind::kVx: return "x";
    case FeatureKind::kY:
    case FeatureKind::kVy: return "y";
    default: return "-";
  }
}

// The sprite occupying `slot`: instance i of a signature is the i-th such
// sprite in (x, y) anchor order, matching vectorize.
inline const Sprite* sprite_for_slot(const SpriteDecomposition& d, const FeatureSchema& schema,
                                     std::size_t slot) {
  const Slot& s = schema.slots()[slot];
  std::vector<const Sprite*> same;
  for (const Sprite& sp : d.sprites) {
    if (sp.signature == s.signature) same.push_back(&sp);
  }
  std::sort(same.begin(), same.end(),
            [](const Sprite* a, const Sprite* b) { return anchor_less(a->anchor, b->anchor); });
  return s.instance < static_cast<int>(same.size()) ? same[static_cast<std::size_t>(s.instance)]
                                                    : nullptr;
}

}  // namespace detail

inline constexpr std::size_t kExplainTop = 5;

// Everything outside the highlighted sprites is dimmed to a quarter of its
// brightness, and each highlighted sprite gets a one-pixel yellow box.
inline Frame render_overlay(const Frame& source, const std::vector<const Sprite*>& highlight) {
  Frame out = source;
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const Color c = source.at(x, y);
      out.set(x, y, {static_cast<std::uint8_t>(c.r / 4), static_cast<std::uint8_t>(c.g / 4),
                     static_cast<std::uint8_t>(c.b / 4)});
    }
  }
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(out.width() * out.height()), 0);
  for (const Sprite* s : highlight) {
    for (Point p : s->pixels) {
      out.set(p.x, p.y, source.at(p.x, p.y));
      keep[static_cast<std::size_t>(p.y * out.width() + p.x)] = 1;
    }
  }
  const Color box{255, 230, 0};
  for (const Sprite* s : highlight) {
    int x0 = s->pixels.front().x, x1 = x0, y0 = s->pixels.front().y, y1 = y0;
    for (Point p : s->pixels) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
    const auto mark = [&](int x, int y) {
      if (out.contains(x, y) && !keep[static_cast<std::size_t>(y * out.width() + x)]) out.set(x, y, box);
    };
    for (int x = x0 - 1; x <= x1 + 1; ++x) {
      mark(x, y0 - 1);
      mark(x, y1 + 1);
    }
    for (int y = y0 - 1; y <= y1 + 1; ++y) {
      mark(x0 - 1, y);
      mark(x1 + 1, y);
    }
  }
  return out;
}

inline ExplainResult cmd_explain(const Workspace& ws, const fs::path& model_path,
                                 const fs::path& trajectory_dir, long long timestep,
                                 std::ostream& log) {
  const LoadedModel model = load_model(ws.resolve(model_path).string());
  const fs::path dir = ws.resolve(trajectory_dir);
  const Trajectory meta = read_trajectory(dir, false);
  if (timestep < 0 || timestep >= static_cast<long long>(meta.actions.size())) {
    throw ConfigError("timestep " + std::to_string(timestep) + " out of range [0, " +
                      std::to_string(meta.actions.size()) + ")");
  }
  const auto t = static_cast<std::size_t>(timestep);
  const Frame frame = read_image((dir / frame_filename(t)).string());
  const SpriteDecomposition now = identify_sprites(frame);
  std::optional<SpriteDecomposition> prev;
  if (t > 0) prev = identify_sprites(read_image((dir / frame_filename(t - 1)).string()));
  const int last = t > 0 ? meta.actions[t - 1] : 0;
  const SymbolicState state =
      vectorize(now, prev ? &*prev : nullptr, model.schema,
                model.schema.include_last_action() ? std::optional<int>(last) : std::nullopt);

  ExplainResult r;
  r.attribution = model.single_tree ? tree_shap(model.ensemble.trees.front(), state.values)
                                    : ensemble_shap(model.ensemble, state.values);
  r.ranking = rank_sprites(r.attribution, state, model.schema);
  if (r.ranking.size() > kExplainTop) r.ranking.resize(kExplainTop);

  const auto names = action_names(meta.game);
  const int predicted = r.attribution.predicted_class;
  std::ostringstream table;
  table << "timestep " << t << ", predicted action "
        << (predicted < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(predicted)]
                                                        : std::to_string(predicted))
        << " (p = " << format_number(r.attribution.output[static_cast<std::size_t>(predicted)])
        << ")\n";
  table << std::left << std::setw(6) << "rank" << std::setw(22) << "sprite" << std::setw(10)
        << "kind" << std::setw(6) << "axis" << std::setw(10) << "value" << "shapley\n";
  std::ostringstream csv;
  csv << "rank,slot,sprite,feature,kind,axis,value,shapley\n";
  std::vector<const Sprite*> highlight;
  for (const SpriteRank& s : r.ranking) {
    const std::size_t f = model.schema.feature_index(s.slot, s.top_feature);
    table << std::setw(6) << s.rank << std::setw(22) << model.schema.slot_name(s.slot)
          << std::setw(10) << detail::kind_word(s.top_feature) << std::setw(6)
          << detail::axis_word(s.top_feature) << std::setw(10) << format_number(state.values[f])
          << format_number(s.top_value) << "\n";
    csv << s.rank << "," << s.slot << "," << model.schema.slot_name(s.slot) << ","
        << model.schema.column_name(f) << "," << detail::kind_word(s.top_feature) << ","
        << detail::axis_word(s.top_feature) << "," << format_number(state.values[f]) << ","
        << format_number(s.top_value) << "\n";
    if (const Sprite* sp = detail::sprite_for_slot(now, model.schema, s.slot)) highlight.push_back(sp);
  }
  r.table = table.str();
  r.overlay = render_overlay(frame, highlight);

  const std::string stem = "explain_t" + std::to_string(t);
  write_text(ws.out() / (stem + ".txt"), r.table);
  write_text(ws.out() / (stem + ".csv"), csv.str());
  write_text(ws.out() / (stem + "_shap.csv"), encode_attribution(r.attribution, model.schema));
  write_image(r.overlay, (ws.out() / (stem + ".ppm")).string());
  log << r.table;
  return r;
}

// --- adversarial ----------------------------------------------------------------

inline PermutationReport cmd_adversarial(const Workspace& ws, const fs::path& model_path,
                                         const fs::path& dataset_path, std::ostream& log) {
  const RunConfig& c = ws.config;
  const LabeledDataset data = read_dataset(ws.resolve(dataset_path).string());
  const LoadedModel model = load_model(ws.resolve(model_path).string(), data.schema);
  const LabeledDataset train = detail::split_heldout(data, c.heldout_from).first;
  bool has_origin = false;
  for (const DatasetRow& row : train.rows) has_origin = has_origin || row.traj == c.adversarial_traj;
  if (!has_origin) {
    throw Error("training rows contain no trajectory with noop start " +
                std::to_string(c.adversarial_traj));
  }
  const PermutationReport rep =
      measure_action_change(make_policy(c), model.ensemble, train, c.adversarial_traj,
                            static_cast<std::size_t>(c.adversarial_pairs), mix_seed(c.seed, 13));

  std::ostringstream config_line;
  config_line << to_string(c.game) << " " << to_string(c.policy) << " trees="
              << model.ensemble.size() << " sticky=" << (c.sticky ? 1 : 0);
  std::ostringstream table;
  table << std::left << std::setw(16) << "Game" << "Agent action changed %\n";
  table << std::setw(16) << to_string(c.game) << std::fixed << std::setprecision(2)
        << 100 * rep.change_rate << "\n";
  table << "(" << rep.changed << " of " << rep.pairs_evaluated << " permuted pairs)\n";

  write_text(ws.out() / "adversarial.txt", encode_report(rep, config_line.str()));
  write_text(ws.out() / "adversarial_pairs.csv", encode_pair_table(rep));
  write_text(ws.out() / "adversarial_table.txt", table.str());
  log << table.str();
  return rep;
}

// --- export-tree ----------------------------------------------------------------

inline std::string cmd_export_tree(const Workspace& ws, const fs::path& model_path, int depth,
                                   const fs::path& output, std::ostream& log) {
  const LoadedModel model = load_model(ws.resolve(model_path).string());
  const std::string dot = export_tree(model.ensemble.trees.front(), model.schema, depth,
                                      action_names(ws.config.game));
  const fs::path dest = ws.resolve(output);
  write_text(dest, dot);
  log << "wrote " << dest.string() << "\n";
  return dot;
}

}  // namespace spritetree::cli
