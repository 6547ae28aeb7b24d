#pragma once

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spritetree/errors.hpp"
#include "spritetree/features.hpp"
#include "spritetree/random.hpp"

namespace spritetree {

struct TreeParams {
  int max_depth = 0;  // 0 = unlimited
  int min_samples_split = 2;
  int min_samples_leaf = 1;
};

// Split nodes send rows with x[feature] <= threshold left. Every node keeps
// the (bootstrap-weighted) class counts of the training rows that reached
// it; their sum is the node's coverage, which TreeSHAP needs.
struct TreeNode {
  int feature = -1;
  double threshold = 0;
  int left = -1;
  int right = -1;
  std::vector<double> counts;

  bool is_leaf() const noexcept { return feature < 0; }
  double coverage() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }
  std::vector<double> probabilities() const {
    std::vector<double> p(counts);
    const double total = coverage();
    for (double& v : p) v = total > 0 ? v / total : 1.0 / static_cast<double>(p.size());
    return p;
  }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

class TreeModel {
 public:
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::uint64_t schema_hash = 0;
  std::size_t feature_count = 0;
  int class_count = 0;
  std::uint64_t seed = 0;
  std::size_t training_rows = 0;

  const TreeNode& root() const { return nodes.front(); }

  void check_input(std::span<const double> x) const {
    if (x.size() != feature_count) {
      throw SchemaError("state has " + std::to_string(x.size()) + " features, model expects " +
                        std::to_string(feature_count));
    }
  }

  int leaf_index(std::span<const double> x) const {
    check_input(x);
    int n = 0;
    while (!nodes[n].is_leaf()) {
      const TreeNode& node = nodes[n];
      n = x[node.feature] <= node.threshold ? node.left : node.right;
    }
    return n;
  }

  std::vector<double> predict_proba(std::span<const double> x) const {
    return nodes[leaf_index(x)].probabilities();
  }

  int depth() const {
    std::vector<std::pair<int, int>> stack{{0, 0}};
    int best = 0;
    while (!stack.empty()) {
      auto [n, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      if (!nodes[n].is_leaf()) {
        stack.push_back({nodes[n].left, d + 1});
        stack.push_back({nodes[n].right, d + 1});
      }
    }
    return best;
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

  friend bool operator==(const TreeModel&, const TreeModel&) = default;
};

// Ordered trees whose leaf distributions are averaged.
class TreeEnsemble {
 public:
  std::vector<TreeModel> trees;

  std::size_t size() const noexcept { return trees.size(); }
  std::size_t feature_count() const { return trees.at(0).feature_count; }
  int class_count() const { return trees.at(0).class_count; }
  std::uint64_t schema_hash() const { return trees.at(0).schema_hash; }

  std::vector<double> predict_proba(std::span<const double> x) const {
    if (trees.empty()) throw InvariantError("empty ensemble");
    std::vector<double> p(static_cast<std::size_t>(class_count()), 0.0);
    for (const TreeModel& t : trees) {
      const TreeNode& leaf = t.nodes[t.leaf_index(x)];
      const double total = leaf.coverage();
      for (std::size_t c = 0; c < p.size(); ++c) p[c] += leaf.counts[c] / total;
    }
    for (double& v : p) v /= static_cast<double>(trees.size());
    return p;
  }

  friend bool operator==(const TreeEnsemble&, const TreeEnsemble&) = default;
};

// Lowest index wins ties.
inline int argmax(std::span<const double> p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline double gini(std::span<const double> counts) {
  const double n = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (n <= 0) return 0;
  double s = 0;
  for (double c : counts) s += (c / n) * (c / n);
  return 1.0 - s;
}

namespace detail {

using u128 = unsigned __int128;

// Exact split score. Minimising weighted child Gini is maximising
// sum_k l_k^2 / n_l + sum_k r_k^2 / n_r; comparisons cross-multiply in
// 128-bit integers so equal splits compare equal.
struct SplitScore {
  std::uint64_t sq_left = 0, n_left = 0, sq_right = 0, n_right = 0;

  u128 numerator() const { return u128(sq_left) * n_right + u128(sq_right) * n_left; }
  u128 denominator() const { return u128(n_left) * n_right; }

  bool better_than(const SplitScore& o) const {
    // a/b > c/d  <=>  a*d > c*b; each product is O(n^5), safe for n < 2^24.
    return numerator() * o.denominator() > o.numerator() * denominator();
  }
  // Strict impurity decrease relative to the unsplit node.
  bool improves(std::uint64_t sq_parent, std::uint64_t n_parent) const {
    return numerator() * n_parent > u128(sq_parent) * denominator();
  }
};

class CartBuilder {
 public:
  CartBuilder(const LabeledDataset& data, std::span<const std::uint32_t> weights,
              const TreeParams& params)
      : params_(params), features_(data.schema.feature_count()),
        classes_(static_cast<std::size_t>(data.schema.action_count())) {
    const std::size_t n = data.size();
    columns_.assign(features_, std::vector<double>(n));
    labels_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels_[i] = data.rows[i].label;
      for (std::size_t f = 0; f < features_; ++f) columns_[f][i] = data.rows[i].state.values[f];
    }
    weights_.assign(weights.begin(), weights.end());
    std::vector<std::uint32_t> active;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (weights_[i] > 0) active.push_back(i);
    }
    for (std::size_t f = 0; f < features_; ++f) {
      const auto& col = columns_[f];
      bool constant = true;
      for (std::uint32_t i : active) constant = constant && col[i] == col[active.front()];
      if (constant) continue;
      std::vector<std::uint32_t> order = active;
      std::stable_sort(order.begin(), order.end(),
                       [&col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
      usable_.push_back(f);
      orders_.push_back(std::move(order));
    }
    rows_ = std::move(active);
    go_left_.assign(n, 0);
  }

  std::vector<TreeNode> build() {
    struct Work {
      int node;
      std::size_t begin, end;
      int depth;
    };
    std::vector<TreeNode> nodes;
    nodes.push_back(TreeNode{});
    std::vector<Work> stack{{0, 0, rows_.size(), 0}};
    while (!stack.empty()) {
      const Work w = stack.back();
      stack.pop_back();
      std::vector<std::uint64_t> counts = class_counts(w.begin, w.end);
      nodes[w.node].counts.assign(counts.begin(), counts.end());

      const auto best = find_split(w.begin, w.end, counts, w.depth);
      if (!best) continue;  // leaf
      const auto [feature_slot, threshold] = *best;
      const std::size_t mid = partition(w.begin, w.end, feature_slot, threshold);

      const int left = static_cast<int>(nodes.size());
      nodes.push_back(TreeNode{});
      const int right = static_cast<int>(nodes.size());
      nodes.push_back(TreeNode{});
      TreeNode& node = nodes[w.node];
      node.feature = static_cast<int>(usable_[feature_slot]);
      node.threshold = threshold;
      node.left = left;
      node.right = right;
      stack.push_back({right, mid, w.end, w.depth + 1});
      stack.push_back({left, w.begin, mid, w.depth + 1});
    }
    return nodes;
  }

 private:
  // Rows of the node at [begin, end) in `rows_` (and in every order).
  std::vector<std::uint64_t> class_counts(std::size_t begin, std::size_t end) const {
    std::vector<std::uint64_t> c(classes_, 0);
    for (std::size_t i = begin; i < end; ++i) c[labels_[rows_[i]]] += weights_[rows_[i]];
    return c;
  }

  static std::uint64_t sum_sq(std::span<const std::uint64_t> c) {
    std::uint64_t s = 0;
    for (auto v : c) s += v * v;
    return s;
  }

  std::optional<std::pair<std::size_t, double>> find_split(std::size_t begin, std::size_t end,
                                                           const std::vector<std::uint64_t>& counts,
                                                           int depth) const {
    const std::uint64_t n = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
    const auto nonzero = std::count_if(counts.begin(), counts.end(), [](auto v) { return v > 0; });
    if (nonzero <= 1) return std::nullopt;
    if (n < static_cast<std::uint64_t>(params_.min_samples_split)) return std::nullopt;
    if (params_.max_depth > 0 && depth >= params_.max_depth) return std::nullopt;
    const std::uint64_t sq_parent = sum_sq(counts);
    const std::uint64_t min_leaf = static_cast<std::uint64_t>(std::max(params_.min_samples_leaf, 1));

    std::optional<std::pair<std::size_t, double>> best;
    SplitScore best_score;
    std::vector<std::uint64_t> left(classes_), right(classes_);
    for (std::size_t s = 0; s < usable_.size(); ++s) {
      const auto& order = orders_[s];
      const auto& col = columns_[usable_[s]];
      if (col[order[begin]] == col[order[end - 1]]) continue;
      std::fill(left.begin(), left.end(), 0);
      right = counts;
      std::uint64_t n_left = 0;
      for (std::size_t i = begin; i + 1 < end; ++i) {
        const std::uint32_t r = order[i];
        left[labels_[r]] += weights_[r];
        right[labels_[r]] -= weights_[r];
        n_left += weights_[r];
        const double v = col[r], next = col[order[i + 1]];
        if (v == next) continue;
        const std::uint64_t n_right = n - n_left;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        SplitScore score{sum_sq(left), n_left, sum_sq(right), n_right};
        if (!score.improves(sq_parent, n)) continue;
        if (!best || score.better_than(best_score)) {
          double mid = v + (next - v) / 2;
          if (!(mid < next)) mid = v;
          best = {{s, mid}};
          best_score = score;
        }
      }
    }
    return best;
  }

  // Stable partition of [begin, end) in every order array (and rows_) into
  // rows going left, then rows going right. Returns the boundary.
  std::size_t partition(std::size_t begin, std::size_t end, std::size_t feature_slot,
                        double threshold) {
    const auto& col = columns_[usable_[feature_slot]];
    for (std::size_t i = begin; i < end; ++i) {
      const std::uint32_t r = rows_[i];
      go_left_[r] = col[r] <= threshold ? 1 : 0;
    }
    auto split_range = [&](std::vector<std::uint32_t>& v) {
      scratch_.clear();
      std::size_t out = begin;
      for (std::size_t i = begin; i < end; ++i) {
        if (go_left_[v[i]]) v[out++] = v[i];
        else scratch_.push_back(v[i]);
      }
      std::copy(scratch_.begin(), scratch_.end(), v.begin() + static_cast<std::ptrdiff_t>(out));
      return out;
    };
    const std::size_t mid = split_range(rows_);
    for (auto& order : orders_) split_range(order);
    return mid;
  }

  TreeParams params_;
  std::size_t features_;
  std::size_t classes_;
  std::vector<std::vector<double>> columns_;
  std::vector<int> labels_;
  std::vector<std::uint32_t> weights_;
  std::vector<std::size_t> usable_;                // non-constant feature indices
  std::vector<std::vector<std::uint32_t>> orders_;  // per usable feature, sorted row ids
  std::vector<std::uint32_t> rows_;
  std::vector<std::uint8_t> go_left_;
  std::vector<std::uint32_t> scratch_;
};

inline TreeModel fit_weighted(const LabeledDataset& data, std::span<const std::uint32_t> weights,
                              const TreeParams& params, std::uint64_t seed) {
  if (data.rows.empty()) throw InvariantError("cannot fit a tree on an empty dataset");
  data.validate();
  TreeModel model;
  model.nodes = CartBuilder(data, weights, params).build();
  model.schema_hash = data.schema.hash();
  model.feature_count = data.schema.feature_count();
  model.class_count = data.schema.action_count();
  model.seed = seed;
  model.training_rows = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
  return model;
}

}  // namespace detail

// CART with Gini impurity and exhaustive best-split search. Thresholds sit
// halfway between consecutive distinct values; equal-score splits go to the
// lowest feature index, then the lowest threshold.
inline TreeModel fit_tree(const LabeledDataset& data, const TreeParams& params = {},
                          std::uint64_t seed = 0) {
  std::vector<std::uint32_t> weights(data.size(), 1);
  return detail::fit_weighted(data, weights, params, seed);
}

// Bagged forest: tree i is fit on a same-size bootstrap drawn with a seed
// derived from (seed, i). With bootstrap off every tree sees all rows.
inline TreeEnsemble fit_ensemble(const LabeledDataset& data, int n_trees = 100,
                                 std::uint64_t seed = 0, const TreeParams& params = {},
                                 bool bootstrap = true) {
  if (data.rows.empty()) throw InvariantError("cannot fit an ensemble on an empty dataset");
  if (n_trees <= 0) throw ConfigError("ensemble needs at least one tree");
  TreeEnsemble ens;
  const std::size_t n = data.size();
  for (int t = 0; t < n_trees; ++t) {
    const std::uint64_t tree_seed = mix_seed(seed, static_cast<std::uint64_t>(t));
    std::vector<std::uint32_t> weights(n, bootstrap ? 0 : 1);
    if (bootstrap) {
      Rng rng(tree_seed);
      for (std::size_t i = 0; i < n; ++i) ++weights[uniform_index(rng, n)];
    }
    ens.trees.push_back(detail::fit_weighted(data, weights, params, tree_seed));
  }
  return ens;
}

// --- Evaluation ---------------------------------------------------------------------

struct Metrics {
  double accuracy = 0;
  double cross_entropy = 0;  // mean -ln p(label), p clipped to [1e-15, 1]
};

inline constexpr double kProbabilityFloor = 1e-15;

template <class Model>
Metrics evaluate(const Model& model, const LabeledDataset& data) {
  if (data.rows.empty()) throw InvariantError("cannot evaluate on an empty dataset");
  std::size_t correct = 0;
  double nll = 0;
  for (const DatasetRow& r : data.rows) {
    const auto p = model.predict_proba(r.state.values);
    correct += argmax(p) == r.label;
    nll -= std::log(std::clamp(p[static_cast<std::size_t>(r.label)], kProbabilityFloor, 1.0));
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, nll / n};
}

struct MeanStderr {
  double mean = 0;
  double stderr_ = 0;
};

inline MeanStderr summarize(std::span<const double> values) {
  MeanStderr s;
  const double n = static_cast<double>(values.size());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stderr_ = std::sqrt(ss / (n - 1)) / std::sqrt(n);
  }
  return s;
}

struct KFoldReport {
  std::vector<Metrics> folds;
  std::vector<std::size_t> fold_sizes;
  MeanStderr accuracy;
  MeanStderr cross_entropy;
};

// Shuffled row-level fold assignment: fold f holds shuffled positions
// [f*n/k, (f+1)*n/k), so sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> kfold_assignment(std::size_t n, int k,
                                                              std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  if (n < static_cast<std::size_t>(k)) {
    throw InvariantError("k-fold needs at least k rows (" + std::to_string(n) + " < " +
                         std::to_string(k) + ")");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    const std::size_t lo = n * static_cast<std::size_t>(f) / static_cast<std::size_t>(k);
    const std::size_t hi = n * static_cast<std::size_t>(f + 1) / static_cast<std::size_t>(k);
    folds[static_cast<std::size_t>(f)].assign(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                              perm.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(folds[static_cast<std::size_t>(f)].begin(), folds[static_cast<std::size_t>(f)].end());
  }
  return folds;
}

inline KFoldReport kfold_evaluate(const LabeledDataset& data, int k = 5, std::uint64_t seed = 0,
                                  const TreeParams& params = {}) {
  const auto folds = kfold_assignment(data.size(), k, seed);
  KFoldReport report;
  std::vector<double> acc, ce;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> train;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(train.begin(), train.end());
    const TreeModel model = fit_tree(data.subset(train), params, mix_seed(seed, f));
    const Metrics m = evaluate(model, data.subset(folds[f]));
    report.folds.push_back(m);
    report.fold_sizes.push_back(folds[f].size());
    acc.push_back(m.accuracy);
    ce.push_back(m.cross_entropy);
  }
  report.accuracy = summarize(acc);
  report.cross_entropy = summarize(ce);
  return report;
}

// --- Graph export -------------------------------------------------------------------

namespace detail {

inline std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

inline std::string counts_text(const std::vector<double>& counts) {
  std::string s = "[";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (i) s += ", ";
    s += format_number(counts[i]);
  }
  return s + "]";
}

}  // namespace detail

// Graphviz digraph of the first `depth_limit` levels (depth_limit = 3 shows
// the root and two levels below it). Split labels read
// "<feature name> <= <threshold>".
inline std::string export_tree(const TreeModel& model, const FeatureSchema& schema,
                               int depth_limit = 3,
                               const std::vector<std::string>& class_names = {}) {
  if (depth_limit < 1) throw ConfigError("depth limit must be >= 1");
  std::ostringstream os;
  os << "digraph Tree {\n";
  os << "  node [shape=box, style=\"rounded\", fontname=\"helvetica\"];\n";
  os << "  edge [fontname=\"helvetica\"];\n";
  std::vector<std::pair<int, int>> stack{{0, 0}};
  std::vector<std::pair<int, int>> edges;
  while (!stack.empty()) {
    auto [id, depth] = stack.back();
    stack.pop_back();
    const TreeNode& n = model.nodes[static_cast<std::size_t>(id)];
    const int majority = argmax(n.counts);
    const std::string cls = majority < static_cast<int>(class_names.size())
                                ? class_names[static_cast<std::size_t>(majority)]
                                : std::to_string(majority);
    std::string label;
    if (!n.is_leaf()) {
      label = detail::dot_escape(schema.display_name(static_cast<std::size_t>(n.feature))) +
              " <= " + format_number(n.threshold) + "\\n";
    }
    label += "samples = " + format_number(n.coverage()) + "\\ncounts = " +
             detail::counts_text(n.counts) + "\\nclass = " + detail::dot_escape(cls);
    os << "  " << id << " [label=\"" << label << "\"];\n";
    if (!n.is_leaf() && depth + 1 < depth_limit) {
      edges.push_back({id, n.left});
      edges.push_back({id, n.right});
      stack.push_back({n.right, depth + 1});
      stack.push_back({n.left, depth + 1});
    }
  }
  for (auto [from, to] : edges) {
    const bool is_left = model.nodes[static_cast<std::size_t>(from)].left == to;
    os << "  " << from << " -> " << to << " [label=\"" << (is_left ? "True" : "False")
       << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

// --- Model files --------------------------------------------------------------------
//
//   spritetree-model v1
//   kind=tree|ensemble
//   schema_hash=<hex>
//   action_count=<n>
//   include_last_action=<0|1>
//   columns=<col>,<col>,...
//   label=<sighex>,<name>                        (zero or more)
//   trees=<n>
//   tree seed=<s> rows=<r> nodes=<m>
//   <id> split <feature> <threshold> <left> <right> <count>...
//   <id> leaf <count>...
//   end

struct LoadedModel {
  FeatureSchema schema;
  TreeEnsemble ensemble;
  bool single_tree = false;
};

inline std::string encode_model(const TreeEnsemble& ens, const FeatureSchema& schema,
                                bool single_tree = false) {
  if (ens.trees.empty()) throw InvariantError("cannot save an empty model");
  if (ens.schema_hash() != schema.hash()) throw SchemaError("model was not trained on this schema");
  std::ostringstream os;
  os << "spritetree-model v1\n";
  os << "kind=" << (single_tree ? "tree" : "ensemble") << "\n";
  os << "schema_hash=" << signature_hex(schema.hash()) << "\n";
  os << "action_count=" << schema.action_count() << "\n";
  os << "include_last_action=" << (schema.include_last_action() ? 1 : 0) << "\n";
  os << "columns=";
  for (std::size_t s = 0; s < schema.slots().size(); ++s) {
    if (s) os << ",";
    os << schema.column_name(schema.feature_index(s, FeatureKind::kPresent));
  }
  os << "\n";
  for (const auto& [sig, name] : schema.labels()) os << "label=" << signature_hex(sig) << "," << name << "\n";
  os << "trees=" << ens.size() << "\n";
  for (const TreeModel& t : ens.trees) {
    os << "tree seed=" << t.seed << " rows=" << t.training_rows << " nodes=" << t.nodes.size()
       << "\n";
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      const TreeNode& n = t.nodes[i];
      os << i;
      if (n.is_leaf()) {
        os << " leaf";
      } else {
        os << " split " << n.feature << " " << format_number(n.threshold) << " " << n.left << " "
           << n.right;
      }
      for (double c : n.counts) os << " " << format_number(c);
      os << "\n";
    }
  }
  os << "end\n";
  return os.str();
}

namespace detail {

inline std::string expect_key(std::istream& in, const std::string& key, std::size_t& lineno) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("model file ends before '" + key + "'", lineno);
  ++lineno;
  if (line.rfind(key + "=", 0) != 0) {
    throw ParseError("expected '" + key + "=' on line " + std::to_string(lineno), lineno);
  }
  return line.substr(key.size() + 1);
}

}  // namespace detail

inline LoadedModel decode_model(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != "spritetree-model v1") {
    throw ParseError("not a spritetree model file", 0);
  }
  LoadedModel out;
  const std::string kind = detail::expect_key(in, "kind", lineno);
  if (kind != "tree" && kind != "ensemble") throw ParseError("unknown model kind", lineno);
  out.single_tree = kind == "tree";
  const std::uint64_t hash = parse_signature_hex(detail::expect_key(in, "schema_hash", lineno));
  const int actions = static_cast<int>(parse_number(detail::expect_key(in, "action_count", lineno), lineno));
  const bool last = detail::expect_key(in, "include_last_action", lineno) == "1";
  const std::string cols = detail::expect_key(in, "columns", lineno);

  std::vector<std::string> col_names;
  for (const std::string& c : split(cols, ',')) {
    if (c.empty()) continue;
    col_names.push_back(c);
    for (std::size_t i = 1; i < kFeaturesPerSlot; ++i) col_names.emplace_back();
  }
  FeatureSchema schema(detail::slots_from_columns(col_names, col_names.size(), lineno), last, actions);

  std::size_t n_trees = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("label=", 0) == 0) {
      const std::string v = line.substr(6);
      const auto comma = v.find(',');
      if (comma == std::string::npos) throw ParseError("bad label line", lineno);
      schema.set_label(parse_signature_hex(v.substr(0, comma)), v.substr(comma + 1));
    } else if (line.rfind("trees=", 0) == 0) {
      n_trees = static_cast<std::size_t>(parse_number(line.substr(6), lineno));
      break;
    } else {
      throw ParseError("unexpected line " + std::to_string(lineno) + " in model header", lineno);
    }
  }
  if (schema.hash() != hash) throw SchemaError("model schema hash does not match its columns");

  for (std::size_t t = 0; t < n_trees; ++t) {
    if (!std::getline(in, line)) throw ParseError("model file truncated", lineno);
    ++lineno;
    TreeModel tree;
    std::size_t n_nodes = 0;
    if (std::sscanf(line.c_str(), "tree seed=%" SCNu64 " rows=%zu nodes=%zu", &tree.seed,
                    &tree.training_rows, &n_nodes) != 3) {
      throw ParseError("bad tree header on line " + std::to_string(lineno), lineno);
    }
    tree.schema_hash = hash;
    tree.feature_count = schema.feature_count();
    tree.class_count = actions;
    for (std::size_t i = 0; i < n_nodes; ++i) {
      if (!std::getline(in, line)) throw ParseError("model file truncated", lineno);
      ++lineno;
      const auto cells = split(line, ' ');
      TreeNode node;
      std::size_t c = 2;
      if (cells.size() < 2 || cells[0] != std::to_string(i)) {
        throw ParseError("bad node record on line " + std::to_string(lineno), lineno);
      }
      if (cells[1] == "split") {
        if (cells.size() != 6 + static_cast<std::size_t>(actions)) {
          throw ParseError("bad split record on line " + std::to_string(lineno), lineno);
        }
        node.feature = static_cast<int>(parse_number(cells[2], lineno));
        node.threshold = parse_number(cells[3], lineno);
        node.left = static_cast<int>(parse_number(cells[4], lineno));
        node.right = static_cast<int>(parse_number(cells[5], lineno));
        if (node.feature < 0 || static_cast<std::size_t>(node.feature) >= tree.feature_count ||
            node.left <= static_cast<int>(i) || node.right <= static_cast<int>(i) ||
            static_cast<std::size_t>(node.left) >= n_nodes ||
            static_cast<std::size_t>(node.right) >= n_nodes) {
          throw ParseError("split record out of range on line " + std::to_string(lineno), lineno);
        }
        c = 6;
      } else if (cells[1] != "leaf" || cells.size() != 2 + static_cast<std::size_t>(actions)) {
        throw ParseError("bad leaf record on line " + std::to_string(lineno), lineno);
      }
      for (; c < cells.size(); ++c) node.counts.push_back(parse_number(cells[c], lineno));
      tree.nodes.push_back(std::move(node));
    }
    out.ensemble.trees.push_back(std::move(tree));
  }
  if (!std::getline(in, line) || line != "end") throw ParseError("missing end marker", lineno);
  if (out.ensemble.trees.empty()) throw ParseError("model has no trees", lineno);
  out.schema = std::move(schema);
  return out;
}

inline LoadedModel decode_model(const std::string& text) {
  std::istringstream is(text);
  return decode_model(is);
}

inline void save_model(const TreeEnsemble& ens, const FeatureSchema& schema,
                       const std::string& path, bool single_tree = false) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open model for writing: " + path);
  out << encode_model(ens, schema, single_tree);
  if (!out) throw Error("failed writing model: " + path);
}

inline LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model: " + path);
  return decode_model(in);
}

// Loads and checks the model against the schema the caller works with.
inline LoadedModel load_model(const std::string& path, const FeatureSchema& expected) {
  LoadedModel m = load_model(path);
  if (m.schema.hash() != expected.hash()) {
    throw SchemaError("model schema " + signature_hex(m.schema.hash()) +
                      " does not match dataset schema " + signature_hex(expected.hash()));
  }
  return m;
}

}  // namespace spritetree
