#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spritetree/errors.hpp"
#include "spritetree/features.hpp"
#include "spritetree/trees.hpp"

namespace spritetree {

// Shapley attribution of one prediction. values[f][c] is feature f's share
// of class c's deviation from base_value[c]; base_value + sum over features
// reproduces `output` (local accuracy).
struct Attribution {
  std::vector<double> base_value;
  std::vector<std::vector<double>> values;
  std::vector<double> output;
  int predicted_class = 0;

  double total(std::size_t c) const {
    double s = base_value[c];
    for (const auto& row : values) s += row[c];
    return s;
  }
};

namespace detail {

inline void check_coverage(const TreeModel& model) {
  if (model.nodes.empty()) throw InvariantError("tree has no nodes");
  for (const TreeNode& n : model.nodes) {
    if (n.counts.size() != static_cast<std::size_t>(model.class_count) || !(n.coverage() > 0)) {
      throw InvariantError("tree node lacks training coverage; TreeSHAP needs per-node counts");
    }
  }
}

// Coverage-weighted expectation with the features in `known` fixed to x.
inline std::vector<double> conditional_expectation(const TreeModel& model,
                                                   std::span<const double> x,
                                                   const std::vector<bool>& known, int node = 0) {
  const TreeNode& n = model.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return n.probabilities();
  if (known[static_cast<std::size_t>(n.feature)]) {
    return conditional_expectation(model, x, known,
                                   x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                       : n.right);
  }
  const TreeNode& l = model.nodes[static_cast<std::size_t>(n.left)];
  const TreeNode& r = model.nodes[static_cast<std::size_t>(n.right)];
  const double cover = n.coverage();
  auto vl = conditional_expectation(model, x, known, n.left);
  const auto vr = conditional_expectation(model, x, known, n.right);
  for (std::size_t c = 0; c < vl.size(); ++c) {
    vl[c] = (l.coverage() * vl[c] + r.coverage() * vr[c]) / cover;
  }
  return vl;
}

// One element of the path of unique features from the root: the fraction of
// "feature missing" flow (zero) and "feature present" flow (one), and the
// permutation weight of subsets of each size.
struct PathElement {
  int feature = -1;
  double zero_fraction = 0;
  double one_fraction = 0;
  double weight = 0;
};

class PathShap {
 public:
  PathShap(const TreeModel& model, std::span<const double> x, std::vector<std::vector<double>>& phi)
      : model_(model), x_(x), phi_(phi) {
    const auto depth = static_cast<std::size_t>(model.depth());
    storage_.resize((depth + 2) * (depth + 3) / 2);
  }

  void run() { recurse(0, storage_.data(), 0, 1.0, 1.0, -1); }

 private:
  static void extend(PathElement* path, std::size_t depth, double zero, double one, int feature) {
    path[depth] = {feature, zero, one, depth == 0 ? 1.0 : 0.0};
    for (std::size_t i = depth; i-- > 0;) {
      path[i + 1].weight += one * path[i].weight * static_cast<double>(i + 1) /
                            static_cast<double>(depth + 1);
      path[i].weight = zero * path[i].weight * static_cast<double>(depth - i) /
                       static_cast<double>(depth + 1);
    }
  }

  static void unwind(PathElement* path, std::size_t depth, std::size_t index) {
    const double one = path[index].one_fraction;
    const double zero = path[index].zero_fraction;
    double next = path[depth].weight;
    for (std::size_t i = depth; i-- > 0;) {
      if (one != 0) {
        const double tmp = path[i].weight;
        path[i].weight = next * static_cast<double>(depth + 1) / (static_cast<double>(i + 1) * one);
        next = tmp - path[i].weight * zero * static_cast<double>(depth - i) /
                         static_cast<double>(depth + 1);
      } else {
        path[i].weight = path[i].weight * static_cast<double>(depth + 1) /
                         (zero * static_cast<double>(depth - i));
      }
    }
    for (std::size_t i = index; i < depth; ++i) {
      path[i].feature = path[i + 1].feature;
      path[i].zero_fraction = path[i + 1].zero_fraction;
      path[i].one_fraction = path[i + 1].one_fraction;
    }
  }

  // Total permutation weight if the element at `index` were unwound.
  static double unwound_sum(const PathElement* path, std::size_t depth, std::size_t index) {
    const double one = path[index].one_fraction;
    const double zero = path[index].zero_fraction;
    double next = path[depth].weight;
    double total = 0;
    for (std::size_t i = depth; i-- > 0;) {
      if (one != 0) {
        const double tmp = next * static_cast<double>(depth + 1) / (static_cast<double>(i + 1) * one);
        total += tmp;
        next = path[i].weight - tmp * zero * static_cast<double>(depth - i) /
                                    static_cast<double>(depth + 1);
      } else {
        total += path[i].weight * static_cast<double>(depth + 1) /
                 (zero * static_cast<double>(depth - i));
      }
    }
    return total;
  }

  void recurse(int node, PathElement* parent_path, std::size_t depth, double zero, double one,
               int feature) {
    PathElement* path = parent_path + depth;
    std::copy(parent_path, parent_path + depth, path);
    extend(path, depth, zero, one, feature);

    const TreeNode& n = model_.nodes[static_cast<std::size_t>(node)];
    if (n.is_leaf()) {
      const auto p = n.probabilities();
      for (std::size_t i = 1; i <= depth; ++i) {
        const double w = unwound_sum(path, depth, i);
        const PathElement& el = path[i];
        const double scale = w * (el.one_fraction - el.zero_fraction);
        auto& row = phi_[static_cast<std::size_t>(el.feature)];
        for (std::size_t c = 0; c < p.size(); ++c) row[c] += scale * p[c];
      }
      return;
    }

    const bool go_left = x_[static_cast<std::size_t>(n.feature)] <= n.threshold;
    const int hot = go_left ? n.left : n.right;
    const int cold = go_left ? n.right : n.left;
    const double cover = n.coverage();
    const double hot_zero = model_.nodes[static_cast<std::size_t>(hot)].coverage() / cover;
    const double cold_zero = model_.nodes[static_cast<std::size_t>(cold)].coverage() / cover;
    double incoming_zero = 1, incoming_one = 1;

    // A feature already on the path is unwound and re-extended here.
    std::size_t k = 0;
    for (; k <= depth; ++k) {
      if (path[k].feature == n.feature) break;
    }
    if (k != depth + 1) {
      incoming_zero = path[k].zero_fraction;
      incoming_one = path[k].one_fraction;
      unwind(path, depth, k);
      --depth;
    }
    recurse(hot, path, depth + 1, hot_zero * incoming_zero, incoming_one, n.feature);
    recurse(cold, path, depth + 1, cold_zero * incoming_zero, 0, n.feature);
  }

  const TreeModel& model_;
  std::span<const double> x_;
  std::vector<std::vector<double>>& phi_;
  std::vector<PathElement> storage_;
};

inline Attribution empty_attribution(std::size_t features, std::size_t classes) {
  Attribution a;
  a.values.assign(features, std::vector<double>(classes, 0.0));
  return a;
}

}  // namespace detail

// Exact path-dependent TreeSHAP: features outside a coalition follow both
// children weighted by training coverage. Runs in O(leaves * depth^2).
inline Attribution tree_shap(const TreeModel& model, std::span<const double> x) {
  model.check_input(x);
  detail::check_coverage(model);
  const auto classes = static_cast<std::size_t>(model.class_count);
  Attribution a = detail::empty_attribution(model.feature_count, classes);
  a.base_value = detail::conditional_expectation(model, x, std::vector<bool>(model.feature_count, false));
  detail::PathShap(model, x, a.values).run();
  a.output = model.predict_proba(x);
  a.predicted_class = argmax(a.output);
  return a;
}

// Shapley values by enumerating every coalition; exponential, meant as a
// reference for small models.
inline Attribution brute_force_shap(const TreeModel& model, std::span<const double> x) {
  model.check_input(x);
  detail::check_coverage(model);
  const std::size_t m = model.feature_count;
  if (m > 20) throw InvariantError("brute-force Shapley limited to 20 features");
  const auto classes = static_cast<std::size_t>(model.class_count);

  std::vector<std::vector<double>> v(std::size_t{1} << m);
  std::vector<bool> known(m);
  for (std::size_t mask = 0; mask < v.size(); ++mask) {
    for (std::size_t f = 0; f < m; ++f) known[f] = (mask >> f) & 1u;
    v[mask] = detail::conditional_expectation(model, x, known);
  }
  // weight[s] = s! (m - s - 1)! / m!
  std::vector<double> weight(m, 0.0);
  for (std::size_t s = 0; s < m; ++s) {
    double w = 1.0 / static_cast<double>(m);
    for (std::size_t i = 1; i <= s; ++i) w *= static_cast<double>(i) / static_cast<double>(m - i);
    weight[s] = w;
  }

  Attribution a = detail::empty_attribution(m, classes);
  for (std::size_t f = 0; f < m; ++f) {
    const std::size_t bit = std::size_t{1} << f;
    for (std::size_t mask = 0; mask < v.size(); ++mask) {
      if (mask & bit) continue;
      const double w = weight[static_cast<std::size_t>(__builtin_popcountll(mask))];
      for (std::size_t c = 0; c < classes; ++c) a.values[f][c] += w * (v[mask | bit][c] - v[mask][c]);
    }
  }
  a.base_value = v.front();
  a.output = model.predict_proba(x);
  a.predicted_class = argmax(a.output);
  return a;
}

// Shapley values are linear in the model, so the ensemble attribution is
// the mean of the per-tree attributions.
inline Attribution ensemble_shap(const TreeEnsemble& ens, std::span<const double> x) {
  if (ens.trees.empty()) throw InvariantError("empty ensemble");
  const auto classes = static_cast<std::size_t>(ens.class_count());
  Attribution a = detail::empty_attribution(ens.feature_count(), classes);
  a.base_value.assign(classes, 0.0);
  for (const TreeModel& t : ens.trees) {
    const Attribution ta = tree_shap(t, x);
    for (std::size_t c = 0; c < classes; ++c) a.base_value[c] += ta.base_value[c];
    for (std::size_t f = 0; f < a.values.size(); ++f) {
      for (std::size_t c = 0; c < classes; ++c) a.values[f][c] += ta.values[f][c];
    }
  }
  const double n = static_cast<double>(ens.size());
  for (double& b : a.base_value) b /= n;
  for (auto& row : a.values) {
    for (double& v : row) v /= n;
  }
  a.output = ens.predict_proba(x);
  a.predicted_class = argmax(a.output);
  return a;
}

struct SpriteRank {
  std::size_t slot = 0;
  double max_abs_shap = 0;
  FeatureKind top_feature = FeatureKind::kPresent;
  double top_value = 0;  // signed Shapley value of top_feature
  int rank = 0;          // 1 = most influential
};

// Ranks present sprite slots by max |Shapley value| over their five
// features for the predicted class; ties keep slot order.
inline std::vector<SpriteRank> rank_sprites(const Attribution& attr, const SymbolicState& state,
                                            const FeatureSchema& schema) {
  if (state.values.size() != schema.feature_count() || attr.values.size() != schema.feature_count()) {
    throw SchemaError("attribution, state and schema disagree on feature count");
  }
  const auto c = static_cast<std::size_t>(attr.predicted_class);
  std::vector<SpriteRank> out;
  for (std::size_t slot = 0; slot < schema.slots().size(); ++slot) {
    if (state.values[schema.feature_index(slot, FeatureKind::kPresent)] == 0.0) continue;
    SpriteRank r;
    r.slot = slot;
    r.max_abs_shap = -1;
    for (std::size_t k = 0; k < kFeaturesPerSlot; ++k) {
      const double v = attr.values[schema.feature_index(slot, static_cast<FeatureKind>(k))][c];
      if (std::abs(v) > r.max_abs_shap) {
        r.max_abs_shap = std::abs(v);
        r.top_feature = static_cast<FeatureKind>(k);
        r.top_value = v;
      }
    }
    out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(), [](const SpriteRank& a, const SpriteRank& b) {
    return a.max_abs_shap > b.max_abs_shap;
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i + 1);
  return out;
}

// Delimited table: feature,class,shapley (plus base and output rows).
inline std::string encode_attribution(const Attribution& a, const FeatureSchema& schema) {
  std::ostringstream os;
  os << "feature,class,shapley\n";
  for (std::size_t c = 0; c < a.base_value.size(); ++c) {
    os << "base_value," << c << "," << format_number(a.base_value[c]) << "\n";
  }
  for (std::size_t f = 0; f < a.values.size(); ++f) {
    for (std::size_t c = 0; c < a.values[f].size(); ++c) {
      os << schema.column_name(f) << "," << c << "," << format_number(a.values[f][c]) << "\n";
    }
  }
  for (std::size_t c = 0; c < a.output.size(); ++c) {
    os << "output," << c << "," << format_number(a.output[c]) << "\n";
  }
  return os.str();
}

}  // namespace spritetree
