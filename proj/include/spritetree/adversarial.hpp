#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spritetree/envharness.hpp"
#include "spritetree/errors.hpp"
#include "spritetree/features.hpp"
#include "spritetree/random.hpp"
#include "spritetree/shap.hpp"
#include "spritetree/trees.hpp"

namespace spritetree {

inline constexpr int kSubsetPly = 3;
inline constexpr double kTopSpriteFraction = 0.10;

// Routes every row through the first three split levels of `tree` and
// groups rows by the node they stop at. Groups are ordered by that node's
// id (pre-order, left before right); empty regions do not appear.
inline std::vector<std::vector<std::size_t>> three_ply_subsets(const TreeModel& tree,
                                                               const LabeledDataset& data) {
  std::map<int, std::vector<std::size_t>> regions;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& x = data.rows[i].state.values;
    tree.check_input(x);
    int n = 0;
    for (int ply = 0; ply < kSubsetPly && !tree.nodes[static_cast<std::size_t>(n)].is_leaf(); ++ply) {
      const TreeNode& node = tree.nodes[static_cast<std::size_t>(n)];
      n = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
    }
    regions[n].push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  for (auto& [node, rows] : regions) out.push_back(std::move(rows));
  return out;
}

// Per-tree subsets depend only on (ensemble, data), so they are computed
// once and reused for every origin state.
class AdversarialContext {
 public:
  AdversarialContext(const TreeEnsemble& ensemble, const LabeledDataset& data)
      : ensemble_(ensemble), data_(data) {
    if (data.rows.empty()) throw InvariantError("adversarial search needs a non-empty dataset");
    if (ensemble.trees.empty()) throw InvariantError("adversarial search needs a fitted ensemble");
    if (ensemble.schema_hash() != data.schema.hash()) {
      throw SchemaError("ensemble and dataset use different schemas");
    }
    subsets_.reserve(ensemble.size());
    for (const TreeModel& t : ensemble.trees) subsets_.push_back(three_ply_subsets(t, data));
  }

  const TreeEnsemble& ensemble() const noexcept { return ensemble_; }
  const LabeledDataset& data() const noexcept { return data_; }
  const std::vector<std::vector<std::size_t>>& subsets(std::size_t tree) const {
    return subsets_.at(tree);
  }

 private:
  const TreeEnsemble& ensemble_;
  const LabeledDataset& data_;
  std::vector<std::vector<std::vector<std::size_t>>> subsets_;
};

struct AdversarialCandidate {
  SymbolicState origin;
  SymbolicState permuted;
  std::size_t donor_row = 0;
  int donor_traj = 0;
  int donor_t = 0;
  std::size_t tree_index = 0;
  std::size_t subset_index = 0;
  double original_action_prob = 0;  // ensemble P(original action | permuted)
};

struct AdversarialSearch {
  int original_action = 0;
  double origin_prob = 0;  // ensemble P(original action | origin)
  std::vector<std::size_t> swapped_slots;
  std::vector<AdversarialCandidate> candidates;
  std::size_t best = 0;

  const AdversarialCandidate& chosen() const { return candidates.at(best); }
};

// Number of top-ranked sprites to swap: 10% of the present sprites,
// rounded up.
inline std::size_t top_sprite_count(std::size_t present) {
  return static_cast<std::size_t>(
      std::ceil(static_cast<double>(present) * kTopSpriteFraction - 1e-12));
}

// Full candidate search for one origin state:
//  1. rank present sprites by ensemble Shapley value and keep the top 10%;
//  2. draw one donor row uniformly from each non-empty three-ply region of
//     each tree;
//  3. copy the kept sprites' five features from the donor into the origin;
//  4. keep the candidate with the lowest ensemble probability for the
//     origin's predicted action (first one wins ties).
// The target policy is never consulted.
inline AdversarialSearch adversarial_search(const SymbolicState& origin,
                                            const AdversarialContext& ctx, std::uint64_t seed) {
  const FeatureSchema& schema = ctx.data().schema;
  if (origin.values.size() != schema.feature_count()) throw SchemaError("origin does not match schema");

  const Attribution attr = ensemble_shap(ctx.ensemble(), origin.values);
  const auto ranking = rank_sprites(attr, origin, schema);
  if (ranking.empty()) throw InvariantError("origin state has no present sprites to swap");

  AdversarialSearch out;
  out.original_action = attr.predicted_class;
  out.origin_prob = attr.output[static_cast<std::size_t>(out.original_action)];
  for (std::size_t i = 0; i < top_sprite_count(ranking.size()); ++i) {
    out.swapped_slots.push_back(ranking[i].slot);
  }

  Rng rng(seed);
  for (std::size_t t = 0; t < ctx.ensemble().size(); ++t) {
    const auto& regions = ctx.subsets(t);
    for (std::size_t s = 0; s < regions.size(); ++s) {
      const std::size_t row = regions[s][uniform_index(rng, regions[s].size())];
      const DatasetRow& donor = ctx.data().rows[row];
      AdversarialCandidate c;
      c.origin = origin;
      c.permuted = origin;
      for (std::size_t slot : out.swapped_slots) {
        for (std::size_t k = 0; k < kFeaturesPerSlot; ++k) {
          const std::size_t f = schema.feature_index(slot, static_cast<FeatureKind>(k));
          c.permuted.values[f] = donor.state.values[f];
        }
      }
      c.donor_row = row;
      c.donor_traj = donor.traj;
      c.donor_t = donor.t;
      c.tree_index = t;
      c.subset_index = s;
      c.original_action_prob =
          ctx.ensemble().predict_proba(c.permuted.values)[static_cast<std::size_t>(out.original_action)];
      out.candidates.push_back(std::move(c));
    }
  }
  for (std::size_t i = 1; i < out.candidates.size(); ++i) {
    if (out.candidates[i].original_action_prob < out.candidates[out.best].original_action_prob) {
      out.best = i;
    }
  }
  return out;
}

inline AdversarialCandidate generate_adversarial(const SymbolicState& origin,
                                                 const TreeEnsemble& ensemble,
                                                 const LabeledDataset& data, std::uint64_t seed) {
  const AdversarialContext ctx(ensemble, data);
  return adversarial_search(origin, ctx, seed).chosen();
}

struct PairOutcome {
  int traj = 0;
  int t = 0;
  int agent_action = 0;           // target policy on the origin state
  int permuted_agent_action = 0;  // target policy on the adversarial state
  int surrogate_action = 0;
  double surrogate_prob_before = 0;
  double surrogate_prob_after = 0;
  std::size_t candidates = 0;
};

struct PermutationReport {
  std::size_t pairs_evaluated = 0;
  std::size_t changed = 0;
  double change_rate = 0;
  std::uint64_t seed = 0;
  int trajectory = 0;
  std::size_t requested_pairs = 0;
  std::vector<PairOutcome> pairs;
};

// Rows of trajectory `traj` used as origins: all of them when there are at
// most `max_pairs`, else `max_pairs` drawn without replacement. Returned
// in timestep order.
inline std::vector<std::size_t> select_origin_rows(const LabeledDataset& data, int traj,
                                                   std::size_t max_pairs, std::uint64_t seed) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.rows[i].traj == traj) rows.push_back(i);
  }
  if (rows.empty()) throw InvariantError("dataset has no rows for trajectory " + std::to_string(traj));
  if (rows.size() > max_pairs) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_pairs; ++i) {
      std::swap(rows[i], rows[i + uniform_index(rng, rows.size() - i)]);
    }
    rows.resize(max_pairs);
  }
  std::sort(rows.begin(), rows.end(),
            [&data](std::size_t a, std::size_t b) { return data.rows[a].t < data.rows[b].t; });
  return rows;
}

// Does the target policy act differently on the adversarial state than on
// the original one? The scripted policy reads the symbolic state directly.
inline PermutationReport measure_action_change(const TargetPolicy& policy,
                                               const TreeEnsemble& ensemble,
                                               const LabeledDataset& data, int traj = 24,
                                               std::size_t max_pairs = 200,
                                               std::uint64_t seed = 0) {
  const AdversarialContext ctx(ensemble, data);
  PermutationReport report;
  report.seed = seed;
  report.trajectory = traj;
  report.requested_pairs = max_pairs;
  const auto origins = select_origin_rows(data, traj, max_pairs, seed);
  for (std::size_t row : origins) {
    const DatasetRow& r = data.rows[row];
    const SymbolicState& origin = r.state;
    if (configuration_of(origin, data.schema).empty()) continue;  // nothing to swap
    const AdversarialSearch search = adversarial_search(origin, ctx, mix_seed(seed, row));
    const AdversarialCandidate& best = search.chosen();
    PairOutcome o;
    o.traj = r.traj;
    o.t = r.t;
    o.agent_action = policy.greedy_action(configuration_of(origin, data.schema));
    o.permuted_agent_action = policy.greedy_action(configuration_of(best.permuted, data.schema));
    o.surrogate_action = search.original_action;
    o.surrogate_prob_before = search.origin_prob;
    o.surrogate_prob_after = best.original_action_prob;
    o.candidates = search.candidates.size();
    report.changed += o.agent_action != o.permuted_agent_action;
    report.pairs.push_back(o);
  }
  report.pairs_evaluated = report.pairs.size();
  report.change_rate = report.pairs_evaluated
                           ? static_cast<double>(report.changed) /
                                 static_cast<double>(report.pairs_evaluated)
                           : 0.0;
  return report;
}

inline std::string encode_report(const PermutationReport& r, const std::string& config_line = "") {
  std::ostringstream os;
  os << "permutation-report v1\n";
  if (!config_line.empty()) os << "config=" << config_line << "\n";
  os << "seed=" << r.seed << "\n";
  os << "trajectory=" << r.trajectory << "\n";
  os << "requested_pairs=" << r.requested_pairs << "\n";
  os << "pairs_evaluated=" << r.pairs_evaluated << "\n";
  os << "changed=" << r.changed << "\n";
  os << "change_rate=" << format_number(r.change_rate) << "\n";
  return os.str();
}

inline std::string encode_pair_table(const PermutationReport& r) {
  std::ostringstream os;
  os << "traj,t,agent_action,permuted_agent_action,surrogate_action,surrogate_prob_before,"
        "surrogate_prob_after,candidates\n";
  for (const PairOutcome& p : r.pairs) {
    os << p.traj << "," << p.t << "," << p.agent_action << "," << p.permuted_agent_action << ","
       << p.surrogate_action << "," << format_number(p.surrogate_prob_before) << ","
       << format_number(p.surrogate_prob_after) << "," << p.candidates << "\n";
  }
  return os.str();
}

}  // namespace spritetree
