#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "spritetree/trees.hpp"
#include "support.hpp"

using namespace spritetree;
using testsupport::grid_dataset;

namespace {

LabeledDataset tiny(std::vector<std::vector<double>> xs, std::vector<int> labels, int classes = 2) {
  std::vector<Slot> slots;
  const std::size_t m = xs.front().size();
  for (std::size_t s = 0; s < (m + 4) / 5; ++s) slots.push_back({s + 1, 0});
  LabeledDataset d{FeatureSchema(slots, false, classes), {}, "synthetic"};
  for (std::size_t i = 0; i < xs.size(); ++i) {
    DatasetRow r;
    r.state.values = xs[i];
    r.state.values.resize(d.schema.feature_count(), 0.0);
    r.label = labels[i];
    r.traj = static_cast<int>(i);
    d.rows.push_back(r);
  }
  return d;
}

// Weighted child impurity of the best root split by exhaustive search,
// lowest feature then lowest threshold on exact ties.
struct RootSplit {
  int feature = -1;
  double threshold = 0;
};

RootSplit oracle_root_split(const LabeledDataset& d) {
  const int classes = d.schema.action_count();
  auto impurity = [&](const std::vector<std::size_t>& rows) {
    std::vector<double> c(static_cast<std::size_t>(classes), 0.0);
    for (std::size_t i : rows) c[static_cast<std::size_t>(d.rows[i].label)] += 1;
    double n = static_cast<double>(rows.size()), s = 0;
    for (double v : c) s += (v / n) * (v / n);
    return n * (1 - s);
  };
  std::vector<std::size_t> all(d.size());
  std::iota(all.begin(), all.end(), 0);
  const double parent = impurity(all);
  RootSplit best;
  double best_score = parent;
  for (std::size_t f = 0; f < d.schema.feature_count(); ++f) {
    std::set<double> values;
    for (const auto& r : d.rows) values.insert(r.state.values[f]);
    for (auto it = values.begin(); std::next(it) != values.end(); ++it) {
      const double thr = (*it + *std::next(it)) / 2;
      std::vector<std::size_t> l, r;
      for (std::size_t i : all) (d.rows[i].state.values[f] <= thr ? l : r).push_back(i);
      const double score = impurity(l) + impurity(r);
      if (score < best_score - 1e-9) {
        best_score = score;
        best = {static_cast<int>(f), thr};
      }
    }
  }
  return best;
}

struct Uniform3 {
  std::vector<double> predict_proba(std::span<const double>) const { return {1.0 / 3, 1.0 / 3, 1.0 / 3}; }
};

struct Oracle {
  std::vector<double> predict_proba(std::span<const double> x) const {
    std::vector<double> p(3, 0.0);
    p[static_cast<std::size_t>(x[0])] = 1.0;
    return p;
  }
};

struct Hopeless {
  std::vector<double> predict_proba(std::span<const double>) const { return {1.0, 1e-20, 0.0}; }
};

}  // namespace

TEST(Gini, ClosedForms) {
  EXPECT_DOUBLE_EQ(gini(std::vector<double>{5, 5}), 0.5);
  EXPECT_DOUBLE_EQ(gini(std::vector<double>{10, 0}), 0.0);
  EXPECT_NEAR(gini(std::vector<double>{1, 1, 1}), 2.0 / 3.0, 1e-15);
}

TEST(FitTree, SingleClassIsOneLeaf) {
  const auto d = tiny({{0}, {1}, {2}}, {1, 1, 1});
  const TreeModel t = fit_tree(d);
  EXPECT_EQ(t.nodes.size(), 1u);
  EXPECT_EQ(evaluate(t, d).accuracy, 1.0);
}

TEST(FitTree, SeparablePairSplitsAtMidpoint) {
  const auto d = tiny({{0}, {1}}, {0, 1});
  const TreeModel t = fit_tree(d);
  ASSERT_EQ(t.nodes.size(), 3u);
  EXPECT_EQ(t.root().feature, 0);
  EXPECT_EQ(t.root().threshold, 0.5);
  EXPECT_EQ(t.nodes[static_cast<std::size_t>(t.root().left)].counts, (std::vector<double>{1, 0}));
  EXPECT_EQ(t.nodes[static_cast<std::size_t>(t.root().right)].counts, (std::vector<double>{0, 1}));
}

TEST(FitTree, EmptyDatasetFails) {
  LabeledDataset d{FeatureSchema({{1, 0}}, false, 2), {}, ""};
  EXPECT_THROW(fit_tree(d), InvariantError);
  EXPECT_THROW(fit_ensemble(d, 3), InvariantError);
}

TEST(FitTree, RootSplitMatchesExhaustiveSearch) {
  Rng rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    const auto d = grid_dataset(4, 3, 40, rng, 5, [](const auto& v, Rng& r) {
      return v[0] + v[2] > 5 ? 2 : static_cast<int>(uniform_index(r, 2));
    });
    const TreeModel t = fit_tree(d);
    const RootSplit want = oracle_root_split(d);
    if (want.feature < 0) {
      EXPECT_TRUE(t.root().is_leaf());
      continue;
    }
    EXPECT_EQ(t.root().feature, want.feature) << "trial " << trial;
    EXPECT_EQ(t.root().threshold, want.threshold) << "trial " << trial;
  }
}

TEST(FitTree, FullyGrownTreeFitsConsistentData) {
  Rng rng(2);
  // Labels are a function of the features, so no conflicting duplicates.
  const auto d = grid_dataset(6, 3, 500, rng, 9, [](const auto& v, Rng&) {
    return static_cast<int>((static_cast<int>(v[0]) * 7 + static_cast<int>(v[3]) * 3 + static_cast<int>(v[5])) % 3);
  });
  EXPECT_EQ(evaluate(fit_tree(d), d).accuracy, 1.0);
}

TEST(FitTree, EverySplitReducesGini) {
  Rng rng(3);
  const auto d = grid_dataset(5, 3, 300, rng, 6, [](const auto&, Rng& r) {
    return static_cast<int>(uniform_index(r, 3));
  });
  const TreeModel t = fit_tree(d);
  for (const TreeNode& n : t.nodes) {
    if (n.is_leaf()) continue;
    const auto& l = t.nodes[static_cast<std::size_t>(n.left)];
    const auto& r = t.nodes[static_cast<std::size_t>(n.right)];
    const double child = (l.coverage() * gini(l.counts) + r.coverage() * gini(r.counts)) / n.coverage();
    EXPECT_GT(gini(n.counts) - child, 1e-12);
    for (std::size_t c = 0; c < n.counts.size(); ++c) EXPECT_EQ(n.counts[c], l.counts[c] + r.counts[c]);
  }
}

TEST(FitTree, ConstantColumnsNeverMatter) {
  Rng rng(4);
  const auto d = grid_dataset(3, 3, 200, rng, 6, [](const auto& v, Rng&) { return v[1] > 3 ? 1 : 0; });
  const TreeModel t = fit_tree(d);
  for (const TreeNode& n : t.nodes) {
    if (!n.is_leaf()) EXPECT_LT(n.feature, 3);
  }
  for (const auto& r : d.rows) {
    auto x = r.state.values;
    const auto p = t.predict_proba(x);
    x[4] = 1e6;
    x[3] = -7;
    EXPECT_EQ(t.predict_proba(x), p);
  }
}

TEST(FitTree, MaxDepthRespected) {
  Rng rng(5);
  const auto d = grid_dataset(5, 3, 300, rng, 9, [](const auto&, Rng& r) {
    return static_cast<int>(uniform_index(r, 3));
  });
  TreeParams p;
  p.max_depth = 3;
  EXPECT_LE(fit_tree(d, p).depth(), 3);
  EXPECT_GT(fit_tree(d).depth(), 3);
}

TEST(Predict, LeafNormalisationAndMismatch) {
  TreeModel t;
  t.nodes.push_back({-1, 0, -1, -1, {3, 1}});
  t.feature_count = 2;
  t.class_count = 2;
  const std::vector<double> x{0, 0};
  EXPECT_EQ(t.predict_proba(x), (std::vector<double>{0.75, 0.25}));
  EXPECT_THROW(t.predict_proba(std::vector<double>{0}), SchemaError);
}

TEST(Predict, EnsembleAveragesTrees) {
  TreeModel a, b;
  a.nodes.push_back({-1, 0, -1, -1, {1, 0}});
  b.nodes.push_back({-1, 0, -1, -1, {0, 1}});
  for (TreeModel* t : {&a, &b}) {
    t->feature_count = 1;
    t->class_count = 2;
  }
  TreeEnsemble e{{a, b}};
  EXPECT_EQ(e.predict_proba(std::vector<double>{3}), (std::vector<double>{0.5, 0.5}));
}

TEST(Predict, ArgmaxTiesGoLow) {
  EXPECT_EQ(argmax(std::vector<double>{0.4, 0.4, 0.2}), 0);
  EXPECT_EQ(argmax(std::vector<double>{0.2, 0.4, 0.4}), 1);
}

TEST(Ensemble, SingleTreeWithoutBootstrapEqualsFitTree) {
  Rng rng(6);
  const auto d = grid_dataset(4, 3, 200, rng, 5, [](const auto& v, Rng&) { return static_cast<int>(v[0]) % 3; });
  const TreeEnsemble e = fit_ensemble(d, 1, 0, {}, false);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e.trees[0].nodes, fit_tree(d).nodes);
}

TEST(Ensemble, SeparableDataFitsAndProbabilitiesSumToOne) {
  Rng rng(7);
  const auto d = grid_dataset(4, 3, 300, rng, 8, [](const auto& v, Rng&) {
    return v[0] < 3 ? 0 : v[1] < 4 ? 1 : 2;
  });
  const TreeEnsemble e = fit_ensemble(d, 100, 11);
  EXPECT_EQ(e.size(), 100u);
  EXPECT_EQ(evaluate(e, d).accuracy, 1.0);
  for (const auto& r : d.rows) {
    const auto p = e.predict_proba(r.state.values);
    double s = 0;
    for (double v : p) {
      EXPECT_GE(v, 0);
      EXPECT_LE(v, 1);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Ensemble, DeterministicGivenSeed) {
  Rng rng(8);
  const auto d = grid_dataset(5, 3, 150, rng, 6, [](const auto&, Rng& r) {
    return static_cast<int>(uniform_index(r, 3));
  });
  EXPECT_EQ(fit_ensemble(d, 10, 42), fit_ensemble(d, 10, 42));
  EXPECT_NE(fit_ensemble(d, 10, 42), fit_ensemble(d, 10, 43));
}

TEST(Evaluate, CrossEntropyClosedForms) {
  const auto d = tiny({{0}, {1}, {2}, {1}}, {0, 1, 2, 1}, 3);
  const Metrics u = evaluate(Uniform3{}, d);
  EXPECT_NEAR(u.cross_entropy, std::log(3.0), 1e-12);
  const Metrics o = evaluate(Oracle{}, d);
  EXPECT_EQ(o.accuracy, 1.0);
  EXPECT_LE(o.cross_entropy, 1e-12);
  const auto one = tiny({{0}}, {1}, 3);
  EXPECT_NEAR(evaluate(Hopeless{}, one).cross_entropy, -std::log(1e-15), 1e-9);
  EXPECT_EQ(evaluate(Hopeless{}, one).accuracy, 0.0);
}

TEST(Evaluate, CrossEntropyNonNegative) {
  Rng rng(9);
  const auto d = grid_dataset(4, 3, 200, rng, 5, [](const auto&, Rng& r) {
    return static_cast<int>(uniform_index(r, 3));
  });
  const TreeModel t = fit_tree(d.subset(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_GE(evaluate(t, d).cross_entropy, 0.0);
}

TEST(KFold, HundredRowsGiveFoldsOfTwenty) {
  for (const auto& f : kfold_assignment(100, 5, 1)) EXPECT_EQ(f.size(), 20u);
}

TEST(KFold, FoldsPartitionRows) {
  const auto folds = kfold_assignment(103, 5, 9);
  std::set<std::size_t> seen;
  std::size_t lo = 1000, hi = 0, total = 0;
  for (const auto& f : folds) {
    lo = std::min(lo, f.size());
    hi = std::max(hi, f.size());
    total += f.size();
    seen.insert(f.begin(), f.end());
  }
  EXPECT_LE(hi - lo, 1u);
  EXPECT_EQ(total, 103u);
  EXPECT_EQ(seen.size(), 103u);
  EXPECT_EQ(*seen.rbegin(), 102u);
  EXPECT_EQ(kfold_assignment(103, 5, 9), folds);
}

TEST(KFold, TooFewRows) {
  EXPECT_THROW(kfold_assignment(4, 5, 0), InvariantError);
  EXPECT_THROW(kfold_assignment(10, 1, 0), ConfigError);
}

TEST(KFold, FunctionOfFeaturesScoresHigh) {
  Rng rng(10);
  const auto d = grid_dataset(4, 3, 600, rng, 10, [](const auto& v, Rng&) {
    return v[0] > v[1] + 1 ? 2 : v[0] + 1 < v[1] ? 1 : 0;
  });
  const KFoldReport r = kfold_evaluate(d, 5, 3);
  EXPECT_EQ(r.folds.size(), 5u);
  EXPECT_GE(r.accuracy.mean, 0.95);
}

TEST(Summarize, MeanAndStandardError) {
  const MeanStderr s = summarize(std::vector<double>{1, 2, 3});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_NEAR(s.stderr_, 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_EQ(summarize(std::vector<double>{5}).stderr_, 0.0);
}

TEST(Export, DepthLimitBoundsNodeCount) {
  Rng rng(12);
  const auto d = grid_dataset(5, 3, 400, rng, 9, [](const auto&, Rng& r) {
    return static_cast<int>(uniform_index(r, 3));
  });
  const TreeModel t = fit_tree(d);
  auto count_nodes = [](const std::string& dot) {
    std::size_t n = 0;
    std::istringstream in(dot);
    std::string line;
    while (std::getline(in, line)) n += line.find("[label=\"") != std::string::npos && line.find("->") == std::string::npos;
    return n;
  };
  const std::string dot = export_tree(t, d.schema, 3);
  EXPECT_LE(count_nodes(dot), 15u);
  EXPECT_EQ(count_nodes(dot), 7u);
  EXPECT_EQ(count_nodes(export_tree(t, d.schema, 1)), 1u);
  EXPECT_EQ(dot.rfind("digraph Tree {", 0), 0u);
  EXPECT_EQ(dot.substr(dot.size() - 2), "}\n");
  EXPECT_THROW(export_tree(t, d.schema, 0), ConfigError);
}

TEST(Export, SingleLeafIsOneNode) {
  const auto d = tiny({{0}, {1}}, {1, 1});
  const std::string dot = export_tree(fit_tree(d), d.schema, 3, {"noop", "up"});
  EXPECT_EQ(std::count(dot.begin(), dot.end(), '\n'), 5);
  EXPECT_NE(dot.find("class = up"), std::string::npos);
  EXPECT_EQ(dot.find("->"), std::string::npos);
}

TEST(Export, UsesReadableFeatureNames) {
  auto d = tiny({{0, 3}, {0, 9}}, {0, 1});
  d.schema.set_label(1, "Paddle");
  const std::string dot = export_tree(fit_tree(d), d.schema, 3);
  EXPECT_NE(dot.find("Paddle X position <= 6"), std::string::npos);
  EXPECT_NE(dot.find("label=\"True\""), std::string::npos);
}

TEST(ModelFile, RoundTripAndSchemaCheck) {
  Rng rng(13);
  auto d = grid_dataset(7, 3, 200, rng, 6, [](const auto&, Rng& r) {
    return static_cast<int>(uniform_index(r, 3));
  });
  d.schema.set_label(2, "Ball");
  const TreeEnsemble e = fit_ensemble(d, 5, 1);
  const std::string text = encode_model(e, d.schema);
  const LoadedModel m = decode_model(text);
  EXPECT_EQ(m.ensemble, e);
  EXPECT_EQ(m.schema, d.schema);
  EXPECT_EQ(m.schema.labels(), d.schema.labels());
  EXPECT_FALSE(m.single_tree);
  EXPECT_EQ(encode_model(m.ensemble, m.schema), text);

  const auto path = std::filesystem::temp_directory_path() / "spritetree_model_rt.txt";
  save_model(e, d.schema, path.string(), true);
  EXPECT_TRUE(load_model(path.string(), d.schema).single_tree);
  const FeatureSchema other({{1, 0}}, true, 3);
  EXPECT_THROW(load_model(path.string(), other), SchemaError);
  std::filesystem::remove(path);
  EXPECT_THROW(decode_model(std::string("not a model\n")), ParseError);
}
