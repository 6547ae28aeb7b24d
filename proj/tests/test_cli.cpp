#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "spritetree/cli.hpp"

using namespace spritetree;
namespace cli = spritetree::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("spritetree_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every regular file under `root`, keyed by relative path.
std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

cli::RunConfig small_config() {
  cli::RunConfig c;
  c.noop_from = 22;
  c.noop_to = 26;
  c.max_steps = 60;
  c.trees = 5;
  c.adversarial_pairs = 15;
  c.seed = 5;
  return c;
}

cli::Workspace workspace(const fs::path& root, cli::RunConfig c) {
  cli::Workspace ws;
  ws.root = root;
  ws.config = std::move(c);
  return ws;
}

void run_pipeline(const cli::Workspace& ws) {
  std::ostringstream log;
  cli::cmd_record(ws, log);
  cli::cmd_dataset(ws, log);
  cli::cmd_train_eval(ws, ws.dataset(), std::nullopt, log);
  cli::cmd_explain(ws, ws.ensemble_model(), ws.trajectories() / "k_23", 4, log);
  cli::cmd_adversarial(ws, ws.ensemble_model(), ws.dataset(), log);
  cli::cmd_export_tree(ws, ws.tree_model(), 3, ws.out() / "tree.dot", log);
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(SPRITETREE_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsAndRoundTrip) {
  const cli::RunConfig d;
  EXPECT_EQ(d.noop_from, 0);
  EXPECT_EQ(d.noop_to, 29);
  EXPECT_EQ(d.trees, 100);
  EXPECT_EQ(d.kfolds, 5);
  EXPECT_EQ(d.adversarial_traj, 24);
  EXPECT_EQ(d.adversarial_pairs, 200);
  EXPECT_DOUBLE_EQ(d.zeta, 0.25);
  cli::RunConfig c = small_config();
  c.game = GameId::kMiniBreakout;
  c.policy = PolicyKind::kScriptedEpsilon;
  c.sticky = true;
  c.last_action = true;
  c.epsilon = 0.05;
  c.out = "elsewhere";
  EXPECT_EQ(cli::decode_config(cli::encode_config(c)), c);
}

TEST(Config, CommentsBlankLinesAndErrors) {
  const auto c = cli::decode_config("# comment\n\n  trees = 7  \ngame=mini-breakout\n");
  EXPECT_EQ(c.trees, 7);
  EXPECT_EQ(c.game, GameId::kMiniBreakout);
  EXPECT_THROW(cli::decode_config("colour = blue\n"), ConfigError);
  EXPECT_THROW(cli::decode_config("trees\n"), ConfigError);
  EXPECT_THROW(cli::decode_config("trees = many\n"), ConfigError);
  EXPECT_THROW(cli::decode_config("sticky = maybe\n"), ConfigError);
  EXPECT_THROW(cli::decode_config("game = pacman\n"), ConfigError);
}

TEST(Config, ValidationRejectsOutOfRangeValues) {
  std::map<std::string, std::string> bad{{"zeta", "1.5"}};
  const auto no_env = [](const char*) -> const char* { return nullptr; };
  EXPECT_THROW(cli::load_config(std::nullopt, bad, no_env), ConfigError);
  for (auto [k, v] : std::map<std::string, std::string>{{"noop_to", "30"},
                                                        {"noop_from", "-1"},
                                                        {"epsilon", "2"},
                                                        {"kfolds", "1"},
                                                        {"trees", "0"},
                                                        {"max_steps", "0"}}) {
    EXPECT_THROW(cli::load_config(std::nullopt, {{k, v}}, no_env), ConfigError) << k;
  }
  EXPECT_THROW(cli::load_config(std::nullopt, {{"noop_from", "9"}, {"noop_to", "3"}}, no_env), ConfigError);
}

TEST(Config, PrecedenceDefaultsFileEnvFlags) {
  const fs::path dir = scratch("precedence");
  cli::write_text(dir / "run.cfg", "trees = 11\nseed = 3\nkfolds = 4\nmax_steps = 50\n");
  const std::map<std::string, std::string> env{{"SPRITETREE_SEED", "8"}, {"SPRITETREE_KFOLDS", "6"}};
  const auto lookup = [&env](const char* n) -> const char* {
    auto it = env.find(n);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  const auto c = cli::load_config(dir / "run.cfg", {{"kfolds", "9"}}, lookup);
  EXPECT_EQ(c.trees, 11);      // file over default
  EXPECT_EQ(c.max_steps, 50);  // file over default
  EXPECT_EQ(c.seed, 8u);       // env over file
  EXPECT_EQ(c.kfolds, 9);      // flag over env
  EXPECT_EQ(c.noop_to, 29);    // untouched default
  EXPECT_EQ(cli::env_name("heldout_from"), "SPRITETREE_HELDOUT_FROM");
  EXPECT_THROW(cli::load_config(dir / "missing.cfg", {}, lookup), ConfigError);
  fs::remove_all(dir);
}

TEST(Workspace, PathsHangOffWorkdir) {
  cli::Workspace ws = workspace("/data/w", small_config());
  ws.config.out = "exp";
  EXPECT_EQ(ws.dataset(), fs::path("/data/w/exp/dataset.csv"));
  EXPECT_EQ(ws.trajectories(), fs::path("/data/w/exp/trajectories"));
  EXPECT_EQ(ws.resolve("/abs/model.txt"), fs::path("/abs/model.txt"));
  EXPECT_EQ(cli::trajectory_dirname(3), "k_03");
  EXPECT_EQ(cli::trajectory_dirname(24), "k_24");
}

TEST(Record, OneDirectoryPerNoopStart) {
  const fs::path root = scratch("record25");
  cli::RunConfig c;
  c.noop_to = 24;
  c.max_steps = 2;
  const auto ws = workspace(root, c);
  std::ostringstream log;
  const auto s = cli::cmd_record(ws, log);
  EXPECT_EQ(s.noop_starts.size(), 25u);
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(ws.trajectories())) dirs += e.is_directory();
  EXPECT_EQ(dirs, 25u);
  EXPECT_TRUE(fs::exists(ws.trajectories() / "k_00" / "frame_00001.ppm"));
  EXPECT_EQ(cli::decode_config(slurp(ws.out() / "config")), c);
  fs::remove_all(root);
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("pipeline"));
    ws_ = new cli::Workspace(workspace(*root_, small_config()));
    run_pipeline(*ws_);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete ws_;
    delete root_;
  }
  static fs::path* root_;
  static cli::Workspace* ws_;
};

fs::path* Pipeline::root_ = nullptr;
cli::Workspace* Pipeline::ws_ = nullptr;

TEST_F(Pipeline, ProducesEveryArtifact) {
  for (const char* f : {"config", "dataset.csv", "model_tree.txt", "model_ensemble.txt", "report.txt",
                        "metrics.csv", "explain_t4.txt", "explain_t4.csv", "explain_t4_shap.csv",
                        "explain_t4.ppm", "adversarial.txt", "adversarial_pairs.csv",
                        "adversarial_table.txt", "tree.dot"}) {
    EXPECT_TRUE(fs::exists(ws_->out() / f)) << f;
  }
}

TEST_F(Pipeline, DatasetKeepsTrajectoryIds) {
  const LabeledDataset d = read_dataset(ws_->dataset().string());
  std::set<int> ids;
  for (const auto& r : d.rows) ids.insert(r.traj);
  EXPECT_EQ(ids, (std::set<int>{22, 23, 24, 25, 26}));
  EXPECT_EQ(d.game, "mini-pong");
  EXPECT_FALSE(d.schema.include_last_action());
  EXPECT_FALSE(d.schema.labels().empty());
}

TEST_F(Pipeline, ReportHasBothEvaluations) {
  const std::string report = slurp(ws_->out() / "report.txt");
  EXPECT_NE(report.find("Accuracy (%)"), std::string::npos);
  EXPECT_NE(report.find("Cross Entropy"), std::string::npos);
  EXPECT_NE(report.find("5-fold"), std::string::npos);
  EXPECT_NE(report.find("held-out (k >= 25)"), std::string::npos);
  EXPECT_EQ(report.find("no held-out"), std::string::npos);
  EXPECT_EQ(report.find("Sticky"), std::string::npos);
  const std::string metrics = slurp(ws_->out() / "metrics.csv");
  EXPECT_NE(metrics.find("\nkfold,default,"), std::string::npos);
  EXPECT_NE(metrics.find("\nheldout,default,"), std::string::npos);
}

TEST_F(Pipeline, ModelsCarryDatasetSchema) {
  const LabeledDataset d = read_dataset(ws_->dataset().string());
  const auto tree = load_model(ws_->tree_model().string(), d.schema);
  const auto ens = load_model(ws_->ensemble_model().string(), d.schema);
  EXPECT_TRUE(tree.single_tree);
  EXPECT_EQ(tree.ensemble.size(), 1u);
  EXPECT_FALSE(ens.single_tree);
  EXPECT_EQ(ens.ensemble.size(), 5u);
}

TEST_F(Pipeline, ExplainOverlayAndTable) {
  cli::Workspace ws = *ws_;
  ws.config.out = "explain_extra";
  std::ostringstream log;
  const auto r = cli::cmd_explain(ws, ws_->tree_model(), ws_->trajectories() / "k_22", 7, log);
  const Frame src = read_image((ws_->trajectories() / "k_22" / frame_filename(7)).string());
  EXPECT_EQ(r.overlay.width(), src.width());
  EXPECT_EQ(r.overlay.height(), src.height());
  EXPECT_GE(r.ranking.size(), 1u);
  EXPECT_LE(r.ranking.size(), 5u);
  for (std::size_t c = 0; c < r.attribution.output.size(); ++c) {
    EXPECT_NEAR(r.attribution.total(c), r.attribution.output[c], 1e-9);
  }
  EXPECT_NE(r.table.find("rank"), std::string::npos);
  EXPECT_EQ(read_image((ws.out() / "explain_t7.ppm").string()), r.overlay);
  const std::string csv = slurp(ws.out() / "explain_t7.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.ranking.size() + 1);
}

TEST_F(Pipeline, ExplainRejectsTimestepOutOfRange) {
  std::ostringstream log;
  const auto len = read_trajectory(ws_->trajectories() / "k_22", false).actions.size();
  EXPECT_THROW(cli::cmd_explain(*ws_, ws_->tree_model(), ws_->trajectories() / "k_22",
                                static_cast<long long>(len), log),
               ConfigError);
  EXPECT_THROW(cli::cmd_explain(*ws_, ws_->tree_model(), ws_->trajectories() / "k_22", -1, log),
               ConfigError);
}

TEST_F(Pipeline, AdversarialReport) {
  const std::string table = slurp(ws_->out() / "adversarial_table.txt");
  EXPECT_NE(table.find("Agent action changed %"), std::string::npos);
  EXPECT_NE(table.find("mini-pong"), std::string::npos);
  const std::string rep = slurp(ws_->out() / "adversarial.txt");
  EXPECT_NE(rep.find("trajectory=24\n"), std::string::npos);
  EXPECT_NE(rep.find("pairs_evaluated=15\n"), std::string::npos);
}

TEST_F(Pipeline, AdversarialNeedsOriginTrajectory) {
  cli::Workspace ws = *ws_;
  ws.config.adversarial_traj = 26;  // held out, so not among training rows
  std::ostringstream log;
  EXPECT_THROW(cli::cmd_adversarial(ws, ws.ensemble_model(), ws.dataset(), log), Error);
}

TEST_F(Pipeline, ExportTreeDepth) {
  const std::string dot = slurp(ws_->out() / "tree.dot");
  EXPECT_EQ(dot.rfind("digraph", 0), 0u);
  std::size_t nodes = 0;
  std::istringstream in(dot);
  std::string line;
  while (std::getline(in, line)) nodes += line.find("[label=") != std::string::npos && line.find("->") == std::string::npos;
  EXPECT_LE(nodes, 15u);
  EXPECT_GE(nodes, 1u);
}

TEST_F(Pipeline, RerunIsByteIdentical) {
  const fs::path other = scratch("pipeline_rerun");
  run_pipeline(workspace(other, small_config()));
  const auto a = tree_contents(ws_->out());
  const auto b = tree_contents(workspace(other, small_config()).out());
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, bytes] : a) {
    ASSERT_TRUE(b.count(name)) << name;
    EXPECT_TRUE(b.at(name) == bytes) << name;
  }
  fs::remove_all(other);
}

TEST_F(Pipeline, TrainEvalRejectsMismatchedSchema) {
  cli::Workspace ws = *ws_;
  ws.config.last_action = true;
  ws.config.out = "mismatch";
  std::ostringstream log;
  EXPECT_THROW(cli::cmd_train_eval(ws, ws_->dataset(), std::nullopt, log), SchemaError);
  ws.config.last_action = false;
  ws.config.game = GameId::kMiniBreakout;
  EXPECT_THROW(cli::cmd_train_eval(ws, ws_->dataset(), std::nullopt, log), SchemaError);
  ws.config.out = ws_->config.out;
  EXPECT_THROW(cli::cmd_dataset(ws, log), SchemaError);
}

TEST_F(Pipeline, NoHeldOutNotice) {
  cli::Workspace ws = *ws_;
  ws.config.heldout_from = 30;
  ws.config.out = "all_train";
  std::ostringstream log;
  const auto r = cli::cmd_train_eval(ws, ws_->dataset(), std::nullopt, log);
  EXPECT_FALSE(r.heldout);
  EXPECT_NE(r.table.find("no held-out trajectories (noop start >= 30)"), std::string::npos);
}

TEST_F(Pipeline, StickyColumns) {
  cli::Workspace sticky = *ws_;
  sticky.config.sticky = true;
  sticky.config.last_action = true;
  sticky.config.out = "sticky";
  std::ostringstream log;
  cli::cmd_record(sticky, log);
  cli::cmd_dataset(sticky, log);
  cli::Workspace eval = *ws_;
  eval.config.out = "sticky_eval";
  const auto r = cli::cmd_train_eval(eval, ws_->dataset(), sticky.dataset(), log);
  ASSERT_TRUE(r.sticky_kfold);
  ASSERT_TRUE(r.sticky_heldout);
  EXPECT_NE(r.table.find("Accuracy (%) (Sticky)"), std::string::npos);
  EXPECT_NE(r.table.find("Cross Entropy (Sticky)"), std::string::npos);
  EXPECT_TRUE(fs::exists(eval.out() / "model_tree_sticky.txt"));
  // A non-sticky dataset cannot stand in for the sticky one.
  EXPECT_THROW(cli::cmd_train_eval(eval, ws_->dataset(), ws_->dataset(), log), SchemaError);
}

TEST(Binary, ExitCodes) {
  const fs::path root = scratch("binary");
  const std::string wd = "--workdir " + root.string();
  EXPECT_EQ(run_binary(wd + " --zeta 1.5 record"), 1);
  EXPECT_FALSE(fs::exists(root / "run"));
  EXPECT_EQ(run_binary(wd + " frobnicate"), 1);
  EXPECT_EQ(run_binary(wd), 1);
  EXPECT_EQ(run_binary(wd + " --trees=abc dataset"), 1);
  EXPECT_EQ(run_binary(wd + " dataset"), 2);  // nothing recorded yet
  EXPECT_EQ(run_binary(wd + " --noop-from 3 --noop-to 3 --max-steps 4 record"), 0);
  EXPECT_TRUE(fs::exists(root / "run" / "trajectories" / "k_03" / "frame_00003.ppm"));
  EXPECT_EQ(run_binary(wd + " explain --model run/none.txt --trajectory run/trajectories/k_03 --timestep 1"), 2);
  cli::write_text(root / "c.cfg", "noop_from = 3\nnoop_to = 3\nmax_steps = 4\nkfolds = 2\ntrees = 2\n");
  EXPECT_EQ(run_binary(wd + " --config c.cfg dataset"), 0);
  EXPECT_EQ(run_binary(wd + " --config c.cfg train-eval"), 0);
  EXPECT_EQ(run_binary(wd + " --config c.cfg explain --model run/model_tree.txt --trajectory "
                            "run/trajectories/k_03 --timestep 4"),
            1);
  EXPECT_EQ(run_binary(wd + " --config c.cfg explain --model run/model_tree.txt --trajectory "
                            "run/trajectories/k_03 --timestep 3"),
            0);
  EXPECT_EQ(run_binary(wd + " --config c.cfg export-tree"), 0);
  EXPECT_TRUE(fs::exists(root / "run" / "tree.dot"));
  EXPECT_EQ(run_binary(wd + " --config c.cfg export-tree --depth 0"), 1);
  fs::remove_all(root);
}
