// spritetree: record mini-game trajectories, build symbolic datasets, train
// and evaluate tree surrogates, explain and attack them.
//
// Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime or
// data errors.

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spritetree/cli.hpp"

namespace st = spritetree;
namespace cli = spritetree::cli;

int main(int argc, char** argv) {
  CLI::App app{"Sprite-based symbolic surrogates for scripted game agents"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string workdir = ".";
  std::optional<std::string> config_file;
  app.add_option("--workdir", workdir, "Root for every relative path")->capture_default_str();
  app.add_option("--config", config_file, "key = value config file (relative to --workdir)");

  // Flags mirror config keys; dashes map to underscores.
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> flag_opts;
  for (const std::string& key : cli::config_keys()) {
    std::string flag = "--" + key;
    for (char& ch : flag) ch = ch == '_' ? '-' : ch;
    flag_opts[key] = app.add_option(flag, values[key], "config override: " + key);
  }

  auto* record = app.add_subcommand("record", "Sample trajectories for the configured noop range");
  auto* dataset = app.add_subcommand("dataset", "Decompose recorded trajectories into a dataset");

  auto* train = app.add_subcommand("train-eval", "k-fold and held-out evaluation, saves models");
  std::string train_data = "";
  std::optional<std::string> sticky_data;
  train->add_option("--dataset", train_data, "Dataset file (default <out>/dataset.csv)");
  train->add_option("--sticky-dataset", sticky_data, "Sticky-actions dataset for the extra columns");

  auto* explain = app.add_subcommand("explain", "Rank sprites by Shapley value for one timestep");
  std::string explain_model, explain_traj;
  long long explain_t = 0;
  explain->add_option("--model", explain_model, "Model file")->required();
  explain->add_option("--trajectory", explain_traj, "Trajectory directory")->required();
  explain->add_option("--timestep", explain_t, "Timestep within the trajectory")->required();

  auto* adversarial = app.add_subcommand("adversarial", "Measure agent action change under permutation");
  std::string adv_model, adv_data;
  adversarial->add_option("--model", adv_model, "Ensemble model (default <out>/model_ensemble.txt)");
  adversarial->add_option("--dataset", adv_data, "Dataset file (default <out>/dataset.csv)");

  auto* export_tree = app.add_subcommand("export-tree", "Write the first levels of a tree as DOT");
  std::string export_model, export_out;
  int export_depth = 3;
  export_tree->add_option("--model", export_model, "Model file (default <out>/model_tree.txt)");
  export_tree->add_option("--depth", export_depth, "Levels to draw")->capture_default_str();
  export_tree->add_option("--output", export_out, "DOT file (default <out>/tree.dot)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  cli::Workspace ws;
  try {
    ws.root = workdir;
    std::map<std::string, std::string> flags;
    for (const auto& [key, opt] : flag_opts) {
      if (opt->count() > 0) flags[key] = values[key];
    }
    std::optional<st::cli::fs::path> cfg;
    if (config_file) cfg = ws.resolve(*config_file);
    ws.config = cli::load_config(cfg, flags);
    if (explain->parsed() && explain_t < 0) throw st::ConfigError("timestep must be >= 0");
    if (export_tree->parsed() && export_depth < 1) throw st::ConfigError("depth must be >= 1");
  } catch (const st::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (record->parsed()) {
      cli::cmd_record(ws, std::cout);
    } else if (dataset->parsed()) {
      cli::cmd_dataset(ws, std::cout);
    } else if (train->parsed()) {
      const auto path = train_data.empty() ? ws.dataset() : cli::fs::path(train_data);
      std::optional<cli::fs::path> sticky;
      if (sticky_data) sticky = *sticky_data;
      cli::cmd_train_eval(ws, path, sticky, std::cout);
    } else if (explain->parsed()) {
      cli::cmd_explain(ws, explain_model, explain_traj, explain_t, std::cout);
    } else if (adversarial->parsed()) {
      cli::cmd_adversarial(ws, adv_model.empty() ? ws.ensemble_model() : cli::fs::path(adv_model),
                           adv_data.empty() ? ws.dataset() : cli::fs::path(adv_data), std::cout);
    } else if (export_tree->parsed()) {
      cli::cmd_export_tree(ws, export_model.empty() ? ws.tree_model() : cli::fs::path(export_model),
                           export_depth,
                           export_out.empty() ? ws.out() / "tree.dot" : cli::fs::path(export_out),
                           std::cout);
    }
  } catch (const st::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
