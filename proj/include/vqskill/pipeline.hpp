#pragma once

// Command implementations behind the vqskill tool. Each command reads its
// inputs, writes everything under the output directory and returns a JSON
// summary that is also saved as <command>.summary.json.

#include "vqskill/dataset.hpp"
#include "vqskill/planner_high.hpp"
#include "vqskill/planner_low.hpp"
#include "vqskill/vqcnmp.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vqskill {

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  int jobs = 1;
  KitchenConfig kitchen = default_kitchen();
  TrainingConfig training;
  int batch_models = 10;
  std::vector<int> sweep_sizes{3, 5, 10, 20};
  int sweep_batch = 5;
  PlannerSettings planner;
  std::string client_kind = "mock";  // mock | http
  HttpClientConfig client;

  void validate() const;
};

/// Throws ConfigError on unknown keys, wrong types or invalid values.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const PipelineConfig& cfg);

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Catalog key of each trained skill's retrieval action.
const std::map<int, std::string>& retrieval_key_to_skill();

nlohmann::json cmd_gen_data(const PipelineConfig& cfg);

struct TrainBatchArgs {
  std::filesystem::path data;
};
/// Trains cfg.batch_models models with seeds seed..seed+N-1. A manifest in
/// out/models lets an interrupted batch resume; a failing job is logged and
/// the rest continue. Throws TrainingError at the end if any job failed.
nlohmann::json cmd_train_batch(const PipelineConfig& cfg, const TrainBatchArgs& args);

struct DiscoverArgs {
  std::filesystem::path model;
  std::filesystem::path data;
  bool plots = false;
};
nlohmann::json cmd_discover(const PipelineConfig& cfg, const DiscoverArgs& args);

struct FinetuneArgs {
  std::filesystem::path model;
  std::filesystem::path data;
};
nlohmann::json cmd_finetune(const PipelineConfig& cfg, const FinetuneArgs& args);

struct PlanArgs {
  std::filesystem::path model;
  std::filesystem::path data;
  std::optional<std::filesystem::path> assignment;
  std::vector<std::string> ingredients;
  CatalogVariant variant = CatalogVariant::skills_only;
  PromptTemplate tmpl = PromptTemplate::basic;
  std::vector<std::filesystem::path> images;
  /// ingredient -> object position; missing ones are drawn in the skill's
  /// source region.
  std::map<std::string, Eigen::Vector3d> objects;
};
nlohmann::json cmd_plan(const PipelineConfig& cfg, const PlanArgs& args, LlmClient& client);
std::unique_ptr<LlmClient> make_client(const PipelineConfig& cfg);

struct BenchmarkArgs {
  std::vector<CatalogVariant> variants{CatalogVariant::skills_only};
  int trials = 1;
  PromptTemplate tmpl = PromptTemplate::basic;
};
/// Runs every ingredient combination against each catalog variant. A client
/// failure keeps the finished trials and is rethrown after the summary is
/// written.
nlohmann::json cmd_benchmark(const PipelineConfig& cfg, const BenchmarkArgs& args, LlmClient& client);

struct SweepArgs {
  std::filesystem::path data;
};
nlohmann::json cmd_sweep(const PipelineConfig& cfg, const SweepArgs& args);

/// Exit status 0 iff the worst relative error is below 1e-4.
nlohmann::json cmd_gradcheck(const PipelineConfig& cfg, int instances);

/// 2-D projections (x-y and x-z) of each trajectory as an SVG document.
std::string trajectories_svg(const std::map<int, Eigen::MatrixXd>& trajectories, const std::string& title);

}  // namespace vqskill
