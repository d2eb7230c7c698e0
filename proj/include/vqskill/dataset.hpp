#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vqskill {

using Rng = std::mt19937_64;

/// One time-stamped sample of a demonstration. `sm` holds the sensorimotor
/// channels (x, y, z in meters and gripper state in [0, 1] for kitchen data).
struct TrajectoryPoint {
  double t = 0.0;
  Eigen::VectorXd sm;
};

struct Demonstration {
  std::string id;
  std::vector<TrajectoryPoint> points;
  /// Ground truth for evaluation. Training never reads it.
  std::optional<std::string> skill_label;
  std::optional<double> contact_time;
  std::optional<Eigen::Vector3d> object_pose;

  [[nodiscard]] int dim() const { return points.empty() ? 0 : static_cast<int>(points.front().sm.size()); }
};

/// Per-channel affine map used to bring data to zero mean and unit variance.
struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  std::vector<bool> zero_variance;

  [[nodiscard]] Eigen::VectorXd normalize(const Eigen::VectorXd& raw) const;
  [[nodiscard]] Eigen::VectorXd denormalize(const Eigen::VectorXd& normed) const;
};

struct Dataset {
  std::vector<Demonstration> demos;
  int d = 4;
  std::optional<NormStats> norm_stats;

  [[nodiscard]] bool normalized() const { return norm_stats.has_value(); }
};

struct Box {
  Eigen::Vector3d lo;
  Eigen::Vector3d hi;

  [[nodiscard]] bool contains(const Eigen::Vector3d& p, double margin = 0.0) const;
  [[nodiscard]] Eigen::Vector3d center() const { return 0.5 * (lo + hi); }
};

struct SkillSpec {
  std::string name;
  Box source;
  Eigen::Vector3d sink;
};

struct KitchenConfig {
  std::vector<SkillSpec> skills;
  /// Either one entry applied to every skill or one entry per skill.
  std::vector<int> demos_per_skill{100};
  double noise_std = 0.002;
  std::uint64_t seed = 0;
  int d = 4;
  int length = 150;
  Eigen::Vector3d home{0.30, 0.0, 0.35};
  /// Contact happens at a normalized time drawn from [contact_lo, contact_hi];
  /// release follows after `transfer_duration`.
  double contact_lo = 0.38;
  double contact_hi = 0.42;
  double transfer_duration = 0.40;
  double lift_height = 0.10;

  [[nodiscard]] int demos_for(std::size_t skill) const;
  void validate() const;
};

/// Five disjoint 10 cm source cubes (two cupboards, the drawer and both
/// stove-side spots) sharing one pan sink.
KitchenConfig default_kitchen();

Dataset generate_synthetic_dataset(const KitchenConfig& cfg);

Dataset normalize_dataset(const Dataset& ds);
Dataset denormalize_dataset(const Dataset& ds);

/// Returns a copy with every skill_label removed.
Dataset strip_labels(const Dataset& ds);
/// Maps demo id to skill label for every labeled demo.
std::map<std::string, std::string> labels_of(const Dataset& ds);

struct ContextSample {
  std::vector<TrajectoryPoint> context;
  std::vector<TrajectoryPoint> targets;
};

/// Draws `count` distinct indices from [0, population) via partial Fisher-Yates.
std::vector<int> draw_subset(Rng& rng, int population, int count);

/// Index form of sample_context: context size ~ U{1..n_max}, target size
/// ~ U{1..m_max}, each drawn without replacement.
void sample_context_indices(Rng& rng, int length, int n_max, int m_max, std::vector<int>& context,
                            std::vector<int>& targets);

ContextSample sample_context(const Demonstration& demo, Rng& rng, int n_max, int m_max);

/// One demo as a single-line record of the dataset file format.
std::string demo_record(const Demonstration& demo);
Demonstration parse_demo_record(const std::string& line, int line_no, int d);

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace vqskill
