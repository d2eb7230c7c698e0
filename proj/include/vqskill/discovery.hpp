#pragma once

// Clustering metrics, model selection and codebook-size sweeps.

#include "vqskill/dataset.hpp"
#include "vqskill/vqcnmp.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace vqskill {

using Labels = std::map<std::string, std::string>;

struct ClusterReport {
  /// Purity: sum over used vectors of the majority-label count, over N.
  double accuracy = 0.0;
  /// Every skill sits on a single vector and, when K >= #skills, no vector
  /// is shared between skills.
  bool perfect = false;
  std::map<int, std::string> vector_to_label;
  std::map<std::string, std::set<int>> per_skill_split;
  /// Fraction of demos sitting on their skill's most used vector.
  double skill_accuracy = 0.0;
  int codebook_size = 0;
};

/// Throws DataError on an empty assignment or a demo with no label.
ClusterReport cluster_report(const Assignment& asg, const Labels& labels, int codebook_size);

/// Mean of `total` over the last `window` steps (all of them if fewer).
double combined_loss(const std::vector<LossBreakdown>& history, std::size_t window = 1000);
double final_vq_loss(const std::vector<LossBreakdown>& history, double beta = 0.25, std::size_t window = 1000);

/// Indices of `losses` in ascending order; ties keep their input order.
std::vector<std::size_t> rank_models(const std::vector<double>& losses);
std::vector<std::size_t> rank_models(const std::vector<TrainResult>& batch);

struct SweepCell {
  int codebook_size = 0;
  std::uint64_t seed = 0;
  double combined_loss = 0.0;
  double vq_loss = 0.0;
  ClusterReport report;
};

struct SweepRow {
  int codebook_size = 0;
  std::vector<SweepCell> cells;

  [[nodiscard]] int perfect_count() const;
  [[nodiscard]] double mean_accuracy() const;
  [[nodiscard]] double max_accuracy() const;
  [[nodiscard]] double min_vq_loss() const;
  [[nodiscard]] double median_vq_loss() const;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  int batch = 0;
};

struct SweepOptions {
  std::vector<int> sizes;
  int batch = 10;
  /// Seed of the first model; models in a row use consecutive seeds.
  std::uint64_t first_seed = 0;
  /// Worker threads; cells are independent.
  int jobs = 1;
  /// Called with each finished cell from the collecting thread.
  std::function<void(const SweepCell&, const TrainResult&)> on_cell;
};

/// Trains `batch` models per codebook size on `dataset` (labels are stripped
/// before training) and scores them against the dataset's labels. Training
/// failures are rethrown as TrainingError tagged with K and seed.
SweepReport codebook_sweep(const Dataset& dataset, const SweepOptions& opt, const TrainingConfig& base);

/// Score one trained model against labels.
SweepCell score_model(const TrainResult& result, const Dataset& labeled, int codebook_size, std::uint64_t seed,
                      double beta);

/// Denormalized decoded means over `times` for every vector used in `asg`.
std::map<int, Eigen::MatrixXd> skill_prototypes(const VqCnmpModel& model, const Assignment& asg,
                                                std::span<const double> times);

/// Table with one column per K and rows for perfect count and mean/max
/// accuracy, plus min VQ loss.
std::string format_sweep_table(const SweepReport& report);

}  // namespace vqskill
