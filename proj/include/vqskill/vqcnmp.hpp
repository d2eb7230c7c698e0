#pragma once

// Vector-quantized conditional trajectory model.
//
// The encoder maps each observed (t, SM(t)) pair to a latent vector; the mean
// of those vectors is snapped to the nearest codebook entry; the decoder maps
// (codebook entry, query time) to a diagonal Gaussian over SM(t).

#include "vqskill/dataset.hpp"
#include "vqskill/nn.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vqskill {

inline constexpr int kModelVersion = 1;

struct SkillCodebook {
  Eigen::MatrixXd vectors;  // K x d_z, one skill per row

  [[nodiscard]] int size() const { return static_cast<int>(vectors.rows()); }
};

struct VqCnmpModel {
  nn::MlpParams encoder;
  nn::MlpParams decoder;
  SkillCodebook codebook;
  int d = 4;
  int d_z = 16;
  NormStats norm_stats;
  int version = kModelVersion;

  /// Throws ShapeError unless encoder/decoder/codebook widths agree with d, d_z.
  void check() const;
};

enum class TrainingMode { unsupervised, self_supervised };

struct Architecture {
  int d_z = 16;
  int hidden = 128;
  int hidden_layers = 2;
  /// Scales the encoder's last-layer init so initial latents sit at the
  /// codebook's scale.
  double encoder_output_gain = 0.1;
};

struct TrainingConfig {
  double beta = 0.25;
  long iterations = 30000;
  int n_max = 10;
  int m_max = 10;
  double lr = 1e-4;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  TrainingMode mode = TrainingMode::unsupervised;
  int codebook_size = 5;
  Architecture arch;

  void validate() const;
};

struct LossBreakdown {
  double nll = 0.0;
  double codebook_term = 0.0;    // |sg(z_e) - z_q|^2
  double commitment_term = 0.0;  // |z_e - sg(z_q)|^2
  double total = 0.0;            // nll + codebook_term + beta * commitment_term
  int k = 0;

  [[nodiscard]] double vq_loss(double beta) const { return codebook_term + beta * commitment_term; }
};

/// Demo id -> codebook index.
using Assignment = std::map<std::string, int>;

VqCnmpModel init_model(int d, const NormStats& stats, const TrainingConfig& cfg);

/// Mean encoder output over the context. Points are ordered by time before
/// summation, so the result does not depend on the order given.
Eigen::VectorXd encode(const VqCnmpModel& model, std::span<const TrajectoryPoint> context);

struct Quantized {
  int k = 0;
  Eigen::VectorXd z_q;
};

/// Nearest codebook row in Euclidean distance; ties go to the lowest index.
Quantized quantize(const SkillCodebook& cb, const Eigen::VectorXd& z_e);

nn::GaussianPrediction decode(const VqCnmpModel& model, const Eigen::VectorXd& z, double t_target);

/// Decoded mean/std over a time grid, one column per time, normalized space.
struct DecodedTrajectory {
  Eigen::MatrixXd mu;
  Eigen::MatrixXd sigma;
};
DecodedTrajectory decode_grid(const VqCnmpModel& model, const Eigen::VectorXd& z, std::span<const double> times);

/// Evenly spaced grid on [0, 1].
std::vector<double> time_grid(int length);

struct LossOptions {
  double beta = 0.25;
  /// When set, the codebook index is taken from here instead of the nearest
  /// neighbor search (self-supervised mode).
  std::optional<int> forced_k;
  /// Drop the codebook and commitment terms (used by gradient checks).
  bool include_vq_terms = true;
};

struct LossGradients {
  nn::MlpGradients encoder;
  nn::MlpGradients decoder;
  Eigen::VectorXd codebook_row;  // gradient w.r.t. v_k
};

struct LossEvaluation {
  LossBreakdown breakdown;
  LossGradients grads;
};

/// Objective for one (context, targets) draw together with its gradients.
/// The decoder gradient at z_q is passed straight through to z_e.
LossEvaluation loss_and_gradients(const VqCnmpModel& model, std::span<const TrajectoryPoint> context,
                                  std::span<const TrajectoryPoint> targets, const LossOptions& opt);

/// Owns a model under training together with its optimizer state and RNG.
class Trainer {
 public:
  Trainer(VqCnmpModel model, TrainingConfig cfg, std::optional<Assignment> frozen = std::nullopt);

  /// Samples context/targets from `demo`, evaluates the loss, clips and
  /// applies one Adam update to the encoder, decoder and the chosen row.
  LossBreakdown step(const Demonstration& demo);

  [[nodiscard]] const VqCnmpModel& model() const { return model_; }
  VqCnmpModel release() && { return std::move(model_); }
  [[nodiscard]] long steps_taken() const { return steps_; }
  /// Number of nearest-neighbor searches performed while training.
  [[nodiscard]] long nearest_neighbor_calls() const { return nn_calls_; }
  Rng& rng() { return rng_; }

 private:
  VqCnmpModel model_;
  TrainingConfig cfg_;
  std::optional<Assignment> frozen_;
  nn::AdamState enc_opt_;
  nn::AdamState dec_opt_;
  std::vector<nn::AdamState> row_opt_;
  Rng rng_;
  long steps_ = 0;
  long nn_calls_ = 0;
  std::vector<int> ctx_idx_;
  std::vector<int> tgt_idx_;
};

/// Trainer over `model` using `cfg`; convenience for a single step.
LossBreakdown training_step(Trainer& trainer, const Demonstration& demo);

struct TrainResult {
  VqCnmpModel model;
  std::vector<LossBreakdown> history;
  long nearest_neighbor_calls = 0;
};

/// Unsupervised phase: `iterations` steps, each on a uniformly drawn demo.
TrainResult train(const Dataset& dataset, const TrainingConfig& cfg);

/// Encodes every demo with its full trajectory as context and quantizes.
Assignment assign_all(const VqCnmpModel& model, const Dataset& dataset);

/// Self-supervised phase: a fresh model trained with codebook indices frozen
/// to `asg`.
TrainResult finetune(const Dataset& dataset, const Assignment& asg, TrainingConfig cfg);

struct CheckpointSummary {
  std::string probe_name;
  double probe_value = 0.0;
};

CheckpointSummary save_model(const VqCnmpModel& model, const std::filesystem::path& path);
VqCnmpModel load_model(const std::filesystem::path& path);

}  // namespace vqskill
