#pragma once

// Low-level planning: move a skill vector through latent space until the
// decoded position at contact time lands on the object, with the network
// frozen, then decode the whole trajectory from the adjusted vector.

#include "vqskill/vqcnmp.hpp"

#include <Eigen/Core>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vqskill {

struct PlanRequest {
  int skill_index = 0;
  Eigen::Vector3d object_pose = Eigen::Vector3d::Zero();
  double contact_time = 0.4;
  double tolerance = 0.02;  // meters
  int max_iters = 2000;
  double step_size = 0.05;
  int grid_length = 150;
};

struct PlanResult {
  int skill_index = 0;
  Eigen::VectorXd z_star;
  int iterations = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_error = 0.0;  // meters, Euclidean
  bool converged = false;
  bool diverged = false;
  std::vector<double> times;
  /// Denormalized decoded mean, d x times.size().
  Eigen::MatrixXd trajectory;
  /// Set when the step could not be planned at all.
  std::optional<std::string> error;
};

struct PlanLoss {
  double loss = 0.0;  // m^2, mean over x, y, z
  Eigen::VectorXd dz;
  Eigen::Vector3d position;  // decoded, denormalized
};

/// Mean squared distance between the decoded position at `contact_time` and
/// the object, and its gradient with respect to z.
PlanLoss plan_loss(const VqCnmpModel& model, const Eigen::VectorXd& z, double contact_time,
                   const Eigen::Vector3d& object_pose);

PlanResult optimize_skill_vector(const VqCnmpModel& model, const PlanRequest& req);

/// Denormalized decoded mean of `z` on `times`, d x times.size().
Eigen::MatrixXd decode_trajectory(const VqCnmpModel& model, const Eigen::VectorXd& z, std::span<const double> times);

struct PlanStep {
  int skill_index = 0;
  Eigen::Vector3d object_pose = Eigen::Vector3d::Zero();
  double contact_time = 0.4;
};

struct PlannerSettings {
  double tolerance = 0.02;
  int max_iters = 2000;
  double step_size = 0.05;
  int grid_length = 150;
};

/// Plans every step independently. A step that fails is reported through
/// PlanResult::error and does not stop the remaining steps.
std::vector<PlanResult> execute_plan(const VqCnmpModel& model, std::span<const PlanStep> steps,
                                     const PlannerSettings& settings = {});

/// Per codebook index: mean recorded contact time of the demos assigned to it.
std::map<int, double> skill_contact_times(const Assignment& asg, const Dataset& dataset);

struct ExecutionChecker {
  Eigen::Vector3d object_pose = Eigen::Vector3d::Zero();
  Eigen::Vector3d sink = Eigen::Vector3d::Zero();
  double pick_tolerance = 0.02;
  double sink_tolerance = 0.05;
  int grip_window = 5;
  /// Smallest max-min range of the gripper channel that counts as actuation.
  double min_grip_swing = 0.25;
};

struct ExecutionScore {
  bool picked = false;
  bool delivered = false;
};

/// Judges a denormalized trajectory (rows x, y, z, gripper) without any
/// reference demo: the gripper has to close (steepest rise) near the closest
/// approach to the object, and the release after it (steepest fall) has to
/// happen over the sink.
ExecutionScore score_execution(const Eigen::MatrixXd& trajectory, const ExecutionChecker& checker);
ExecutionScore score_execution(const PlanResult& result, const ExecutionChecker& checker);

}  // namespace vqskill
