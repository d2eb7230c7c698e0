#include "vqskill/planner_low.hpp"

#include "vqskill/errors.hpp"

#include <cmath>
#include <limits>

namespace vqskill {

PlanLoss plan_loss(const VqCnmpModel& model, const Eigen::VectorXd& z, double contact_time,
                   const Eigen::Vector3d& object_pose) {
  if (z.size() != model.d_z) throw ShapeError("plan_loss: latent width differs from d_z");
  if (model.d < 3) throw ShapeError("plan_loss: model has no xyz channels");
  if (!(contact_time >= 0.0 && contact_time <= 1.0)) throw std::domain_error("plan_loss: contact time outside [0, 1]");

  Eigen::MatrixXd in(model.d_z + 1, 1);
  in.topRows(model.d_z) = z;
  in(model.d_z, 0) = contact_time;
  const nn::MlpForward f = nn::mlp_forward(model.decoder, in);

  const Eigen::Vector3d scale = model.norm_stats.scale.head<3>();
  const Eigen::Vector3d pos = f.output.col(0).head<3>().cwiseProduct(scale) + model.norm_stats.mean.head<3>();
  const Eigen::Vector3d resid = pos - object_pose;

  PlanLoss out;
  out.position = pos;
  out.loss = resid.squaredNorm() / 3.0;
  Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(model.decoder.out_dim(), 1);
  dy.col(0).head<3>() = (2.0 / 3.0) * resid.cwiseProduct(scale);
  const nn::MlpBackward b = nn::mlp_backward(model.decoder, f.cache, dy, false);
  out.dz = b.dx.col(0).head(model.d_z);
  if (!out.dz.allFinite() || !std::isfinite(out.loss)) throw std::runtime_error("plan_loss: non-finite gradient");
  return out;
}

Eigen::MatrixXd decode_trajectory(const VqCnmpModel& model, const Eigen::VectorXd& z, std::span<const double> times) {
  Eigen::MatrixXd mu = decode_grid(model, z, times).mu;
  for (Eigen::Index c = 0; c < mu.cols(); ++c) mu.col(c) = model.norm_stats.denormalize(mu.col(c));
  return mu;
}

PlanResult optimize_skill_vector(const VqCnmpModel& model, const PlanRequest& req) {
  if (req.skill_index < 0 || req.skill_index >= model.codebook.size())
    throw std::out_of_range("skill index " + std::to_string(req.skill_index) + " outside codebook");
  if (!(req.tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");

  PlanResult res;
  res.skill_index = req.skill_index;
  Eigen::VectorXd z = model.codebook.vectors.row(req.skill_index).transpose();
  PlanLoss pl = plan_loss(model, z, req.contact_time, req.object_pose);
  res.initial_loss = pl.loss;

  int it = 0;
  for (;; ++it) {
    res.final_error = (pl.position - req.object_pose).norm();
    res.final_loss = pl.loss;
    if (res.final_error < req.tolerance) {
      res.converged = true;
      break;
    }
    if (pl.loss > 10.0 * res.initial_loss) {
      res.diverged = true;
      break;
    }
    if (it >= req.max_iters) break;
    z -= req.step_size * pl.dz;
    pl = plan_loss(model, z, req.contact_time, req.object_pose);
  }
  res.iterations = it;
  res.z_star = z;
  res.times = time_grid(req.grid_length);
  res.trajectory = decode_trajectory(model, z, res.times);
  return res;
}

std::vector<PlanResult> execute_plan(const VqCnmpModel& model, std::span<const PlanStep> steps,
                                     const PlannerSettings& settings) {
  std::vector<PlanResult> out;
  out.reserve(steps.size());
  for (const auto& step : steps) {
    PlanRequest req;
    req.skill_index = step.skill_index;
    req.object_pose = step.object_pose;
    req.contact_time = step.contact_time;
    req.tolerance = settings.tolerance;
    req.max_iters = settings.max_iters;
    req.step_size = settings.step_size;
    req.grid_length = settings.grid_length;
    try {
      out.push_back(optimize_skill_vector(model, req));
    } catch (const std::exception& e) {
      PlanResult failed;
      failed.skill_index = step.skill_index;
      failed.error = e.what();
      failed.final_error = std::numeric_limits<double>::infinity();
      out.push_back(std::move(failed));
    }
  }
  return out;
}

std::map<int, double> skill_contact_times(const Assignment& asg, const Dataset& dataset) {
  std::map<int, double> sum;
  std::map<int, int> count;
  for (const auto& demo : dataset.demos) {
    const auto it = asg.find(demo.id);
    if (it == asg.end() || !demo.contact_time) continue;
    sum[it->second] += *demo.contact_time;
    count[it->second] += 1;
  }
  for (auto& [k, s] : sum) s /= count[k];
  return sum;
}

ExecutionScore score_execution(const Eigen::MatrixXd& traj, const ExecutionChecker& checker) {
  ExecutionScore score;
  if (traj.rows() < 4 || traj.cols() < 2) return score;
  const auto n = traj.cols();

  Eigen::Index nearest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double dist = (traj.col(i).head<3>() - checker.object_pose).norm();
    if (dist < best) {
      best = dist;
      nearest = i;
    }
  }

  // A decoded gripper channel is a smoothed average of 0/1 steps, so it rarely
  // crosses a fixed level at the right moment. Closing is the steepest rise
  // and releasing the steepest fall after it; a channel that barely moves
  // never closes.
  const Eigen::RowVectorXd g = traj.row(3);
  if (g.maxCoeff() - g.minCoeff() < checker.min_grip_swing) return score;
  Eigen::Index close = -1;
  double rise = 0.0;
  for (Eigen::Index i = 1; i < n; ++i)
    if (g[i] - g[i - 1] > rise) {
      rise = g[i] - g[i - 1];
      close = i;
    }
  if (close < 0) return score;
  score.picked = best < checker.pick_tolerance && std::abs(close - nearest) <= checker.grip_window;

  Eigen::Index release = -1;
  double fall = 0.0;
  for (Eigen::Index i = close + 1; i < n; ++i)
    if (g[i - 1] - g[i] > fall) {
      fall = g[i - 1] - g[i];
      release = i;
    }
  // Nothing can reach the pan unless it was picked first.
  score.delivered = score.picked && release > 0 &&
                    (traj.col(release).head<3>() - checker.sink).norm() < checker.sink_tolerance;
  return score;
}

ExecutionScore score_execution(const PlanResult& result, const ExecutionChecker& checker) {
  if (result.error) return {};
  return score_execution(result.trajectory, checker);
}

}  // namespace vqskill
