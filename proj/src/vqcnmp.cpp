#include "vqskill/vqcnmp.hpp"

#include "vqskill/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace vqskill {

namespace {

constexpr std::uint64_t kTrainStream = 0x9E3779B97F4A7C15ULL;

// Columns are (t, SM(t)) for each point, in the given order.
Eigen::MatrixXd stack_points(std::span<const TrajectoryPoint> pts, int d) {
  Eigen::MatrixXd x(d + 1, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    if (pts[i].sm.size() != d) throw ShapeError("point has " + std::to_string(pts[i].sm.size()) + " channels, model d=" + std::to_string(d));
    x(0, c) = pts[i].t;
    x.block(1, c, d, 1) = pts[i].sm;
  }
  return x;
}

std::vector<TrajectoryPoint> sorted_by_time(std::span<const TrajectoryPoint> pts) {
  std::vector<TrajectoryPoint> out(pts.begin(), pts.end());
  std::stable_sort(out.begin(), out.end(), [](const TrajectoryPoint& a, const TrajectoryPoint& b) {
    if (a.t != b.t) return a.t < b.t;
    return std::lexicographical_compare(a.sm.data(), a.sm.data() + a.sm.size(), b.sm.data(),
                                        b.sm.data() + b.sm.size());
  });
  return out;
}

Quantized nearest(const SkillCodebook& cb, const Eigen::VectorXd& z_e) {
  if (cb.size() == 0) throw std::invalid_argument("quantize: empty codebook");
  if (z_e.size() != cb.vectors.cols()) throw ShapeError("quantize: latent width differs from codebook");
  int best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int m = 0; m < cb.size(); ++m) {
    const double d2 = (cb.vectors.row(m).transpose() - z_e).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = m;
    }
  }
  return {best, cb.vectors.row(best).transpose()};
}

// Core objective on stacked (t, SM) columns. Context columns must already be
// in canonical (time-sorted) order.
LossEvaluation evaluate(const VqCnmpModel& model, const Eigen::MatrixXd& ctx, const Eigen::MatrixXd& tgt,
                        const LossOptions& opt, long* nn_calls) {
  const int d = model.d;
  const int d_z = model.d_z;
  const auto n = ctx.cols();
  const auto m = tgt.cols();
  if (n == 0) throw std::invalid_argument("empty context");
  if (m == 0) throw std::invalid_argument("empty target set");

  const nn::MlpForward enc = nn::mlp_forward(model.encoder, ctx);
  const Eigen::VectorXd z_e = enc.output.rowwise().sum() / static_cast<double>(n);

  int k = 0;
  if (opt.forced_k) {
    k = *opt.forced_k;
    if (k < 0 || k >= model.codebook.size()) throw std::out_of_range("forced codebook index out of range");
  } else {
    k = nearest(model.codebook, z_e).k;
    if (nn_calls) ++*nn_calls;
  }
  const Eigen::VectorXd z_q = model.codebook.vectors.row(k).transpose();

  Eigen::MatrixXd dec_in(d_z + 1, m);
  dec_in.topRows(d_z) = z_q.replicate(1, m);
  dec_in.row(d_z) = tgt.row(0);
  const nn::MlpForward dec = nn::mlp_forward(model.decoder, dec_in);

  const Eigen::ArrayXXd mu = dec.output.topRows(d).array();
  const Eigen::ArrayXXd raw = dec.output.bottomRows(d).array();
  const Eigen::ArrayXXd sigma = nn::softplus_positive(raw);
  const Eigen::ArrayXXd r = tgt.bottomRows(d).array() - mu;
  const Eigen::ArrayXXd s2 = sigma.square();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const double inv_m = 1.0 / static_cast<double>(m);

  LossEvaluation out;
  LossBreakdown& lb = out.breakdown;
  lb.k = k;
  lb.nll = (sigma.log() + r.square() / (2.0 * s2) + half_log_2pi).sum() * inv_m;
  const Eigen::VectorXd diff = z_e - z_q;
  if (opt.include_vq_terms) {
    lb.codebook_term = diff.squaredNorm();
    lb.commitment_term = lb.codebook_term;
  }
  lb.total = lb.nll + lb.codebook_term + opt.beta * lb.commitment_term;

  Eigen::MatrixXd d_out(2 * d, m);
  d_out.topRows(d) = (-r / s2 * inv_m).matrix();
  d_out.bottomRows(d) = ((1.0 / sigma - r.square() / (s2 * sigma)) * nn::softplus_derivative(raw) * inv_m).matrix();
  nn::MlpBackward dec_b = nn::mlp_backward(model.decoder, dec.cache, d_out);

  // Straight-through: dL/dz_e receives the decoder gradient at z_q.
  Eigen::VectorXd dz_e = dec_b.dx.topRows(d_z).rowwise().sum();
  out.grads.codebook_row = Eigen::VectorXd::Zero(d_z);
  if (opt.include_vq_terms) {
    dz_e += 2.0 * opt.beta * diff;
    out.grads.codebook_row = -2.0 * diff;
  }
  const Eigen::MatrixXd dz = (dz_e / static_cast<double>(n)).replicate(1, n);
  nn::MlpBackward enc_b = nn::mlp_backward(model.encoder, enc.cache, dz);

  out.grads.encoder = std::move(enc_b.grads);
  out.grads.decoder = std::move(dec_b.grads);
  return out;
}

bool finite(const LossBreakdown& lb) {
  return std::isfinite(lb.nll) && std::isfinite(lb.codebook_term) && std::isfinite(lb.commitment_term) &&
         std::isfinite(lb.total);
}

}  // namespace

void VqCnmpModel::check() const {
  encoder.check();
  decoder.check();
  if (encoder.in_dim() != d + 1) throw ShapeError("encoder input must be d+1");
  if (encoder.out_dim() != d_z) throw ShapeError("encoder output must be d_z");
  if (decoder.in_dim() != d_z + 1) throw ShapeError("decoder input must be d_z+1");
  if (decoder.out_dim() != 2 * d) throw ShapeError("decoder output must be 2d");
  if (codebook.size() < 1 || codebook.vectors.cols() != d_z) throw ShapeError("codebook must be K x d_z with K >= 1");
  if (norm_stats.mean.size() != d || norm_stats.scale.size() != d) throw ShapeError("norm_stats width must be d");
}

void TrainingConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (n_max < 1 || m_max < 1) throw ConfigError("n_max and m_max must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (codebook_size < 1) throw ConfigError("codebook_size must be >= 1");
  if (arch.d_z < 1 || arch.hidden < 1 || arch.hidden_layers < 0) throw ConfigError("invalid architecture");
}

VqCnmpModel init_model(int d, const NormStats& stats, const TrainingConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  VqCnmpModel model;
  model.d = d;
  model.d_z = cfg.arch.d_z;
  model.norm_stats = stats;

  std::vector<int> enc_w{d + 1};
  std::vector<int> dec_w{cfg.arch.d_z + 1};
  for (int i = 0; i < cfg.arch.hidden_layers; ++i) {
    enc_w.push_back(cfg.arch.hidden);
    dec_w.push_back(cfg.arch.hidden);
  }
  enc_w.push_back(cfg.arch.d_z);
  dec_w.push_back(2 * d);
  model.encoder = nn::make_mlp(enc_w, nn::Activation::relu, nn::Activation::identity, rng, cfg.arch.encoder_output_gain);
  model.decoder = nn::make_mlp(dec_w, nn::Activation::relu, nn::Activation::identity, rng);

  std::uniform_real_distribution<double> init(-0.1, 0.1);
  model.codebook.vectors.resize(cfg.codebook_size, cfg.arch.d_z);
  for (int r = 0; r < cfg.codebook_size; ++r)
    for (int c = 0; c < cfg.arch.d_z; ++c) model.codebook.vectors(r, c) = init(rng);
  return model;
}

Eigen::VectorXd encode(const VqCnmpModel& model, std::span<const TrajectoryPoint> context) {
  if (context.empty()) throw std::invalid_argument("encode: empty context");
  const auto sorted = sorted_by_time(context);
  const Eigen::MatrixXd x = stack_points(sorted, model.d);
  const Eigen::MatrixXd z = nn::mlp_forward(model.encoder, x).output;
  return z.rowwise().sum() / static_cast<double>(z.cols());
}

Quantized quantize(const SkillCodebook& cb, const Eigen::VectorXd& z_e) { return nearest(cb, z_e); }

nn::GaussianPrediction decode(const VqCnmpModel& model, const Eigen::VectorXd& z, double t_target) {
  if (!(t_target >= 0.0 && t_target <= 1.0)) throw std::domain_error("decode: t_target outside [0, 1]");
  const double t = t_target;
  DecodedTrajectory tr = decode_grid(model, z, std::span<const double>(&t, 1));
  return {tr.mu.col(0), tr.sigma.col(0)};
}

DecodedTrajectory decode_grid(const VqCnmpModel& model, const Eigen::VectorXd& z, std::span<const double> times) {
  if (z.size() != model.d_z) throw ShapeError("decode: latent width differs from d_z");
  const auto m = static_cast<Eigen::Index>(times.size());
  Eigen::MatrixXd in(model.d_z + 1, m);
  in.topRows(model.d_z) = z.replicate(1, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double t = times[static_cast<std::size_t>(i)];
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("decode: t outside [0, 1]");
    in(model.d_z, i) = t;
  }
  const Eigen::MatrixXd out = nn::mlp_forward(model.decoder, in).output;
  return {out.topRows(model.d), nn::softplus_positive(out.bottomRows(model.d).array()).matrix()};
}

std::vector<double> time_grid(int length) {
  std::vector<double> g(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) g[static_cast<std::size_t>(i)] = length == 1 ? 0.0 : static_cast<double>(i) / (length - 1);
  return g;
}

LossEvaluation loss_and_gradients(const VqCnmpModel& model, std::span<const TrajectoryPoint> context,
                                  std::span<const TrajectoryPoint> targets, const LossOptions& opt) {
  const auto sorted = sorted_by_time(context);
  return evaluate(model, stack_points(sorted, model.d), stack_points(targets, model.d), opt, nullptr);
}

// --- training -----------------------------------------------------------

Trainer::Trainer(VqCnmpModel model, TrainingConfig cfg, std::optional<Assignment> frozen)
    : model_(std::move(model)), cfg_(cfg), frozen_(std::move(frozen)), rng_(cfg.seed ^ kTrainStream) {
  cfg_.validate();
  model_.check();
  enc_opt_ = nn::AdamState::for_blocks(nn::parameter_blocks(model_.encoder));
  dec_opt_ = nn::AdamState::for_blocks(nn::parameter_blocks(model_.decoder));
  row_opt_.resize(static_cast<std::size_t>(model_.codebook.size()));
  for (auto& st : row_opt_) {
    st.m.assign(1, std::vector<double>(static_cast<std::size_t>(model_.d_z), 0.0));
    st.v.assign(1, std::vector<double>(static_cast<std::size_t>(model_.d_z), 0.0));
  }
  if (cfg_.mode == TrainingMode::self_supervised && !frozen_)
    throw ConfigError("self-supervised training needs a frozen assignment");
}

LossBreakdown Trainer::step(const Demonstration& demo) {
  const int length = static_cast<int>(demo.points.size());
  if (length == 0 || demo.dim() != model_.d)
    throw ShapeError("training_step: demo '" + demo.id + "' does not match model dimension");
  sample_context_indices(rng_, length, std::min(cfg_.n_max, length), std::min(cfg_.m_max, length), ctx_idx_,
                         tgt_idx_);
  std::sort(ctx_idx_.begin(), ctx_idx_.end());

  const int d = model_.d;
  Eigen::MatrixXd ctx(d + 1, static_cast<Eigen::Index>(ctx_idx_.size()));
  for (std::size_t i = 0; i < ctx_idx_.size(); ++i) {
    const auto& p = demo.points[static_cast<std::size_t>(ctx_idx_[i])];
    ctx(0, static_cast<Eigen::Index>(i)) = p.t;
    ctx.block(1, static_cast<Eigen::Index>(i), d, 1) = p.sm;
  }
  Eigen::MatrixXd tgt(d + 1, static_cast<Eigen::Index>(tgt_idx_.size()));
  for (std::size_t i = 0; i < tgt_idx_.size(); ++i) {
    const auto& p = demo.points[static_cast<std::size_t>(tgt_idx_[i])];
    tgt(0, static_cast<Eigen::Index>(i)) = p.t;
    tgt.block(1, static_cast<Eigen::Index>(i), d, 1) = p.sm;
  }

  LossOptions opt;
  opt.beta = cfg_.beta;
  if (cfg_.mode == TrainingMode::self_supervised) {
    const auto it = frozen_->find(demo.id);
    if (it == frozen_->end()) throw DataError("demo '" + demo.id + "' missing from assignment");
    opt.forced_k = it->second;
  }
  LossEvaluation ev = evaluate(model_, ctx, tgt, opt, &nn_calls_);
  const LossBreakdown& lb = ev.breakdown;
  if (!finite(lb)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "non-finite loss at step " << steps_ << " (k=" << lb.k << ", nll=" << lb.nll
        << ", codebook=" << lb.codebook_term << ", commitment=" << lb.commitment_term << ")";
    throw TrainingError(msg.str());
  }

  auto enc_g = nn::gradient_blocks(ev.grads.encoder);
  auto dec_g = nn::gradient_blocks(ev.grads.decoder);
  std::vector<std::span<double>> all;
  all.insert(all.end(), enc_g.begin(), enc_g.end());
  all.insert(all.end(), dec_g.begin(), dec_g.end());
  all.emplace_back(ev.grads.codebook_row.data(), static_cast<std::size_t>(ev.grads.codebook_row.size()));
  nn::clip_global_norm(all, cfg_.clip_norm);

  const nn::AdamConfig adam{cfg_.lr, 0.9, 0.999, 1e-8};
  auto as_const = [](const std::vector<std::span<double>>& v) {
    return std::vector<std::span<const double>>(v.begin(), v.end());
  };
  nn::adam_step(nn::parameter_blocks(model_.encoder), as_const(enc_g), enc_opt_, adam);
  nn::adam_step(nn::parameter_blocks(model_.decoder), as_const(dec_g), dec_opt_, adam);

  // Only v_k moves; the row is stored strided inside the K x d_z matrix.
  Eigen::VectorXd row = model_.codebook.vectors.row(lb.k).transpose();
  const std::span<double> row_blk[] = {{row.data(), static_cast<std::size_t>(row.size())}};
  const std::span<const double> row_g[] = {
      {ev.grads.codebook_row.data(), static_cast<std::size_t>(ev.grads.codebook_row.size())}};
  nn::adam_step(row_blk, row_g, row_opt_[static_cast<std::size_t>(lb.k)], adam);
  model_.codebook.vectors.row(lb.k) = row.transpose();

  ++steps_;
  return lb;
}

LossBreakdown training_step(Trainer& trainer, const Demonstration& demo) { return trainer.step(demo); }

namespace {

TrainResult run_training(const Dataset& dataset, const TrainingConfig& cfg, std::optional<Assignment> frozen) {
  if (!dataset.normalized()) throw DataError("training requires a normalized dataset");
  if (dataset.demos.empty()) throw DataError("training requires at least one demonstration");
  Trainer trainer(init_model(dataset.d, *dataset.norm_stats, cfg), cfg, std::move(frozen));
  TrainResult out;
  out.history.reserve(static_cast<std::size_t>(cfg.iterations));
  std::uniform_int_distribution<std::size_t> pick(0, dataset.demos.size() - 1);
  for (long it = 0; it < cfg.iterations; ++it) {
    const auto& demo = dataset.demos[pick(trainer.rng())];
    out.history.push_back(trainer.step(demo));
  }
  out.nearest_neighbor_calls = trainer.nearest_neighbor_calls();
  out.model = std::move(trainer).release();
  return out;
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainingConfig& cfg) {
  TrainingConfig c = cfg;
  c.mode = TrainingMode::unsupervised;
  return run_training(dataset, c, std::nullopt);
}

Assignment assign_all(const VqCnmpModel& model, const Dataset& dataset) {
  Assignment asg;
  for (const auto& demo : dataset.demos) asg[demo.id] = quantize(model.codebook, encode(model, demo.points)).k;
  return asg;
}

TrainResult finetune(const Dataset& dataset, const Assignment& asg, TrainingConfig cfg) {
  cfg.mode = TrainingMode::self_supervised;
  for (const auto& demo : dataset.demos) {
    const auto it = asg.find(demo.id);
    if (it == asg.end()) throw DataError("demo '" + demo.id + "' missing from assignment");
    if (it->second < 0 || it->second >= cfg.codebook_size)
      throw DataError("assignment index " + std::to_string(it->second) + " outside codebook of size " +
                      std::to_string(cfg.codebook_size));
  }
  return run_training(dataset, cfg, asg);
}

}  // namespace vqskill
