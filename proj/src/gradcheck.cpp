#include "vqskill/gradcheck.hpp"

#include "vqskill/nn.hpp"
#include "vqskill/planner_low.hpp"
#include "vqskill/vqcnmp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace vqskill::gradcheck {

namespace {

// A forward evaluation plus the on/off pattern of every relu it passed.
struct Eval {
  double value = 0.0;
  std::vector<bool> mask;
};

struct Entry {
  double* x;
  double analytic;
};

void append_mask(const nn::MlpParams& p, const nn::MlpCache& cache, std::vector<bool>& mask) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    if (p.layers[i].activation != nn::Activation::relu) continue;
    const auto& a = cache.pre_activations[i];
    for (Eigen::Index j = 0; j < a.size(); ++j) mask.push_back(a.data()[j] > 0.0);
  }
}

void check_entries(std::vector<Entry> entries, const std::function<Eval()>& f, const Options& opt, Rng& rng,
                   FamilyResult& out) {
  if (static_cast<int>(entries.size()) > opt.entries_per_instance) {
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(static_cast<std::size_t>(opt.entries_per_instance));
  }
  for (const Entry& e : entries) {
    const double saved = *e.x;
    *e.x = saved + opt.h;
    const Eval up = f();
    *e.x = saved - opt.h;
    const Eval dn = f();
    *e.x = saved;
    if (up.mask != dn.mask) {
      ++out.kinks_skipped;
      continue;
    }
    const double numeric = (up.value - dn.value) / (2.0 * opt.h);
    out.max_rel_err = std::max(out.max_rel_err, relative_error(e.analytic, numeric));
    ++out.entries_checked;
  }
}

void add_matrix(std::vector<Entry>& entries, Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
  for (Eigen::Index i = 0; i < x.size(); ++i) entries.push_back({x.data() + i, g.data()[i]});
}

void add_vector(std::vector<Entry>& entries, Eigen::VectorXd& x, const Eigen::VectorXd& g) {
  for (Eigen::Index i = 0; i < x.size(); ++i) entries.push_back({x.data() + i, g[i]});
}

void add_network(std::vector<Entry>& entries, nn::MlpParams& p, const nn::MlpGradients& g) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    add_matrix(entries, p.layers[i].weight, g.weight[i]);
    add_vector(entries, p.layers[i].bias, g.bias[i]);
  }
}

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void jitter_biases(nn::MlpParams& p, Rng& rng) {
  for (auto& l : p.layers) l.bias = gaussian(rng, l.bias.size(), 1, 0.3).col(0);
}

VqCnmpModel small_model(Rng& rng, int d, int d_z, int hidden) {
  TrainingConfig cfg;
  cfg.arch.d_z = d_z;
  cfg.arch.hidden = hidden;
  cfg.arch.hidden_layers = 2;
  cfg.arch.encoder_output_gain = 1.0;
  cfg.codebook_size = 1;
  cfg.seed = rng();
  NormStats ns;
  ns.mean = Eigen::VectorXd::Zero(d);
  ns.scale = Eigen::VectorXd::Ones(d);
  ns.zero_variance.assign(static_cast<std::size_t>(d), false);
  VqCnmpModel m = init_model(d, ns, cfg);
  jitter_biases(m.encoder, rng);
  jitter_biases(m.decoder, rng);
  // Keep sigma well away from its floor; near 1e-6 the NLL reaches 1e6 and
  // central differences measure curvature rather than slope.
  m.decoder.layers.back().weight *= 0.3;
  m.decoder.layers.back().bias *= 0.3;
  return m;
}

std::vector<TrajectoryPoint> random_points(Rng& rng, int count, int d) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TrajectoryPoint> pts(static_cast<std::size_t>(count));
  for (auto& p : pts) {
    p.t = u(rng);
    p.sm = gaussian(rng, d, 1).col(0);
  }
  return pts;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

double Report::max_rel_err() const {
  double worst = 0.0;
  for (const auto& f : families) worst = std::max(worst, f.max_rel_err);
  return worst;
}

FamilyResult check_mlp(const Options& opt) {
  FamilyResult out{"mlp", opt.instances, 0, 0, 0.0};
  Rng rng(opt.seed);
  std::uniform_int_distribution<int> width(3, 12);
  std::uniform_int_distribution<int> depth(1, 3);
  for (int inst = 0; inst < opt.instances; ++inst) {
    std::vector<int> widths{std::uniform_int_distribution<int>(2, 6)(rng)};
    for (int l = depth(rng); l > 0; --l) widths.push_back(width(rng));
    widths.push_back(std::uniform_int_distribution<int>(1, 4)(rng));
    const auto out_act = inst % 2 ? nn::Activation::relu : nn::Activation::identity;
    nn::MlpParams p = nn::make_mlp(widths, nn::Activation::relu, out_act, rng);
    jitter_biases(p, rng);
    Eigen::MatrixXd x = gaussian(rng, widths.front(), 2);
    const Eigen::MatrixXd c = gaussian(rng, widths.back(), 2);

    const nn::MlpForward fwd = nn::mlp_forward(p, x);
    const nn::MlpBackward bwd = nn::mlp_backward(p, fwd.cache, c);
    std::vector<Entry> entries;
    add_network(entries, p, bwd.grads);
    add_matrix(entries, x, bwd.dx);
    auto f = [&] {
      const nn::MlpForward r = nn::mlp_forward(p, x);
      Eval e{(c.array() * r.output.array()).sum(), {}};
      append_mask(p, r.cache, e.mask);
      return e;
    };
    check_entries(std::move(entries), f, opt, rng, out);
  }
  return out;
}

FamilyResult check_gaussian_nll(const Options& opt) {
  FamilyResult out{"gaussian_nll", opt.instances, 0, 0, 0.0};
  Rng rng(opt.seed + 1);
  std::uniform_real_distribution<double> sig(0.3, 2.0);
  for (int inst = 0; inst < opt.instances; ++inst) {
    const int d = 1 + inst % 6;
    nn::GaussianPrediction pred{gaussian(rng, d, 1).col(0), Eigen::VectorXd(d)};
    for (int j = 0; j < d; ++j) pred.sigma[j] = sig(rng);
    const Eigen::VectorXd target = gaussian(rng, d, 1).col(0);
    const nn::NllResult r = nn::gaussian_nll(pred, target);
    std::vector<Entry> entries;
    add_vector(entries, pred.mu, r.dmu);
    add_vector(entries, pred.sigma, r.dsigma);
    auto f = [&] { return Eval{nn::gaussian_nll(pred, target).loss, {}}; };
    check_entries(std::move(entries), f, opt, rng, out);
  }
  return out;
}

FamilyResult check_softplus_head(const Options& opt) {
  FamilyResult out{"softplus_head", opt.instances, 0, 0, 0.0};
  Rng rng(opt.seed + 2);
  std::uniform_real_distribution<double> u(-6.0, 6.0);
  for (int inst = 0; inst < opt.instances; ++inst) {
    Eigen::VectorXd raw(4);
    for (int j = 0; j < 4; ++j) raw[j] = u(rng);
    const Eigen::VectorXd c = gaussian(rng, 4, 1).col(0);
    const Eigen::VectorXd g = (nn::softplus_derivative(raw.array()).matrix().col(0)).cwiseProduct(c);
    std::vector<Entry> entries;
    add_vector(entries, raw, g);
    auto f = [&] { return Eval{(nn::softplus_positive(raw.array()).matrix().col(0)).dot(c), {}}; };
    check_entries(std::move(entries), f, opt, rng, out);
  }
  return out;
}

// With K = 1 and the single codebook row pinned to z_e, decoding z_q is the
// same function as decoding z_e, so straight-through gradients must equal the
// true derivative of the composite encoder -> mean -> decoder -> NLL map.
FamilyResult check_straight_through(const Options& opt) {
  FamilyResult out{"straight_through", opt.instances, 0, 0, 0.0};
  Rng rng(opt.seed + 3);
  for (int inst = 0; inst < opt.instances; ++inst) {
    const int d = 4;
    VqCnmpModel model = small_model(rng, d, 3, 8);
    const auto ctx = random_points(rng, 3, d);
    const auto tgt = random_points(rng, 4, d);
    LossOptions lo;
    lo.forced_k = 0;
    lo.include_vq_terms = false;

    model.codebook.vectors.row(0) = encode(model, ctx).transpose();
    const LossEvaluation base = loss_and_gradients(model, ctx, tgt, lo);
    std::vector<Entry> entries;
    add_network(entries, model.encoder, base.grads.encoder);
    add_network(entries, model.decoder, base.grads.decoder);

    auto f = [&] {
      const Eigen::VectorXd z_e = encode(model, ctx);
      model.codebook.vectors.row(0) = z_e.transpose();
      Eval e{loss_and_gradients(model, ctx, tgt, lo).breakdown.nll, {}};
      Eigen::MatrixXd x(d + 1, static_cast<Eigen::Index>(ctx.size()));
      for (std::size_t i = 0; i < ctx.size(); ++i) {
        x(0, static_cast<Eigen::Index>(i)) = ctx[i].t;
        x.block(1, static_cast<Eigen::Index>(i), d, 1) = ctx[i].sm;
      }
      const nn::MlpForward enc = nn::mlp_forward(model.encoder, x);
      append_mask(model.encoder, enc.cache, e.mask);
      Eigen::MatrixXd din(model.d_z + 1, static_cast<Eigen::Index>(tgt.size()));
      for (std::size_t i = 0; i < tgt.size(); ++i) {
        din.block(0, static_cast<Eigen::Index>(i), model.d_z, 1) = z_e;
        din(model.d_z, static_cast<Eigen::Index>(i)) = tgt[i].t;
      }
      const nn::MlpForward dec = nn::mlp_forward(model.decoder, din);
      append_mask(model.decoder, dec.cache, e.mask);
      return e;
    };
    check_entries(std::move(entries), f, opt, rng, out);
  }
  return out;
}

FamilyResult check_plan_loss(const Options& opt) {
  FamilyResult out{"plan_loss", opt.instances, 0, 0, 0.0};
  Rng rng(opt.seed + 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int inst = 0; inst < opt.instances; ++inst) {
    const int d = 4;
    VqCnmpModel model = small_model(rng, d, 6, 10);
    for (int j = 0; j < d; ++j) {
      model.norm_stats.mean[j] = u(rng) - 0.5;
      model.norm_stats.scale[j] = 0.05 + 0.5 * u(rng);
    }
    Eigen::VectorXd z = gaussian(rng, model.d_z, 1).col(0);
    const double tc = u(rng);
    const Eigen::Vector3d obj = gaussian(rng, 3, 1, 0.3).col(0);
    const PlanLoss base = plan_loss(model, z, tc, obj);
    std::vector<Entry> entries;
    add_vector(entries, z, base.dz);
    auto f = [&] {
      Eval e{plan_loss(model, z, tc, obj).loss, {}};
      Eigen::MatrixXd in(model.d_z + 1, 1);
      in.topRows(model.d_z) = z;
      in(model.d_z, 0) = tc;
      append_mask(model.decoder, nn::mlp_forward(model.decoder, in).cache, e.mask);
      return e;
    };
    check_entries(std::move(entries), f, opt, rng, out);
  }
  return out;
}

Report run_all(const Options& opt) {
  Report r;
  r.families.push_back(check_mlp(opt));
  r.families.push_back(check_gaussian_nll(opt));
  r.families.push_back(check_softplus_head(opt));
  r.families.push_back(check_straight_through(opt));
  r.families.push_back(check_plan_loss(opt));
  return r;
}

}  // namespace vqskill::gradcheck
