#include "vqskill/nn.hpp"

#include "vqskill/errors.hpp"

#include <cmath>
#include <numbers>

namespace vqskill::nn {

void MlpParams::check() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.bias.size() != l.weight.rows()) throw ShapeError("layer " + std::to_string(i) + ": bias/weight mismatch");
    if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows())
      throw ShapeError("layer " + std::to_string(i) + ": input width does not chain");
  }
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

MlpGradients MlpGradients::zeros_like(const MlpParams& p) {
  MlpGradients g;
  for (const auto& l : p.layers) {
    g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  return g;
}

MlpParams make_mlp(std::span<const int> widths, Activation hidden, Activation output, Rng& rng,
                   double output_gain) {
  if (widths.size() < 2) throw ShapeError("make_mlp needs at least input and output widths");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const int in = widths[i];
    const int out = widths[i + 1];
    const Activation act = (i + 2 == widths.size()) ? output : hidden;
    const double bound = act == Activation::relu ? std::sqrt(6.0 / in) : output_gain * std::sqrt(3.0 / in);
    std::uniform_real_distribution<double> init(-bound, bound);
    DenseLayer l;
    l.weight.resize(out, in);
    // Row-major fill so the draw order matches the checkpoint layout.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weight(r, c) = init(rng);
    l.bias = Eigen::VectorXd::Zero(out);
    l.activation = act;
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpForward mlp_forward(const MlpParams& p, const Eigen::MatrixXd& x) {
  if (p.layers.empty() || x.rows() != p.in_dim())
    throw ShapeError("mlp_forward: input has " + std::to_string(x.rows()) + " rows, network expects " +
                     std::to_string(p.in_dim()));
  MlpForward f;
  f.cache.inputs.reserve(p.layers.size());
  f.cache.pre_activations.reserve(p.layers.size());
  Eigen::MatrixXd h = x;
  for (const auto& l : p.layers) {
    Eigen::MatrixXd a = l.weight * h;
    a.colwise() += l.bias;
    f.cache.inputs.push_back(std::move(h));
    h = (l.activation == Activation::relu) ? Eigen::MatrixXd(a.cwiseMax(0.0)) : a;
    f.cache.pre_activations.push_back(std::move(a));
  }
  f.output = std::move(h);
  return f;
}

Eigen::VectorXd mlp_apply(const MlpParams& p, const Eigen::VectorXd& x) {
  return mlp_forward(p, Eigen::MatrixXd(x)).output.col(0);
}

MlpBackward mlp_backward(const MlpParams& p, const MlpCache& cache, const Eigen::MatrixXd& dy,
                         bool want_param_grads) {
  if (cache.inputs.size() != p.layers.size() || cache.pre_activations.size() != p.layers.size())
    throw ShapeError("mlp_backward: cache does not match network depth");
  if (dy.rows() != p.out_dim() || dy.cols() != cache.pre_activations.back().cols())
    throw ShapeError("mlp_backward: dy shape does not match forward output");
  MlpBackward b;
  if (want_param_grads) {
    b.grads.weight.resize(p.layers.size());
    b.grads.bias.resize(p.layers.size());
  }
  Eigen::MatrixXd delta = dy;
  for (std::size_t i = p.layers.size(); i-- > 0;) {
    const auto& l = p.layers[i];
    if (l.activation == Activation::relu)
      delta = (cache.pre_activations[i].array() > 0.0).select(delta, 0.0);
    if (want_param_grads) {
      b.grads.weight[i].noalias() = delta * cache.inputs[i].transpose();
      b.grads.bias[i] = delta.rowwise().sum();
    }
    Eigen::MatrixXd next = l.weight.transpose() * delta;
    delta = std::move(next);
  }
  b.dx = std::move(delta);
  return b;
}

NllResult gaussian_nll(const GaussianPrediction& pred, const Eigen::VectorXd& target) {
  if (pred.mu.size() != target.size() || pred.sigma.size() != target.size())
    throw ShapeError("gaussian_nll: mu, sigma and target lengths differ");
  if ((pred.sigma.array() <= 0.0).any()) throw std::domain_error("gaussian_nll: sigma must be strictly positive");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const Eigen::ArrayXd r = (target - pred.mu).array();
  const Eigen::ArrayXd s = pred.sigma.array();
  const Eigen::ArrayXd s2 = s.square();
  NllResult out;
  out.loss = (s.log() + r.square() / (2.0 * s2) + half_log_2pi).sum();
  out.dmu = (-r / s2).matrix();
  out.dsigma = (1.0 / s - r.square() / (s2 * s)).matrix();
  return out;
}

Eigen::ArrayXXd softplus_positive(const Eigen::ArrayXXd& raw) {
  // max(x, 0) + log1p(exp(-|x|)) is exact for both tails.
  return raw.max(0.0) + (-raw.abs()).exp().log1p() + kSigmaFloor;
}

Eigen::ArrayXXd softplus_derivative(const Eigen::ArrayXXd& raw) { return 1.0 / (1.0 + (-raw).exp()); }

AdamState AdamState::for_blocks(std::span<const std::span<double>> params) {
  AdamState st;
  for (const auto& blk : params) {
    st.m.emplace_back(blk.size(), 0.0);
    st.v.emplace_back(blk.size(), 0.0);
  }
  return st;
}

void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
               AdamState& st, const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != st.m.size() || params.size() != st.v.size())
    throw ShapeError("adam_step: block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b)
    if (params[b].size() != grads[b].size() || params[b].size() != st.m[b].size())
      throw ShapeError("adam_step: block " + std::to_string(b) + " size mismatch");

  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    auto g = grads[b];
    auto& m = st.m[b];
    auto& v = st.v[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

double clip_global_norm(std::span<const std::span<double>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto& blk : grads)
    for (double x : blk) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& blk : grads)
      for (double& x : blk) x *= s;
  }
  return norm;
}

namespace {
template <typename Derived>
std::span<double> view(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
}  // namespace

std::vector<std::span<double>> parameter_blocks(MlpParams& p) {
  std::vector<std::span<double>> out;
  for (auto& l : p.layers) {
    out.push_back(view(l.weight));
    out.push_back(view(l.bias));
  }
  return out;
}

std::vector<std::span<double>> gradient_blocks(MlpGradients& g) {
  std::vector<std::span<double>> out;
  for (std::size_t i = 0; i < g.weight.size(); ++i) {
    out.push_back(view(g.weight[i]));
    out.push_back(view(g.bias[i]));
  }
  return out;
}

}  // namespace vqskill::nn
