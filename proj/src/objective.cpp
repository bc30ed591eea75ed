#include "fedsdwc/objective.hpp"

#include "fedsdwc/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace fedsdwc::objective {

namespace ad = fedsdwc::ad;
using model::BatchLatentNoise;
using model::ModelConfig;
using model::ModelParams;
using model::NetVars;

namespace {

constexpr double kLog2Pi = 1.8378770664093455;
constexpr double kProbFloor = 1e-8;
constexpr double kWeightClip = 10.0;

// Per-column Gaussian log-density of target under N(mean, stddev^2 I): 1 x B.
ad::Var gauss_loglik(ad::Var target, ad::Var mean, double stddev) {
  ad::Var sq = ad::colwise_sum(ad::square(ad::sub(target, mean)));
  double d = static_cast<double>(target.rows());
  return ad::add_scalar(ad::scale(sq, -1.0 / (2.0 * stddev * stddev)),
                        -d * (std::log(stddev) + 0.5 * kLog2Pi));
}

// Per-column KL(N(qm, qs^2) || N(pm, ps^2)): 1 x B.
ad::Var gauss_kl_var(ad::Var qm, ad::Var qs, ad::Var pm, ad::Var ps) {
  ad::Var log_ratio = ad::sub(ad::log(ps), ad::log(qs));
  ad::Var num = ad::add(ad::square(qs), ad::square(ad::sub(qm, pm)));
  ad::Var quad = ad::div(num, ad::scale(ad::square(ps), 2.0));
  return ad::colwise_sum(ad::add_scalar(ad::add(log_ratio, quad), -0.5));
}

// Per-column KL(N(qm, qs^2) || N(0, I)): 1 x B.
ad::Var gauss_kl_std_normal(ad::Var qm, ad::Var qs) {
  ad::Var term = ad::add(ad::neg(ad::log(qs)),
                         ad::scale(ad::add(ad::square(qs), ad::square(qm)), 0.5));
  return ad::colwise_sum(ad::add_scalar(term, -0.5));
}

Mat label_onehot(const LabelVec& labels, int num_classes) {
  Mat y = Mat::Zero(num_classes, labels.size());
  for (Eigen::Index b = 0; b < labels.size(); ++b) {
    if (labels(b) < 0 || labels(b) >= num_classes)
      throw ValidationError("label out of range: " + std::to_string(labels(b)));
    y(labels(b), b) = 1.0;
  }
  return y;
}

struct ElboVars {
  ad::Var ce;             // 1x1
  ad::Var elbo_weighted;  // 1x1
  double recon_x = 0.0, recon_xs = 0.0, recon_xz = 0.0;
  double kl_s = 0.0, kl_z = 0.0, kl_c = 0.0;
};

ElboVars build_elbo(ad::Graph& g, const NetVars& net, ad::Var x, const LabelVec& labels,
                    const LossNoise& noise, const Mat* fixed_weights) {
  const ModelConfig& cfg = *net.config;
  const Eigen::Index batch = x.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);
  Mat y = label_onehot(labels, cfg.num_classes);
  ad::Var y_const = g.constant(y);

  model::SplitVars sp = model::split(g, net, x);

  // cross-entropy term: -log q(y|x) with q(y|x) the Monte-Carlo predictive
  ad::Var q_all = model::predict_probs_var(g, net, x, noise.predict_draws);
  ad::Var q_true = ad::colwise_sum(ad::mul(q_all, y_const));
  ad::Var ce_vec = ad::neg(ad::log(q_true));
  ad::Var ce = ad::scale(ad::sum(ce_vec), inv_b);

  // detached importance weights w = p*(y|x)/q(y|x), clipped
  Mat w(1, batch);
  if (fixed_weights != nullptr) {
    if (fixed_weights->rows() != 1 || fixed_weights->cols() != batch)
      throw ShapeError("elbo: fixed_weights must be 1 x batch");
    w = *fixed_weights;
  } else {
    for (Eigen::Index b = 0; b < batch; ++b) {
      double q = q_true.value()(0, b);
      double wv = q > 0.0 ? 1.0 / q : kWeightClip;
      w(0, b) = std::clamp(wv, 0.0, kWeightClip);
    }
  }

  // single latent draw for the evidence bracket
  model::LatentVars lv = model::infer_latents_var(g, net, sp.x_s, sp.x_z, noise.elbo_draw);

  ad::Var logits = model::classifier_logits(g, net, lv.c.sample, sp.x_s);
  ad::Var logp_y = ad::colwise_sum(ad::mul(ad::log_softmax_cols(logits), y_const));

  ad::Var xs_hat = model::mlp(g, net, "dec_xs", lv.s.sample);
  ad::Var xz_hat = model::mlp(g, net, "dec_xz", lv.z.sample);
  ad::Var x_hat = model::mlp(g, net, "dec_x", ad::vcat(xs_hat, xz_hat));
  ad::Var logp_xs = gauss_loglik(sp.x_s, xs_hat, model::kDecoderStd);
  ad::Var logp_xz = gauss_loglik(sp.x_z, xz_hat, model::kDecoderStd);
  ad::Var logp_x = gauss_loglik(x, x_hat, model::kDecoderStd);

  model::GaussianVars prior = model::prior_s(g, net, lv.z.sample, lv.c.sample);
  ad::Var kl_s = gauss_kl_var(lv.s.mean_sel, lv.s.std_sel, prior.mean, prior.std);
  ad::Var kl_z = gauss_kl_std_normal(lv.z.mean_sel, lv.z.std_sel);
  ad::Var kl_c = gauss_kl_std_normal(lv.c.mean_sel, lv.c.std_sel);

  ad::Var bracket = ad::add(
      logp_y,
      ad::sub(ad::add(ad::add(logp_xs, logp_xz), logp_x), ad::add(ad::add(kl_s, kl_z), kl_c)));
  ad::Var weighted = ad::scale(ad::sum(ad::mul(g.constant(w), ad::neg(bracket))), inv_b);

  ElboVars out;
  out.ce = ce;
  out.elbo_weighted = weighted;
  out.recon_x = -logp_x.value().mean();
  out.recon_xs = -logp_xs.value().mean();
  out.recon_xz = -logp_xz.value().mean();
  out.kl_s = kl_s.value().mean();
  out.kl_z = kl_z.value().mean();
  out.kl_c = kl_c.value().mean();
  return out;
}

// Prior-routed predictive distribution: s ~ q(s|x_s), z ~ q(z|x_z', s),
// c ~ q(c|s), s~ ~ p(s|z,c), c~ ~ q(c|s~), y ~ softmax(classifier(c~, x_s)).
// The shared-structure pieces (s, c) are passed in so clean and perturbed
// passes reuse the identical subgraph.
ad::Var prior_routed_probs(ad::Graph& g, const NetVars& net, model::SplitVars sp,
                           const model::HeadSample& s_head, const model::HeadSample& c_head,
                           ad::Var x_z_input, const LossNoise& noise) {
  const ModelConfig& cfg = *net.config;
  model::HeadSample z_head =
      model::sample_head(g, net, "head_z", ad::vcat(x_z_input, s_head.sample), cfg.dim_z,
                         noise.ic_draw.eps_z, noise.ic_draw.u_z);
  model::GaussianVars prior = model::prior_s(g, net, z_head.sample, c_head.sample);
  ad::Var s_tilde =
      ad::add(prior.mean, ad::mul(prior.std, g.constant(noise.ic_prior_eps)));
  model::HeadSample c2 = model::sample_head(g, net, "head_c", s_tilde, cfg.dim_c,
                                            noise.ic_eps_c2, noise.ic_u_c2);
  return ad::softmax_cols(model::classifier_logits(g, net, c2.sample, sp.x_s));
}

ad::Var build_intervention(ad::Graph& g, const NetVars& net, ad::Var x,
                           double intervention_scale, const LossNoise& noise) {
  const ModelConfig& cfg = *net.config;
  const Eigen::Index batch = x.cols();
  model::SplitVars sp = model::split(g, net, x);

  model::HeadSample s_head = model::sample_head(g, net, "head_s", sp.x_s, cfg.dim_s,
                                                noise.ic_draw.eps_s, noise.ic_draw.u_s);
  model::HeadSample c_head = model::sample_head(g, net, "head_c", s_head.sample, cfg.dim_c,
                                                noise.ic_draw.eps_c, noise.ic_draw.u_c);

  ad::Var pi_clean = prior_routed_probs(g, net, sp, s_head, c_head, sp.x_z, noise);
  ad::Var x_z_pert = ad::add(sp.x_z, g.constant(Mat(intervention_scale * noise.ic_eps)));
  ad::Var pi_pert = prior_routed_probs(g, net, sp, s_head, c_head, x_z_pert, noise);

  ad::Var log_ratio = ad::sub(ad::log(ad::clamp_min(pi_clean, kProbFloor)),
                              ad::log(ad::clamp_min(pi_pert, kProbFloor)));
  ad::Var kl_vec = ad::colwise_sum(ad::mul(pi_clean, log_ratio));
  return ad::clamp_min0(ad::scale(ad::sum(kl_vec), 1.0 / static_cast<double>(batch)));
}

void check_finite(const LossBreakdown& b) {
  struct Named {
    const char* name;
    double v;
  };
  const Named fields[] = {{"ce", b.ce},           {"recon_xs", b.recon_xs},
                          {"recon_xz", b.recon_xz}, {"recon_x", b.recon_x},
                          {"kl_s", b.kl_s},       {"kl_z", b.kl_z},
                          {"kl_c", b.kl_c},       {"elbo_weighted", b.elbo_weighted},
                          {"ic", b.ic},           {"total", b.total}};
  for (const auto& f : fields)
    if (!std::isfinite(f.v))
      throw NumericError(std::string("non-finite loss term: ") + f.name);
}

void extract_grads(ad::Graph& g, const NetVars& net, const ModelParams& params,
                   GradMap& grads) {
  for (const auto& [name, arr] : params.arrays) {
    const ad::Var& v = net.at(name);
    const Mat& grad = g.node(v.id()).grad;
    grads[name] = grad.size() == 0 ? Mat(Mat::Zero(arr.rows(), arr.cols())) : grad;
  }
}

void validate_batch(const ModelParams& params, const Mat& features) {
  if (features.rows() < 1) throw ValidationError("loss: empty batch");
  if (features.cols() != params.config.dim_x)
    throw ShapeError("loss: feature columns must equal dim_x");
}

}  // namespace

LossNoise LossNoise::sample(std::mt19937_64& rng, const ModelConfig& config,
                            Eigen::Index batch) {
  LossNoise n;
  n.predict_draws.reserve(static_cast<std::size_t>(config.mc_samples));
  for (int m = 0; m < config.mc_samples; ++m)
    n.predict_draws.push_back(BatchLatentNoise::sample(rng, config, batch));
  n.elbo_draw = BatchLatentNoise::sample(rng, config, batch);
  n.ic_draw = BatchLatentNoise::sample(rng, config, batch);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto fill = [&](Eigen::Index r) {
    Mat m(r, batch);
    for (Eigen::Index j = 0; j < batch; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = nd(rng);
    return m;
  };
  n.ic_eps = fill(config.dim_xh());
  n.ic_prior_eps = fill(config.dim_s);
  n.ic_eps_c2 = fill(config.dim_c);
  n.ic_u_c2 = Vec(batch);
  for (Eigen::Index j = 0; j < batch; ++j) n.ic_u_c2(j) = u01(rng);
  return n;
}

LossNoise LossNoise::zeros(const ModelConfig& config, Eigen::Index batch) {
  LossNoise n;
  n.predict_draws.assign(static_cast<std::size_t>(config.mc_samples),
                         BatchLatentNoise::zeros(config, batch));
  n.elbo_draw = BatchLatentNoise::zeros(config, batch);
  n.ic_draw = BatchLatentNoise::zeros(config, batch);
  n.ic_eps = Mat::Zero(config.dim_xh(), batch);
  n.ic_prior_eps = Mat::Zero(config.dim_s, batch);
  n.ic_eps_c2 = Mat::Zero(config.dim_c, batch);
  n.ic_u_c2 = Vec::Zero(batch);
  return n;
}

double gaussian_kl(const Vec& mean_a, const Vec& std_a, const Vec& mean_b,
                   const Vec& std_b) {
  if (mean_a.size() != std_a.size() || mean_a.size() != mean_b.size() ||
      mean_a.size() != std_b.size())
    throw ShapeError("gaussian_kl: length mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < mean_a.size(); ++i) {
    if (!(std_a(i) > 0.0) || !(std_b(i) > 0.0))
      throw ValidationError("gaussian_kl: stds must be strictly positive");
    double d = mean_a(i) - mean_b(i);
    acc += std::log(std_b(i) / std_a(i)) +
           (std_a(i) * std_a(i) + d * d) / (2.0 * std_b(i) * std_b(i)) - 0.5;
  }
  return acc;
}

Mat importance_weights(const ModelParams& params, const Mat& features,
                       const LabelVec& labels, const LossNoise& noise) {
  validate_batch(params, features);
  Mat probs = model::predict_batch(params, features, noise.predict_draws);
  Mat w(1, features.rows());
  for (Eigen::Index b = 0; b < features.rows(); ++b) {
    if (labels(b) < 0 || labels(b) >= params.config.num_classes)
      throw ValidationError("label out of range: " + std::to_string(labels(b)));
    double q = probs(labels(b), b);
    double wv = q > 0.0 ? 1.0 / q : kWeightClip;
    w(0, b) = std::clamp(wv, 0.0, kWeightClip);
  }
  return w;
}

LossBreakdown elbo_loss(const ModelParams& params, const Mat& features,
                        const LabelVec& labels, const LossNoise& noise, GradMap* grads,
                        const Mat* fixed_weights) {
  validate_batch(params, features);
  if (features.rows() != labels.size())
    throw ValidationError("elbo_loss: feature/label count mismatch");

  ad::Graph g;
  NetVars net = model::lift(g, params, grads != nullptr);
  ad::Var x = g.constant(features.transpose());
  ElboVars ev = build_elbo(g, net, x, labels, noise, fixed_weights);
  ad::Var total = ad::add(ev.ce, ev.elbo_weighted);

  LossBreakdown b;
  b.ce = ev.ce.value()(0, 0);
  b.elbo_weighted = ev.elbo_weighted.value()(0, 0);
  b.recon_x = ev.recon_x;
  b.recon_xs = ev.recon_xs;
  b.recon_xz = ev.recon_xz;
  b.kl_s = ev.kl_s;
  b.kl_z = ev.kl_z;
  b.kl_c = ev.kl_c;
  b.ic = 0.0;
  b.total = total.value()(0, 0);
  check_finite(b);

  if (grads != nullptr) {
    g.backward(total);
    extract_grads(g, net, params, *grads);
  }
  return b;
}

double intervention_loss(const ModelParams& params, const Mat& features,
                         double intervention_scale, const LossNoise& noise,
                         GradMap* grads) {
  validate_batch(params, features);
  if (!(intervention_scale >= 0.0))
    throw ValidationError("intervention_loss: scale must be >= 0");

  ad::Graph g;
  NetVars net = model::lift(g, params, grads != nullptr);
  ad::Var x = g.constant(features.transpose());
  ad::Var ic = build_intervention(g, net, x, intervention_scale, noise);
  double value = ic.value()(0, 0);
  if (!std::isfinite(value)) throw NumericError("non-finite loss term: ic");
  if (grads != nullptr) {
    g.backward(ic);
    extract_grads(g, net, params, *grads);
  }
  return value;
}

LossBreakdown total_loss(const ModelParams& params, const Mat& features,
                         const LabelVec& labels, double intervention_scale,
                         const LossNoise& noise, GradMap* grads,
                         const Mat* fixed_weights) {
  validate_batch(params, features);
  if (features.rows() != labels.size())
    throw ValidationError("total_loss: feature/label count mismatch");
  if (!(intervention_scale >= 0.0))
    throw ValidationError("total_loss: intervention_scale must be >= 0");

  ad::Graph g;
  NetVars net = model::lift(g, params, grads != nullptr);
  ad::Var x = g.constant(features.transpose());
  ElboVars ev = build_elbo(g, net, x, labels, noise, fixed_weights);

  ad::Var total = ad::add(ev.ce, ev.elbo_weighted);
  double ic_value = 0.0;
  if (params.config.causal_mode == model::CausalMode::weak) {
    ad::Var ic = build_intervention(g, net, x, intervention_scale, noise);
    ic_value = ic.value()(0, 0);
    total = ad::add(total, ic);
  }

  LossBreakdown b;
  b.ce = ev.ce.value()(0, 0);
  b.elbo_weighted = ev.elbo_weighted.value()(0, 0);
  b.recon_x = ev.recon_x;
  b.recon_xs = ev.recon_xs;
  b.recon_xz = ev.recon_xz;
  b.kl_s = ev.kl_s;
  b.kl_z = ev.kl_z;
  b.kl_c = ev.kl_c;
  b.ic = ic_value;
  b.total = total.value()(0, 0);
  check_finite(b);

  if (grads != nullptr) {
    g.backward(total);
    extract_grads(g, net, params, *grads);
  }
  return b;
}

}  // namespace fedsdwc::objective
