#pragma once

#include "fedsdwc/common.hpp"
#include "fedsdwc/model.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace fedsdwc::objective {

/// Per-term training loss record for one batch. Terms are batch means;
/// recon_* and kl_* are unweighted diagnostics, while elbo_weighted carries
/// the importance-weighted negative evidence term that actually trains.
struct LossBreakdown {
  double ce = 0.0;
  double elbo_weighted = 0.0;
  double recon_x = 0.0;
  double recon_xs = 0.0;
  double recon_xz = 0.0;
  double kl_s = 0.0;
  double kl_z = 0.0;
  double kl_c = 0.0;
  double ic = 0.0;
  double total = 0.0;
};

// Explicit randomness for one loss evaluation over a batch. Sampling order is
// fixed (predict draws, then the evidence-term draw, then the intervention
// draws) so a loss value is a pure function of (params, batch, noise).
struct LossNoise {
  std::vector<model::BatchLatentNoise> predict_draws;
  model::BatchLatentNoise elbo_draw;
  model::BatchLatentNoise ic_draw;
  Mat ic_eps;        // dim_xh x B, perturbation direction for x_z
  Mat ic_prior_eps;  // dim_s x B, reparameterization of the prior-routed s
  Mat ic_eps_c2;     // dim_c x B
  Vec ic_u_c2;       // B

  static LossNoise sample(std::mt19937_64& rng, const model::ModelConfig& config,
                          Eigen::Index batch);
  static LossNoise zeros(const model::ModelConfig& config, Eigen::Index batch);
};

// Closed-form KL(N(mean_a, diag std_a^2) || N(mean_b, diag std_b^2)).
double gaussian_kl(const Vec& mean_a, const Vec& std_a, const Vec& mean_b,
                   const Vec& std_b);

using GradMap = std::map<std::string, Mat>;

// The importance weights w = clip(p*(y|x)/q(y|x), 0, 10) that elbo_loss uses;
// they are gradient-detached inside the loss. Passing them back through
// fixed_weights pins the loss to the exact function the gradient belongs to
// (used by finite-difference oracles).
Mat importance_weights(const model::ModelParams& params, const Mat& features,
                       const LabelVec& labels, const LossNoise& noise);

LossBreakdown elbo_loss(const model::ModelParams& params, const Mat& features,
                        const LabelVec& labels, const LossNoise& noise,
                        GradMap* grads = nullptr, const Mat* fixed_weights = nullptr);

// Mean over the batch of KL(q(y|x_s,x_z) || q(y|x_s, x_z + scale*eps)) along
// the prior-routed latent pathway x_z -> z -> p(s|z,c) -> c -> classifier,
// with identical reparameterization noise in both passes.
double intervention_loss(const model::ModelParams& params, const Mat& features,
                         double intervention_scale, const LossNoise& noise,
                         GradMap* grads = nullptr);

// ELBO loss plus the intervention term under causal_mode weak; the ic field
// is exactly 0 under modes none and strong.
LossBreakdown total_loss(const model::ModelParams& params, const Mat& features,
                         const LabelVec& labels, double intervention_scale,
                         const LossNoise& noise, GradMap* grads = nullptr,
                         const Mat* fixed_weights = nullptr);

}  // namespace fedsdwc::objective
