#pragma once

#include "fedsdwc/autodiff.hpp"
#include "fedsdwc/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace fedsdwc::model {

/// Causal wiring between the variant latent z and the semantic latent s:
/// none cuts z out of the s-prior, strong keeps it, weak keeps it and adds
/// the interventional consistency loss on top.
enum class CausalMode { none, strong, weak };

std::string causal_mode_name(CausalMode m);
CausalMode causal_mode_from_name(const std::string& s);

struct ModelConfig {
  int dim_x = 20;
  int dim_s = 4;
  int dim_z = 4;
  int dim_c = 4;
  int num_classes = 4;
  int hidden_width = 32;
  int mixture_components = 1;
  CausalMode causal_mode = CausalMode::weak;
  int mc_samples = 8;

  int dim_xh() const { return dim_x / 2; }
  int prior_in() const {
    return causal_mode == CausalMode::none ? dim_c : dim_z + dim_c;
  }
  void validate() const;
};

struct ModelParams {
  ModelConfig config;
  std::map<std::string, Mat> arrays;

  bool same_structure(const ModelParams& other) const;
};

struct ComponentSpec {
  std::string name;
  int in = 0;
  int out = 0;
};

// All trainable components with their MLP input/output widths; fixed order.
std::vector<ComponentSpec> component_specs(const ModelConfig& config);

// Weights ~ Normal(0, 2/fan_in), biases zero; deterministic in the seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

constexpr double kStdFloor = 1e-4;
constexpr double kDecoderStd = 0.5;

// ---------------------------------------------------------------------------
// Differentiable batched forward passes. Columns are examples.

struct NetVars {
  const ModelConfig* config = nullptr;
  std::map<std::string, ad::Var> vars;

  ad::Var at(const std::string& name) const;
};

NetVars lift(ad::Graph& g, const ModelParams& params, bool requires_grad);

// 2-hidden-layer tanh MLP: w2*tanh(w1*tanh(w0*x+b0)+b1)+b2.
ad::Var mlp(ad::Graph& g, const NetVars& net, const std::string& comp, ad::Var input);

struct SplitVars {
  ad::Var x_s;
  ad::Var x_z;
};
SplitVars split(ad::Graph& g, const NetVars& net, ad::Var x);

// Per-head reparameterized Gaussian-mixture sample. Component selection is a
// categorical draw by CDF inversion of the mixture weights at the given
// uniforms; the gradient to the weights uses the straight-through estimator.
struct HeadSample {
  ad::Var sample;    // d x B
  ad::Var mean_sel;  // d x B
  ad::Var std_sel;   // d x B
  ad::Var weights;   // K x B (softmax)
  Mat onehot;        // K x B selection actually taken
  Vec log_q;         // per-example log weight + component log-density
};

HeadSample sample_head(ad::Graph& g, const NetVars& net, const std::string& comp,
                       ad::Var input, int dim, const Mat& eps, const Vec& u);

struct GaussianVars {
  ad::Var mean;
  ad::Var std;
};

// p(s|z,c) (or p(s|c) under causal_mode none). z may be an invalid Var in
// none mode since it is not consumed.
GaussianVars prior_s(ad::Graph& g, const NetVars& net, ad::Var z, ad::Var c);

ad::Var classifier_logits(ad::Graph& g, const NetVars& net, ad::Var c, ad::Var x_s);

// Explicit noise for one latent pass over a batch.
struct BatchLatentNoise {
  Mat eps_s, eps_z, eps_c;  // dim x B
  Vec u_s, u_z, u_c;        // B, selection uniforms in [0,1)

  static BatchLatentNoise zeros(const ModelConfig& config, Eigen::Index batch);
  static BatchLatentNoise sample(std::mt19937_64& rng, const ModelConfig& config,
                                 Eigen::Index batch);
};

struct LatentVars {
  HeadSample s, z, c;
};

// s ~ q(s|x_s); z ~ q(z|x_z, s); c ~ q(c|s).
LatentVars infer_latents_var(ad::Graph& g, const NetVars& net, ad::Var x_s, ad::Var x_z,
                             const BatchLatentNoise& noise);

// q(y|x) as the Monte-Carlo average over draws of softmax(classifier(c, x_s)).
ad::Var predict_probs_var(ad::Graph& g, const NetVars& net, ad::Var x,
                          const std::vector<BatchLatentNoise>& draws);

// ---------------------------------------------------------------------------
// Spec-level single-example operations (plain values).

struct MixtureParams {
  Vec weights;  // K
  Mat means;    // dim x K
  Mat stds;     // dim x K
};

struct LatentSample {
  Vec x_s, x_z;
  Vec s, z, c;
  MixtureParams head_s, head_z, head_c;
  double log_q = 0.0;
};

struct LatentNoise {
  Vec eps;  // dim_s + dim_z + dim_c
  double u_s = 0.0, u_z = 0.0, u_c = 0.0;

  static LatentNoise zeros(const ModelConfig& config);
  static LatentNoise sample(std::mt19937_64& rng, const ModelConfig& config);
};

std::pair<Vec, Vec> split_features(const ModelParams& params, const Vec& x);

LatentSample infer_latents(const ModelParams& params, const Vec& x_s, const Vec& x_z,
                           const LatentNoise& noise);

Vec classify(const ModelParams& params, const Vec& c, const Vec& x_s);

struct DecodeResult {
  Vec x_s_hat, x_z_hat, x_hat;
  double decoder_std = kDecoderStd;

  double log_p_xs(const Vec& target) const;
  double log_p_xz(const Vec& target) const;
  double log_p_x(const Vec& target) const;
};

DecodeResult decode(const ModelParams& params, const Vec& s, const Vec& z);

Vec predict(const ModelParams& params, const Vec& x, const std::vector<LatentNoise>& draws);

// Batched deterministic-or-sampled prediction used by evaluation; one shared
// noise set per Monte-Carlo draw.
Mat predict_batch(const ModelParams& params, const Mat& features,
                  const std::vector<BatchLatentNoise>& draws);

// ---------------------------------------------------------------------------
// Checkpoint directory format: manifest.json plus one raw f32 blob per array.

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& dir);

}  // namespace fedsdwc::model
