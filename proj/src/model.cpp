#include "fedsdwc/model.hpp"

#include "fedsdwc/jsonio.hpp"

#include <cmath>

namespace fedsdwc::model {

namespace {
constexpr double kLog2Pi = 1.8378770664093455;
}

std::string causal_mode_name(CausalMode m) {
  switch (m) {
    case CausalMode::none: return "none";
    case CausalMode::strong: return "strong";
    case CausalMode::weak: return "weak";
  }
  return "weak";
}

CausalMode causal_mode_from_name(const std::string& s) {
  if (s == "none") return CausalMode::none;
  if (s == "strong") return CausalMode::strong;
  if (s == "weak") return CausalMode::weak;
  throw ValidationError("unknown causal mode: " + s);
}

void ModelConfig::validate() const {
  if (dim_x < 2 || dim_x % 2 != 0)
    throw ValidationError("ModelConfig: dim_x must be even and >= 2");
  if (dim_s < 1 || dim_z < 1 || dim_c < 1)
    throw ValidationError("ModelConfig: latent dimensions must be positive");
  if (num_classes < 1) throw ValidationError("ModelConfig: num_classes must be positive");
  if (hidden_width < 1) throw ValidationError("ModelConfig: hidden_width must be positive");
  if (mixture_components < 1)
    throw ValidationError("ModelConfig: mixture_components must be >= 1");
  if (mc_samples < 1) throw ValidationError("ModelConfig: mc_samples must be >= 1");
}

bool ModelParams::same_structure(const ModelParams& other) const {
  if (arrays.size() != other.arrays.size()) return false;
  auto it = arrays.begin();
  auto jt = other.arrays.begin();
  for (; it != arrays.end(); ++it, ++jt) {
    if (it->first != jt->first) return false;
    if (it->second.rows() != jt->second.rows() || it->second.cols() != jt->second.cols())
      return false;
  }
  return true;
}

std::vector<ComponentSpec> component_specs(const ModelConfig& config) {
  const int k = config.mixture_components;
  auto head_out = [k](int d) { return k * (1 + 2 * d); };
  return {
      {"splitter", config.dim_x, config.dim_x},
      {"head_s", config.dim_xh(), head_out(config.dim_s)},
      {"head_z", config.dim_xh() + config.dim_s, head_out(config.dim_z)},
      {"head_c", config.dim_s, head_out(config.dim_c)},
      {"prior_s", config.prior_in(), 2 * config.dim_s},
      {"dec_xs", config.dim_s, config.dim_xh()},
      {"dec_xz", config.dim_z, config.dim_xh()},
      {"dec_x", config.dim_x, config.dim_x},
      {"classifier", config.dim_c + config.dim_xh(), config.num_classes},
  };
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  for (const auto& comp : component_specs(config)) {
    std::mt19937_64 rng(splitmix64(derive_seed(seed, comp.name)));
    const int h = config.hidden_width;
    auto fill = [&rng](Eigen::Index r, Eigen::Index c) {
      std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(c)));
      Mat m(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(rng);
      return m;
    };
    p.arrays[comp.name + ".w0"] = fill(h, comp.in);
    p.arrays[comp.name + ".b0"] = Mat::Zero(h, 1);
    p.arrays[comp.name + ".w1"] = fill(h, h);
    p.arrays[comp.name + ".b1"] = Mat::Zero(h, 1);
    p.arrays[comp.name + ".w2"] = fill(comp.out, h);
    p.arrays[comp.name + ".b2"] = Mat::Zero(comp.out, 1);
  }
  return p;
}

ad::Var NetVars::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw ShapeError("unknown parameter array: " + name);
  return it->second;
}

NetVars lift(ad::Graph& g, const ModelParams& params, bool requires_grad) {
  NetVars net;
  net.config = &params.config;
  for (const auto& [name, arr] : params.arrays)
    net.vars.emplace(name, requires_grad ? g.leaf(arr) : g.constant(arr));
  return net;
}

ad::Var mlp(ad::Graph& g, const NetVars& net, const std::string& comp, ad::Var input) {
  (void)g;
  ad::Var h0 = ad::tanh(ad::add_col_broadcast(ad::matmul(net.at(comp + ".w0"), input),
                                              net.at(comp + ".b0")));
  ad::Var h1 = ad::tanh(
      ad::add_col_broadcast(ad::matmul(net.at(comp + ".w1"), h0), net.at(comp + ".b1")));
  return ad::add_col_broadcast(ad::matmul(net.at(comp + ".w2"), h1), net.at(comp + ".b2"));
}

SplitVars split(ad::Graph& g, const NetVars& net, ad::Var x) {
  (void)g;
  if (x.rows() != net.config->dim_x) throw ShapeError("split: input rows must equal dim_x");
  ad::Var out = mlp(g, net, "splitter", x);
  return {ad::rows(out, 0, net.config->dim_xh()),
          ad::rows(out, net.config->dim_xh(), net.config->dim_xh())};
}

HeadSample sample_head(ad::Graph& g, const NetVars& net, const std::string& comp,
                       ad::Var input, int dim, const Mat& eps, const Vec& u) {
  const int k = net.config->mixture_components;
  const Eigen::Index batch = input.cols();
  if (eps.rows() != dim || eps.cols() != batch) throw ShapeError(comp + ": bad eps shape");
  if (u.size() != batch) throw ShapeError(comp + ": bad selection uniform length");

  ad::Var raw = mlp(g, net, comp, input);
  if (!raw.value().allFinite()) throw NumericError("non-finite output from " + comp);

  ad::Var logw = ad::log_softmax_cols(ad::rows(raw, 0, k));
  ad::Var weights = ad::exp(logw);
  ad::Var stds_all =
      ad::add_scalar(ad::softplus(ad::rows(raw, k + k * dim, k * dim)), kStdFloor);

  // categorical selection by CDF inversion of the weight values
  Mat onehot = Mat::Zero(k, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    double acc = 0.0;
    int chosen = k - 1;
    for (int j = 0; j < k; ++j) {
      acc += weights.value()(j, b);
      if (u(b) < acc) {
        chosen = j;
        break;
      }
    }
    onehot(chosen, b) = 1.0;
  }

  // straight-through: forward uses the one-hot draw, backward treats it as
  // the softmax weights
  ad::Var st = ad::add(weights, g.constant(onehot - weights.value()));

  ad::Var mean_sel, std_sel;
  for (int j = 0; j < k; ++j) {
    ad::Var sel = ad::rows(st, j, 1);
    ad::Var mj = ad::mul_row_broadcast(ad::rows(raw, k + j * dim, dim), sel);
    ad::Var sj = ad::mul_row_broadcast(ad::rows(stds_all, j * dim, dim), sel);
    mean_sel = j == 0 ? mj : ad::add(mean_sel, mj);
    std_sel = j == 0 ? sj : ad::add(std_sel, sj);
  }

  HeadSample out;
  out.sample = ad::add(mean_sel, ad::mul(std_sel, g.constant(eps)));
  out.mean_sel = mean_sel;
  out.std_sel = std_sel;
  out.weights = weights;

  out.log_q = Vec(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    int chosen = 0;
    for (int j = 0; j < k; ++j)
      if (onehot(j, b) > 0.5) chosen = j;
    double lq = logw.value()(chosen, b);
    for (int d = 0; d < dim; ++d) {
      double sd = std_sel.value()(d, b);
      lq += -0.5 * eps(d, b) * eps(d, b) - std::log(sd) - 0.5 * kLog2Pi;
    }
    out.log_q(b) = lq;
  }
  out.onehot = std::move(onehot);
  return out;
}

GaussianVars prior_s(ad::Graph& g, const NetVars& net, ad::Var z, ad::Var c) {
  ad::Var input = net.config->causal_mode == CausalMode::none ? c : ad::vcat(z, c);
  if (input.rows() != net.config->prior_in())
    throw ShapeError("prior_s: input dimension mismatch");
  ad::Var raw = mlp(g, net, "prior_s", input);
  if (!raw.value().allFinite()) throw NumericError("non-finite output from prior_s");
  const int ds = net.config->dim_s;
  return {ad::rows(raw, 0, ds),
          ad::add_scalar(ad::softplus(ad::rows(raw, ds, ds)), kStdFloor)};
}

ad::Var classifier_logits(ad::Graph& g, const NetVars& net, ad::Var c, ad::Var x_s) {
  return mlp(g, net, "classifier", ad::vcat(c, x_s));
}

BatchLatentNoise BatchLatentNoise::zeros(const ModelConfig& config, Eigen::Index batch) {
  BatchLatentNoise n;
  n.eps_s = Mat::Zero(config.dim_s, batch);
  n.eps_z = Mat::Zero(config.dim_z, batch);
  n.eps_c = Mat::Zero(config.dim_c, batch);
  n.u_s = Vec::Zero(batch);
  n.u_z = Vec::Zero(batch);
  n.u_c = Vec::Zero(batch);
  return n;
}

BatchLatentNoise BatchLatentNoise::sample(std::mt19937_64& rng, const ModelConfig& config,
                                          Eigen::Index batch) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  BatchLatentNoise n;
  auto fill = [&](Eigen::Index r) {
    Mat m(r, batch);
    for (Eigen::Index j = 0; j < batch; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = nd(rng);
    return m;
  };
  n.eps_s = fill(config.dim_s);
  n.eps_z = fill(config.dim_z);
  n.eps_c = fill(config.dim_c);
  auto fillu = [&]() {
    Vec v(batch);
    for (Eigen::Index j = 0; j < batch; ++j) v(j) = u01(rng);
    return v;
  };
  n.u_s = fillu();
  n.u_z = fillu();
  n.u_c = fillu();
  return n;
}

LatentVars infer_latents_var(ad::Graph& g, const NetVars& net, ad::Var x_s, ad::Var x_z,
                             const BatchLatentNoise& noise) {
  LatentVars lv;
  lv.s = sample_head(g, net, "head_s", x_s, net.config->dim_s, noise.eps_s, noise.u_s);
  lv.z = sample_head(g, net, "head_z", ad::vcat(x_z, lv.s.sample), net.config->dim_z,
                     noise.eps_z, noise.u_z);
  lv.c = sample_head(g, net, "head_c", lv.s.sample, net.config->dim_c, noise.eps_c,
                     noise.u_c);
  return lv;
}

ad::Var predict_probs_var(ad::Graph& g, const NetVars& net, ad::Var x,
                          const std::vector<BatchLatentNoise>& draws) {
  if (draws.empty()) throw ValidationError("predict: needs at least one noise draw");
  SplitVars sp = split(g, net, x);
  ad::Var acc;
  for (const auto& noise : draws) {
    LatentVars lv = infer_latents_var(g, net, sp.x_s, sp.x_z, noise);
    ad::Var probs = ad::softmax_cols(classifier_logits(g, net, lv.c.sample, sp.x_s));
    acc = acc.valid() ? ad::add(acc, probs) : probs;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(draws.size()));
}

// ---------------------------------------------------------------------------
// single-example wrappers

LatentNoise LatentNoise::zeros(const ModelConfig& config) {
  LatentNoise n;
  n.eps = Vec::Zero(config.dim_s + config.dim_z + config.dim_c);
  return n;
}

LatentNoise LatentNoise::sample(std::mt19937_64& rng, const ModelConfig& config) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  LatentNoise n;
  n.eps = Vec(config.dim_s + config.dim_z + config.dim_c);
  for (Eigen::Index i = 0; i < n.eps.size(); ++i) n.eps(i) = nd(rng);
  n.u_s = u01(rng);
  n.u_z = u01(rng);
  n.u_c = u01(rng);
  return n;
}

namespace {

BatchLatentNoise to_batch_noise(const ModelConfig& config, const LatentNoise& noise) {
  if (noise.eps.size() != config.dim_s + config.dim_z + config.dim_c)
    throw ShapeError("infer_latents: noise length must be dim_s + dim_z + dim_c");
  BatchLatentNoise b = BatchLatentNoise::zeros(config, 1);
  b.eps_s.col(0) = noise.eps.head(config.dim_s);
  b.eps_z.col(0) = noise.eps.segment(config.dim_s, config.dim_z);
  b.eps_c.col(0) = noise.eps.tail(config.dim_c);
  b.u_s(0) = noise.u_s;
  b.u_z(0) = noise.u_z;
  b.u_c(0) = noise.u_c;
  return b;
}

MixtureParams extract_mixture(const ModelParams& params, const std::string& comp,
                              const Vec& input, int dim) {
  ad::Graph g;
  NetVars net = lift(g, params, false);
  Mat in(input.size(), 1);
  in.col(0) = input;
  ad::Var raw = mlp(g, net, comp, g.constant(in));
  const int k = params.config.mixture_components;
  const Mat& v = raw.value();
  Eigen::VectorXd logits = v.col(0).head(k);
  double mx = logits.maxCoeff();
  Vec w = (logits.array() - mx).exp().matrix();
  w /= w.sum();
  MixtureParams mp;
  mp.weights = w;
  mp.means = Mat(dim, k);
  mp.stds = Mat(dim, k);
  for (int j = 0; j < k; ++j) {
    mp.means.col(j) = v.col(0).segment(k + j * dim, dim);
    for (int d = 0; d < dim; ++d) {
      double raw_std = v(k + k * dim + j * dim + d, 0);
      mp.stds(d, j) =
          std::max(raw_std, 0.0) + std::log1p(std::exp(-std::abs(raw_std))) + kStdFloor;
    }
  }
  return mp;
}

}  // namespace

std::pair<Vec, Vec> split_features(const ModelParams& params, const Vec& x) {
  if (x.size() != params.config.dim_x)
    throw ShapeError("split_features: input length must equal dim_x");
  ad::Graph g;
  NetVars net = lift(g, params, false);
  Mat in(x.size(), 1);
  in.col(0) = x;
  SplitVars sp = split(g, net, g.constant(in));
  return {sp.x_s.value().col(0), sp.x_z.value().col(0)};
}

LatentSample infer_latents(const ModelParams& params, const Vec& x_s, const Vec& x_z,
                           const LatentNoise& noise) {
  const ModelConfig& cfg = params.config;
  if (x_s.size() != cfg.dim_xh() || x_z.size() != cfg.dim_xh())
    throw ShapeError("infer_latents: split feature length mismatch");
  BatchLatentNoise bn = to_batch_noise(cfg, noise);

  ad::Graph g;
  NetVars net = lift(g, params, false);
  Mat xs(x_s.size(), 1), xz(x_z.size(), 1);
  xs.col(0) = x_s;
  xz.col(0) = x_z;
  LatentVars lv = infer_latents_var(g, net, g.constant(xs), g.constant(xz), bn);

  LatentSample out;
  out.x_s = x_s;
  out.x_z = x_z;
  out.s = lv.s.sample.value().col(0);
  out.z = lv.z.sample.value().col(0);
  out.c = lv.c.sample.value().col(0);
  out.log_q = lv.s.log_q(0) + lv.z.log_q(0) + lv.c.log_q(0);
  out.head_s = extract_mixture(params, "head_s", x_s, cfg.dim_s);
  Vec z_in(x_z.size() + out.s.size());
  z_in << x_z, out.s;
  out.head_z = extract_mixture(params, "head_z", z_in, cfg.dim_z);
  out.head_c = extract_mixture(params, "head_c", out.s, cfg.dim_c);
  return out;
}

Vec classify(const ModelParams& params, const Vec& c, const Vec& x_s) {
  const ModelConfig& cfg = params.config;
  if (c.size() != cfg.dim_c || x_s.size() != cfg.dim_xh())
    throw ShapeError("classify: input dimension mismatch");
  ad::Graph g;
  NetVars net = lift(g, params, false);
  Mat cm(c.size(), 1), xm(x_s.size(), 1);
  cm.col(0) = c;
  xm.col(0) = x_s;
  ad::Var probs =
      ad::softmax_cols(classifier_logits(g, net, g.constant(cm), g.constant(xm)));
  return probs.value().col(0);
}

namespace {
double gaussian_logpdf_sum(const Vec& target, const Vec& mean, double stddev) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    double r = (target(i) - mean(i)) / stddev;
    acc += -0.5 * r * r - std::log(stddev) - 0.5 * kLog2Pi;
  }
  return acc;
}
}  // namespace

double DecodeResult::log_p_xs(const Vec& target) const {
  return gaussian_logpdf_sum(target, x_s_hat, decoder_std);
}
double DecodeResult::log_p_xz(const Vec& target) const {
  return gaussian_logpdf_sum(target, x_z_hat, decoder_std);
}
double DecodeResult::log_p_x(const Vec& target) const {
  return gaussian_logpdf_sum(target, x_hat, decoder_std);
}

DecodeResult decode(const ModelParams& params, const Vec& s, const Vec& z) {
  const ModelConfig& cfg = params.config;
  if (s.size() != cfg.dim_s || z.size() != cfg.dim_z)
    throw ShapeError("decode: latent dimension mismatch");
  ad::Graph g;
  NetVars net = lift(g, params, false);
  Mat sm(s.size(), 1), zm(z.size(), 1);
  sm.col(0) = s;
  zm.col(0) = z;
  ad::Var xs_hat = mlp(g, net, "dec_xs", g.constant(sm));
  ad::Var xz_hat = mlp(g, net, "dec_xz", g.constant(zm));
  ad::Var x_hat = mlp(g, net, "dec_x", ad::vcat(xs_hat, xz_hat));
  DecodeResult r;
  r.x_s_hat = xs_hat.value().col(0);
  r.x_z_hat = xz_hat.value().col(0);
  r.x_hat = x_hat.value().col(0);
  return r;
}

Vec predict(const ModelParams& params, const Vec& x, const std::vector<LatentNoise>& draws) {
  Mat f(1, x.size());
  f.row(0) = x.transpose();
  std::vector<BatchLatentNoise> bd;
  bd.reserve(draws.size());
  for (const auto& d : draws) bd.push_back(to_batch_noise(params.config, d));
  return predict_batch(params, f, bd).col(0);
}

Mat predict_batch(const ModelParams& params, const Mat& features,
                  const std::vector<BatchLatentNoise>& draws) {
  if (features.cols() != params.config.dim_x)
    throw ShapeError("predict: feature columns must equal dim_x");
  ad::Graph g;
  NetVars net = lift(g, params, false);
  ad::Var x = g.constant(features.transpose());
  return predict_probs_var(g, net, x, draws).value();
}

void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params) {
  std::filesystem::create_directories(dir);
  jsonio::json manifest;
  jsonio::json cfg;
  cfg["dim_x"] = params.config.dim_x;
  cfg["dim_s"] = params.config.dim_s;
  cfg["dim_z"] = params.config.dim_z;
  cfg["dim_c"] = params.config.dim_c;
  cfg["num_classes"] = params.config.num_classes;
  cfg["hidden_width"] = params.config.hidden_width;
  cfg["mixture_components"] = params.config.mixture_components;
  cfg["causal_mode"] = causal_mode_name(params.config.causal_mode);
  cfg["mc_samples"] = params.config.mc_samples;
  manifest["config"] = cfg;
  jsonio::json shapes;
  for (const auto& [name, arr] : params.arrays) {
    shapes[name] = jsonio::json::array({arr.rows(), arr.cols()});
    jsonio::write_f32(dir / (name + ".f32"), arr);
  }
  manifest["arrays"] = shapes;
  jsonio::write_json(dir / "manifest.json", manifest);
}

ModelParams load_checkpoint(const std::filesystem::path& dir) {
  jsonio::json manifest = jsonio::read_json(dir / "manifest.json");
  const auto& cfg = manifest.at("config");
  ModelParams p;
  p.config.dim_x = cfg.at("dim_x").get<int>();
  p.config.dim_s = cfg.at("dim_s").get<int>();
  p.config.dim_z = cfg.at("dim_z").get<int>();
  p.config.dim_c = cfg.at("dim_c").get<int>();
  p.config.num_classes = cfg.at("num_classes").get<int>();
  p.config.hidden_width = cfg.at("hidden_width").get<int>();
  p.config.mixture_components = cfg.at("mixture_components").get<int>();
  p.config.causal_mode = causal_mode_from_name(cfg.at("causal_mode").get<std::string>());
  p.config.mc_samples = cfg.at("mc_samples").get<int>();
  for (const auto& [name, shape] : manifest.at("arrays").items()) {
    Eigen::Index r = shape[0].get<Eigen::Index>();
    Eigen::Index c = shape[1].get<Eigen::Index>();
    p.arrays[name] = jsonio::read_f32(dir / (name + ".f32"), r, c);
  }
  return p;
}

}  // namespace fedsdwc::model
