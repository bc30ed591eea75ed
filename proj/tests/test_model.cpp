#include <doctest.h>

#include "fedsdwc/jsonio.hpp"
#include "fedsdwc/model.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace fedsdwc;
using namespace fedsdwc::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.dim_x = 8;
  c.dim_s = 3;
  c.dim_z = 2;
  c.dim_c = 3;
  c.num_classes = 4;
  c.hidden_width = 6;
  c.mixture_components = 1;
  c.causal_mode = CausalMode::weak;
  c.mc_samples = 2;
  return c;
}

Vec random_vec(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

constexpr double kLog2Pi = 1.8378770664093455;

double gauss_logpdf(double x, double mean, double sd) {
  double r = (x - mean) / sd;
  return -0.5 * r * r - std::log(sd) - 0.5 * kLog2Pi;
}

}  // namespace

TEST_CASE("init_params is deterministic, finite, and structurally per mode") {
  ModelConfig cfg = tiny_config();
  auto a = init_params(cfg, 5);
  auto b = init_params(cfg, 5);
  CHECK(a.arrays.size() == b.arrays.size());
  for (const auto& [name, arr] : a.arrays) {
    CHECK(arr == b.arrays.at(name));
    CHECK(arr.allFinite());
  }
  CHECK(a.arrays.at("prior_s.w0").cols() == cfg.dim_z + cfg.dim_c);

  cfg.causal_mode = CausalMode::none;
  auto c = init_params(cfg, 5);
  CHECK(c.arrays.at("prior_s.w0").cols() == cfg.dim_c);  // z excluded from the prior input

  auto d = init_params(tiny_config(), 6);
  CHECK(a.arrays.at("splitter.w0") != d.arrays.at("splitter.w0"));
}

TEST_CASE("split_features: zero-initialized splitter maps zero to zero") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 1);
  for (auto suffix : {".w0", ".b0", ".w1", ".b1", ".w2", ".b2"})
    params.arrays.at(std::string("splitter") + suffix).setZero();
  auto [xs, xz] = split_features(params, Vec::Zero(cfg.dim_x));
  CHECK(xs.cwiseAbs().maxCoeff() == 0.0);
  CHECK(xz.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("split_features output shapes for random inputs") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 2);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    auto [xs, xz] = split_features(params, random_vec(rng, cfg.dim_x));
    CHECK(xs.size() == cfg.dim_xh());
    CHECK(xz.size() == cfg.dim_xh());
  }
  CHECK_THROWS_AS(split_features(params, Vec::Zero(cfg.dim_x + 1)), ShapeError);
}

TEST_CASE("infer_latents at zero noise with one component returns head means") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 7);
  std::mt19937_64 rng(4);
  auto [xs, xz] = split_features(params, random_vec(rng, cfg.dim_x));
  LatentSample ls = infer_latents(params, xs, xz, LatentNoise::zeros(cfg));
  CHECK((ls.s - ls.head_s.means.col(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ls.z - ls.head_z.means.col(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ls.c - ls.head_c.means.col(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ls.head_s.weights.size() == 1);
  CHECK(ls.head_s.weights(0) == doctest::Approx(1.0));
}

TEST_CASE("infer_latents is deterministic and log_q bounded by per-head maxima") {
  ModelConfig cfg = tiny_config();
  cfg.mixture_components = 3;
  ModelParams params = init_params(cfg, 9);
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto [xs, xz] = split_features(params, random_vec(rng, cfg.dim_x));
    LatentNoise noise = LatentNoise::sample(rng, cfg);
    LatentSample a = infer_latents(params, xs, xz, noise);
    LatentSample b = infer_latents(params, xs, xz, noise);
    CHECK(a.s == b.s);
    CHECK(a.z == b.z);
    CHECK(a.c == b.c);
    CHECK(a.log_q == b.log_q);
    CHECK(std::isfinite(a.log_q));

    // independent density evaluation at the returned samples
    auto head_max = [](const MixtureParams& mp, const Vec& sample) {
      double best = -1e300;
      for (Eigen::Index k = 0; k < mp.weights.size(); ++k) {
        double lp = 0.0;
        for (Eigen::Index d = 0; d < sample.size(); ++d)
          lp += gauss_logpdf(sample(d), mp.means(d, k), mp.stds(d, k));
        best = std::max(best, lp);
      }
      return best;
    };
    double ub = head_max(a.head_s, a.s) + head_max(a.head_z, a.z) + head_max(a.head_c, a.c);
    CHECK(a.log_q <= ub + 1e-9);

    // mixture invariants
    for (const MixtureParams* mp : {&a.head_s, &a.head_z, &a.head_c}) {
      CHECK(mp->weights.minCoeff() > 0.0);
      CHECK(mp->weights.sum() == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(mp->stds.minCoeff() >= kStdFloor);
    }
  }
}

TEST_CASE("classify: zero logits give the uniform distribution") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 3);
  for (auto suffix : {".w0", ".b0", ".w1", ".b1", ".w2", ".b2"})
    params.arrays.at(std::string("classifier") + suffix).setZero();
  Vec probs = classify(params, Vec::Zero(cfg.dim_c), Vec::Zero(cfg.dim_xh()));
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    CHECK(probs(i) == doctest::Approx(1.0 / cfg.num_classes).epsilon(1e-12));
}

TEST_CASE("classify produces normalized distributions on random inputs") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 3);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    Vec probs = classify(params, random_vec(rng, cfg.dim_c), random_vec(rng, cfg.dim_xh()));
    CHECK(probs.minCoeff() > 0.0);
    CHECK(std::abs(probs.sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("decode: evaluator log densities match an elementwise oracle") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 13);
  std::mt19937_64 rng(21);
  for (int i = 0; i < 20; ++i) {
    Vec s = random_vec(rng, cfg.dim_s);
    Vec z = random_vec(rng, cfg.dim_z);
    DecodeResult dec = decode(params, s, z);
    CHECK(dec.x_s_hat.size() == cfg.dim_xh());
    CHECK(dec.x_z_hat.size() == cfg.dim_xh());
    CHECK(dec.x_hat.size() == cfg.dim_x);

    // at the mean: -(d/2) log(2 pi std^2)
    double at_mean = dec.log_p_xs(dec.x_s_hat);
    double expect = -0.5 * cfg.dim_xh() * std::log(2.0 * M_PI * kDecoderStd * kDecoderStd);
    CHECK(at_mean == doctest::Approx(expect).epsilon(1e-12));

    Vec target = random_vec(rng, cfg.dim_x);
    double oracle = 0.0;
    for (Eigen::Index d = 0; d < cfg.dim_x; ++d)
      oracle += gauss_logpdf(target(d), dec.x_hat(d), kDecoderStd);
    CHECK(dec.log_p_x(target) == doctest::Approx(oracle).epsilon(1e-6));
  }
}

TEST_CASE("predict: single deterministic draw equals classify at the head means") {
  ModelConfig cfg = tiny_config();
  cfg.mc_samples = 1;
  ModelParams params = init_params(cfg, 17);
  std::mt19937_64 rng(2);
  Vec x = random_vec(rng, cfg.dim_x);
  Vec q = predict(params, x, {LatentNoise::zeros(cfg)});
  auto [xs, xz] = split_features(params, x);
  LatentSample ls = infer_latents(params, xs, xz, LatentNoise::zeros(cfg));
  Vec direct = classify(params, ls.c, xs);
  CHECK((q - direct).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(q.sum() - 1.0) < 1e-6);
}

TEST_CASE("predict: Monte-Carlo self-consistency between 1024 and 65536 draws") {
  ModelConfig cfg = tiny_config();
  ModelParams params = init_params(cfg, 23);
  std::mt19937_64 rng(5);
  Vec x = random_vec(rng, cfg.dim_x);

  const int group_count = 16, group_size = 64;  // 1024 total
  std::vector<Vec> group_means;
  Vec p1024 = Vec::Zero(cfg.num_classes);
  for (int gi = 0; gi < group_count; ++gi) {
    std::vector<LatentNoise> draws;
    for (int i = 0; i < group_size; ++i) draws.push_back(LatentNoise::sample(rng, cfg));
    Vec p = predict(params, x, draws);
    group_means.push_back(p);
    p1024 += p / group_count;
  }
  Vec se = Vec::Zero(cfg.num_classes);
  for (const auto& p : group_means) se += (p - p1024).cwiseAbs2();
  se = (se / (group_count - 1) / group_count).cwiseSqrt();

  std::vector<LatentNoise> big;
  for (int i = 0; i < 65536; ++i) big.push_back(LatentNoise::sample(rng, cfg));
  Vec pref = predict(params, x, big);
  for (Eigen::Index k = 0; k < cfg.num_classes; ++k)
    CHECK(std::abs(p1024(k) - pref(k)) <= 3.0 * se(k) + 1e-3);
}

TEST_CASE("checkpoint round trip is bit-exact at the file level") {
  ModelConfig cfg = tiny_config();
  cfg.mixture_components = 2;
  ModelParams params = init_params(cfg, 31);
  auto dir = std::filesystem::temp_directory_path() / "fedsdwc_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, params);
  ModelParams loaded = load_checkpoint(dir);
  CHECK(loaded.config.causal_mode == cfg.causal_mode);
  CHECK(loaded.config.mixture_components == 2);
  CHECK(loaded.same_structure(params));

  auto dir2 = std::filesystem::temp_directory_path() / "fedsdwc_ckpt2";
  std::filesystem::remove_all(dir2);
  save_checkpoint(dir2, loaded);
  for (const auto& [name, arr] : params.arrays) {
    CHECK(jsonio::read_text(dir / (name + ".f32")) ==
          jsonio::read_text(dir2 / (name + ".f32")));
  }
  CHECK(jsonio::read_text(dir / "manifest.json") == jsonio::read_text(dir2 / "manifest.json"));
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  cfg.dim_x = 7;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.mixture_components = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = tiny_config();
  cfg.mc_samples = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
