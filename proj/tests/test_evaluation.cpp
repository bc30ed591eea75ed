#include <doctest.h>

#include "fedsdwc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

using namespace fedsdwc;
using namespace fedsdwc::eval;

namespace {

// exhaustive pairwise counting oracle
double auroc_oracle(const Vec& id, const Vec& ood) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < id.size(); ++i) {
    for (Eigen::Index j = 0; j < ood.size(); ++j) {
      if (id(i) > ood(j))
        acc += 1.0;
      else if (id(i) == ood(j))
        acc += 0.5;
    }
  }
  return acc / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// exhaustive threshold-sweep oracle: candidates are the ID score values
double fpr_oracle(const Vec& id, const Vec& ood, double tpr_target) {
  double best_tau = 0.0;
  bool found = false;
  for (Eigen::Index t = 0; t < id.size(); ++t) {
    double tau = id(t);
    Eigen::Index keep = 0;
    for (Eigen::Index i = 0; i < id.size(); ++i)
      if (id(i) >= tau) ++keep;
    if (static_cast<double>(keep) / static_cast<double>(id.size()) >= tpr_target) {
      if (!found || tau > best_tau) {
        best_tau = tau;
        found = true;
      }
    }
  }
  Eigen::Index fp = 0;
  for (Eigen::Index j = 0; j < ood.size(); ++j)
    if (ood(j) >= best_tau) ++fp;
  return static_cast<double>(fp) / static_cast<double>(ood.size());
}

Vec to_vec(const std::vector<double>& v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

model::ModelParams tiny_model(int num_classes = 3) {
  model::ModelConfig cfg;
  cfg.dim_x = 6;
  cfg.dim_s = 2;
  cfg.dim_z = 2;
  cfg.dim_c = 2;
  cfg.num_classes = num_classes;
  cfg.hidden_width = 5;
  cfg.mixture_components = 1;
  cfg.mc_samples = 2;
  return model::init_params(cfg, 77);
}

data::LabeledDataset random_dataset(Eigen::Index n, int dim_x, int num_classes,
                                    std::uint64_t seed, data::Tag tag = data::Tag::ID) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  data::LabeledDataset ds;
  ds.features = Mat(n, dim_x);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < dim_x; ++j) ds.features(i, j) = nd(rng);
  ds.labels = LabelVec(n);
  for (Eigen::Index i = 0; i < n; ++i)
    ds.labels(i) = tag == data::Tag::IDS
                       ? -1
                       : static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(num_classes));
  ds.tag = tag;
  return ds;
}

}  // namespace

TEST_CASE("auroc: spec fixtures") {
  CHECK(auroc(to_vec({0.9, 0.8}), to_vec({0.1, 0.2})) == 1.0);
  CHECK(auroc(to_vec({0.5, 0.5}), to_vec({0.5, 0.5})) == 0.5);
  CHECK(auroc(to_vec({0.9, 0.3}), to_vec({0.5, 0.1})) == 0.75);  // 3 of 4 pairs
  CHECK_THROWS_AS(auroc(Vec(), to_vec({0.5})), ValidationError);
}

TEST_CASE("auroc matches the exhaustive oracle on all short vectors over {0, 0.5, 1}") {
  const double values[] = {0.0, 0.5, 1.0};
  // enumerate every (id, ood) pair with len(id), len(ood) in 1..4 (8 total)
  for (int li = 1; li <= 4; ++li) {
    for (int lo = 1; lo <= 4; ++lo) {
      int ci = 1;
      for (int i = 0; i < li; ++i) ci *= 3;
      int co = 1;
      for (int i = 0; i < lo; ++i) co *= 3;
      for (int mi = 0; mi < ci; ++mi) {
        for (int mo = 0; mo < co; ++mo) {
          Vec id(li), ood(lo);
          int r = mi;
          for (int i = 0; i < li; ++i) {
            id(i) = values[r % 3];
            r /= 3;
          }
          r = mo;
          for (int i = 0; i < lo; ++i) {
            ood(i) = values[r % 3];
            r /= 3;
          }
          CHECK(auroc(id, ood) == auroc_oracle(id, ood));
          // exact symmetry: auroc(a,b) + auroc(b,a) = 1
          CHECK(auroc(id, ood) + auroc(ood, id) == 1.0);
        }
      }
    }
  }
}

TEST_CASE("auroc and fpr match oracles on random length-100 vectors") {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> grid(0, 20);
  for (int trial = 0; trial < 50; ++trial) {
    Vec id(100), ood(100);
    for (int i = 0; i < 100; ++i) {
      // mix continuous and gridded values so ties occur
      id(i) = (trial % 2 == 0) ? u(rng) : grid(rng) / 20.0;
      ood(i) = (trial % 2 == 0) ? u(rng) * 0.9 : grid(rng) / 20.0 * 0.9;
    }
    CHECK(auroc(id, ood) == auroc_oracle(id, ood));
    CHECK(fpr_at_tpr(id, ood, 0.95) == fpr_oracle(id, ood, 0.95));
  }
}

TEST_CASE("fpr_at_tpr: spec fixtures") {
  // perfectly separated
  CHECK(fpr_at_tpr(to_vec({0.9, 0.8, 0.7}), to_vec({0.1, 0.2, 0.3})) == 0.0);
  // identical multisets: threshold admits the same mass on both sides
  Vec same = to_vec({0.1, 0.4, 0.4, 0.7, 0.9});
  double fpr = fpr_at_tpr(same, same, 0.95);
  CHECK(fpr >= 0.95 - 1.0 / static_cast<double>(same.size()));
  CHECK_THROWS_AS(fpr_at_tpr(Vec(), same), ValidationError);
  CHECK_THROWS_AS(fpr_at_tpr(same, same, 0.0), ValidationError);
  CHECK_THROWS_AS(fpr_at_tpr(same, same, 1.5), ValidationError);

  // spec's 100-score instance: 5 distinct values x20 vs uniform draws
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec id(100), ood(100);
  for (int i = 0; i < 100; ++i) {
    const double vals[] = {0.9, 0.8, 0.7, 0.6, 0.5};
    id(i) = vals[i % 5];
    ood(i) = u(rng);
  }
  CHECK(fpr_at_tpr(id, ood, 0.95) == fpr_oracle(id, ood, 0.95));
}

TEST_CASE("rank metrics are invariant under strictly increasing transforms") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec id(40), ood(40);
  for (int i = 0; i < 40; ++i) {
    id(i) = u(rng);
    ood(i) = u(rng) * 0.8;
  }
  auto warp = [](const Vec& v) {
    Vec out = v;
    for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = std::atan(3.0 * v(i)) + v(i) * v(i);
    return out;
  };
  CHECK(auroc(id, ood) == auroc(warp(id), warp(ood)));
  CHECK(fpr_at_tpr(id, ood) == fpr_at_tpr(warp(id), warp(ood)));
}

TEST_CASE("accuracy: trivial cases and duplication invariance") {
  auto params = tiny_model();
  auto ds = random_dataset(1, 6, 3, 9);
  // force the label to the argmax prediction
  Mat probs = model::predict_batch(params, ds.features,
                                   {model::BatchLatentNoise::zeros(params.config, 1)});
  Eigen::Index best = 0;
  probs.col(0).maxCoeff(&best);
  ds.labels(0) = best;
  CHECK(accuracy(params, ds) == 1.0);

  auto big = random_dataset(200, 6, 3, 10);
  double acc = accuracy(params, big);
  data::LabeledDataset doubled;
  doubled.features = Mat(400, 6);
  doubled.features << big.features, big.features;
  doubled.labels = LabelVec(400);
  doubled.labels << big.labels, big.labels;
  doubled.tag = data::Tag::ID;
  CHECK(accuracy(params, doubled) == acc);

  auto ood = random_dataset(5, 6, 3, 11, data::Tag::IDS);
  CHECK_THROWS_AS(accuracy(params, ood), ValidationError);
}

TEST_CASE("random labels on a balanced two-class set give near-half accuracy") {
  auto params = tiny_model(2);
  std::mt19937_64 rng(31);
  auto ds = random_dataset(10000, 6, 2, 13);
  // labels random and independent of features: accuracy concentrates at 1/2
  double acc = accuracy(params, ds);
  CHECK(acc > 0.45);
  CHECK(acc < 0.55);
}

TEST_CASE("msp score bounds and saturation") {
  auto params = tiny_model();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Vec x(6);
    for (int j = 0; j < 6; ++j) x(j) = nd(rng);
    double s = msp_score(params, x);
    CHECK(s <= 1.0);
    CHECK(s >= 1.0 / 3.0);
  }

  // a classifier with a >= 20 logit margin saturates the softmax
  auto sat = tiny_model();
  for (auto suffix : {".w0", ".w1", ".w2"})
    sat.arrays.at(std::string("classifier") + suffix).setZero();
  sat.arrays.at("classifier.b2").setZero();
  sat.arrays.at("classifier.b2")(1, 0) = 20.0;
  Vec x = Vec::Zero(6);
  CHECK(msp_score(sat, x) >= 0.999);

  // uniform predictive distribution: exactly 1/num_classes
  auto uniform = tiny_model();
  for (auto suffix : {".w0", ".w1", ".w2", ".b0", ".b1", ".b2"})
    uniform.arrays.at(std::string("classifier") + suffix).setZero();
  CHECK(msp_score(uniform, x) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("evaluate_suite fills the report and is deterministic") {
  auto params = tiny_model();
  auto id = random_dataset(60, 6, 3, 20);
  auto idc = random_dataset(50, 6, 3, 21, data::Tag::IDC);
  auto ood = random_dataset(40, 6, 3, 22, data::Tag::IDS);

  std::vector<NamedDataset> only_id = {{"id", &id}};
  ScoreReport r0 = evaluate_suite(params, only_id);
  CHECK(r0.idc_acc.empty());
  CHECK(r0.detection.empty());

  std::vector<NamedDataset> all = {{"id", &id}, {"noise:2", &idc}, {"sem", &ood}};
  ScoreReport r1 = evaluate_suite(params, all);
  ScoreReport r2 = evaluate_suite(params, all);
  CHECK(r1.id_acc == r2.id_acc);
  CHECK(r1.id_acc >= 0.0);
  CHECK(r1.id_acc <= 1.0);
  CHECK(r1.idc_acc.at("noise:2") >= 0.0);
  CHECK(r1.idc_acc.at("noise:2") <= 1.0);
  const auto& det = r1.detection.at("sem");
  CHECK(det.auroc >= 0.0);
  CHECK(det.auroc <= 1.0);
  CHECK(det.fpr95 >= 0.0);
  CHECK(det.fpr95 <= 1.0);
  CHECK(det.auroc == r2.detection.at("sem").auroc);
  CHECK(det.num_id == 60);
  CHECK(det.num_ood == 40);

  std::vector<NamedDataset> no_id = {{"noise:2", &idc}};
  CHECK_THROWS_AS(evaluate_suite(params, no_id), ValidationError);

  // widening the ID pool with covariate-shifted scores changes the counts
  ScoreReport r3 = evaluate_suite(params, all, false, 0, true);
  CHECK(r3.detection.at("sem").num_id == 110);
}
