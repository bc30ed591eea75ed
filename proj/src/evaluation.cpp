#include "fedsdwc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fedsdwc::eval {

namespace {

std::vector<model::BatchLatentNoise> eval_draws(const model::ModelConfig& cfg,
                                                Eigen::Index batch, bool mc_eval,
                                                std::uint64_t seed) {
  std::vector<model::BatchLatentNoise> draws;
  if (!mc_eval) {
    draws.push_back(model::BatchLatentNoise::zeros(cfg, batch));
    return draws;
  }
  std::mt19937_64 rng(splitmix64(derive_seed(seed, "eval-noise")));
  for (int m = 0; m < cfg.mc_samples; ++m)
    draws.push_back(model::BatchLatentNoise::sample(rng, cfg, batch));
  return draws;
}

Mat predict_all(const model::ModelParams& params, const Mat& features, bool mc_eval,
                std::uint64_t seed) {
  // chunked so eval memory stays flat on large sets
  const Eigen::Index n = features.rows();
  const Eigen::Index chunk = 512;
  Mat probs(params.config.num_classes, n);
  for (Eigen::Index start = 0; start < n; start += chunk) {
    Eigen::Index len = std::min(chunk, n - start);
    auto draws = eval_draws(params.config, len, mc_eval, derive_seed(seed, "chunk", start));
    probs.middleCols(start, len) =
        model::predict_batch(params, features.middleRows(start, len), draws);
  }
  return probs;
}

}  // namespace

double ScoreReport::mean_idc_acc() const {
  if (idc_acc.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& [k, v] : idc_acc) acc += v;
  return acc / static_cast<double>(idc_acc.size());
}

double accuracy(const model::ModelParams& params, const data::LabeledDataset& ds,
                bool mc_eval, std::uint64_t seed) {
  if (ds.tag == data::Tag::IDS)
    throw ValidationError("accuracy: ID-S datasets carry sentinel labels");
  ds.validate();
  if (ds.size() < 1) throw ValidationError("accuracy: empty dataset");
  Mat probs = predict_all(params, ds.features, mc_eval, seed);
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    Eigen::Index best = 0;
    probs.col(i).maxCoeff(&best);
    if (best == ds.labels(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double msp_score(const model::ModelParams& params, const Vec& x) {
  Mat f(1, x.size());
  f.row(0) = x.transpose();
  auto draws = eval_draws(params.config, 1, false, 0);
  return model::predict_batch(params, f, draws).col(0).maxCoeff();
}

Vec msp_scores(const model::ModelParams& params, const data::LabeledDataset& ds,
               bool mc_eval, std::uint64_t seed) {
  Mat probs = predict_all(params, ds.features, mc_eval, seed);
  return probs.colwise().maxCoeff().transpose();
}

double auroc(const Vec& id_scores, const Vec& ood_scores) {
  if (id_scores.size() == 0 || ood_scores.size() == 0)
    throw ValidationError("auroc: empty score vector");
  // Mann-Whitney U via midranks of the pooled sample
  struct Entry {
    double score;
    bool is_id;
  };
  std::vector<Entry> pool;
  pool.reserve(static_cast<std::size_t>(id_scores.size() + ood_scores.size()));
  for (Eigen::Index i = 0; i < id_scores.size(); ++i) pool.push_back({id_scores(i), true});
  for (Eigen::Index i = 0; i < ood_scores.size(); ++i) pool.push_back({ood_scores(i), false});
  std::sort(pool.begin(), pool.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });

  double rank_sum_id = 0.0;
  std::size_t i = 0;
  while (i < pool.size()) {
    std::size_t j = i;
    while (j < pool.size() && pool[j].score == pool[i].score) ++j;
    double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t)
      if (pool[t].is_id) rank_sum_id += midrank;
    i = j;
  }
  double n1 = static_cast<double>(id_scores.size());
  double n0 = static_cast<double>(ood_scores.size());
  double u = rank_sum_id - n1 * (n1 + 1.0) / 2.0;
  return u / (n1 * n0);
}

double fpr_at_tpr(const Vec& id_scores, const Vec& ood_scores, double tpr_target) {
  if (id_scores.size() == 0 || ood_scores.size() == 0)
    throw ValidationError("fpr_at_tpr: empty score vector");
  if (!(tpr_target > 0.0 && tpr_target <= 1.0))
    throw ValidationError("fpr_at_tpr: tpr_target must be in (0,1]");

  std::vector<double> id_sorted(id_scores.data(), id_scores.data() + id_scores.size());
  std::sort(id_sorted.begin(), id_sorted.end(), std::greater<double>());
  const double n_id = static_cast<double>(id_sorted.size());

  // scan candidate thresholds (ID score values) downward; the first with
  // count(ID >= tau)/n >= target is the largest such threshold
  double tau = id_sorted.back();
  std::size_t k = 0;
  while (k < id_sorted.size()) {
    std::size_t j = k;
    while (j < id_sorted.size() && id_sorted[j] == id_sorted[k]) ++j;
    // count of ID >= id_sorted[k] is j
    if (static_cast<double>(j) / n_id >= tpr_target) {
      tau = id_sorted[k];
      break;
    }
    k = j;
  }

  Eigen::Index fp = 0;
  for (Eigen::Index i = 0; i < ood_scores.size(); ++i)
    if (ood_scores(i) >= tau) ++fp;
  return static_cast<double>(fp) / static_cast<double>(ood_scores.size());
}

ScoreReport evaluate_suite(const model::ModelParams& params,
                           const std::vector<NamedDataset>& datasets, bool mc_eval,
                           std::uint64_t seed, bool include_idc_in_id_scores) {
  const data::LabeledDataset* id_set = nullptr;
  std::string id_name;
  for (const auto& nd : datasets) {
    if (nd.ds->tag == data::Tag::ID) {
      id_set = nd.ds;
      id_name = nd.name;
      break;
    }
  }
  if (id_set == nullptr)
    throw ValidationError("evaluate_suite: collection must contain an ID dataset");

  ScoreReport report;
  report.id_acc = accuracy(params, *id_set, mc_eval, derive_seed(seed, "acc-id"));
  report.num_id = id_set->size();

  Vec id_msp;
  bool id_msp_ready = false;
  for (const auto& nd : datasets) {
    switch (nd.ds->tag) {
      case data::Tag::ID:
        break;
      case data::Tag::IDC:
        report.idc_acc[nd.name] =
            accuracy(params, *nd.ds, mc_eval, derive_seed(seed, "acc-idc"));
        report.idc_n[nd.name] = nd.ds->size();
        break;
      case data::Tag::IDS: {
        if (!id_msp_ready) {
          id_msp = msp_scores(params, *id_set, mc_eval, derive_seed(seed, "msp-id"));
          if (include_idc_in_id_scores) {
            for (const auto& idc : datasets) {
              if (idc.ds->tag != data::Tag::IDC) continue;
              Vec extra = msp_scores(params, *idc.ds, mc_eval, derive_seed(seed, "msp-idc"));
              Vec merged(id_msp.size() + extra.size());
              merged << id_msp, extra;
              id_msp = merged;
            }
          }
          id_msp_ready = true;
        }
        Vec ood_msp = msp_scores(params, *nd.ds, mc_eval, derive_seed(seed, "msp-ood"));
        DetectionScores det;
        det.auroc = auroc(id_msp, ood_msp);
        det.fpr95 = fpr_at_tpr(id_msp, ood_msp, 0.95);
        det.num_id = id_msp.size();
        det.num_ood = ood_msp.size();
        report.detection[nd.name] = det;
        break;
      }
    }
  }
  return report;
}

}  // namespace fedsdwc::eval
