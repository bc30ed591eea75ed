#pragma once

#include "fedsdwc/common.hpp"
#include "fedsdwc/data.hpp"
#include "fedsdwc/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace fedsdwc::eval {

struct DetectionScores {
  double auroc = 0.0;
  double fpr95 = 0.0;
  Eigen::Index num_id = 0;
  Eigen::Index num_ood = 0;
};

struct ScoreReport {
  double id_acc = 0.0;
  Eigen::Index num_id = 0;
  // key "<kind>:<severity>" for corruption sets, free-form for env shifts
  std::map<std::string, double> idc_acc;
  std::map<std::string, Eigen::Index> idc_n;
  std::map<std::string, DetectionScores> detection;

  double mean_idc_acc() const;
};

// Fraction of argmax-correct predictions; deterministic zero-noise forward by
// default, Monte-Carlo draws behind mc_eval.
double accuracy(const model::ModelParams& params, const data::LabeledDataset& ds,
                bool mc_eval = false, std::uint64_t seed = 0);

double msp_score(const model::ModelParams& params, const Vec& x);

// All MSP scores for a dataset in one batched pass.
Vec msp_scores(const model::ModelParams& params, const data::LabeledDataset& ds,
               bool mc_eval = false, std::uint64_t seed = 0);

// P(random ID score > random OOD score), ties counted 1/2; exact rank
// statistic, not a curve approximation.
double auroc(const Vec& id_scores, const Vec& ood_scores);

// Threshold = largest ID score value keeping TPR >= tpr_target (ID positive,
// higher score = more ID); returns the OOD fraction above it.
double fpr_at_tpr(const Vec& id_scores, const Vec& ood_scores, double tpr_target = 0.95);

struct NamedDataset {
  std::string name;
  const data::LabeledDataset* ds;
};

// include_idc_in_id_scores widens the detection ID-score pool with the
// covariate-shifted sets (default: clean ID only).
ScoreReport evaluate_suite(const model::ModelParams& params,
                           const std::vector<NamedDataset>& datasets,
                           bool mc_eval = false, std::uint64_t seed = 0,
                           bool include_idc_in_id_scores = false);

}  // namespace fedsdwc::eval
