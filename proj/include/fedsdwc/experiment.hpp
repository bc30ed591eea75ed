#pragma once

#include "fedsdwc/common.hpp"
#include "fedsdwc/data.hpp"
#include "fedsdwc/evaluation.hpp"
#include "fedsdwc/federation.hpp"
#include "fedsdwc/jsonio.hpp"
#include "fedsdwc/model.hpp"
#include "fedsdwc/theory.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fedsdwc::experiment {

struct CorruptionSetSpec {
  data::CorruptionKind kind = data::CorruptionKind::gaussian_noise;
  int severity = 3;
};

// Fully materialized experiment description. from_json fills every default so
// the resolved form written next to a run reproduces it exactly.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;

  data::ScmSpec scm;
  bool mixing_seed_explicit = false;
  Eigen::Index n_train = 2000;
  Eigen::Index n_eval = 1000;
  Eigen::Index n_ood = 1000;

  int num_clients = 10;
  double concentration = 0.5;

  model::ModelConfig model_config;
  fed::FederationConfig fed_config;

  std::vector<double> env_shift_magnitudes = {2.0};
  std::vector<CorruptionSetSpec> corruptions;
  bool mc_eval = false;
  bool include_idc_in_id_scores = false;

  bool theory_enabled = false;
  int theory_dim_v = 1;
  int theory_clients = 3;
  double theory_prior_gap = 0.2;
  std::vector<double> theory_sigma_grid = {0.0, 0.01, 0.02, 0.05, 0.1};
  Eigen::Index theory_num_x = 20000;

  bool emit_datasets = true;
  int eval_every = 0;
  bool parallel_clients = false;

  static ExperimentConfig from_json(const jsonio::json& j);
  static ExperimentConfig defaults();
  jsonio::json resolved() const;
  void validate() const;
};

struct RunResult {
  eval::ScoreReport scores;
  model::ModelParams final_params;
};

// Runs data generation, federation, evaluation, and optionally the bound
// verifier; writes config.resolved.json, training_log.ndjson, scores.json,
// scores.csv, partition.json, checkpoint/, and bound_report.{csv,json} under
// config.out_dir.
RunResult run_experiment(const ExperimentConfig& config);

jsonio::json score_report_json(const eval::ScoreReport& report);
std::string score_report_csv(const eval::ScoreReport& report);
eval::ScoreReport score_report_from_json(const jsonio::json& j);

// One table row per run directory: ID accuracy, mean covariate-shift
// accuracy, and per-OOD-set detection metrics; also written as CSV.
int compare_runs(const std::vector<std::filesystem::path>& run_dirs, std::ostream& out,
                 const std::filesystem::path& csv_path);

int partition_stats(const std::filesystem::path& data_dir,
                    const std::filesystem::path& partition_path, std::ostream& out);

}  // namespace fedsdwc::experiment
