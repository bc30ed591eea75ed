#pragma once

#include "fedsdwc/common.hpp"
#include "fedsdwc/data.hpp"
#include "fedsdwc/model.hpp"
#include "fedsdwc/objective.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace fedsdwc::fed {

struct FederationConfig {
  int rounds = 30;
  int local_epochs = 2;
  int batch_size = 64;
  double learning_rate = 0.001;
  int num_clients = 10;
  double participation_fraction = 1.0;
  double intervention_scale = 1.0;
  double fourier_mix_ratio = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
  int participants_per_round() const;
};

struct RoundRecord {
  int round = 0;
  std::vector<int> participants;
  std::vector<objective::LossBreakdown> client_losses;  // parallel to participants
  double wall_time_sec = 0.0;
};

struct TrainingLog {
  std::vector<RoundRecord> rounds;
  model::ModelParams final_params;
};

// Deterministic sub-stream seeds. Public so single-step oracles can replay
// exactly what client_update does internally.
inline std::uint64_t round_client_seed(std::uint64_t seed, int round, int client) {
  return derive_seed(seed, "client-update", static_cast<std::uint64_t>(round),
                     static_cast<std::uint64_t>(client));
}
inline std::uint64_t shuffle_seed(std::uint64_t round_seed, int epoch) {
  return derive_seed(round_seed, "shuffle", static_cast<std::uint64_t>(epoch));
}
inline std::uint64_t augment_seed(std::uint64_t round_seed, int epoch, int step) {
  return derive_seed(round_seed, "augment", static_cast<std::uint64_t>(epoch),
                     static_cast<std::uint64_t>(step));
}
inline std::uint64_t noise_seed(std::uint64_t round_seed, int epoch, int step) {
  return derive_seed(round_seed, "loss-noise", static_cast<std::uint64_t>(epoch),
                     static_cast<std::uint64_t>(step));
}
inline std::uint64_t participants_seed(std::uint64_t seed, int round) {
  return derive_seed(seed, "participants", static_cast<std::uint64_t>(round));
}

// Uniform integer in [0, n) from the raw engine stream (Lemire reduction);
// used instead of distribution objects wherever cross-platform determinism
// matters for index draws.
std::uint64_t bounded_rand(std::mt19937_64& rng, std::uint64_t n);

// E epochs of shuffled mini-batch SGD on the total loss, Fourier augmentation
// first; the global parameter object is never mutated.
model::ModelParams client_update(const model::ModelParams& global_params,
                                 const Mat& features, const LabelVec& labels,
                                 const FederationConfig& config, std::uint64_t round_seed,
                                 objective::LossBreakdown* final_loss = nullptr);

// Weighted elementwise average; weights renormalized to sum 1.
model::ModelParams fedavg_aggregate(const std::vector<model::ModelParams>& client_params,
                                    const Vec& weights);

using EvalHook = std::function<void(int round, const model::ModelParams& params)>;
using RoundSink = std::function<void(const RoundRecord&)>;

TrainingLog run_federation(const FederationConfig& config,
                           const model::ModelConfig& model_config,
                           const data::PartitionSpec& partition,
                           const data::LabeledDataset& train_data,
                           const EvalHook& eval_hook = nullptr,
                           const RoundSink& sink = nullptr,
                           bool parallel_clients = false);

}  // namespace fedsdwc::fed
