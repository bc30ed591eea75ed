#include "fedsdwc/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

namespace fedsdwc::fed {

void FederationConfig::validate() const {
  if (rounds < 0) throw ValidationError("FederationConfig: rounds must be >= 0");
  if (local_epochs < 1) throw ValidationError("FederationConfig: local_epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("FederationConfig: batch_size must be >= 1");
  if (!(learning_rate >= 0.0))
    throw ValidationError("FederationConfig: learning_rate must be >= 0");
  if (num_clients < 1) throw ValidationError("FederationConfig: num_clients must be >= 1");
  if (!(participation_fraction > 0.0 && participation_fraction <= 1.0))
    throw ValidationError("FederationConfig: participation_fraction must be in (0,1]");
  if (!(intervention_scale >= 0.0))
    throw ValidationError("FederationConfig: intervention_scale must be >= 0");
  if (!(fourier_mix_ratio >= 0.0 && fourier_mix_ratio <= 1.0))
    throw ValidationError("FederationConfig: fourier_mix_ratio must be in [0,1]");
  if (participants_per_round() < 1)
    throw ValidationError("FederationConfig: no participants per round");
}

int FederationConfig::participants_per_round() const {
  int m = static_cast<int>(
      std::ceil(participation_fraction * static_cast<double>(num_clients) - 1e-12));
  return std::min(std::max(m, 1), num_clients);
}

std::uint64_t bounded_rand(std::mt19937_64& rng, std::uint64_t n) {
  if (n == 0) throw ValidationError("bounded_rand: n must be positive");
  std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    std::uint64_t r = rng();
    if (r >= threshold) return r % n;
  }
}

model::ModelParams client_update(const model::ModelParams& global_params,
                                 const Mat& features, const LabelVec& labels,
                                 const FederationConfig& config, std::uint64_t round_seed,
                                 objective::LossBreakdown* final_loss) {
  const Eigen::Index n = features.rows();
  if (n < 1) throw ValidationError("client_update: empty client data");
  if (features.rows() != labels.size())
    throw ValidationError("client_update: feature/label count mismatch");

  model::ModelParams params = global_params;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  objective::GradMap grads;
  for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(splitmix64(shuffle_seed(round_seed, epoch)));
    for (Eigen::Index i = n - 1; i > 0; --i) {
      Eigen::Index j = static_cast<Eigen::Index>(
          bounded_rand(shuffle_rng, static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    int step = 0;
    for (Eigen::Index start = 0; start < n; start += config.batch_size, ++step) {
      Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n - start);
      Mat xb(len, features.cols());
      LabelVec yb(len);
      for (Eigen::Index r = 0; r < len; ++r) {
        xb.row(r) = features.row(order[static_cast<std::size_t>(start + r)]);
        yb(r) = labels(order[static_cast<std::size_t>(start + r)]);
      }
      if (len >= 2)
        xb = data::fourier_augment(xb, config.fourier_mix_ratio,
                                   augment_seed(round_seed, epoch, step));

      std::mt19937_64 noise_rng(splitmix64(noise_seed(round_seed, epoch, step)));
      objective::LossNoise noise =
          objective::LossNoise::sample(noise_rng, params.config, len);
      objective::LossBreakdown lb = objective::total_loss(
          params, xb, yb, config.intervention_scale, noise, &grads);
      for (auto& [name, arr] : params.arrays) arr -= config.learning_rate * grads[name];
      if (final_loss != nullptr) *final_loss = lb;
    }
  }
  return params;
}

model::ModelParams fedavg_aggregate(const std::vector<model::ModelParams>& client_params,
                                    const Vec& weights) {
  if (client_params.empty()) throw ValidationError("fedavg_aggregate: empty client list");
  if (weights.size() != static_cast<Eigen::Index>(client_params.size()))
    throw ValidationError("fedavg_aggregate: weight count mismatch");
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (!(weights(i) >= 0.0))
      throw ValidationError("fedavg_aggregate: weights must be nonnegative");
  double total = weights.sum();
  if (!(total > 0.0)) throw ValidationError("fedavg_aggregate: weights sum to zero");

  const model::ModelParams& first = client_params.front();
  for (std::size_t i = 1; i < client_params.size(); ++i) {
    const auto& other = client_params[i];
    if (other.arrays.size() != first.arrays.size())
      throw AggregationError("fedavg_aggregate: parameter name sets differ");
    for (const auto& [name, arr] : first.arrays) {
      auto it = other.arrays.find(name);
      if (it == other.arrays.end())
        throw AggregationError("fedavg_aggregate: missing array " + name);
      if (it->second.rows() != arr.rows() || it->second.cols() != arr.cols())
        throw AggregationError("fedavg_aggregate: shape mismatch for " + name);
    }
  }

  model::ModelParams out;
  out.config = first.config;
  for (const auto& [name, arr] : first.arrays)
    out.arrays[name] = Mat::Zero(arr.rows(), arr.cols());
  for (std::size_t i = 0; i < client_params.size(); ++i) {
    double w = weights(static_cast<Eigen::Index>(i)) / total;
    for (const auto& [name, arr] : client_params[i].arrays) out.arrays[name] += w * arr;
  }
  return out;
}

TrainingLog run_federation(const FederationConfig& config,
                           const model::ModelConfig& model_config,
                           const data::PartitionSpec& partition,
                           const data::LabeledDataset& train_data,
                           const EvalHook& eval_hook, const RoundSink& sink,
                           bool parallel_clients) {
  config.validate();
  model_config.validate();
  if (partition.num_clients() != config.num_clients)
    throw ValidationError("run_federation: partition client count mismatch");
  partition.validate(train_data.size());

  // materialize per-client views once
  std::vector<Mat> client_features(partition.client_indices.size());
  std::vector<LabelVec> client_labels(partition.client_indices.size());
  for (std::size_t k = 0; k < partition.client_indices.size(); ++k) {
    const auto& idx = partition.client_indices[k];
    client_features[k] = Mat(static_cast<Eigen::Index>(idx.size()), train_data.features.cols());
    client_labels[k] = LabelVec(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      client_features[k].row(static_cast<Eigen::Index>(r)) = train_data.features.row(idx[r]);
      client_labels[k](static_cast<Eigen::Index>(r)) = train_data.labels(idx[r]);
    }
  }

  TrainingLog log;
  model::ModelParams global =
      model::init_params(model_config, derive_seed(config.seed, "init"));
  const int m = config.participants_per_round();

  for (int round = 0; round < config.rounds; ++round) {
    auto t0 = std::chrono::steady_clock::now();

    // sample m distinct participants uniformly (partial Fisher-Yates)
    std::vector<int> ids(static_cast<std::size_t>(config.num_clients));
    std::iota(ids.begin(), ids.end(), 0);
    std::mt19937_64 rng(splitmix64(participants_seed(config.seed, round)));
    for (int i = 0; i < m; ++i) {
      int j = i + static_cast<int>(bounded_rand(
                      rng, static_cast<std::uint64_t>(config.num_clients - i)));
      std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    std::vector<int> participants(ids.begin(), ids.begin() + m);
    std::sort(participants.begin(), participants.end());

    std::vector<model::ModelParams> updated(participants.size());
    std::vector<objective::LossBreakdown> losses(participants.size());
    auto update_one = [&](std::size_t i) {
      int client = participants[i];
      updated[i] = client_update(global, client_features[static_cast<std::size_t>(client)],
                                 client_labels[static_cast<std::size_t>(client)], config,
                                 round_client_seed(config.seed, round, client), &losses[i]);
    };
    if (parallel_clients && participants.size() > 1) {
      std::vector<std::thread> pool;
      pool.reserve(participants.size());
      for (std::size_t i = 0; i < participants.size(); ++i)
        pool.emplace_back(update_one, i);
      for (auto& t : pool) t.join();
    } else {
      for (std::size_t i = 0; i < participants.size(); ++i) update_one(i);
    }

    Vec w(static_cast<Eigen::Index>(participants.size()));
    for (std::size_t i = 0; i < participants.size(); ++i)
      w(static_cast<Eigen::Index>(i)) = partition.client_weights(participants[i]);
    global = fedavg_aggregate(updated, w);

    RoundRecord rec;
    rec.round = round;
    rec.participants = participants;
    rec.client_losses = losses;
    rec.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (eval_hook) eval_hook(round, global);
    if (sink) sink(rec);
    log.rounds.push_back(std::move(rec));
  }

  log.final_params = std::move(global);
  return log;
}

}  // namespace fedsdwc::fed
