#include <doctest.h>

#include "fedsdwc/federation.hpp"

#include <random>
#include <set>

using namespace fedsdwc;
using namespace fedsdwc::fed;
using model::CausalMode;
using model::ModelConfig;
using model::ModelParams;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.dim_x = 8;
  c.dim_s = 2;
  c.dim_z = 2;
  c.dim_c = 2;
  c.num_classes = 3;
  c.hidden_width = 6;
  c.mixture_components = 1;
  c.causal_mode = CausalMode::weak;
  c.mc_samples = 2;
  return c;
}

FederationConfig small_fed() {
  FederationConfig f;
  f.rounds = 2;
  f.local_epochs = 1;
  f.batch_size = 8;
  f.learning_rate = 0.05;
  f.num_clients = 3;
  f.participation_fraction = 1.0;
  f.intervention_scale = 0.5;
  f.fourier_mix_ratio = 0.2;
  f.seed = 99;
  return f;
}

data::LabeledDataset make_train(Eigen::Index n, int dim_x, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  data::LabeledDataset ds;
  ds.features = Mat(n, dim_x);
  ds.labels = LabelVec(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < dim_x; ++j) ds.features(i, j) = nd(rng);
    ds.labels(i) = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(classes));
  }
  ds.tag = data::Tag::ID;
  return ds;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (a.arrays.size() != b.arrays.size()) return false;
  for (const auto& [name, arr] : a.arrays) {
    auto it = b.arrays.find(name);
    if (it == b.arrays.end()) return false;
    if (arr != it->second) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("client_update: zero learning rate is a bit-exact no-op") {
  ModelConfig mc = small_model();
  ModelParams global = model::init_params(mc, 5);
  auto ds = make_train(12, mc.dim_x, mc.num_classes, 1);
  FederationConfig fc = small_fed();
  fc.learning_rate = 0.0;
  ModelParams out = client_update(global, ds.features, ds.labels, fc, 7);
  CHECK(params_equal(out, global));
}

TEST_CASE("client_update is deterministic and never mutates the global params") {
  ModelConfig mc = small_model();
  ModelParams global = model::init_params(mc, 5);
  ModelParams snapshot = global;
  auto ds = make_train(12, mc.dim_x, mc.num_classes, 1);
  FederationConfig fc = small_fed();
  ModelParams a = client_update(global, ds.features, ds.labels, fc, 7);
  ModelParams b = client_update(global, ds.features, ds.labels, fc, 7);
  CHECK(params_equal(a, b));
  CHECK(params_equal(global, snapshot));
  CHECK_FALSE(params_equal(a, global));
  CHECK_THROWS_AS(client_update(global, Mat(0, mc.dim_x), LabelVec(0), fc, 7),
                  ValidationError);
}

TEST_CASE("client_update: one full-batch epoch equals a hand-computed SGD step") {
  ModelConfig mc = small_model();
  ModelParams global = model::init_params(mc, 5);
  auto ds = make_train(10, mc.dim_x, mc.num_classes, 2);
  FederationConfig fc = small_fed();
  fc.local_epochs = 1;
  fc.batch_size = 32;  // >= |client data|: exactly one step
  const std::uint64_t round_seed = 1234;

  ModelParams got = client_update(global, ds.features, ds.labels, fc, round_seed);

  // oracle: replay the documented sub-stream seeds for epoch 0, step 0
  std::vector<Eigen::Index> order(10);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(splitmix64(shuffle_seed(round_seed, 0)));
  for (Eigen::Index i = 9; i > 0; --i) {
    Eigen::Index j = static_cast<Eigen::Index>(
        bounded_rand(shuffle_rng, static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  Mat xb(10, mc.dim_x);
  LabelVec yb(10);
  for (Eigen::Index r = 0; r < 10; ++r) {
    xb.row(r) = ds.features.row(order[static_cast<std::size_t>(r)]);
    yb(r) = ds.labels(order[static_cast<std::size_t>(r)]);
  }
  xb = data::fourier_augment(xb, fc.fourier_mix_ratio, augment_seed(round_seed, 0, 0));
  std::mt19937_64 noise_rng(splitmix64(noise_seed(round_seed, 0, 0)));
  objective::LossNoise noise = objective::LossNoise::sample(noise_rng, mc, 10);
  objective::GradMap grads;
  objective::total_loss(global, xb, yb, fc.intervention_scale, noise, &grads);

  for (const auto& [name, arr] : global.arrays) {
    Mat expect = arr - fc.learning_rate * grads.at(name);
    CHECK((got.arrays.at(name) - expect).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("fedavg_aggregate: identity, arithmetic, and reordering oracle") {
  ModelConfig mc = small_model();
  ModelParams p = model::init_params(mc, 5);

  // convex combination of identical points with power-of-two weights
  Vec w(3);
  w << 0.5, 0.25, 0.25;
  ModelParams same = fedavg_aggregate({p, p, p}, w);
  CHECK(params_equal(same, p));

  // scalar check: values {0, 4} with weights {0.25, 0.75} -> 3
  ModelParams a = p, b = p;
  for (auto& [name, arr] : a.arrays) arr.setZero();
  for (auto& [name, arr] : b.arrays) arr.setConstant(4.0);
  Vec w2(2);
  w2 << 0.25, 0.75;
  ModelParams mixed = fedavg_aggregate({a, b}, w2);
  CHECK(mixed.arrays.at("splitter.w0")(0, 0) == doctest::Approx(3.0).epsilon(1e-12));

  // reordering oracle: uniform average independent of summation order
  std::vector<ModelParams> clients;
  for (int i = 0; i < 3; ++i) clients.push_back(model::init_params(mc, 100 + i));
  Vec uw = Vec::Constant(3, 1.0 / 3.0);
  ModelParams avg = fedavg_aggregate(clients, uw);
  for (const auto& [name, arr] : avg.arrays) {
    Mat manual = (clients[2].arrays.at(name) / 3.0 + clients[0].arrays.at(name) / 3.0) +
                 clients[1].arrays.at(name) / 3.0;
    CHECK((arr - manual).cwiseAbs().maxCoeff() < 1e-6);
  }

  // weights renormalize: [2, 2] behaves as [0.5, 0.5]
  Vec w3(2);
  w3 << 2.0, 2.0;
  ModelParams renorm = fedavg_aggregate({clients[0], clients[1]}, w3);
  for (const auto& [name, arr] : renorm.arrays) {
    Mat expect = 0.5 * clients[0].arrays.at(name) + 0.5 * clients[1].arrays.at(name);
    CHECK((arr - expect).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("fedavg_aggregate error paths name the offending array") {
  ModelConfig mc = small_model();
  ModelParams p = model::init_params(mc, 5);
  ModelParams q = p;
  q.arrays.at("head_s.w0") = Mat::Zero(1, 1);
  Vec w = Vec::Constant(2, 0.5);
  CHECK_THROWS_WITH_AS(fedavg_aggregate({p, q}, w),
                        doctest::Contains("head_s.w0"), AggregationError);
  CHECK_THROWS_AS(fedavg_aggregate({}, Vec()), ValidationError);
  Vec zero = Vec::Zero(2);
  CHECK_THROWS_AS(fedavg_aggregate({p, p}, zero), ValidationError);
}

TEST_CASE("run_federation: single client reduces to sequential centralized training") {
  ModelConfig mc = small_model();
  auto train = make_train(16, mc.dim_x, mc.num_classes, 3);
  data::PartitionSpec part;
  part.concentration = 1.0;
  part.client_indices = {std::vector<Eigen::Index>(16)};
  std::iota(part.client_indices[0].begin(), part.client_indices[0].end(), 0);
  part.client_weights = Vec::Ones(1);

  FederationConfig fc = small_fed();
  fc.num_clients = 1;
  fc.rounds = 3;
  TrainingLog log = run_federation(fc, mc, part, train);

  ModelParams oracle = model::init_params(mc, derive_seed(fc.seed, "init"));
  for (int t = 0; t < fc.rounds; ++t)
    oracle = client_update(oracle, train.features, train.labels, fc,
                           round_client_seed(fc.seed, t, 0));
  CHECK(params_equal(log.final_params, oracle));
  CHECK(log.rounds.size() == 3);
}

TEST_CASE("run_federation: zero rounds returns the initialization") {
  ModelConfig mc = small_model();
  auto train = make_train(9, mc.dim_x, mc.num_classes, 4);
  data::PartitionSpec part;
  part.concentration = 1.0;
  part.client_indices = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
  part.client_weights = Vec::Constant(3, 1.0 / 3.0);
  FederationConfig fc = small_fed();
  fc.rounds = 0;
  TrainingLog log = run_federation(fc, mc, part, train);
  CHECK(log.rounds.empty());
  CHECK(params_equal(log.final_params, model::init_params(mc, derive_seed(fc.seed, "init"))));
}

TEST_CASE("run_federation: partial participation samples distinct clients") {
  ModelConfig mc = small_model();
  auto train = make_train(40, mc.dim_x, mc.num_classes, 6);
  data::PartitionSpec part;
  part.concentration = 1.0;
  part.client_indices.resize(10);
  for (Eigen::Index i = 0; i < 40; ++i)
    part.client_indices[static_cast<std::size_t>(i % 10)].push_back(i);
  part.client_weights = Vec::Constant(10, 0.1);
  FederationConfig fc = small_fed();
  fc.num_clients = 10;
  fc.participation_fraction = 0.5;
  fc.rounds = 4;
  fc.local_epochs = 1;
  TrainingLog log = run_federation(fc, mc, part, train);
  bool varied = false;
  std::vector<int> first;
  for (const auto& rec : log.rounds) {
    CHECK(rec.participants.size() == 5);
    std::set<int> uniq(rec.participants.begin(), rec.participants.end());
    CHECK(uniq.size() == 5);
    for (int c : rec.participants) {
      CHECK(c >= 0);
      CHECK(c < 10);
    }
    CHECK(rec.client_losses.size() == 5);
    if (first.empty())
      first = rec.participants;
    else if (rec.participants != first)
      varied = true;
  }
  CHECK(varied);
}

TEST_CASE("run_federation is bit-reproducible and order independent under parallelism") {
  ModelConfig mc = small_model();
  auto train = make_train(24, mc.dim_x, mc.num_classes, 8);
  data::PartitionSpec part;
  part.concentration = 1.0;
  part.client_indices.resize(3);
  for (Eigen::Index i = 0; i < 24; ++i)
    part.client_indices[static_cast<std::size_t>(i % 3)].push_back(i);
  part.client_weights = Vec::Constant(3, 1.0 / 3.0);
  FederationConfig fc = small_fed();
  fc.rounds = 2;

  TrainingLog a = run_federation(fc, mc, part, train);
  TrainingLog b = run_federation(fc, mc, part, train);
  CHECK(params_equal(a.final_params, b.final_params));

  TrainingLog c = run_federation(fc, mc, part, train, nullptr, nullptr, true);
  CHECK(params_equal(a.final_params, c.final_params));
}
