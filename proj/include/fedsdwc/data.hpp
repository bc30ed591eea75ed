#pragma once

#include "fedsdwc/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fedsdwc::data {

/// Distribution regime of a dataset: in-distribution, covariate-shifted, or
/// semantic-shifted (unseen classes, sentinel label -1).
enum class Tag { ID, IDC, IDS };

std::string tag_name(Tag t);
Tag tag_from_name(const std::string& s);

struct ScmSpec {
  int dim_c = 4;
  int dim_z = 10;
  int dim_x = 20;  // must be even; splits into invariant/variant halves
  int num_classes = 4;
  double noise_sigma = 0.05;
  Vec style_prior_mean;  // length dim_z; empty means zeros
  std::uint64_t mixing_seed = 1;

  void validate() const;
  Vec resolved_style_mean() const;
  std::uint64_t digest() const;
};

struct LabeledDataset {
  Mat features;  // n x dim_x, one example per row
  LabelVec labels;
  Tag tag = Tag::ID;
  std::string provenance;

  Eigen::Index size() const { return features.rows(); }
  void validate() const;
};

struct PartitionSpec {
  std::vector<std::vector<Eigen::Index>> client_indices;
  double concentration = 0.5;
  Vec client_weights;

  int num_clients() const { return static_cast<int>(client_indices.size()); }
  void validate(Eigen::Index n) const;
};

enum class CorruptionKind { gaussian_noise, brightness, contrast, blur };

std::string corruption_name(CorruptionKind k);
CorruptionKind corruption_from_name(const std::string& s);

// The generative model realized by an ScmSpec. All maps are fixed by
// mixing_seed: the class mixture over c, the weak-link map s = M_c c +
// weak * tanh(M_z z), the half-maps g_s, g_z, and the invertible mixing
// f = L2 ∘ phi ∘ L1 with phi(u) = u + a*tanh(u).
class ScmModel {
 public:
  explicit ScmModel(const ScmSpec& spec);

  // pre_out, when given, receives the pre-mixing matrix
  // (g_s(s)+noise, g_z(z)+noise) so tests can check f^{-1} recovery.
  LabeledDataset generate(Eigen::Index n, const Vec& env_shift, std::uint64_t seed,
                          Mat* pre_out = nullptr) const;
  LabeledDataset semantic_ood(Eigen::Index n, std::uint64_t seed) const;

  // Applies f^{-1} row-wise; recovers (g_s(s)+noise, g_z(z)+noise).
  Mat invert_mixing(const Mat& x) const;
  Mat apply_mixing(const Mat& pre) const;

  const Mat& class_means() const { return class_means_; }
  const Mat& ood_means() const { return ood_means_; }
  double component_std() const { return component_std_; }
  const ScmSpec& spec() const { return spec_; }

 private:
  ScmSpec spec_;
  Mat class_means_;  // num_classes x dim_c
  Mat ood_means_;
  double component_std_ = 0.75;
  double weak_coef_ = 0.04;
  double phi_a_ = 0.5;
  Mat map_s_c_, map_s_z_;  // s = map_s_c * c + weak * tanh(map_s_z * z)
  Mat g_s_;
  Vec g_s_bias_;
  Mat g_z_;  // rows sum to 1, so variant-half means track z shifts
  Vec g_z_bias_;
  Mat l1_, l2_;
  Vec f_b1_, f_b2_;
  Eigen::PartialPivLU<Mat> l1_lu_, l2_lu_;

  Mat sample_pathway(Eigen::Index n, const Mat& centers, const LabelVec& comp,
                     const Vec& env_shift, std::uint64_t seed, Mat* pre_out = nullptr) const;
};

LabeledDataset generate_scm_dataset(const ScmSpec& spec, Eigen::Index n,
                                    const Vec& env_shift, std::uint64_t seed);

LabeledDataset apply_corruption(const LabeledDataset& ds, CorruptionKind kind,
                                int severity, std::uint64_t seed);

LabeledDataset make_semantic_ood(const ScmSpec& spec, Eigen::Index n, std::uint64_t seed);

PartitionSpec dirichlet_partition(const LabelVec& labels, int num_clients,
                                  double concentration, std::uint64_t seed);

// Per-row 1-D DFT amplitude mixing: each row's amplitude spectrum is blended
// with a random partner row's, phase kept, inverse-transformed.
Mat fourier_augment(const Mat& batch, double mix_ratio, std::uint64_t seed);

// Dataset directory format: features.f32 / labels.i64 / meta.json.
void save_dataset(const std::filesystem::path& dir, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& dir);

void save_partition(const std::filesystem::path& path, const PartitionSpec& p);
PartitionSpec load_partition(const std::filesystem::path& path);

}  // namespace fedsdwc::data
