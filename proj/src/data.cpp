#include "fedsdwc/data.hpp"

#include "fedsdwc/jsonio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>
#include <sstream>

namespace fedsdwc::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

Mat random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double stddev) {
  std::normal_distribution<double> nd(0.0, stddev);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

// Orthonormal columns (r >= c) or rows (r < c), via QR of a random matrix.
Mat random_semi_orthogonal(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  if (r >= c) {
    Mat a = random_matrix(rng, r, c, 1.0);
    Eigen::HouseholderQR<Mat> qr(a);
    Mat q = qr.householderQ() * Mat::Identity(r, c);
    return q;
  }
  Mat a = random_matrix(rng, c, r, 1.0);
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(c, r);
  return q.transpose();
}

}  // namespace

std::string tag_name(Tag t) {
  switch (t) {
    case Tag::ID: return "ID";
    case Tag::IDC: return "ID-C";
    case Tag::IDS: return "ID-S";
  }
  return "ID";
}

Tag tag_from_name(const std::string& s) {
  if (s == "ID") return Tag::ID;
  if (s == "ID-C") return Tag::IDC;
  if (s == "ID-S") return Tag::IDS;
  throw ValidationError("unknown dataset tag: " + s);
}

std::string corruption_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::blur: return "blur";
  }
  return "gaussian_noise";
}

CorruptionKind corruption_from_name(const std::string& s) {
  if (s == "gaussian_noise") return CorruptionKind::gaussian_noise;
  if (s == "brightness") return CorruptionKind::brightness;
  if (s == "contrast") return CorruptionKind::contrast;
  if (s == "blur") return CorruptionKind::blur;
  throw ValidationError("unknown corruption kind: " + s);
}

void ScmSpec::validate() const {
  if (dim_c < 1 || dim_z < 1 || dim_x < 1 || num_classes < 1)
    throw ValidationError("ScmSpec: dimensions and num_classes must be positive");
  if (dim_x % 2 != 0) throw ValidationError("ScmSpec: dim_x must be even");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ValidationError("ScmSpec: noise_sigma must be finite and >= 0");
  if (style_prior_mean.size() != 0) {
    if (style_prior_mean.size() != dim_z)
      throw ValidationError("ScmSpec: style_prior_mean length must equal dim_z");
    if (!style_prior_mean.allFinite())
      throw ValidationError("ScmSpec: style_prior_mean must be finite");
  }
}

Vec ScmSpec::resolved_style_mean() const {
  if (style_prior_mean.size() == dim_z) return style_prior_mean;
  return Vec::Zero(dim_z);
}

std::uint64_t ScmSpec::digest() const {
  std::uint64_t h = derive_seed(mixing_seed, "scm-spec", static_cast<std::uint64_t>(dim_c),
                                static_cast<std::uint64_t>(dim_z));
  h = splitmix64(h ^ static_cast<std::uint64_t>(dim_x));
  h = splitmix64(h ^ static_cast<std::uint64_t>(num_classes));
  h = splitmix64(h ^ static_cast<std::uint64_t>(std::llround(noise_sigma * 1e9)));
  Vec sm = resolved_style_mean();
  for (Eigen::Index i = 0; i < sm.size(); ++i)
    h = splitmix64(h ^ static_cast<std::uint64_t>(std::llround(sm(i) * 1e9)));
  return h;
}

void LabeledDataset::validate() const {
  if (features.rows() != labels.size())
    throw ValidationError("LabeledDataset: feature rows must equal label count");
  if (!features.allFinite()) throw ValidationError("LabeledDataset: non-finite features");
}

void PartitionSpec::validate(Eigen::Index n) const {
  std::vector<Eigen::Index> all;
  for (const auto& ci : client_indices) all.insert(all.end(), ci.begin(), ci.end());
  std::sort(all.begin(), all.end());
  if (static_cast<Eigen::Index>(all.size()) != n)
    throw ValidationError("PartitionSpec: union of client indices must cover the dataset");
  for (Eigen::Index i = 0; i < n; ++i)
    if (all[static_cast<std::size_t>(i)] != i)
      throw ValidationError("PartitionSpec: client indices are not a disjoint cover");
  if (client_weights.size() != static_cast<Eigen::Index>(client_indices.size()))
    throw ValidationError("PartitionSpec: weight count mismatch");
  if (std::abs(client_weights.sum() - 1.0) > 1e-9)
    throw ValidationError("PartitionSpec: weights must sum to 1");
  for (Eigen::Index k = 0; k < client_weights.size(); ++k) {
    if (client_weights(k) < 0.0) throw ValidationError("PartitionSpec: negative weight");
    double expect = static_cast<double>(client_indices[static_cast<std::size_t>(k)].size()) /
                    static_cast<double>(n);
    if (std::abs(client_weights(k) - expect) > 1e-9)
      throw ValidationError("PartitionSpec: weights must be data-size proportional");
  }
}

ScmModel::ScmModel(const ScmSpec& spec) : spec_(spec) {
  spec_.validate();
  const int dc = spec_.dim_c;
  const int dz = spec_.dim_z;
  const int dxh = spec_.dim_x / 2;
  const int ds = dc;  // generative semantic latent lives in content-sized space
  std::mt19937_64 rng(splitmix64(spec_.mixing_seed));

  // class mixture over c: means spread out, then pushed apart until every
  // pair is at least 4 component stds apart
  const double spread = 3.0;
  class_means_ = random_matrix(rng, spec_.num_classes, dc, spread);
  const double min_gap = 4.0 * component_std_;
  for (int iter = 0; iter < 200; ++iter) {
    bool ok = true;
    for (int i = 0; i < spec_.num_classes; ++i) {
      for (int j = i + 1; j < spec_.num_classes; ++j) {
        Vec d = class_means_.row(i) - class_means_.row(j);
        double dist = d.norm();
        if (dist < min_gap) {
          ok = false;
          Vec dir = dist > 1e-12 ? Vec(d / dist) : Vec(Vec::Unit(dc, (i + j) % dc));
          double push = 0.5 * (min_gap - dist) + 0.1;
          class_means_.row(i) += push * dir.transpose();
          class_means_.row(j) -= push * dir.transpose();
        }
      }
    }
    if (ok) break;
  }

  // unseen-class components: offset from the centroid beyond the radius of
  // the training means plus 4 stds, so min distance > 4 stds by construction
  Vec centroid = class_means_.colwise().mean();
  double radius = 0.0;
  for (int i = 0; i < spec_.num_classes; ++i)
    radius = std::max(radius, (class_means_.row(i).transpose() - centroid).norm());
  ood_means_ = Mat(spec_.num_classes, dc);
  for (int i = 0; i < spec_.num_classes; ++i) {
    Vec dir = random_matrix(rng, dc, 1, 1.0).col(0);
    double nrm = dir.norm();
    if (nrm < 1e-12) {
      dir = Vec::Unit(dc, i % dc);
      nrm = 1.0;
    }
    dir /= nrm;
    ood_means_.row(i) = (centroid + dir * (radius + min_gap + 1.0)).transpose();
  }

  map_s_c_ = random_semi_orthogonal(rng, ds, dc);
  map_s_z_ = random_matrix(rng, ds, dz, 1.0 / std::sqrt(static_cast<double>(dz)));

  g_s_ = random_semi_orthogonal(rng, dxh, ds);
  g_s_bias_ = random_matrix(rng, dxh, 1, 0.3).col(0);
  // g_z rows: unit entry on a cycled coordinate plus a zero-sum perturbation,
  // keeping every row sum exactly 1
  g_z_ = Mat::Zero(dxh, dz);
  for (int i = 0; i < dxh; ++i) {
    g_z_(i, i % dz) = 1.0;
    Vec q = random_matrix(rng, dz, 1, 0.1).col(0);
    q.array() -= q.mean();
    g_z_.row(i) += q.transpose();
  }
  g_z_bias_ = random_matrix(rng, dxh, 1, 0.3).col(0);

  auto random_rotation = [&](Eigen::Index d) {
    Mat q = random_semi_orthogonal(rng, d, d);
    std::uniform_real_distribution<double> ud(0.7, 1.3);
    Vec diag(d);
    for (Eigen::Index i = 0; i < d; ++i) diag(i) = ud(rng);
    return Mat(q * diag.asDiagonal());
  };
  l1_ = random_rotation(spec_.dim_x);
  l2_ = random_rotation(spec_.dim_x);
  f_b1_ = random_matrix(rng, spec_.dim_x, 1, 0.2).col(0);
  f_b2_ = random_matrix(rng, spec_.dim_x, 1, 0.2).col(0);
  l1_lu_.compute(l1_);
  l2_lu_.compute(l2_);
}

Mat ScmModel::apply_mixing(const Mat& pre) const {
  // x = L2 * phi(L1 * u + b1) + b2 with phi(t) = t + a*tanh(t)
  Mat h = (l1_ * pre.transpose()).colwise() + f_b1_;
  h = (h.array() + phi_a_ * h.array().tanh()).matrix();
  Mat out = (l2_ * h).colwise() + f_b2_;
  return out.transpose();
}

Mat ScmModel::invert_mixing(const Mat& x) const {
  Mat h = l2_lu_.solve((x.transpose().colwise() - f_b2_).eval());
  // invert phi(t) = t + a*tanh(t) per entry by Newton iteration (phi is
  // strictly increasing for 0 < a < 1's derivative bound: phi' = 1 + a*sech^2 > 0)
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      double y = h(i, j);
      double t = y;
      for (int it = 0; it < 60; ++it) {
        double th = std::tanh(t);
        double fval = t + phi_a_ * th - y;
        double fder = 1.0 + phi_a_ * (1.0 - th * th);
        double step = fval / fder;
        t -= step;
        if (std::abs(step) < 1e-14) break;
      }
      h(i, j) = t;
    }
  }
  Mat pre = l1_lu_.solve((h.colwise() - f_b1_).eval());
  return pre.transpose();
}

Mat ScmModel::sample_pathway(Eigen::Index n, const Mat& centers, const LabelVec& comp,
                             const Vec& env_shift, std::uint64_t seed, Mat* pre_out) const {
  const int dc = spec_.dim_c;
  const int dz = spec_.dim_z;
  const int dxh = spec_.dim_x / 2;
  Vec style_mean = spec_.resolved_style_mean() + env_shift;

  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> nd(0.0, 1.0);

  Mat pre(n, spec_.dim_x);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec c(dc);
    for (int d = 0; d < dc; ++d) c(d) = centers(comp(i), d) + component_std_ * nd(rng);
    Vec z(dz);
    for (int d = 0; d < dz; ++d) z(d) = style_mean(d) + nd(rng);
    Vec s = map_s_c_ * c + weak_coef_ * (map_s_z_ * z).array().tanh().matrix();
    Vec xs = g_s_ * s + g_s_bias_;
    Vec xz = g_z_ * z + g_z_bias_;
    if (spec_.noise_sigma > 0.0) {
      for (int d = 0; d < dxh; ++d) xs(d) += spec_.noise_sigma * nd(rng);
      for (int d = 0; d < dxh; ++d) xz(d) += spec_.noise_sigma * nd(rng);
    }
    pre.row(i).head(dxh) = xs.transpose();
    pre.row(i).tail(dxh) = xz.transpose();
  }
  if (pre_out != nullptr) *pre_out = pre;
  return apply_mixing(pre);
}

LabeledDataset ScmModel::generate(Eigen::Index n, const Vec& env_shift,
                                  std::uint64_t seed, Mat* pre_out) const {
  if (n < 1) throw ValidationError("generate: n must be >= 1");
  Vec shift = env_shift.size() == 0 ? Vec(Vec::Zero(spec_.dim_z)) : env_shift;
  if (shift.size() != spec_.dim_z)
    throw ValidationError("generate: env_shift length must equal dim_z");
  if (!shift.allFinite()) throw ValidationError("generate: env_shift must be finite");

  std::mt19937_64 label_rng(splitmix64(derive_seed(seed, "labels")));
  std::uniform_int_distribution<int> ud(0, spec_.num_classes - 1);
  LabelVec labels(n);
  for (Eigen::Index i = 0; i < n; ++i) labels(i) = ud(label_rng);

  LabeledDataset ds;
  ds.features =
      sample_pathway(n, class_means_, labels, shift, derive_seed(seed, "pathway"), pre_out);
  ds.labels = labels;
  bool shifted = shift.cwiseAbs().maxCoeff() > 0.0;
  ds.tag = shifted ? Tag::IDC : Tag::ID;

  jsonio::json prov;
  prov["kind"] = "scm";
  prov["spec_digest"] = spec_.digest();
  prov["seed"] = seed;
  prov["env_shift_max"] = shift.cwiseAbs().maxCoeff();
  ds.provenance = jsonio::dump(prov, 0);
  return ds;
}

LabeledDataset ScmModel::semantic_ood(Eigen::Index n, std::uint64_t seed) const {
  if (n < 1) throw ValidationError("semantic_ood: n must be >= 1");
  std::mt19937_64 comp_rng(splitmix64(derive_seed(seed, "ood-components")));
  std::uniform_int_distribution<int> ud(0, static_cast<int>(ood_means_.rows()) - 1);
  LabelVec comp(n);
  for (Eigen::Index i = 0; i < n; ++i) comp(i) = ud(comp_rng);

  LabeledDataset ds;
  ds.features = sample_pathway(n, ood_means_, comp, Vec::Zero(spec_.dim_z),
                               derive_seed(seed, "ood-pathway"));
  ds.labels = LabelVec::Constant(n, -1);
  ds.tag = Tag::IDS;

  jsonio::json prov;
  prov["kind"] = "scm-semantic-ood";
  prov["spec_digest"] = spec_.digest();
  prov["seed"] = seed;
  ds.provenance = jsonio::dump(prov, 0);
  return ds;
}

LabeledDataset generate_scm_dataset(const ScmSpec& spec, Eigen::Index n,
                                    const Vec& env_shift, std::uint64_t seed) {
  return ScmModel(spec).generate(n, env_shift, seed);
}

LabeledDataset make_semantic_ood(const ScmSpec& spec, Eigen::Index n, std::uint64_t seed) {
  return ScmModel(spec).semantic_ood(n, seed);
}

LabeledDataset apply_corruption(const LabeledDataset& ds, CorruptionKind kind,
                                int severity, std::uint64_t seed) {
  if (ds.tag != Tag::ID)
    throw ValidationError("apply_corruption: input must carry tag ID");
  if (severity < 1 || severity > 5)
    throw ValidationError("apply_corruption: severity must be in 1..5");

  LabeledDataset out = ds;
  const double s = static_cast<double>(severity);
  switch (kind) {
    case CorruptionKind::gaussian_noise: {
      std::mt19937_64 rng(splitmix64(seed));
      std::normal_distribution<double> nd(0.0, 0.04 * s);
      for (Eigen::Index i = 0; i < out.features.rows(); ++i)
        for (Eigen::Index j = 0; j < out.features.cols(); ++j) out.features(i, j) += nd(rng);
      break;
    }
    case CorruptionKind::brightness:
      out.features.array() += 0.1 * s;
      break;
    case CorruptionKind::contrast: {
      Eigen::RowVectorXd mean = ds.features.colwise().mean();
      double k = 1.0 - 0.1 * s;
      out.features = ((ds.features.rowwise() - mean) * k).rowwise() + mean;
      break;
    }
    case CorruptionKind::blur: {
      const int half = severity;  // window 2*severity + 1
      const Eigen::Index d = ds.features.cols();
      for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
          Eigen::Index lo = std::max<Eigen::Index>(0, j - half);
          Eigen::Index hi = std::min<Eigen::Index>(d - 1, j + half);
          out.features(i, j) = ds.features.row(i).segment(lo, hi - lo + 1).mean();
        }
      }
      break;
    }
  }
  out.tag = Tag::IDC;
  jsonio::json prov;
  prov["kind"] = "corruption";
  prov["corruption"] = corruption_name(kind);
  prov["severity"] = severity;
  prov["seed"] = seed;
  prov["base"] = ds.provenance;
  out.provenance = jsonio::dump(prov, 0);
  return out;
}

PartitionSpec dirichlet_partition(const LabelVec& labels, int num_clients,
                                  double concentration, std::uint64_t seed) {
  if (num_clients < 1) throw ValidationError("dirichlet_partition: num_clients must be >= 1");
  if (!(concentration > 0.0))
    throw ValidationError("dirichlet_partition: concentration must be > 0");
  const Eigen::Index n = labels.size();
  if (n < 1) throw ValidationError("dirichlet_partition: empty label vector");

  std::int64_t num_classes = labels.maxCoeff() + 1;
  if (labels.minCoeff() < 0)
    throw ValidationError("dirichlet_partition: negative label");
  std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(num_classes));
  for (Eigen::Index i = 0; i < n; ++i)
    by_class[static_cast<std::size_t>(labels(i))].push_back(i);
  for (std::size_t j = 0; j < by_class.size(); ++j)
    if (by_class[j].empty())
      throw ValidationError("dirichlet_partition: class " + std::to_string(j) +
                            " has zero examples");

  std::mt19937_64 rng(splitmix64(seed));
  // q_k ~ Dir(concentration * uniform prior): gamma shape alpha / C per class
  const double shape = concentration / static_cast<double>(num_classes);
  std::gamma_distribution<double> gd(shape, 1.0);
  Mat q(num_clients, num_classes);
  for (int k = 0; k < num_clients; ++k) {
    double total = 0.0;
    for (std::int64_t j = 0; j < num_classes; ++j) {
      double v = gd(rng);
      q(k, j) = v;
      total += v;
    }
    if (total <= 0.0) {
      q.row(k).setZero();
      std::uniform_int_distribution<int> pick(0, static_cast<int>(num_classes) - 1);
      q(k, pick(rng)) = 1.0;
      total = 1.0;
    }
    q.row(k) /= total;
  }

  // Each example of class j lands on client k with probability proportional
  // to q_k[j]; realized by per-class count allocation (floor + largest
  // remainder) over a seeded shuffle of the class's examples.
  std::vector<std::vector<Eigen::Index>> assign(static_cast<std::size_t>(num_clients));
  for (std::int64_t j = 0; j < num_classes; ++j) {
    auto& members = by_class[static_cast<std::size_t>(j)];
    for (std::size_t i = members.size() - 1; i > 0; --i) {
      std::uint64_t r = rng() % (i + 1);
      std::swap(members[i], members[static_cast<std::size_t>(r)]);
    }
    const double col_total = q.col(j).sum();
    const auto n_j = static_cast<double>(members.size());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(num_clients));
    std::vector<std::pair<double, int>> fracs;
    Eigen::Index assigned = 0;
    for (int k = 0; k < num_clients; ++k) {
      double target = n_j * q(k, j) / col_total;
      counts[static_cast<std::size_t>(k)] = static_cast<Eigen::Index>(std::floor(target));
      assigned += counts[static_cast<std::size_t>(k)];
      fracs.emplace_back(target - std::floor(target), k);
    }
    std::sort(fracs.begin(), fracs.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(members.size()) - assigned; ++r)
      ++counts[static_cast<std::size_t>(fracs[static_cast<std::size_t>(r)].second)];
    std::size_t pos = 0;
    for (int k = 0; k < num_clients; ++k)
      for (Eigen::Index c = 0; c < counts[static_cast<std::size_t>(k)]; ++c)
        assign[static_cast<std::size_t>(k)].push_back(members[pos++]);
  }

  // one example per client minimum, moved off the largest client
  for (int k = 0; k < num_clients; ++k) {
    if (!assign[static_cast<std::size_t>(k)].empty()) continue;
    int largest = 0;
    for (int m = 1; m < num_clients; ++m)
      if (assign[static_cast<std::size_t>(m)].size() >
          assign[static_cast<std::size_t>(largest)].size())
        largest = m;
    if (assign[static_cast<std::size_t>(largest)].size() <= 1)
      throw PartitionError("dirichlet_partition: client " + std::to_string(k) +
                           " cannot be filled (not enough examples)");
    assign[static_cast<std::size_t>(k)].push_back(
        assign[static_cast<std::size_t>(largest)].back());
    assign[static_cast<std::size_t>(largest)].pop_back();
  }

  PartitionSpec spec;
  spec.concentration = concentration;
  spec.client_indices = std::move(assign);
  for (auto& ci : spec.client_indices) std::sort(ci.begin(), ci.end());
  spec.client_weights = Vec(num_clients);
  for (int k = 0; k < num_clients; ++k)
    spec.client_weights(k) =
        static_cast<double>(spec.client_indices[static_cast<std::size_t>(k)].size()) /
        static_cast<double>(n);
  spec.validate(n);
  return spec;
}

namespace {

void dft_row(const Eigen::RowVectorXd& row, Eigen::VectorXcd& out) {
  const Eigen::Index d = row.size();
  out.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (Eigen::Index t = 0; t < d; ++t) {
      double ang = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(t) /
                   static_cast<double>(d);
      acc += row(t) * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out(k) = acc;
  }
}

void idft_real(const Eigen::VectorXcd& spec, Eigen::RowVectorXd& out) {
  const Eigen::Index d = spec.size();
  out.resize(d);
  for (Eigen::Index t = 0; t < d; ++t) {
    std::complex<double> acc(0.0, 0.0);
    for (Eigen::Index k = 0; k < d; ++k) {
      double ang = 2.0 * kPi * static_cast<double>(k) * static_cast<double>(t) /
                   static_cast<double>(d);
      acc += spec(k) * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out(t) = acc.real() / static_cast<double>(d);
  }
}

}  // namespace

Mat fourier_augment(const Mat& batch, double mix_ratio, std::uint64_t seed) {
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0))
    throw ValidationError("fourier_augment: mix_ratio must be in [0,1]");
  const Eigen::Index n = batch.rows();
  if (n < 2) throw ValidationError("fourier_augment: batch needs at least 2 rows");

  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<Eigen::Index> pd(0, n - 2);

  std::vector<Eigen::VectorXcd> spectra(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) dft_row(batch.row(i), spectra[static_cast<std::size_t>(i)]);

  Mat out(n, batch.cols());
  Eigen::RowVectorXd row;
  for (Eigen::Index i = 0; i < n; ++i) {
    double lambda = u01(rng) * mix_ratio;
    Eigen::Index partner = pd(rng);
    if (partner >= i) ++partner;
    const auto& own = spectra[static_cast<std::size_t>(i)];
    const auto& other = spectra[static_cast<std::size_t>(partner)];
    Eigen::VectorXcd mixed(own.size());
    for (Eigen::Index k = 0; k < own.size(); ++k) {
      double amp = (1.0 - lambda) * std::abs(own(k)) + lambda * std::abs(other(k));
      double phase = std::arg(own(k));
      mixed(k) = std::polar(amp, phase);
    }
    idft_real(mixed, row);
    out.row(i) = row;
  }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const LabeledDataset& ds) {
  std::filesystem::create_directories(dir);
  jsonio::write_f32(dir / "features.f32", ds.features);
  jsonio::write_i64(dir / "labels.i64", ds.labels);
  jsonio::json meta;
  meta["tag"] = tag_name(ds.tag);
  meta["provenance"] = ds.provenance;
  meta["rows"] = ds.features.rows();
  meta["cols"] = ds.features.cols();
  jsonio::write_json(dir / "meta.json", meta);
}

LabeledDataset load_dataset(const std::filesystem::path& dir) {
  jsonio::json meta = jsonio::read_json(dir / "meta.json");
  LabeledDataset ds;
  ds.tag = tag_from_name(meta.at("tag").get<std::string>());
  ds.provenance = meta.at("provenance").get<std::string>();
  Eigen::Index rows = meta.at("rows").get<Eigen::Index>();
  Eigen::Index cols = meta.at("cols").get<Eigen::Index>();
  ds.features = jsonio::read_f32(dir / "features.f32", rows, cols);
  ds.labels = jsonio::read_i64(dir / "labels.i64");
  if (ds.labels.size() != rows) throw IoError("dataset label/feature size mismatch");
  return ds;
}

void save_partition(const std::filesystem::path& path, const PartitionSpec& p) {
  jsonio::json j;
  j["concentration"] = p.concentration;
  jsonio::json idx = jsonio::json::array();
  for (const auto& ci : p.client_indices) {
    jsonio::json row = jsonio::json::array();
    for (Eigen::Index i : ci) row.push_back(i);
    idx.push_back(row);
  }
  j["client_indices"] = idx;
  jsonio::json w = jsonio::json::array();
  for (Eigen::Index k = 0; k < p.client_weights.size(); ++k) w.push_back(p.client_weights(k));
  j["client_weights"] = w;
  jsonio::write_json(path, j);
}

PartitionSpec load_partition(const std::filesystem::path& path) {
  jsonio::json j = jsonio::read_json(path);
  PartitionSpec p;
  p.concentration = j.at("concentration").get<double>();
  for (const auto& row : j.at("client_indices")) {
    std::vector<Eigen::Index> ci;
    for (const auto& v : row) ci.push_back(v.get<Eigen::Index>());
    p.client_indices.push_back(std::move(ci));
  }
  const auto& w = j.at("client_weights");
  p.client_weights = Vec(static_cast<Eigen::Index>(w.size()));
  for (Eigen::Index k = 0; k < p.client_weights.size(); ++k)
    p.client_weights(k) = w[static_cast<std::size_t>(k)].get<double>();
  return p;
}

}  // namespace fedsdwc::data
