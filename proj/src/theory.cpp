#include "fedsdwc/theory.hpp"

#include "fedsdwc/jsonio.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <random>

namespace fedsdwc::theory {

void LinearGaussianInstance::validate() const {
  if (A.rows() != A.cols() || A.rows() != dim_v)
    throw ValidationError("LinearGaussianInstance: A must be dim_v x dim_v");
  if (h_vec.size() != dim_v)
    throw ValidationError("LinearGaussianInstance: h_vec length must equal dim_v");
  if (std::abs(A.determinant()) <= 1e-8)
    throw ValidationError("LinearGaussianInstance: A must be invertible (|det| > 1e-8)");
  if (h_vec.norm() == 0.0) throw ValidationError("LinearGaussianInstance: h_vec must be nonzero");
  if (!(sigma_mu >= 0.0) || !(sigma_eps >= 0.0))
    throw ValidationError("LinearGaussianInstance: noise scales must be >= 0");
}

void ClientPrior::validate() const {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size())
    throw ValidationError("ClientPrior: cov must be square and match mean length");
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw ValidationError("ClientPrior: cov must be positive definite");
}

double posterior_mean_y(const LinearGaussianInstance& instance, const ClientPrior& prior,
                        const Vec& x) {
  instance.validate();
  if (x.size() != instance.dim_v) throw ShapeError("posterior_mean_y: bad x length");
  if (!x.allFinite()) throw ValidationError("posterior_mean_y: x must be finite");
  if (instance.sigma_mu == 0.0) {
    Vec v = instance.A.partialPivLu().solve(x);
    return instance.h_vec.dot(v);
  }
  const Mat& a = instance.A;
  Mat s = a * prior.cov * a.transpose();
  s.diagonal().array() += instance.sigma_mu * instance.sigma_mu;
  Eigen::LLT<Mat> llt(s);
  if (llt.info() != Eigen::Success)
    throw NumericError("posterior_mean_y: singular marginal covariance");
  Vec resid = x - a * prior.mean;
  Vec m_post = prior.mean + prior.cov * a.transpose() * llt.solve(resid);
  return instance.h_vec.dot(m_post);
}

namespace {

// h . E[v|x] is affine in x: h . E[v|x] = offset + gain . x. Computing the
// per-client difference to the OOD posterior keeps identical priors exactly
// cancelled regardless of weight rounding.
struct AffinePosterior {
  double offset = 0.0;
  Vec gain;
};

AffinePosterior affine_posterior(const LinearGaussianInstance& instance,
                                 const ClientPrior& prior) {
  AffinePosterior ap;
  if (instance.sigma_mu == 0.0) {
    Mat ainv = instance.A.partialPivLu().inverse();
    ap.gain = ainv.transpose() * instance.h_vec;
    ap.offset = 0.0;
    return ap;
  }
  const Mat& a = instance.A;
  Mat s = a * prior.cov * a.transpose();
  s.diagonal().array() += instance.sigma_mu * instance.sigma_mu;
  Eigen::LLT<Mat> llt(s);
  if (llt.info() != Eigen::Success)
    throw NumericError("affine_posterior: singular marginal covariance");
  Mat gain_mat = prior.cov * a.transpose() * llt.solve(Mat::Identity(s.rows(), s.cols()));
  ap.gain = gain_mat.transpose() * instance.h_vec;
  ap.offset = instance.h_vec.dot(prior.mean) - ap.gain.dot(a * prior.mean);
  return ap;
}

void validate_weights(const std::vector<ClientPrior>& priors, const Vec& weights) {
  if (priors.empty()) throw ValidationError("theory: empty client prior list");
  if (weights.size() != static_cast<Eigen::Index>(priors.size()))
    throw ValidationError("theory: weight count mismatch");
  if (std::abs(weights.sum() - 1.0) > 1e-9)
    throw ValidationError("theory: weights must sum to 1 within 1e-9");
}

}  // namespace

McEstimate lhs_gap(const LinearGaussianInstance& instance,
                   const std::vector<ClientPrior>& client_priors, const Vec& weights,
                   const ClientPrior& ood_prior, const Mat& x_samples) {
  instance.validate();
  validate_weights(client_priors, weights);
  if (x_samples.cols() != instance.dim_v) throw ShapeError("lhs_gap: bad x sample width");

  AffinePosterior ood = affine_posterior(instance, ood_prior);
  std::vector<AffinePosterior> clients;
  clients.reserve(client_priors.size());
  for (const auto& p : client_priors) clients.push_back(affine_posterior(instance, p));

  // sum_k w_k (E_k[y|x] - E~[y|x]) as one affine map of x
  double offset = 0.0;
  Vec gain = Vec::Zero(instance.dim_v);
  for (std::size_t k = 0; k < clients.size(); ++k) {
    double w = weights(static_cast<Eigen::Index>(k));
    offset += w * (clients[k].offset - ood.offset);
    gain += w * (clients[k].gain - ood.gain);
  }

  const Eigen::Index n = x_samples.rows();
  double acc = 0.0, acc2 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double gap = std::abs(offset + gain.dot(x_samples.row(i)));
    acc += gap;
    acc2 += gap * gap;
  }
  McEstimate est;
  est.mean = acc / static_cast<double>(n);
  double var = std::max(0.0, acc2 / static_cast<double>(n) - est.mean * est.mean);
  est.std_error = n > 1 ? std::sqrt(var / static_cast<double>(n)) : 0.0;
  return est;
}

double rhs_bound(const LinearGaussianInstance& instance,
                 const std::vector<ClientPrior>& client_priors, const Vec& weights,
                 const ClientPrior& ood_prior, const Mat& x_samples) {
  instance.validate();
  validate_weights(client_priors, weights);
  if (x_samples.cols() != instance.dim_v) throw ShapeError("rhs_bound: bad x sample width");
  if (instance.sigma_mu == 0.0) return 0.0;

  Eigen::PartialPivLU<Mat> alu(instance.A);
  Eigen::JacobiSVD<Mat> svd(instance.A);
  double ainv_norm = 1.0 / svd.singularValues().minCoeff();

  Mat ood_prec = ood_prior.cov.llt().solve(Mat::Identity(instance.dim_v, instance.dim_v));
  std::vector<Mat> precs;
  precs.reserve(client_priors.size());
  for (const auto& p : client_priors)
    precs.push_back(p.cov.llt().solve(Mat::Identity(instance.dim_v, instance.dim_v)));

  const Eigen::Index n = x_samples.rows();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec v = alu.solve(x_samples.row(i).transpose());
    Vec grad = Vec::Zero(instance.dim_v);
    for (std::size_t k = 0; k < client_priors.size(); ++k) {
      // grad log p_k(v) - grad log p~(v), exactly zero for identical priors
      Vec diff = -precs[k] * (v - client_priors[k].mean) + ood_prec * (v - ood_prior.mean);
      grad += weights(static_cast<Eigen::Index>(k)) * diff;
    }
    acc += grad.norm();
  }
  double mean_score = acc / static_cast<double>(n);
  return instance.sigma_mu * instance.sigma_mu * mean_score * ainv_norm *
         instance.h_vec.norm();
}

Mat sample_x_marginal(const LinearGaussianInstance& instance, const ClientPrior& prior,
                      Eigen::Index n, std::uint64_t seed) {
  instance.validate();
  prior.validate();
  Eigen::LLT<Mat> llt(prior.cov);
  Mat l = llt.matrixL();
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> nd(0.0, 1.0);
  Mat x(n, instance.dim_v);
  Vec xi(instance.dim_v);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int d = 0; d < instance.dim_v; ++d) xi(d) = nd(rng);
    Vec v = prior.mean + l * xi;
    Vec obs = instance.A * v;
    if (instance.sigma_mu > 0.0)
      for (int d = 0; d < instance.dim_v; ++d) obs(d) += instance.sigma_mu * nd(rng);
    x.row(i) = obs.transpose();
  }
  return x;
}

InstanceFamily InstanceFamily::canonical(int dim_v, int num_clients, std::uint64_t seed) {
  if (dim_v < 1 || num_clients < 1)
    throw ValidationError("InstanceFamily: dim_v and num_clients must be positive");
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> nd(0.0, 1.0);

  InstanceFamily f;
  f.A = Mat::Identity(dim_v, dim_v);
  if (dim_v > 1) {
    // mild deterministic mixing, still well conditioned
    for (int i = 0; i < dim_v; ++i)
      for (int j = 0; j < dim_v; ++j)
        if (i != j) f.A(i, j) = 0.2 * nd(rng);
  }
  f.h_vec = Vec(dim_v);
  for (int d = 0; d < dim_v; ++d) f.h_vec(d) = 1.0 + 0.1 * nd(rng);
  f.sigma_eps = 0.1;
  f.client_dirs = Mat(num_clients, dim_v);
  for (int k = 0; k < num_clients; ++k) {
    Vec dir(dim_v);
    for (int d = 0; d < dim_v; ++d) dir(d) = nd(rng);
    double nrm = dir.norm();
    if (nrm < 1e-12) {
      dir = Vec::Unit(dim_v, k % dim_v);
      nrm = 1.0;
    }
    f.client_dirs.row(k) = (dir / nrm).transpose();
  }
  f.weights = Vec::Constant(num_clients, 1.0 / static_cast<double>(num_clients));
  f.ood_mean = Vec::Zero(dim_v);
  f.cov = Mat::Identity(dim_v, dim_v);
  return f;
}

LinearGaussianInstance InstanceFamily::instance(double sigma_mu) const {
  LinearGaussianInstance inst;
  inst.A = A;
  inst.h_vec = h_vec;
  inst.sigma_mu = sigma_mu;
  inst.sigma_eps = sigma_eps;
  inst.dim_v = dim_v();
  return inst;
}

std::vector<ClientPrior> InstanceFamily::client_priors(double prior_gap) const {
  std::vector<ClientPrior> priors;
  priors.reserve(static_cast<std::size_t>(client_dirs.rows()));
  for (Eigen::Index k = 0; k < client_dirs.rows(); ++k) {
    ClientPrior p;
    p.mean = ood_mean + prior_gap * client_dirs.row(k).transpose();
    p.cov = cov;
    priors.push_back(std::move(p));
  }
  return priors;
}

ClientPrior InstanceFamily::ood_prior() const {
  ClientPrior p;
  p.mean = ood_mean;
  p.cov = cov;
  return p;
}

BoundReport verify_bound(const InstanceFamily& family, const std::vector<double>& sigma_grid,
                         double prior_gap, Eigen::Index num_x, std::uint64_t seed) {
  if (sigma_grid.empty()) throw ValidationError("verify_bound: empty sigma grid");
  if (num_x < 1) throw ValidationError("verify_bound: num_x must be >= 1");

  BoundReport report;
  report.prior_gap = prior_gap;
  std::vector<ClientPrior> priors = family.client_priors(prior_gap);
  ClientPrior ood = family.ood_prior();

  for (std::size_t i = 0; i < sigma_grid.size(); ++i) {
    LinearGaussianInstance inst = family.instance(sigma_grid[i]);
    Mat xs = sample_x_marginal(inst, ood, num_x, derive_seed(seed, "x-samples", i));
    McEstimate lhs = lhs_gap(inst, priors, family.weights, ood, xs);
    double rhs = rhs_bound(inst, priors, family.weights, ood, xs);
    BoundRow row;
    row.sigma_mu = sigma_grid[i];
    row.lhs = lhs.mean;
    row.rhs = rhs;
    row.mc_std_error = lhs.std_error;
    row.check_a = lhs.mean <= rhs + 3.0 * lhs.std_error;
    report.rows.push_back(row);
  }

  // (a) the bound is a small-sigma, small-divergence second-order statement;
  // only that regime is enforced, the rest is reported
  report.small_regime = prior_gap <= 0.2;
  report.check_a_all = true;
  for (const auto& row : report.rows)
    if (report.small_regime && row.sigma_mu <= 0.1 && !row.check_a)
      report.check_a_all = false;

  // (b) log-log slope over the decade [0.01, 0.1]
  std::vector<double> lx, ly;
  for (const auto& row : report.rows) {
    if (row.sigma_mu >= 0.01 - 1e-12 && row.sigma_mu <= 0.1 + 1e-12 && row.lhs > 0.0) {
      lx.push_back(std::log(row.sigma_mu));
      ly.push_back(std::log(row.lhs));
    }
  }
  if (lx.size() >= 2) {
    double n = static_cast<double>(lx.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sx += lx[i];
      sy += ly[i];
      sxx += lx[i] * lx[i];
      sxy += lx[i] * ly[i];
    }
    report.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    report.check_b = report.slope >= 1.7 && report.slope <= 2.3;
  }
  return report;
}

void write_bound_report_csv(const std::filesystem::path& path, const BoundReport& report) {
  std::string csv = "sigma_mu,lhs,rhs,mc_std_error,check_a,check_b\n";
  for (const auto& row : report.rows) {
    csv += jsonio::format_double(row.sigma_mu) + "," + jsonio::format_double(row.lhs) + "," +
           jsonio::format_double(row.rhs) + "," + jsonio::format_double(row.mc_std_error) +
           "," + (row.check_a ? "1" : "0") + "," + (report.check_b ? "1" : "0") + "\n";
  }
  jsonio::write_text(path, csv);
}

void write_bound_report_json(const std::filesystem::path& path, const BoundReport& report) {
  jsonio::json j;
  jsonio::json rows = jsonio::json::array();
  for (const auto& row : report.rows) {
    jsonio::json r;
    r["sigma_mu"] = row.sigma_mu;
    r["lhs"] = row.lhs;
    r["rhs"] = row.rhs;
    r["mc_std_error"] = row.mc_std_error;
    r["check_a"] = row.check_a;
    rows.push_back(r);
  }
  j["rows"] = rows;
  j["prior_gap"] = report.prior_gap;
  j["small_regime"] = report.small_regime;
  j["check_a_all"] = report.check_a_all;
  j["slope"] = report.slope;
  j["check_b"] = report.check_b;
  jsonio::write_json(path, j);
}

}  // namespace fedsdwc::theory
