#include <doctest.h>

#include "fedsdwc/jsonio.hpp"
#include "fedsdwc/theory.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <random>

using namespace fedsdwc;
using namespace fedsdwc::theory;

namespace {

double gauss_pdf(double x, double mean, double sd) {
  double r = (x - mean) / sd;
  return std::exp(-0.5 * r * r) / (sd * std::sqrt(2.0 * M_PI));
}

double mvn_logpdf(const Vec& v, const Vec& mean, const Mat& cov) {
  Eigen::LLT<Mat> llt(cov);
  Vec d = v - mean;
  Vec sol = llt.solve(d);
  double logdet = 0.0;
  Mat l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
  return -0.5 * (d.dot(sol) + logdet +
                 static_cast<double>(v.size()) * std::log(2.0 * M_PI));
}

// 2-D quadrature oracle for E[y|x] = ∫ (h.v) p(v|x) dv
double posterior_mean_quadrature(const LinearGaussianInstance& inst, const ClientPrior& prior,
                                 const Vec& x) {
  const int n = 400;
  const double half = 9.0;
  Vec center = inst.A.partialPivLu().solve(x);
  double h0 = 2.0 * half / (n - 1);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Vec v(2);
      v << center(0) - half + h0 * i, center(1) - half + h0 * j;
      Vec mean_x = inst.A * v;
      double lik = gauss_pdf(x(0), mean_x(0), inst.sigma_mu) *
                   gauss_pdf(x(1), mean_x(1), inst.sigma_mu) *
                   std::exp(mvn_logpdf(v, prior.mean, prior.cov));
      double w = ((i == 0 || i == n - 1) ? 0.5 : 1.0) * ((j == 0 || j == n - 1) ? 0.5 : 1.0);
      num += w * lik * inst.h_vec.dot(v);
      den += w * lik;
    }
  }
  return num / den;
}

LinearGaussianInstance instance_2d(std::mt19937_64& rng, double sigma_mu) {
  std::normal_distribution<double> nd(0.0, 1.0);
  LinearGaussianInstance inst;
  inst.dim_v = 2;
  inst.A = Mat::Identity(2, 2);
  inst.A(0, 1) = 0.4 * nd(rng);
  inst.A(1, 0) = 0.4 * nd(rng);
  inst.h_vec = Vec(2);
  inst.h_vec << 1.0 + 0.2 * nd(rng), 0.5 + 0.2 * nd(rng);
  inst.sigma_mu = sigma_mu;
  inst.sigma_eps = 0.1;
  return inst;
}

ClientPrior prior_2d(std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  ClientPrior p;
  p.mean = Vec(2);
  p.mean << nd(rng), nd(rng);
  Mat m(2, 2);
  m << 1.0 + 0.3 * std::abs(nd(rng)), 0.2 * nd(rng), 0.2 * nd(rng),
      1.0 + 0.3 * std::abs(nd(rng));
  p.cov = 0.5 * (m + m.transpose());
  p.cov += Mat::Identity(2, 2) * 0.5;
  return p;
}

}  // namespace

TEST_CASE("posterior_mean_y: noiseless inversion and uninformative limit") {
  std::mt19937_64 rng(3);
  LinearGaussianInstance inst = instance_2d(rng, 0.0);
  ClientPrior prior = prior_2d(rng);
  Vec x(2);
  x << 0.7, -1.2;
  Vec v = inst.A.partialPivLu().solve(x);
  CHECK(posterior_mean_y(inst, prior, x) == doctest::Approx(inst.h_vec.dot(v)).epsilon(1e-12));

  // sigma -> infinity: posterior mean approaches the prior mean (A = I)
  LinearGaussianInstance wide = inst;
  wide.A = Mat::Identity(2, 2);
  wide.sigma_mu = 1e5;
  CHECK(std::abs(posterior_mean_y(wide, prior, x) - wide.h_vec.dot(prior.mean)) < 1e-3);
}

TEST_CASE("posterior_mean_y matches 2-D quadrature on random triples") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> us(0.3, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    LinearGaussianInstance inst = instance_2d(rng, us(rng));
    ClientPrior prior = prior_2d(rng);
    Vec x(2);
    x << nd(rng), nd(rng);
    double closed = posterior_mean_y(inst, prior, x);
    double quad = posterior_mean_quadrature(inst, prior, x);
    CHECK(closed == doctest::Approx(quad).epsilon(1e-5));
  }
}

TEST_CASE("lhs_gap: identical priors and zero noise collapse") {
  std::mt19937_64 rng(9);
  ClientPrior ood = prior_2d(rng);
  std::vector<ClientPrior> clients = {ood, ood, ood};
  Vec w = Vec::Constant(3, 1.0 / 3.0);

  LinearGaussianInstance inst = instance_2d(rng, 0.4);
  Mat xs = sample_x_marginal(inst, ood, 500, 11);
  McEstimate est = lhs_gap(inst, clients, w, ood, xs);
  CHECK(est.mean <= 1e-12);

  LinearGaussianInstance noiseless = instance_2d(rng, 0.0);
  std::vector<ClientPrior> varied = {prior_2d(rng), prior_2d(rng)};
  Vec w2 = Vec::Constant(2, 0.5);
  Mat xs2 = sample_x_marginal(noiseless, ood, 500, 12);
  CHECK(lhs_gap(noiseless, varied, w2, ood, xs2).mean <= 1e-10);
}

TEST_CASE("lhs_gap: scalar conjugate-Gaussian hand computation") {
  LinearGaussianInstance inst;
  inst.dim_v = 1;
  inst.A = Mat::Constant(1, 1, 1.3);
  inst.h_vec = Vec::Constant(1, 0.8);
  inst.sigma_mu = 0.3;
  inst.sigma_eps = 0.1;
  const double tau = 0.9, delta = 0.25;
  ClientPrior client;
  client.mean = Vec::Constant(1, delta);
  client.cov = Mat::Constant(1, 1, tau * tau);
  ClientPrior ood;
  ood.mean = Vec::Zero(1);
  ood.cov = client.cov;

  // posterior mean = (m/tau^2 + a x / sigma^2) / (1/tau^2 + a^2/sigma^2);
  // prior-mean difference contributes delta/tau^2 / precision, constant in x
  double precision = 1.0 / (tau * tau) + inst.A(0, 0) * inst.A(0, 0) /
                                            (inst.sigma_mu * inst.sigma_mu);
  double expected = inst.h_vec(0) * delta / (tau * tau) / precision;

  Mat xs = sample_x_marginal(inst, ood, 200, 13);
  McEstimate est = lhs_gap(inst, {client}, Vec::Ones(1), ood, xs);
  CHECK(est.mean == doctest::Approx(expected).epsilon(1e-6));
  CHECK(est.std_error < 1e-10);  // the integrand is constant in x here
}

TEST_CASE("rhs_bound: exact zeros and finite-difference score check") {
  std::mt19937_64 rng(15);
  ClientPrior ood = prior_2d(rng);
  LinearGaussianInstance inst = instance_2d(rng, 0.5);
  Mat xs = sample_x_marginal(inst, ood, 100, 17);

  CHECK(rhs_bound(inst, {ood, ood}, Vec::Constant(2, 0.5), ood, xs) == 0.0);

  LinearGaussianInstance noiseless = inst;
  noiseless.sigma_mu = 0.0;
  std::vector<ClientPrior> varied = {prior_2d(rng)};
  CHECK(rhs_bound(noiseless, varied, Vec::Ones(1), ood, xs) == 0.0);

  // closed-form Gaussian score vs central differences of the log density
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    ClientPrior p = prior_2d(rng);
    Vec v(2);
    v << nd(rng), nd(rng);
    Mat prec = p.cov.llt().solve(Mat::Identity(2, 2));
    Vec score = -prec * (v - p.mean);
    const double h = 1e-5;
    for (int d = 0; d < 2; ++d) {
      Vec vp = v, vm = v;
      vp(d) += h;
      vm(d) -= h;
      double fd = (mvn_logpdf(vp, p.mean, p.cov) - mvn_logpdf(vm, p.mean, p.cov)) / (2.0 * h);
      CHECK(std::abs(score(d) - fd) < 1e-5);
    }
  }
}

TEST_CASE("verify_bound: degenerate grids") {
  InstanceFamily family = InstanceFamily::canonical(1, 3, 5);
  BoundReport zero_grid = verify_bound(family, {0.0}, 0.2, 1000, 21);
  REQUIRE(zero_grid.rows.size() == 1);
  CHECK(zero_grid.rows[0].lhs == 0.0);
  CHECK(zero_grid.rows[0].rhs == 0.0);

  BoundReport zero_gap = verify_bound(family, {0.01, 0.05, 0.1}, 0.0, 1000, 22);
  for (const auto& row : zero_gap.rows) {
    CHECK(row.lhs <= 1e-10);
    CHECK(row.rhs == 0.0);
  }
}

TEST_CASE("verify_bound: sigma^2 scaling and small-regime bound hold") {
  // the spec's 1-D setting: prior means 0 vs 0.2, unit covariances
  InstanceFamily family = InstanceFamily::canonical(1, 3, 5);
  BoundReport report =
      verify_bound(family, {0.0, 0.01, 0.02, 0.05, 0.1}, 0.2, 100000, 23);
  CHECK(report.small_regime);
  CHECK(report.check_a_all);
  INFO("slope = ", report.slope);
  CHECK(report.slope >= 1.7);
  CHECK(report.slope <= 2.3);
  CHECK(report.check_b);
}

TEST_CASE("lhs_gap is nondecreasing in the prior mean shift") {
  InstanceFamily family = InstanceFamily::canonical(2, 3, 7);
  LinearGaussianInstance inst = family.instance(0.3);
  ClientPrior ood = family.ood_prior();
  Mat xs = sample_x_marginal(inst, ood, 40000, 29);
  double prev = -1.0;
  double prev_se = 0.0;
  for (double gap : {0.0, 0.1, 0.2, 0.4}) {
    McEstimate est = lhs_gap(inst, family.client_priors(gap), family.weights, ood, xs);
    CHECK(est.mean >= prev - 3.0 * (est.std_error + prev_se));
    prev = est.mean;
    prev_se = est.std_error;
  }
}

TEST_CASE("bound report serialization") {
  InstanceFamily family = InstanceFamily::canonical(1, 2, 9);
  BoundReport report = verify_bound(family, {0.0, 0.05}, 0.1, 500, 31);
  auto dir = std::filesystem::temp_directory_path();
  write_bound_report_csv(dir / "fedsdwc_bound.csv", report);
  write_bound_report_json(dir / "fedsdwc_bound.json", report);
  std::string csv = fedsdwc::jsonio::read_text(dir / "fedsdwc_bound.csv");
  CHECK(csv.find("sigma_mu,lhs,rhs,mc_std_error,check_a,check_b") == 0);
  std::filesystem::remove(dir / "fedsdwc_bound.csv");
  std::filesystem::remove(dir / "fedsdwc_bound.json");
}

TEST_CASE("theory validation errors") {
  LinearGaussianInstance inst;
  inst.dim_v = 1;
  inst.A = Mat::Zero(1, 1);
  inst.h_vec = Vec::Ones(1);
  CHECK_THROWS_AS(inst.validate(), ValidationError);
  inst.A = Mat::Ones(1, 1);
  inst.h_vec = Vec::Zero(1);
  CHECK_THROWS_AS(inst.validate(), ValidationError);

  ClientPrior p;
  p.mean = Vec::Zero(2);
  p.cov = Mat::Zero(2, 2);
  CHECK_THROWS_AS(p.validate(), ValidationError);
}
