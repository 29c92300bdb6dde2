#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bayesupdate/gaussian_bayes.hpp"
#include "test_support.hpp"

using namespace bayesupdate;
using namespace testsupport;

namespace {

NIWHyper scalar_hyper(double v, double nu) {
  return {VectorXd::Zero(1), 1.0, nu, SpdMatrix(MatrixXd::Constant(1, 1, v))};
}

Ensemble random_ensemble(Eigen::Index n, Eigen::Index m, RngStream& rng) {
  return {random_matrix(n, m, rng), 1};
}

struct Moments {
  VectorXd mu_mean, mu_sd, q_mean, q_sd;
};

// Mean and standard error of mu and vec(Q) over draws.
template <typename Draw>
Moments moments(int reps, Eigen::Index n, Draw&& draw) {
  VectorXd s_mu = VectorXd::Zero(n), s2_mu = VectorXd::Zero(n), s_q = VectorXd::Zero(n * n), s2_q = VectorXd::Zero(n * n);
  for (int r = 0; r < reps; ++r) {
    const GaussianParams th = draw(r);
    const VectorXd q = th.Q.reshaped();
    s_mu += th.mu;
    s2_mu += th.mu.cwiseAbs2();
    s_q += q;
    s2_q += q.cwiseAbs2();
  }
  Moments m;
  m.mu_mean = s_mu / reps;
  m.q_mean = s_q / reps;
  m.mu_sd = ((s2_mu / reps - m.mu_mean.cwiseAbs2()) / reps).cwiseSqrt();
  m.q_sd = ((s2_q / reps - m.q_mean.cwiseAbs2()) / reps).cwiseSqrt();
  return m;
}

}  // namespace

TEST(NiwPosterior, DegreesOfFreedom) {
  RngStream rng(1, 0);
  NIWHyper h = NIWHyper::vague(3, 10.0, 1.1);
  h.nu = 5.0;
  EXPECT_EQ(niw_posterior(h, random_matrix(3, 20, rng)).nu, 25.0);
}

TEST(NiwPosterior, SamplesAtPriorMean) {
  RngStream rng(2, 0);
  NIWHyper h{random_matrix(3, 1, rng), 2.0, 5.0, SpdMatrix(random_spd(3, rng))};
  const MatrixXd samples = h.mu0.replicate(1, 6);
  const NIWHyper post = niw_posterior(h, samples);
  EXPECT_LE((post.V.matrix() - h.V.matrix()).norm(), 1e-14);
  EXPECT_LE((post.mu0 - h.mu0).norm(), 1e-14);
}

TEST(NiwPosterior, HandCheckedScalar) {
  const NIWHyper h = scalar_hyper(1.5, 3.0);
  MatrixXd s(1, 2);
  s << 2, 4;
  const NIWHyper post = niw_posterior(h, s);
  EXPECT_DOUBLE_EQ(post.V.matrix()(0, 0), 1.5 + 8.0);
  EXPECT_DOUBLE_EQ(post.mu0[0], 2.0);
  EXPECT_DOUBLE_EQ(post.kappa, 3.0);
  EXPECT_DOUBLE_EQ(post.nu, 5.0);
}

TEST(NiwPosterior, OrderIndependentBitForBit) {
  RngStream rng(3, 0);
  const NIWHyper h = NIWHyper::vague(4, 10.0, 1.1);
  const MatrixXd s = random_matrix(4, 15, rng);
  std::vector<Eigen::Index> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  MatrixXd p(4, 15);
  for (Eigen::Index i = 0; i < 15; ++i) p.col(i) = s.col(perm[static_cast<std::size_t>(i)]);
  const NIWHyper a = niw_posterior(h, s), b = niw_posterior(h, p);
  EXPECT_EQ(a.mu0, b.mu0);
  EXPECT_EQ(a.V.matrix(), b.V.matrix());
}

TEST(NiwPosterior, DimensionMismatchRejected) {
  EXPECT_THROW(niw_posterior(NIWHyper::vague(3, 1.0, 1.1), MatrixXd::Zero(2, 4)), std::invalid_argument);
}

TEST(EmpiricalEstimate, TwoMembers) {
  MatrixXd m(1, 2);
  m << 0, 2;
  const GaussianParams th = empirical_estimate({m, 1});
  EXPECT_DOUBLE_EQ(th.mu[0], 1.0);
  EXPECT_DOUBLE_EQ(th.Q(0, 0), 2.0);
}

TEST(EmpiricalEstimate, IdenticalMembersGiveZeroCovariance) {
  const GaussianParams th = empirical_estimate({VectorXd::Constant(4, 3.0).replicate(1, 5), 1});
  EXPECT_TRUE(th.Q.isZero(0.0));
}

TEST(EmpiricalEstimate, SharesStatisticsWithNiwPosterior) {
  RngStream rng(4, 0);
  const Ensemble ens = random_ensemble(3, 8, rng);
  const GaussianParams th = empirical_estimate(ens);
  NIWHyper h = NIWHyper::vague(3, 1e-12, 1.1);
  h.mu0 = th.mu;
  const NIWHyper post = niw_posterior(h, ens.members);
  EXPECT_LE(((post.V.matrix() - h.V.matrix()) / 7.0 - th.Q).norm(), 1e-10);
}

TEST(SampleThetaAllMembers, ReproducibleAndConsistent) {
  RngStream rng(5, 0);
  VectorXd mu_true(2);
  mu_true << 3, -1;
  MatrixXd q_true(2, 2);
  q_true << 2, 0.5, 0.5, 1;
  const SpdMatrix qs(q_true);
  Ensemble ens{MatrixXd(2, 20000), 1};
  for (Eigen::Index i = 0; i < ens.size(); ++i) ens.members.col(i) = mvn_sample(mu_true, qs, rng);
  const NIWHyper h = NIWHyper::vague(2, 10.0, 1.1);
  RngStream a(6, 1), b(6, 1);
  const GaussianParams ta = sample_theta_all_members(h, ens, a);
  const GaussianParams tb = sample_theta_all_members(h, ens, b);
  EXPECT_EQ(ta.mu, tb.mu);
  EXPECT_EQ(ta.Q, tb.Q);
  EXPECT_LE((ta.mu - mu_true).norm(), 0.1);
  EXPECT_LE((ta.Q - q_true).norm(), 0.15);
}

TEST(GibbsThetaExcluding, RejectsZeroIterations) {
  RngStream rng(7, 0);
  const Ensemble ens = random_ensemble(2, 5, rng);
  EXPECT_THROW(gibbs_theta_excluding(NIWHyper::vague(2, 10, 1.1), ens, 0, LikelihoodSpec::identity(2, 1.0),
                                     VectorXd::Zero(2), 0, rng),
               std::invalid_argument);
}

TEST(GibbsThetaExcluding, Reproducible) {
  RngStream rng(8, 0);
  const Ensemble ens = random_ensemble(3, 6, rng);
  const NIWHyper h = NIWHyper::vague(3, 10, 1.1);
  const LikelihoodSpec lik = LikelihoodSpec::identity(3, 1.0);
  RngStream a(9, 2), b(9, 2);
  const GaussianParams ta = gibbs_theta_excluding(h, ens, 1, lik, VectorXd::Ones(3), 5, a);
  const GaussianParams tb = gibbs_theta_excluding(h, ens, 1, lik, VectorXd::Ones(3), 5, b);
  EXPECT_EQ(ta.Q, tb.Q);
  EXPECT_EQ(ta.mu, tb.mu);
}

TEST(GibbsThetaExcluding, ConjugacyWithVagueLikelihood) {
  // With y carrying no information the chain targets the NIW posterior given
  // the retained members alone.
  for (Eigen::Index n : {1, 2}) {
    RngStream rng(10 + static_cast<std::uint64_t>(n), 0);
    const Ensemble ens = random_ensemble(n, 6, rng);
    NIWHyper h = NIWHyper::vague(n, 2.0, 3.0);
    const LikelihoodSpec lik = LikelihoodSpec::identity(n, 1e12);
    const Eigen::Index excluded = 2;
    MatrixXd retained(n, 5);
    for (Eigen::Index i = 0, c = 0; i < 6; ++i) {
      if (i != excluded) retained.col(c++) = ens.members.col(i);
    }
    const NIWHyper post = niw_posterior(h, retained);
    const VectorXd q_exact = (post.V.matrix() / (post.nu - static_cast<double>(n) - 1.0)).reshaped();
    const Moments m = moments(10000, n, [&](int r) {
      RngStream g(100, static_cast<std::uint64_t>(r));
      return gibbs_theta_excluding(h, ens, excluded, lik, VectorXd::Zero(n), 50, g);
    });
    for (Eigen::Index i = 0; i < n; ++i) EXPECT_NEAR(m.mu_mean[i], post.mu0[i], 3.0 * m.mu_sd[i]);
    for (Eigen::Index i = 0; i < n * n; ++i) EXPECT_NEAR(m.q_mean[i], q_exact[i], 3.0 * m.q_sd[i]);
  }
}

TEST(GibbsThetaExcluding, ExchangeableInRetainedMembers) {
  RngStream rng(12, 0);
  const Ensemble ens = random_ensemble(2, 6, rng);
  Ensemble swapped = ens;
  swapped.members.col(1).swap(swapped.members.col(4));
  const NIWHyper h = NIWHyper::vague(2, 10.0, 3.0);
  const LikelihoodSpec lik = LikelihoodSpec::identity(2, 1.0);
  const VectorXd y = VectorXd::Constant(2, 0.5);
  const auto run = [&](const Ensemble& e, std::uint64_t seed) {
    return moments(4000, 2, [&](int r) {
      RngStream g(seed, static_cast<std::uint64_t>(r));
      return gibbs_theta_excluding(h, e, 0, lik, y, 10, g);
    });
  };
  const Moments a = run(ens, 200), b = run(swapped, 300);
  for (Eigen::Index i = 0; i < 2; ++i) {
    EXPECT_NEAR(a.mu_mean[i], b.mu_mean[i], 4.0 * std::hypot(a.mu_sd[i], b.mu_sd[i]));
  }
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(a.q_mean[i], b.q_mean[i], 4.0 * std::hypot(a.q_sd[i], b.q_sd[i]));
  }
}

TEST(GibbsThetaExcluding, InformativeDataPullsMeanTowardObservation) {
  RngStream rng(13, 0);
  const Ensemble ens{MatrixXd::Zero(1, 4) + random_matrix(1, 4, rng) * 0.1, 1};
  const NIWHyper h = NIWHyper::vague(1, 1.0, 3.0);
  const LikelihoodSpec lik = LikelihoodSpec::identity(1, 1e-4);
  double s = 0.0;
  for (int r = 0; r < 500; ++r) {
    RngStream g(14, static_cast<std::uint64_t>(r));
    s += gibbs_theta_excluding(h, ens, 0, lik, VectorXd::Constant(1, 10.0), 20, g).mu[0];
  }
  // Three retained members near 0 plus one augmented member at 10.
  EXPECT_GT(s / 500, 1.0);
}
