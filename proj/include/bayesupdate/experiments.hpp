#pragma once

// Twin-experiment harness: truth processes, observation simulation, the
// six Gaussian filtering procedures, the binary chain study, and their
// diagnostics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bayesupdate/distributions.hpp"
#include "bayesupdate/errors.hpp"
#include "bayesupdate/gaussian_bayes.hpp"
#include "bayesupdate/gaussian_core.hpp"
#include "bayesupdate/hmm_core.hpp"
#include "bayesupdate/hmm_update.hpp"
#include "bayesupdate/parallel.hpp"

namespace bayesupdate {

// Stream purposes; see make_stream_id.
namespace purpose {
inline constexpr std::uint64_t truth_init = 0;
inline constexpr std::uint64_t observation = 1;
inline constexpr std::uint64_t initial_ensemble = 2;
inline constexpr std::uint64_t theta = 3;
inline constexpr std::uint64_t update_noise = 4;
inline constexpr std::uint64_t rank_site = 5;
inline constexpr std::uint64_t forecast = 6;
inline constexpr std::uint64_t truth_step = 7;
}  // namespace purpose

// ---------------------------------------------------------------------------
// Gaussian truth process

inline constexpr double kStateVariance = 20.0;

/// Cov(r, s) = 20 exp(-3 |r - s| / 20).
inline MatrixXd initial_state_covariance(Eigen::Index n) {
  detail::require(n >= 1, "initial_state_covariance: n must be >= 1");
  MatrixXd c(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index s = 0; s < n; ++s) {
      c(r, s) = kStateVariance * std::exp(-3.0 * static_cast<double>(std::abs(r - s)) / 20.0);
    }
  }
  return c;
}

inline VectorXd gen_initial_state(const SpdMatrix& cov, RngStream& rng) {
  return mvn_sample(VectorXd::Zero(cov.dim()), cov, rng);
}

inline VectorXd gen_initial_state(Eigen::Index n, RngStream& rng) {
  return gen_initial_state(SpdMatrix(initial_state_covariance(n)), rng);
}

/// For j = 5t-4..5t+5 (1-based, clipped to 1..n) element j becomes the mean of
/// x_prev over max(1, j-4)..min(n, j+5); other elements are copied.
inline VectorXd linear_forward(const VectorXd& x_prev, int t) {
  detail::require(t >= 2, "linear_forward: t must be >= 2");
  const long n = static_cast<long>(x_prev.size());
  VectorXd out = x_prev;
  const long first = std::max(1L, 5L * t - 4);
  const long last = std::min(n, 5L * t + 5);
  for (long j = first; j <= last; ++j) {
    const long a = std::max(1L, j - 4);
    const long b = std::min(n, j + 5);
    out[j - 1] = x_prev.segment(a - 1, b - a + 1).mean();
  }
  return out;
}

/// nu_t = 100 / (2t - 3).
inline double nonlinear_dof(int t) {
  detail::require(t >= 2, "nonlinear_dof: t must be >= 2");
  return 100.0 / (2.0 * t - 3.0);
}

namespace detail {

// sign(z) * |quantile(lower tail at -|z|)|; working in the lower tail keeps
// precision for large |z| where the upper cdf rounds to one.
inline double tail_transfer(double z, double lower_tail, double nu_to) {
  if (z == 0.0) return 0.0;
  const double p = std::max(lower_tail, std::numeric_limits<double>::min());
  if (p >= 0.5) return 0.0;
  const double q = student_t_quantile(p, nu_to);
  return z > 0.0 ? -q : q;
}

}  // namespace detail

/// Elementwise marginal transform to a scaled t law: t = 2 maps from the
/// Gaussian, later times from t with nu_{t-1} to t with nu_t.
inline VectorXd nonlinear_forward(const VectorXd& x_prev, int t) {
  detail::require(t >= 2, "nonlinear_forward: t must be >= 2");
  const double scale = std::sqrt(kStateVariance);
  const double nu_to = nonlinear_dof(t);
  VectorXd out(x_prev.size());
  for (Eigen::Index j = 0; j < x_prev.size(); ++j) {
    const double z = x_prev[j] / scale;
    const double tail = t == 2 ? normal_cdf(-std::abs(z)) : student_t_cdf(-std::abs(z), nonlinear_dof(t - 1));
    out[j] = scale * detail::tail_transfer(z, tail, nu_to);
  }
  return out;
}

enum class ForwardKind { linear, nonlinear };

inline VectorXd forward(ForwardKind kind, const VectorXd& x_prev, int t) {
  return kind == ForwardKind::linear ? linear_forward(x_prev, t) : nonlinear_forward(x_prev, t);
}

/// y = x + e, e_j ~ N(0, variance) independently.
inline VectorXd simulate_observations(const VectorXd& x, double variance, RngStream& rng) {
  detail::require(variance >= 0.0, "simulate_observations: variance must be non-negative");
  const double sd = std::sqrt(variance);
  VectorXd y = x;
  for (Eigen::Index j = 0; j < y.size(); ++j) y[j] += sd * rng.normal();
  return y;
}

// ---------------------------------------------------------------------------
// Binary truth process (oil = 0, water = 1)

struct BinaryProcessParams {
  int min_segment = 5;
  int max_segment = 20;
  double extend_probability = 0.25;
  double seed_probability = 0.02;
};

inline void validate(const BinaryProcessParams& p) {
  detail::require(p.min_segment >= 1 && p.max_segment >= p.min_segment, "BinaryProcessParams: bad segment lengths");
  detail::require(p.extend_probability >= 0.0 && p.extend_probability <= 1.0,
                  "BinaryProcessParams: extend_probability must lie in [0, 1]");
  detail::require(p.seed_probability >= 0.0 && p.seed_probability <= 1.0,
                  "BinaryProcessParams: seed_probability must lie in [0, 1]");
}

/// All oil except one water segment of random length and position.
inline StateVector binary_initial_state(int n, const BinaryProcessParams& p, RngStream& rng) {
  detail::require(n >= 1, "binary_initial_state: n must be >= 1");
  validate(p);
  StateVector x(static_cast<std::size_t>(n), 0);
  const int len = std::min(n, static_cast<int>(rng.uniform_int(p.min_segment, p.max_segment)));
  const int start = static_cast<int>(rng.uniform_int(0, n - len));
  std::fill_n(x.begin() + start, len, 1);
  return x;
}

/// One step: every maximal water segment grows by one cell on each side with
/// the extension probability, then possibly a new water cell appears at a
/// uniformly chosen oil cell. Water never turns back into oil.
inline StateVector binary_step(const StateVector& x, const BinaryProcessParams& p, RngStream& rng) {
  const int n = static_cast<int>(x.size());
  StateVector out = x;
  for (int j = 0; j < n;) {
    if (x[static_cast<std::size_t>(j)] != 1) {
      ++j;
      continue;
    }
    int end = j;
    while (end + 1 < n && x[static_cast<std::size_t>(end + 1)] == 1) ++end;
    const bool left = rng.bernoulli(p.extend_probability);
    const bool right = rng.bernoulli(p.extend_probability);
    if (left && j > 0) out[static_cast<std::size_t>(j - 1)] = 1;
    if (right && end + 1 < n) out[static_cast<std::size_t>(end + 1)] = 1;
    j = end + 1;
  }
  if (rng.bernoulli(p.seed_probability)) {
    std::vector<int> oil;
    for (int j = 0; j < n; ++j) {
      if (out[static_cast<std::size_t>(j)] == 0) oil.push_back(j);
    }
    if (!oil.empty()) {
      out[static_cast<std::size_t>(oil[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(oil.size()) - 1))])] = 1;
    }
  }
  return out;
}

/// Truth trajectory x^1..x^T; time t uses stream (replicate, t, 0, .).
inline std::vector<StateVector> binary_truth_process(int n, int T, const BinaryProcessParams& p, std::uint64_t seed,
                                                     std::uint64_t replicate = 0) {
  detail::require(T >= 1, "binary_truth_process: T must be >= 1");
  std::vector<StateVector> out;
  out.reserve(static_cast<std::size_t>(T));
  RngStream init(seed, make_stream_id(replicate, 1, 0, purpose::truth_init));
  out.push_back(binary_initial_state(n, p, init));
  for (int t = 2; t <= T; ++t) {
    RngStream step(seed, make_stream_id(replicate, static_cast<std::uint64_t>(t), 0, purpose::truth_step));
    out.push_back(binary_step(out.back(), p, step));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Number of members not exceeding the truth at one uniformly drawn site.
inline int rank_statistic(const MatrixXd& ensemble, const VectorXd& truth, RngStream& rng) {
  detail::require(ensemble.rows() == truth.size() && truth.size() >= 1, "rank_statistic: dimension mismatch");
  const auto j = static_cast<Eigen::Index>(rng.uniform_int(0, truth.size() - 1));
  return static_cast<int>((ensemble.row(j).array() <= truth[j]).count());
}

/// Pearson statistic sum (c - E)^2 / E against equal cell probabilities.
inline double chi_square_uniformity(const std::vector<long>& counts) {
  detail::require(!counts.empty(), "chi_square_uniformity: no cells");
  double total = 0.0;
  for (long c : counts) total += static_cast<double>(c);
  detail::require(total > 0.0, "chi_square_uniformity: no observations");
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0.0;
  for (long c : counts) stat += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return stat;
}

inline std::vector<long> rank_histogram(const std::vector<int>& z, int m) {
  std::vector<long> counts(static_cast<std::size_t>(m + 1), 0);
  for (int v : z) {
    detail::require(v >= 0 && v <= m, "rank_histogram: value out of range");
    ++counts[static_cast<std::size_t>(v)];
  }
  return counts;
}

/// Mean over sliding windows of 1 - sum_k c_k (c_k - 1) / (M (M - 1)), where
/// c_k counts members whose window pattern equals category k.
inline double unalikeability(const std::vector<StateVector>& ensemble, int tuple_width = 4) {
  detail::require(ensemble.size() >= 2, "unalikeability: need at least two members");
  detail::require(tuple_width >= 1 && tuple_width <= 20, "unalikeability: bad tuple width");
  const int n = static_cast<int>(ensemble.front().size());
  detail::require(n >= tuple_width, "unalikeability: n smaller than tuple width");
  const double m = static_cast<double>(ensemble.size());
  std::vector<int> counts(std::size_t{1} << tuple_width);
  double total = 0.0;
  for (int j = 0; j + tuple_width <= n; ++j) {
    std::fill(counts.begin(), counts.end(), 0);
    for (const StateVector& x : ensemble) {
      detail::require(static_cast<int>(x.size()) == n, "unalikeability: ragged ensemble");
      unsigned code = 0;
      for (int w = 0; w < tuple_width; ++w) {
        const int v = x[static_cast<std::size_t>(j + w)];
        detail::require(v == 0 || v == 1, "unalikeability: states must be binary");
        code = (code << 1) | static_cast<unsigned>(v);
      }
      ++counts[code];
    }
    double same = 0.0;
    for (int c : counts) same += static_cast<double>(c) * (c - 1);
    total += 1.0 - same / (m * (m - 1.0));
  }
  return total / static_cast<double>(n - tuple_width + 1);
}

// ---------------------------------------------------------------------------
// Gaussian study

enum class ThetaGeneration { bayes_excluding, bayes_all_members, empirical };
enum class UpdateKind { optimal_sqrt, stochastic };

inline std::string_view to_string(ForwardKind k) { return k == ForwardKind::linear ? "linear" : "nonlinear"; }

inline std::string_view to_string(ThetaGeneration g) {
  switch (g) {
    case ThetaGeneration::bayes_excluding: return "bayes_excluding";
    case ThetaGeneration::bayes_all_members: return "bayes_all_members";
    case ThetaGeneration::empirical: return "empirical";
  }
  return "?";
}

inline std::string_view to_string(UpdateKind u) { return u == UpdateKind::optimal_sqrt ? "optimal_sqrt" : "stochastic"; }

struct GaussianProcedure {
  ThetaGeneration theta = ThetaGeneration::bayes_excluding;
  UpdateKind update = UpdateKind::optimal_sqrt;

  std::string name() const { return std::string(to_string(theta)) + "-" + std::string(to_string(update)); }
  bool operator==(const GaussianProcedure&) const = default;
};

inline std::vector<GaussianProcedure> all_gaussian_procedures() {
  std::vector<GaussianProcedure> out;
  for (auto g : {ThetaGeneration::bayes_excluding, ThetaGeneration::bayes_all_members, ThetaGeneration::empirical}) {
    for (auto u : {UpdateKind::optimal_sqrt, UpdateKind::stochastic}) out.push_back({g, u});
  }
  return out;
}

struct GaussianExperimentConfig {
  int n = 100;
  int T = 11;
  int M = 19;
  ForwardKind forward_kind = ForwardKind::linear;
  ThetaGeneration theta_generation = ThetaGeneration::bayes_excluding;
  UpdateKind update_kind = UpdateKind::optimal_sqrt;
  int replicates = 1000;
  std::uint64_t seed = 1;
  double kappa = 10.0;
  double nu_offset = 1.1;
  double obs_var = 20.0;
  int gibbs_iters = 100;
  /// Rank statistics drawn from each replicate's final prediction ensemble.
  int z_draws = 1;
  /// When false every replicate reuses the observation noise of replicate 0.
  bool redraw_observations = true;
  /// Replicates whose full trajectories are kept in the result.
  int keep_replicates = 1;

  GaussianProcedure procedure() const { return {theta_generation, update_kind}; }
  NIWHyper hyper() const { return NIWHyper::vague(n, kappa, nu_offset); }
};

inline void validate(const GaussianExperimentConfig& c) {
  detail::require(c.n >= 1 && c.T >= 1, "GaussianExperimentConfig: n and T must be >= 1");
  detail::require(c.M >= 2, "GaussianExperimentConfig: M must be >= 2");
  detail::require(c.replicates >= 1, "GaussianExperimentConfig: replicates must be >= 1");
  detail::require(c.kappa > 0.0, "GaussianExperimentConfig: kappa must be positive");
  detail::require(c.nu_offset > -1.0, "GaussianExperimentConfig: nu_offset must exceed -1");
  detail::require(c.obs_var > 0.0, "GaussianExperimentConfig: obs_var must be positive");
  detail::require(c.gibbs_iters >= 1, "GaussianExperimentConfig: gibbs_iters must be >= 1");
  detail::require(c.z_draws >= 1, "GaussianExperimentConfig: z_draws must be >= 1");
  detail::require(c.keep_replicates >= 0, "GaussianExperimentConfig: keep_replicates must be >= 0");
}

/// One replicate. Index t - 1 holds time t.
struct GaussianReplicate {
  std::vector<VectorXd> truth;
  std::vector<VectorXd> observations;
  /// Forecast ensembles (n x M) at t = 1..T.
  std::vector<MatrixXd> predictions;
  /// Updated ensembles at t = 1..T-1.
  std::vector<MatrixXd> filtered;
  std::vector<int> z;
};

struct GaussianRunResult {
  GaussianExperimentConfig config;
  /// z[r] holds the rank draws of replicate r.
  std::vector<std::vector<int>> z;
  std::vector<long> histogram;
  double chi_square = 0.0;
  /// Full trajectories of the first keep_replicates replicates.
  std::vector<GaussianReplicate> kept;

  std::vector<int> all_z() const {
    std::vector<int> out;
    for (const auto& r : z) out.insert(out.end(), r.begin(), r.end());
    return out;
  }
  /// Share of rank draws equal to 0 or M.
  double extreme_fraction() const {
    const double total = static_cast<double>(std::accumulate(histogram.begin(), histogram.end(), 0L));
    return static_cast<double>(histogram.front() + histogram.back()) / total;
  }
};

/// Truth and observations of one replicate; shared by every procedure.
inline void gaussian_truth(const GaussianExperimentConfig& c, std::uint64_t replicate, const SpdMatrix& init_cov,
                           std::vector<VectorXd>& truth, std::vector<VectorXd>& obs) {
  RngStream init(c.seed, make_stream_id(replicate, 1, 0, purpose::truth_init));
  truth.assign(1, gen_initial_state(init_cov, init));
  for (int t = 2; t <= c.T; ++t) truth.push_back(forward(c.forward_kind, truth.back(), t));
  obs.clear();
  const std::uint64_t obs_rep = c.redraw_observations ? replicate : 0;
  for (int t = 1; t <= c.T; ++t) {
    RngStream rng(c.seed, make_stream_id(obs_rep, static_cast<std::uint64_t>(t), 0, purpose::observation));
    obs.push_back(simulate_observations(truth[static_cast<std::size_t>(t - 1)], c.obs_var, rng));
  }
}

/// Updates every member of `ens` with observation y at time t.
inline MatrixXd gaussian_update_step(const GaussianExperimentConfig& c, const NIWHyper& hyper,
                                     const LikelihoodSpec& lik, const MahalanobisSpec& metric, const Ensemble& ens,
                                     const VectorXd& y, std::uint64_t replicate) {
  const Eigen::Index m = ens.size();
  const auto t = static_cast<std::uint64_t>(ens.time_index);
  MatrixXd out(ens.dim(), m);
  std::optional<GaussianParams> shared;
  if (c.theta_generation == ThetaGeneration::empirical) shared = empirical_estimate(ens);
  for (Eigen::Index i = 0; i < m; ++i) {
    RngStream theta_rng(c.seed, make_stream_id(replicate, t, static_cast<std::uint64_t>(i), purpose::theta));
    RngStream noise_rng(c.seed, make_stream_id(replicate, t, static_cast<std::uint64_t>(i), purpose::update_noise));
    GaussianParams theta;
    switch (c.theta_generation) {
      case ThetaGeneration::bayes_excluding:
        theta = gibbs_theta_excluding(hyper, ens, i, lik, y, c.gibbs_iters, theta_rng);
        break;
      case ThetaGeneration::bayes_all_members:
        theta = sample_theta_all_members(hyper, ens, theta_rng);
        break;
      case ThetaGeneration::empirical:
        theta = *shared;
        break;
    }
    const VectorXd x = ens.members.col(i);
    if (c.update_kind == UpdateKind::stochastic) {
      out.col(i) = stochastic_update(x, y, kalman_gain(theta, lik), lik, noise_rng);
    } else {
      out.col(i) = apply_update_map(optimal_sqrt_map(theta, lik, y, metric), x, noise_rng);
    }
  }
  return out;
}

inline GaussianReplicate run_gaussian_replicate(const GaussianExperimentConfig& c, std::uint64_t replicate,
                                                bool keep_trajectory = true) {
  validate(c);
  const SpdMatrix init_cov(initial_state_covariance(c.n));
  const NIWHyper hyper = c.hyper();
  const LikelihoodSpec lik = LikelihoodSpec::identity(c.n, c.obs_var);
  const MahalanobisSpec metric = MahalanobisSpec::euclidean(c.n);

  GaussianReplicate rep;
  gaussian_truth(c, replicate, init_cov, rep.truth, rep.observations);

  Ensemble ens{MatrixXd(c.n, c.M), 1};
  for (int i = 0; i < c.M; ++i) {
    RngStream rng(c.seed, make_stream_id(replicate, 1, static_cast<std::uint64_t>(i), purpose::initial_ensemble));
    ens.members.col(i) = gen_initial_state(init_cov, rng);
  }
  for (int t = 1; t < c.T; ++t) {
    ens.time_index = t;
    if (keep_trajectory) rep.predictions.push_back(ens.members);
    MatrixXd updated = gaussian_update_step(c, hyper, lik, metric, ens, rep.observations[static_cast<std::size_t>(t - 1)],
                                            replicate);
    if (keep_trajectory) rep.filtered.push_back(updated);
    for (int i = 0; i < c.M; ++i) ens.members.col(i) = forward(c.forward_kind, updated.col(i), t + 1);
  }
  ens.time_index = c.T;
  rep.predictions.push_back(ens.members);
  if (!keep_trajectory) rep.predictions.erase(rep.predictions.begin(), rep.predictions.end() - 1);

  RngStream z_rng(c.seed, make_stream_id(replicate, static_cast<std::uint64_t>(c.T), 0, purpose::rank_site));
  for (int k = 0; k < c.z_draws; ++k) rep.z.push_back(rank_statistic(ens.members, rep.truth.back(), z_rng));
  if (!keep_trajectory) {
    rep.truth.clear();
    rep.observations.clear();
    rep.predictions.clear();
  }
  return rep;
}

inline GaussianRunResult run_gaussian_experiment(const GaussianExperimentConfig& c, unsigned threads = 1) {
  validate(c);
  GaussianRunResult result;
  result.config = c;
  result.z.resize(static_cast<std::size_t>(c.replicates));
  const int kept = std::min(c.keep_replicates, c.replicates);
  result.kept.resize(static_cast<std::size_t>(kept));
  parallel_for(static_cast<std::size_t>(c.replicates), threads, [&](std::size_t r) {
    const bool keep = static_cast<int>(r) < kept;
    GaussianReplicate rep = run_gaussian_replicate(c, r, keep);
    result.z[r] = rep.z;
    if (keep) result.kept[r] = std::move(rep);
  });
  result.histogram = rank_histogram(result.all_z(), c.M);
  result.chi_square = chi_square_uniformity(result.histogram);
  return result;
}

// ---------------------------------------------------------------------------
// Binary chain study

enum class HmmMethod { bayesian, non_bayesian };

inline std::string_view to_string(HmmMethod m) { return m == HmmMethod::bayesian ? "bayesian" : "non_bayesian"; }

struct HmmExperimentConfig {
  int n = 400;
  int T = 100;
  int M = 20;
  double sigma2 = 4.0;
  double alpha = 2.0;
  int gibbs_iters = 100;
  HmmMethod method = HmmMethod::bayesian;
  std::uint64_t seed = 1;
  /// Filter run index; runs share truth and observations.
  int run = 0;
  BinaryProcessParams process;
  PolicyOptions policy;
  int tuple_width = 4;
};

inline void validate(const HmmExperimentConfig& c) {
  detail::require(c.n >= 2 && c.T >= 1, "HmmExperimentConfig: need n >= 2 and T >= 1");
  detail::require(c.M >= 2, "HmmExperimentConfig: M must be >= 2");
  detail::require(c.sigma2 > 0.0, "HmmExperimentConfig: sigma2 must be positive");
  detail::require(c.alpha > 0.0, "HmmExperimentConfig: alpha must be positive");
  detail::require(c.gibbs_iters >= 1, "HmmExperimentConfig: gibbs_iters must be >= 1");
  detail::require(c.run >= 0, "HmmExperimentConfig: run must be >= 0");
  detail::require(c.tuple_width >= 1 && c.tuple_width <= c.n, "HmmExperimentConfig: bad tuple_width");
  validate(c.process);
}

struct HmmRunResult {
  HmmExperimentConfig config;
  std::vector<StateVector> truth;
  /// T x n observation matrix.
  MatrixXd observations;
  /// T x n ensemble means of the updated members.
  MatrixXd phat;
  /// Unalikeability of the updated ensemble at t = 1..T.
  VectorXd ubar;
  /// Updated ensemble at the final time.
  std::vector<StateVector> final_ensemble;
  /// Sites resolved by fallback rows or on a grid, summed over members and times.
  long fallback_sites = 0;
  long grid_sites = 0;
};

inline MatrixXd hmm_observations(const HmmExperimentConfig& c, const std::vector<StateVector>& truth) {
  MatrixXd y(c.T, c.n);
  for (int t = 1; t <= c.T; ++t) {
    RngStream rng(c.seed, make_stream_id(0, static_cast<std::uint64_t>(t), 0, purpose::observation));
    const StateVector& x = truth[static_cast<std::size_t>(t - 1)];
    VectorXd xv(c.n);
    for (int j = 0; j < c.n; ++j) xv[j] = x[static_cast<std::size_t>(j)];
    y.row(t - 1) = simulate_observations(xv, c.sigma2, rng).transpose();
  }
  return y;
}

inline HmmRunResult run_hmm_experiment(const HmmExperimentConfig& c, unsigned threads = 1) {
  validate(c);
  HmmRunResult res;
  res.config = c;
  res.truth = binary_truth_process(c.n, c.T, c.process, c.seed, 0);
  res.observations = hmm_observations(c, res.truth);
  res.phat = MatrixXd::Zero(c.T, c.n);
  res.ubar = VectorXd::Zero(c.T);

  const std::uint64_t rep = static_cast<std::uint64_t>(c.run) + 1;
  const DirichletHyper hyper = DirichletHyper::constant(c.n, 2, c.alpha);
  const auto members = static_cast<std::size_t>(c.M);

  std::vector<StateVector> ens(members);
  for (std::size_t i = 0; i < members; ++i) {
    RngStream rng(c.seed, make_stream_id(rep, 1, i, purpose::initial_ensemble));
    ens[i] = binary_initial_state(c.n, c.process, rng);
  }

  std::vector<StateVector> updated(members);
  std::vector<long> fallback(members, 0);
  std::vector<long> grid(members, 0);
  for (int t = 1; t <= c.T; ++t) {
    const auto ut = static_cast<std::uint64_t>(t);
    const SiteLikelihood lik = SiteLikelihood::gaussian(res.observations.row(t - 1).transpose(), c.sigma2, 2);
    if (c.method == HmmMethod::non_bayesian) {
      const MarkovChainParams theta = estimate_theta_hmm(hyper, ens);
      const TransitionPolicy policy = optimal_policy(theta, forward_backward(theta, lik), c.policy);
      res.fallback_sites += static_cast<long>(policy.fallback_sites.size());
      res.grid_sites += static_cast<long>(policy.grid_sites.size());
      for (std::size_t i = 0; i < members; ++i) {
        RngStream rng(c.seed, make_stream_id(rep, ut, i, purpose::update_noise));
        updated[i] = apply_policy(policy, ens[i], rng);
      }
    } else {
      parallel_for(members, threads, [&](std::size_t i) {
        RngStream theta_rng(c.seed, make_stream_id(rep, ut, i, purpose::theta));
        RngStream rng(c.seed, make_stream_id(rep, ut, i, purpose::update_noise));
        const MarkovChainParams theta = gibbs_theta_hmm(hyper, ens, i, lik, c.gibbs_iters, theta_rng);
        const TransitionPolicy policy = optimal_policy(theta, forward_backward(theta, lik), c.policy);
        fallback[i] += static_cast<long>(policy.fallback_sites.size());
        grid[i] += static_cast<long>(policy.grid_sites.size());
        updated[i] = apply_policy(policy, ens[i], rng);
      });
    }
    for (const StateVector& x : updated) {
      for (int j = 0; j < c.n; ++j) res.phat(t - 1, j) += x[static_cast<std::size_t>(j)];
    }
    res.phat.row(t - 1) /= static_cast<double>(c.M);
    res.ubar[t - 1] = unalikeability(updated, c.tuple_width);
    if (t < c.T) {
      for (std::size_t i = 0; i < members; ++i) {
        RngStream rng(c.seed, make_stream_id(rep, ut + 1, i, purpose::forecast));
        ens[i] = binary_step(updated[i], c.process, rng);
      }
    }
  }
  for (std::size_t i = 0; i < members; ++i) {
    res.fallback_sites += fallback[i];
    res.grid_sites += grid[i];
  }
  res.final_ensemble = updated;
  return res;
}

/// Sample Pearson correlation.
inline double pearson_correlation(const VectorXd& a, const VectorXd& b) {
  detail::require(a.size() == b.size() && a.size() >= 2, "pearson_correlation: size mismatch");
  const VectorXd da = a.array() - a.mean();
  const VectorXd db = b.array() - b.mean();
  const double den = std::sqrt(da.squaredNorm() * db.squaredNorm());
  detail::require(den > 0.0, "pearson_correlation: zero variance");
  return da.dot(db) / den;
}

}  // namespace bayesupdate
