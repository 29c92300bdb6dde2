#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bayesupdate/bayesupdate.hpp"
#include "config.hpp"
#include "report.hpp"

#ifndef BAYESUPDATE_VERSION
#define BAYESUPDATE_VERSION "unknown"
#endif

namespace bayesupdate::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitMissingConfig = 2;
inline constexpr int kExitBadConfig = 3;

struct RunOptions {
  std::string config_path;
  std::string manifest_path;
  std::string preset;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Files produced by one run. Written paths are removed again unless the run
/// is committed.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;
  ~OutputSet() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(dir_ / f, ec);
    fs::remove(dir_ / "manifest.json", ec);
  }

  std::string add(const std::string& name) {
    files_.push_back(name);
    return (dir_ / name).string();
  }
  const std::vector<std::string>& files() const noexcept { return files_; }
  const fs::path& dir() const noexcept { return dir_; }
  void commit() noexcept { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
  bool committed_ = false;
};

struct ResolvedConfig {
  std::string text;
  std::string source;
  std::optional<std::uint64_t> seed;
};

class MissingConfig : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingConfig("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Chooses the configuration text from --manifest, --preset or --config.
inline ResolvedConfig resolve_config(const RunOptions& o) {
  const int given = !o.config_path.empty() + !o.manifest_path.empty() + !o.preset.empty();
  if (given != 1) throw ConfigError("exactly one of --config, --preset, --manifest is required");
  ResolvedConfig r;
  if (!o.preset.empty()) {
    const auto it = presets().find(o.preset);
    if (it == presets().end()) throw ConfigError("unknown preset '" + o.preset + "'");
    r.text = it->second;
    r.source = "preset:" + o.preset;
  } else if (!o.config_path.empty()) {
    r.text = read_file(o.config_path);
    r.source = o.config_path;
  } else {
    const std::string raw = read_file(o.manifest_path);
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(raw);
      r.text = m.at("config").get<std::string>();
      r.seed = m.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(o.manifest_path + ": not a run manifest (" + e.what() + ")");
    }
    r.source = o.manifest_path;
  }
  if (o.seed) r.seed = o.seed;
  return r;
}

inline void write_manifest(const OutputSet& outputs, const std::string& command, const ResolvedConfig& rc,
                           std::uint64_t seed, const std::string& started, const std::string& finished) {
  nlohmann::json m;
  m["command"] = command;
  m["config"] = rc.text;
  m["config_source"] = rc.source;
  m["seed"] = seed;
  m["version"] = BAYESUPDATE_VERSION;
  m["started"] = started;
  m["finished"] = finished.empty() ? nlohmann::json(nullptr) : nlohmann::json(finished);
  m["outputs"] = outputs.files();
  std::ofstream out(outputs.dir() / "manifest.json", std::ios::binary);
  out << m.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write manifest");
}

// ---------------------------------------------------------------------------
// Gaussian study outputs

inline void write_ensemble_csv(const std::string& path, const MatrixXd& ens) {
  CsvWriter w(path, numbered_header("member", "x", ens.rows()));
  for (Eigen::Index i = 0; i < ens.cols(); ++i) {
    const VectorXd col = ens.col(i);
    w.row_with(static_cast<long>(i + 1), std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
  }
  w.close();
}

inline void write_series_csv(const std::string& path, const std::vector<VectorXd>& rows) {
  CsvWriter w(path, numbered_header("t", "x", rows.empty() ? 0 : rows.front().size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    w.row_with(static_cast<long>(t + 1), std::span<const double>(rows[t].data(), static_cast<std::size_t>(rows[t].size())));
  }
  w.close();
}

inline void run_gaussian_study(const GaussianStudy& study, unsigned threads, OutputSet& outputs, std::ostream& log) {
  CsvWriter summary(outputs.add("gaussian_summary.csv"),
                    {"forward", "procedure", "M", "draws", "chi_square", "extreme_fraction"});
  for (ForwardKind fk : study.forwards) {
    const std::string fname(to_string(fk));
    for (const GaussianProcedure& proc : study.procedures) {
      GaussianExperimentConfig c = study.base;
      c.forward_kind = fk;
      c.theta_generation = proc.theta;
      c.update_kind = proc.update;
      const auto t0 = std::chrono::steady_clock::now();
      const GaussianRunResult res = run_gaussian_experiment(c, threads);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const std::string stem = "gaussian_" + fname + "_" + proc.name();

      CsvWriter z(outputs.add(stem + "_z.csv"), {"replicate", "draw", "z"});
      for (std::size_t r = 0; r < res.z.size(); ++r) {
        for (std::size_t k = 0; k < res.z[r].size(); ++k) z.row(static_cast<long>(r), static_cast<long>(k), res.z[r][k]);
      }
      z.close();
      CsvWriter h(outputs.add(stem + "_hist.csv"), {"z", "count"});
      for (std::size_t k = 0; k < res.histogram.size(); ++k) h.row(static_cast<long>(k), res.histogram[k]);
      h.close();
      histogram_svg(outputs.add(stem + "_hist.svg"), res.histogram, fname + " " + proc.name() + ", M = " + std::to_string(c.M));

      for (std::size_t r = 0; r < res.kept.size(); ++r) {
        const GaussianReplicate& rep = res.kept[r];
        const std::string rs = "_r" + std::to_string(r);
        for (std::size_t t = 0; t < rep.predictions.size(); ++t) {
          write_ensemble_csv(outputs.add(stem + rs + "_pred_t" + std::to_string(t + 1) + ".csv"), rep.predictions[t]);
        }
      }
      summary.row(fname, proc.name(), static_cast<long>(c.M), static_cast<long>(res.histogram.size() ? c.replicates * c.z_draws : 0),
                  res.chi_square, res.extreme_fraction());
      log << fname << ' ' << proc.name() << ": chi_square=" << format_number(res.chi_square)
          << " extreme_fraction=" << format_number(res.extreme_fraction()) << " (" << coord(secs) << " s)\n";
    }
    // Truth and observations do not depend on the procedure.
    GaussianExperimentConfig c = study.base;
    c.forward_kind = fk;
    const SpdMatrix init_cov(initial_state_covariance(c.n));
    for (int r = 0; r < std::min(c.keep_replicates, c.replicates); ++r) {
      std::vector<VectorXd> truth, obs;
      gaussian_truth(c, static_cast<std::uint64_t>(r), init_cov, truth, obs);
      const std::string rs = "_r" + std::to_string(r);
      write_series_csv(outputs.add("gaussian_" + fname + rs + "_truth.csv"), truth);
      write_series_csv(outputs.add("gaussian_" + fname + rs + "_observations.csv"), obs);
    }
  }
  summary.close();
}

// ---------------------------------------------------------------------------
// Binary chain study outputs

inline void write_matrix_csv(const std::string& path, const MatrixXd& m, const std::string& prefix) {
  CsvWriter w(path, numbered_header("t", prefix, m.cols()));
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    const VectorXd row = m.row(t).transpose();
    w.row_with(static_cast<long>(t + 1), std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
  }
  w.close();
}

inline void run_hmm_study(const HmmStudy& study, unsigned threads, OutputSet& outputs, std::ostream& log) {
  const HmmExperimentConfig& base = study.base;
  std::vector<HmmRunResult> results;
  std::vector<std::string> labels;
  for (int run = 0; run < study.runs; ++run) {
    for (HmmMethod method : study.methods) {
      HmmExperimentConfig c = base;
      c.method = method;
      c.run = run;
      const auto t0 = std::chrono::steady_clock::now();
      results.push_back(run_hmm_experiment(c, threads));
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const HmmRunResult& res = results.back();
      const std::string stem = "hmm_" + std::string(to_string(method)) + "_r" + std::to_string(run);
      labels.push_back(std::string(to_string(method)) + " run " + std::to_string(run));
      write_matrix_csv(outputs.add(stem + "_phat.csv"), res.phat, "p");
      CsvWriter u(outputs.add(stem + "_ubar.csv"), {"t", "ubar"});
      for (Eigen::Index t = 0; t < res.ubar.size(); ++t) u.row(static_cast<long>(t + 1), res.ubar[t]);
      u.close();
      heatmap_svg(outputs.add(stem + "_phat.svg"), res.phat,
                  "P(water) estimate, " + std::string(to_string(method)) + " run " + std::to_string(run), "site",
                  "time");
      log << stem << ": mean ubar=" << format_number(res.ubar.mean()) << " fallback_sites=" << res.fallback_sites
          << " grid_sites=" << res.grid_sites << " (" << coord(secs) << " s)\n";
    }
  }

  const HmmRunResult& first = results.front();
  MatrixXd truth(base.T, base.n);
  for (int t = 0; t < base.T; ++t) {
    for (int j = 0; j < base.n; ++j) truth(t, j) = first.truth[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
  }
  write_matrix_csv(outputs.add("hmm_truth.csv"), truth, "x");
  write_matrix_csv(outputs.add("hmm_observations.csv"), first.observations, "y");
  heatmap_svg(outputs.add("hmm_truth.svg"), truth, "true state", "site", "time");

  static const char* colours[] = {"black", "firebrick", "steelblue", "darkgreen", "darkorange", "purple"};
  std::vector<Series> curves;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const VectorXd& u = results[i].ubar;
    curves.push_back({labels[i], std::vector<double>(u.data(), u.data() + u.size()), colours[i % 6]});
  }
  line_plot_svg(outputs.add("hmm_cu.svg"), curves, "coefficient of unalikeability", "time");

  CsvWriter summary(outputs.add("hmm_summary.csv"),
                    {"method", "run", "mean_ubar", "fallback_sites", "grid_sites"});
  for (std::size_t i = 0; i < results.size(); ++i) {
    summary.row(std::string(to_string(results[i].config.method)), static_cast<long>(results[i].config.run),
                results[i].ubar.mean(), results[i].fallback_sites, results[i].grid_sites);
  }
  summary.close();

  // Per-method means over runs, the min/mean/max band at compare_time, and
  // method comparisons on single runs and on run means.
  const std::size_t per_run = study.methods.size();
  const int tc = study.compare_time - 1;
  std::vector<MatrixXd> mean_phat(per_run, MatrixXd::Zero(base.T, base.n));
  std::vector<VectorXd> mean_ubar(per_run, VectorXd::Zero(base.T));
  for (std::size_t i = 0; i < results.size(); ++i) {
    mean_phat[i % per_run] += results[i].phat / study.runs;
    mean_ubar[i % per_run] += results[i].ubar / study.runs;
  }
  {
    std::vector<std::string> header{"site"};
    for (HmmMethod m : study.methods) {
      for (const char* stat : {"_mean", "_min", "_max"}) header.push_back(std::string(to_string(m)) + stat);
    }
    CsvWriter band(outputs.add("hmm_band_t" + std::to_string(study.compare_time) + ".csv"), header);
    std::vector<Series> lines;
    for (int j = 0; j < base.n; ++j) {
      std::vector<double> row;
      for (std::size_t k = 0; k < per_run; ++k) {
        double lo = 1.0, hi = 0.0;
        for (int run = 0; run < study.runs; ++run) {
          const double v = results[static_cast<std::size_t>(run) * per_run + k].phat(tc, j);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        row.insert(row.end(), {mean_phat[k](tc, j), lo, hi});
      }
      band.row_with(static_cast<long>(j + 1), std::span<const double>(row.data(), row.size()));
    }
    band.close();
    for (std::size_t k = 0; k < per_run; ++k) {
      const VectorXd m = mean_phat[k].row(tc).transpose();
      lines.push_back({std::string(to_string(study.methods[k])) + " mean", std::vector<double>(m.data(), m.data() + m.size()),
                       colours[(k + 1) % 6]});
    }
    line_plot_svg(outputs.add("hmm_band_t" + std::to_string(study.compare_time) + ".svg"), lines,
                  "mean P(water) estimate over runs, t = " + std::to_string(study.compare_time), "site");
  }

  if (per_run >= 2) {
    CsvWriter cmp(outputs.add("hmm_comparison.csv"),
                  {"run", "method_a", "method_b", "compare_time", "phat_correlation", "ubar_mean_abs_diff"});
    const auto compare = [&](const std::string& run_label, const MatrixXd& pa, const MatrixXd& pb, const VectorXd& ua,
                             const VectorXd& ub, HmmMethod ma, HmmMethod mb) {
      double corr = std::numeric_limits<double>::quiet_NaN();
      try {
        corr = pearson_correlation(pa.row(tc).transpose(), pb.row(tc).transpose());
      } catch (const std::invalid_argument&) {
      }
      const double mad = (ua - ub).cwiseAbs().mean();
      cmp.row(run_label, std::string(to_string(ma)), std::string(to_string(mb)), static_cast<long>(study.compare_time),
              corr, mad);
      log << "runs " << run_label << ' ' << to_string(ma) << " vs " << to_string(mb) << ": phat correlation at t="
          << study.compare_time << " is " << format_number(corr) << ", mean |ubar difference| is "
          << format_number(mad) << '\n';
    };
    for (int run = 0; run < study.runs; ++run) {
      const HmmRunResult& a = results[static_cast<std::size_t>(run) * per_run];
      for (std::size_t k = 1; k < per_run; ++k) {
        const HmmRunResult& b = results[static_cast<std::size_t>(run) * per_run + k];
        compare(std::to_string(run), a.phat, b.phat, a.ubar, b.ubar, a.config.method, b.config.method);
      }
    }
    if (study.runs > 1) {
      for (std::size_t k = 1; k < per_run; ++k) {
        compare("mean", mean_phat[0], mean_phat[k], mean_ubar[0], mean_ubar[k], study.methods[0], study.methods[k]);
      }
    }
    cmp.close();
  }
}

// ---------------------------------------------------------------------------

enum class Study { gaussian, hmm };

inline int cmd_run(Study which, const RunOptions& opts, std::ostream& log, std::ostream& err) {
  ResolvedConfig rc;
  RunConfig cfg;
  try {
    rc = resolve_config(opts);
    cfg = parse_config(rc.text);
  } catch (const MissingConfig& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingConfig;
  } catch (const ConfigError& e) {
    err << "error: " << (rc.source.empty() ? std::string("config") : rc.source) << ": " << e.what() << '\n';
    return kExitBadConfig;
  }
  if (rc.seed) override_seed(cfg, *rc.seed);
  if (which == Study::gaussian && !cfg.gaussian) {
    err << "error: " << rc.source << ": run-gaussian needs a [gaussian] section\n";
    return kExitBadConfig;
  }
  if (which == Study::hmm && !cfg.hmm) {
    err << "error: " << rc.source << ": run-hmm needs an [hmm] section\n";
    return kExitBadConfig;
  }
  const std::uint64_t seed = which == Study::gaussian ? cfg.gaussian->base.seed : cfg.hmm->base.seed;

  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) {
    err << "error: cannot create " << opts.out_dir << ": " << ec.message() << '\n';
    return kExitFailure;
  }
  OutputSet outputs{fs::path(opts.out_dir)};
  const std::string command = which == Study::gaussian ? "run-gaussian" : "run-hmm";
  try {
    const std::string started = utc_now();
    write_manifest(outputs, command, rc, seed, started, "");
    if (which == Study::gaussian) {
      run_gaussian_study(*cfg.gaussian, opts.threads, outputs, log);
    } else {
      run_hmm_study(*cfg.hmm, opts.threads, outputs, log);
    }
    write_manifest(outputs, command, rc, seed, started, utc_now());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << " (partial outputs removed)\n";
    return kExitFailure;
  }
  outputs.commit();
  log << "wrote " << outputs.files().size() << " files and manifest.json to " << opts.out_dir << '\n';
  return kExitOk;
}

}  // namespace bayesupdate::cli
