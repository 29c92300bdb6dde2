#pragma once

// INI-style run configuration: [gaussian], [hmm] and [process] sections of
// `key = value` lines. Parsing goes through boost::property_tree; value and
// key errors are reported with the line they came from.

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bayesupdate/experiments.hpp"

namespace bayesupdate::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GaussianStudy {
  GaussianExperimentConfig base;
  std::vector<ForwardKind> forwards{ForwardKind::linear};
  std::vector<GaussianProcedure> procedures = all_gaussian_procedures();
};

struct HmmStudy {
  HmmExperimentConfig base;
  std::vector<HmmMethod> methods{HmmMethod::bayesian, HmmMethod::non_bayesian};
  int runs = 1;
  /// Time (1-based) at which the methods' marginal estimates are compared.
  int compare_time = 50;
};

struct RunConfig {
  std::optional<GaussianStudy> gaussian;
  std::optional<HmmStudy> hmm;
};

namespace detail {

// 1-based line of `key` inside `[section]`, or 0 when absent.
inline int locate(const std::string& text, const std::string& section, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  std::string current;
  for (int no = 1; std::getline(in, line); ++no) {
    boost::trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      current = boost::trim_copy(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq != std::string::npos && current == section && boost::trim_copy(line.substr(0, eq)) == key) return no;
  }
  return 0;
}

class Section {
 public:
  Section(const std::string& text, std::string name, const boost::property_tree::ptree& tree)
      : text_(text), name_(std::move(name)), tree_(tree) {}

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto child = tree_.get_child_optional(key);
    if (!child) return;
    const std::string raw = boost::trim_copy(child->data());
    try {
      if constexpr (std::is_same_v<T, bool>) {
        const std::string v = boost::to_lower_copy(raw);
        if (v == "true" || v == "1" || v == "yes") {
          out = true;
        } else if (v == "false" || v == "0" || v == "no") {
          out = false;
        } else {
          throw boost::bad_lexical_cast();
        }
      } else {
        out = boost::lexical_cast<T>(raw);
      }
    } catch (const boost::bad_lexical_cast&) {
      fail(key, "cannot parse value '" + raw + "'");
    }
  }

  std::vector<std::string> list(const std::string& key) {
    seen_.insert(key);
    std::vector<std::string> items;
    const auto child = tree_.get_child_optional(key);
    if (!child) return items;
    boost::split(items, child->data(), boost::is_any_of(","));
    for (auto& s : items) boost::trim(s);
    std::erase_if(items, [](const std::string& s) { return s.empty(); });
    if (items.empty()) fail(key, "empty list");
    return items;
  }

  bool has(const std::string& key) const { return static_cast<bool>(tree_.get_child_optional(key)); }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("line " + std::to_string(locate(text_, name_, key)) + ": [" + name_ + "] " + key + ": " +
                      what);
  }

  void reject_unknown() const {
    for (const auto& [key, value] : tree_) {
      if (!seen_.contains(key)) fail(key, "unknown key");
    }
  }

 private:
  const std::string& text_;
  std::string name_;
  const boost::property_tree::ptree& tree_;
  std::set<std::string> seen_;
};

inline ForwardKind parse_forward(Section& s, const std::string& key, const std::string& v) {
  if (v == "linear") return ForwardKind::linear;
  if (v == "nonlinear") return ForwardKind::nonlinear;
  s.fail(key, "expected linear or nonlinear, got '" + v + "'");
}

inline GaussianProcedure parse_procedure(Section& s, const std::string& key, const std::string& v) {
  for (const GaussianProcedure& p : all_gaussian_procedures()) {
    if (p.name() == v) return p;
  }
  s.fail(key, "unknown procedure '" + v + "'");
}

inline HmmMethod parse_method(Section& s, const std::string& key, const std::string& v) {
  if (v == "bayesian") return HmmMethod::bayesian;
  if (v == "non_bayesian") return HmmMethod::non_bayesian;
  s.fail(key, "expected bayesian or non_bayesian, got '" + v + "'");
}

inline void check(Section& s, const std::string& key, bool ok, const char* what) {
  if (!ok) s.fail(key, what);
}

}  // namespace detail

/// Parses configuration text. Throws ConfigError with a line number on any
/// malformed line, unknown section or key, or out-of-range value.
inline RunConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
  }

  RunConfig cfg;
  for (const auto& [name, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("line " + std::to_string(detail::locate(text, "", name)) + ": key '" + name +
                        "' outside any section");
    }
    if (name != "gaussian" && name != "hmm" && name != "process") {
      throw ConfigError("unknown section [" + name + "]");
    }
  }

  if (const auto g = tree.get_child_optional("gaussian")) {
    detail::Section s(text, "gaussian", *g);
    GaussianStudy study;
    auto& c = study.base;
    s.get("n", c.n);
    s.get("T", c.T);
    s.get("M", c.M);
    s.get("replicates", c.replicates);
    s.get("seed", c.seed);
    s.get("kappa", c.kappa);
    s.get("nu_offset", c.nu_offset);
    s.get("obs_var", c.obs_var);
    s.get("gibbs_iters", c.gibbs_iters);
    s.get("z_draws", c.z_draws);
    s.get("redraw_observations", c.redraw_observations);
    s.get("keep_replicates", c.keep_replicates);
    if (s.has("forward")) {
      study.forwards.clear();
      for (const auto& v : s.list("forward")) study.forwards.push_back(detail::parse_forward(s, "forward", v));
    }
    if (s.has("procedures")) {
      const auto items = s.list("procedures");
      if (!(items.size() == 1 && items[0] == "all")) {
        study.procedures.clear();
        for (const auto& v : items) study.procedures.push_back(detail::parse_procedure(s, "procedures", v));
      }
    }
    s.reject_unknown();
    detail::check(s, "n", c.n >= 1, "must be >= 1");
    detail::check(s, "T", c.T >= 1, "must be >= 1");
    detail::check(s, "M", c.M >= 2, "must be >= 2");
    detail::check(s, "replicates", c.replicates >= 1, "must be >= 1");
    detail::check(s, "kappa", c.kappa > 0.0, "must be positive");
    detail::check(s, "nu_offset", c.nu_offset > -1.0, "must exceed -1");
    detail::check(s, "obs_var", c.obs_var > 0.0, "must be positive");
    detail::check(s, "gibbs_iters", c.gibbs_iters >= 1, "must be >= 1");
    detail::check(s, "z_draws", c.z_draws >= 1, "must be >= 1");
    detail::check(s, "keep_replicates", c.keep_replicates >= 0, "must be >= 0");
    cfg.gaussian = std::move(study);
  }

  if (const auto h = tree.get_child_optional("hmm")) {
    detail::Section s(text, "hmm", *h);
    HmmStudy study;
    auto& c = study.base;
    s.get("n", c.n);
    s.get("T", c.T);
    s.get("M", c.M);
    s.get("sigma2", c.sigma2);
    s.get("alpha", c.alpha);
    s.get("gibbs_iters", c.gibbs_iters);
    s.get("seed", c.seed);
    s.get("runs", study.runs);
    s.get("compare_time", study.compare_time);
    s.get("tuple_width", c.tuple_width);
    if (s.has("methods")) {
      study.methods.clear();
      for (const auto& v : s.list("methods")) study.methods.push_back(detail::parse_method(s, "methods", v));
    }
    s.reject_unknown();
    detail::check(s, "n", c.n >= 2, "must be >= 2");
    detail::check(s, "T", c.T >= 1, "must be >= 1");
    detail::check(s, "M", c.M >= 2, "must be >= 2");
    detail::check(s, "sigma2", c.sigma2 > 0.0, "must be positive");
    detail::check(s, "alpha", c.alpha > 0.0, "must be positive");
    detail::check(s, "gibbs_iters", c.gibbs_iters >= 1, "must be >= 1");
    detail::check(s, "runs", study.runs >= 1, "must be >= 1");
    detail::check(s, "compare_time", study.compare_time >= 1 && study.compare_time <= c.T, "must lie in 1..T");
    detail::check(s, "tuple_width", c.tuple_width >= 1 && c.tuple_width <= c.n, "must lie in 1..n");
    if (const auto p = tree.get_child_optional("process")) {
      detail::Section ps(text, "process", *p);
      auto& bp = c.process;
      ps.get("min_segment", bp.min_segment);
      ps.get("max_segment", bp.max_segment);
      ps.get("extend_probability", bp.extend_probability);
      ps.get("seed_probability", bp.seed_probability);
      ps.reject_unknown();
      detail::check(ps, "min_segment", bp.min_segment >= 1, "must be >= 1");
      detail::check(ps, "max_segment", bp.max_segment >= bp.min_segment, "must be >= min_segment");
      detail::check(ps, "extend_probability", bp.extend_probability >= 0.0 && bp.extend_probability <= 1.0,
                    "must lie in [0, 1]");
      detail::check(ps, "seed_probability", bp.seed_probability >= 0.0 && bp.seed_probability <= 1.0,
                    "must lie in [0, 1]");
    }
    cfg.hmm = std::move(study);
  } else if (tree.get_child_optional("process")) {
    throw ConfigError("[process] requires an [hmm] section");
  }

  if (!cfg.gaussian && !cfg.hmm) throw ConfigError("configuration has neither a [gaussian] nor an [hmm] section");
  return cfg;
}

inline void override_seed(RunConfig& cfg, std::uint64_t seed) {
  if (cfg.gaussian) cfg.gaussian->base.seed = seed;
  if (cfg.hmm) cfg.hmm->base.seed = seed;
}

// Built-in configurations.
inline const std::map<std::string, std::string>& presets() {
  static const std::map<std::string, std::string> table = {
      {"paper-gaussian-m19",
       "[gaussian]\nn = 100\nT = 11\nM = 19\nforward = linear, nonlinear\nprocedures = all\nreplicates = 1000\n"
       "kappa = 10\nnu_offset = 1.1\nobs_var = 20\ngibbs_iters = 100\nz_draws = 1\n"},
      {"paper-gaussian-m199",
       "[gaussian]\nn = 100\nT = 11\nM = 199\nforward = linear, nonlinear\nprocedures = all\nreplicates = 1000\n"
       "kappa = 10\nnu_offset = 1.1\nobs_var = 20\ngibbs_iters = 100\nz_draws = 1\n"},
      {"paper-hmm",
       "[hmm]\nn = 400\nT = 100\nM = 20\nsigma2 = 4\nalpha = 2\ngibbs_iters = 100\n"
       "methods = bayesian, non_bayesian\nruns = 5\ncompare_time = 50\n"},
      {"desk-gaussian-m19",
       "[gaussian]\nn = 40\nT = 11\nM = 19\nforward = linear, nonlinear\nprocedures = all\nreplicates = 200\n"
       "kappa = 10\nnu_offset = 1.1\nobs_var = 20\ngibbs_iters = 10\nz_draws = 20\n"},
      {"desk-gaussian-m199",
       "[gaussian]\nn = 40\nT = 11\nM = 199\nforward = linear\nprocedures = all\nreplicates = 40\n"
       "kappa = 10\nnu_offset = 1.1\nobs_var = 20\ngibbs_iters = 10\nz_draws = 100\n"},
      {"desk-hmm",
       "[hmm]\nn = 100\nT = 30\nM = 20\nsigma2 = 4\nalpha = 2\ngibbs_iters = 50\n"
       "methods = bayesian, non_bayesian\nruns = 1\ncompare_time = 20\n"},
  };
  return table;
}

}  // namespace bayesupdate::cli
