#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "guard/errors.hpp"
#include "guard/serialize.hpp"

namespace guard::harness {

// Config files are line oriented:
//
//   # comment
//   [section]
//   key = value
//
// Lists are whitespace separated. Every key has a default; unknown sections
// and keys are errors. serialize() writes every key in a fixed order, and
// parse(serialize(c)) == c holds exactly (doubles use 17 digits).

struct RunSpec {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::uint64_t seeds = 1;
  std::string output = "out";
  bool operator==(const RunSpec&) const = default;
};

struct ModelSpec {
  std::string family = "ngram";  // ngram | tabular | uniform | iid
  std::vector<std::string> vocab;
  std::uint64_t max_length = 8;
  std::uint64_t order = 2;
  std::string corpus;  // relative paths resolve against the config file
  double add_k = 0.0;
  std::vector<double> probs;          // iid family: one weight per token, EOS first
  std::vector<std::string> opening;   // forced opening tokens
  bool operator==(const ModelSpec&) const = default;
};

struct ConstraintSpec {
  std::string kind = "contains";  // contains | avoids | prefix | threshold | always
  std::vector<std::string> keyword;
  double threshold = 0.5;
  std::uint64_t window = 3;
  std::vector<std::string> positive;
  std::vector<std::string> negative;
  bool operator==(const ConstraintSpec&) const = default;
};

struct TrainerSpec {
  std::vector<std::string> methods{"sft", "dpg", "warm-dpg"};
  std::uint64_t budget = 200000;
  std::uint64_t cap_budget = 10000;
  double cap_bias = 5.5;
  std::uint64_t samples_per_step = 30;
  double learning_rate = 0.1;
  std::uint64_t policy_order = 0;  // 0 = tabular
  double checkpoint_fraction = 0.05;
  double max_logit_step = 1.0;
  double divergence_factor = 10.0;
  std::uint64_t fit_steps = 20000;
  double fit_learning_rate = 1.0;
  double fit_tolerance = 1e-4;
  bool operator==(const TrainerSpec&) const = default;
};

struct SamplerSpec {
  std::string method = "guard";  // guard | qrs | imh | enforce | avoid
  std::string proposal = "base";  // base | cap | gold | sft | dpg | warm-dpg | file:<path>
  std::uint64_t samples = 100;
  std::uint64_t max_draws = 10'000'000;
  double beta = 1.0;  // QRS beta as a multiple of the mean satisfying weight Z / Z'
  std::uint64_t imh_steps = 16;
  std::vector<double> qrs_grid{1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
  std::vector<double> imh_grid{1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
  bool operator==(const SamplerSpec&) const = default;
};

struct MetricsSpec {
  std::uint64_t bins = 10;
  std::vector<double> bleu_orders{2, 3, 4, 5};
  std::uint64_t self_bleu_k = 100;
  std::uint64_t estimator_samples = 5000;
  std::vector<std::string> avoid;  // token banned by the avoidance heuristic
  bool operator==(const MetricsSpec&) const = default;
};

struct ExperimentConfig {
  RunSpec run;
  ModelSpec model;
  ConstraintSpec constraint;
  TrainerSpec trainer;
  SamplerSpec sampler;
  MetricsSpec metrics;
  std::filesystem::path base_dir;  // directory of the config file; not serialized

  bool operator==(const ExperimentConfig& o) const {
    return run == o.run && model == o.model && constraint == o.constraint &&
           trainer == o.trainer && sampler == o.sampler && metrics == o.metrics;
  }

  std::filesystem::path corpus_path() const {
    std::filesystem::path p(model.corpus);
    return p.is_absolute() ? p : base_dir / p;
  }

  /// run.output, resolved against $GUARD_OUTPUT_ROOT when that is set.
  std::filesystem::path output_dir() const {
    std::filesystem::path p(run.output);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("GUARD_OUTPUT_ROOT"); root && *root)
      return std::filesystem::path(root) / p;
    return p;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + v[i];
  return s;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline std::uint64_t to_uint(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw std::invalid_argument("expected a nonnegative integer, got '" + v + "'");
  errno = 0;
  const auto x = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) throw std::invalid_argument("integer out of range: '" + v + "'");
  return x;
}

inline double to_double(const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    throw std::invalid_argument("expected a number, got '" + v + "'");
  }
}

// Members are reached through a section accessor and a field pointer.
template <class Sec, class T>
Field make_field(std::string s, std::string k, Sec ExperimentConfig::*sec, T Sec::*m) {
  Field f{s, k, nullptr, nullptr};
  if constexpr (std::is_same_v<T, std::string>) {
    f.set = [=](ExperimentConfig& c, const std::string& v) { (c.*sec).*m = v; };
    f.get = [=](const ExperimentConfig& c) { return (c.*sec).*m; };
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    f.set = [=](ExperimentConfig& c, const std::string& v) { (c.*sec).*m = to_uint(v); };
    f.get = [=](const ExperimentConfig& c) { return std::to_string((c.*sec).*m); };
  } else if constexpr (std::is_same_v<T, double>) {
    f.set = [=](ExperimentConfig& c, const std::string& v) { (c.*sec).*m = to_double(v); };
    f.get = [=](const ExperimentConfig& c) { return format_double((c.*sec).*m); };
  } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
    f.set = [=](ExperimentConfig& c, const std::string& v) { (c.*sec).*m = split_words(v); };
    f.get = [=](const ExperimentConfig& c) { return join((c.*sec).*m); };
  } else {
    static_assert(std::is_same_v<T, std::vector<double>>);
    f.set = [=](ExperimentConfig& c, const std::string& v) {
      std::vector<double> out;
      for (const auto& w : split_words(v)) out.push_back(to_double(w));
      (c.*sec).*m = std::move(out);
    };
    f.get = [=](const ExperimentConfig& c) {
      std::vector<std::string> w;
      for (double x : (c.*sec).*m) w.push_back(format_double(x));
      return join(w);
    };
  }
  return f;
}

inline const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> all = {
      make_field("run", "name", &C::run, &RunSpec::name),
      make_field("run", "seed", &C::run, &RunSpec::seed),
      make_field("run", "seeds", &C::run, &RunSpec::seeds),
      make_field("run", "output", &C::run, &RunSpec::output),
      make_field("model", "family", &C::model, &ModelSpec::family),
      make_field("model", "vocab", &C::model, &ModelSpec::vocab),
      make_field("model", "max_length", &C::model, &ModelSpec::max_length),
      make_field("model", "order", &C::model, &ModelSpec::order),
      make_field("model", "corpus", &C::model, &ModelSpec::corpus),
      make_field("model", "add_k", &C::model, &ModelSpec::add_k),
      make_field("model", "probs", &C::model, &ModelSpec::probs),
      make_field("model", "opening", &C::model, &ModelSpec::opening),
      make_field("constraint", "kind", &C::constraint, &ConstraintSpec::kind),
      make_field("constraint", "keyword", &C::constraint, &ConstraintSpec::keyword),
      make_field("constraint", "threshold", &C::constraint, &ConstraintSpec::threshold),
      make_field("constraint", "window", &C::constraint, &ConstraintSpec::window),
      make_field("constraint", "positive", &C::constraint, &ConstraintSpec::positive),
      make_field("constraint", "negative", &C::constraint, &ConstraintSpec::negative),
      make_field("trainer", "methods", &C::trainer, &TrainerSpec::methods),
      make_field("trainer", "budget", &C::trainer, &TrainerSpec::budget),
      make_field("trainer", "cap_budget", &C::trainer, &TrainerSpec::cap_budget),
      make_field("trainer", "cap_bias", &C::trainer, &TrainerSpec::cap_bias),
      make_field("trainer", "samples_per_step", &C::trainer, &TrainerSpec::samples_per_step),
      make_field("trainer", "learning_rate", &C::trainer, &TrainerSpec::learning_rate),
      make_field("trainer", "policy_order", &C::trainer, &TrainerSpec::policy_order),
      make_field("trainer", "checkpoint_fraction", &C::trainer, &TrainerSpec::checkpoint_fraction),
      make_field("trainer", "max_logit_step", &C::trainer, &TrainerSpec::max_logit_step),
      make_field("trainer", "divergence_factor", &C::trainer, &TrainerSpec::divergence_factor),
      make_field("trainer", "fit_steps", &C::trainer, &TrainerSpec::fit_steps),
      make_field("trainer", "fit_learning_rate", &C::trainer, &TrainerSpec::fit_learning_rate),
      make_field("trainer", "fit_tolerance", &C::trainer, &TrainerSpec::fit_tolerance),
      make_field("sampler", "method", &C::sampler, &SamplerSpec::method),
      make_field("sampler", "proposal", &C::sampler, &SamplerSpec::proposal),
      make_field("sampler", "samples", &C::sampler, &SamplerSpec::samples),
      make_field("sampler", "max_draws", &C::sampler, &SamplerSpec::max_draws),
      make_field("sampler", "beta", &C::sampler, &SamplerSpec::beta),
      make_field("sampler", "imh_steps", &C::sampler, &SamplerSpec::imh_steps),
      make_field("sampler", "qrs_grid", &C::sampler, &SamplerSpec::qrs_grid),
      make_field("sampler", "imh_grid", &C::sampler, &SamplerSpec::imh_grid),
      make_field("metrics", "bins", &C::metrics, &MetricsSpec::bins),
      make_field("metrics", "bleu_orders", &C::metrics, &MetricsSpec::bleu_orders),
      make_field("metrics", "self_bleu_k", &C::metrics, &MetricsSpec::self_bleu_k),
      make_field("metrics", "estimator_samples", &C::metrics, &MetricsSpec::estimator_samples),
      make_field("metrics", "avoid", &C::metrics, &MetricsSpec::avoid),
  };
  return all;
}

}  // namespace detail

/// Where each key was set, for line-precise validation messages.
using KeyLines = std::map<std::string, std::size_t>;  // "section.key" -> line

inline void validate(const ExperimentConfig& cfg, const KeyLines& lines = {});

inline ExperimentConfig parse_config(std::istream& in, KeyLines* lines_out = nullptr,
                                     bool check = true) {
  ExperimentConfig cfg;
  KeyLines lines;
  std::string section;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(lineno, "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : detail::fields()) known = known || f.section == section;
      if (!known) throw ConfigError(lineno, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(lineno, "expected 'key = value'");
    if (section.empty()) throw ConfigError(lineno, "key outside of any section");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const detail::Field* field = nullptr;
    for (const auto& f : detail::fields())
      if (f.section == section && f.key == key) field = &f;
    if (!field) throw ConfigError(lineno, "unknown key '" + key + "' in [" + section + "]");
    const std::string full = section + "." + key;
    if (lines.contains(full))
      throw ConfigError(lineno, "duplicate key '" + key + "' (first set on line " +
                                    std::to_string(lines[full]) + ")");
    try {
      field->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(lineno, key + ": " + e.what());
    }
    lines[full] = lineno;
  }
  if (check) validate(cfg, lines);
  if (lines_out) *lines_out = std::move(lines);
  return cfg;
}

inline ExperimentConfig parse_config_string(const std::string& text, bool check = true) {
  std::istringstream in(text);
  return parse_config(in, nullptr, check);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config file " + path.string());
  ExperimentConfig cfg = parse_config(in);
  cfg.base_dir = path.parent_path();
  return cfg;
}

/// Canonical rendering: every section and key in fixed order.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : detail::fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

inline void validate(const ExperimentConfig& cfg, const KeyLines& lines) {
  auto fail = [&](const std::string& key, const std::string& msg) {
    auto it = lines.find(key);
    throw ConfigError(it == lines.end() ? 0 : it->second, key + ": " + msg);
  };
  const auto& m = cfg.model;
  if (m.vocab.empty()) fail("model.vocab", "vocabulary must list at least one token");
  for (std::size_t i = 0; i < m.vocab.size(); ++i) {
    if (m.vocab[i] == "</s>") fail("model.vocab", "'</s>' is reserved for EOS");
    for (std::size_t j = 0; j < i; ++j)
      if (m.vocab[i] == m.vocab[j]) fail("model.vocab", "duplicate token '" + m.vocab[i] + "'");
  }
  auto known = [&](const std::vector<std::string>& toks, const std::string& key) {
    for (const auto& t : toks)
      if (std::find(m.vocab.begin(), m.vocab.end(), t) == m.vocab.end())
        fail(key, "token '" + t + "' is not in the vocabulary");
  };
  if (m.max_length == 0) fail("model.max_length", "must be positive");
  if (m.family == "ngram" || m.family == "tabular") {
    if (m.corpus.empty()) fail("model.corpus", "family '" + m.family + "' needs a corpus");
    if (m.family == "ngram" && m.order == 0) fail("model.order", "must be positive");
  } else if (m.family == "iid") {
    if (m.probs.size() != m.vocab.size() + 1)
      fail("model.probs", "needs one weight per token including EOS (" +
                              std::to_string(m.vocab.size() + 1) + ")");
    for (double p : m.probs)
      if (!(p >= 0.0) || !std::isfinite(p)) fail("model.probs", "weights must be nonnegative");
  } else if (m.family != "uniform") {
    fail("model.family", "unknown family '" + m.family + "'");
  }
  if (m.add_k < 0.0) fail("model.add_k", "must be nonnegative");
  known(m.opening, "model.opening");
  if (m.opening.size() >= m.max_length) fail("model.opening", "must be shorter than max_length");

  const auto& c = cfg.constraint;
  known(c.keyword, "constraint.keyword");
  known(c.positive, "constraint.positive");
  known(c.negative, "constraint.negative");
  if (c.kind == "contains" || c.kind == "avoids" || c.kind == "prefix") {
    if (c.keyword.empty()) fail("constraint.keyword", "kind '" + c.kind + "' needs a keyword");
  } else if (c.kind == "threshold") {
    if (c.positive.empty() && c.negative.empty())
      fail("constraint.positive", "threshold constraint needs scorer token sets");
    if (c.window == 0) fail("constraint.window", "must be positive");
  } else if (c.kind != "always") {
    fail("constraint.kind", "unknown constraint kind '" + c.kind + "'");
  }

  const auto& t = cfg.trainer;
  for (const auto& meth : t.methods)
    if (meth != "sft" && meth != "dpg" && meth != "warm-dpg")
      fail("trainer.methods", "unknown method '" + meth + "'");
  if (t.cap_budget > t.budget) fail("trainer.cap_budget", "exceeds trainer.budget");
  if (t.samples_per_step == 0) fail("trainer.samples_per_step", "must be positive");
  if (!(t.learning_rate > 0.0)) fail("trainer.learning_rate", "must be positive");
  if (!(t.checkpoint_fraction > 0.0 && t.checkpoint_fraction <= 1.0))
    fail("trainer.checkpoint_fraction", "must lie in (0, 1]");
  if (!(t.fit_learning_rate > 0.0)) fail("trainer.fit_learning_rate", "must be positive");
  if (!(t.fit_tolerance >= 0.0)) fail("trainer.fit_tolerance", "must be nonnegative");
  if (!(t.max_logit_step >= 0.0)) fail("trainer.max_logit_step", "must be nonnegative");
  if (!std::isfinite(t.cap_bias)) fail("trainer.cap_bias", "must be finite");
  const bool wants_cap = cfg.sampler.proposal == "cap" || cfg.sampler.proposal == "warm-dpg" ||
                         std::find(t.methods.begin(), t.methods.end(), "warm-dpg") != t.methods.end();
  if (wants_cap && c.keyword.empty() && c.positive.empty())
    fail("trainer.cap_bias", "CAP needs constraint.keyword or constraint.positive");

  const auto& s = cfg.sampler;
  if (s.method != "guard" && s.method != "qrs" && s.method != "imh" && s.method != "enforce" &&
      s.method != "avoid")
    fail("sampler.method", "unknown sampler '" + s.method + "'");
  const auto& p = s.proposal;
  if (p != "base" && p != "cap" && p != "gold" && p != "sft" && p != "dpg" && p != "warm-dpg" &&
      p.rfind("file:", 0) != 0)
    fail("sampler.proposal", "unknown proposal '" + p + "'");
  if (s.samples == 0) fail("sampler.samples", "must be positive");
  if (s.max_draws == 0) fail("sampler.max_draws", "must be positive");
  if (!(s.beta > 0.0)) fail("sampler.beta", "must be positive");
  for (double b : s.qrs_grid)
    if (!(b > 0.0)) fail("sampler.qrs_grid", "entries must be positive");
  for (double n : s.imh_grid)
    if (!(n >= 0.0) || n != std::floor(n)) fail("sampler.imh_grid", "entries must be integers");
  if ((s.method == "enforce") && (c.kind != "contains" || c.keyword.size() != 1))
    fail("sampler.method", "enforce-at-end needs a single-token contains constraint");
  if (s.method == "avoid" && c.kind != "avoids" && cfg.metrics.avoid.empty())
    fail("sampler.method", "avoidance needs an avoids constraint or metrics.avoid");

  const auto& mt = cfg.metrics;
  if (mt.bins == 0) fail("metrics.bins", "must be positive");
  for (double n : mt.bleu_orders)
    if (!(n >= 1.0) || n != std::floor(n)) fail("metrics.bleu_orders", "orders must be integers >= 1");
  if (mt.self_bleu_k == 1) fail("metrics.self_bleu_k", "needs at least 2 samples (or 0 to skip)");
  known(mt.avoid, "metrics.avoid");
  if (mt.avoid.size() > 1) fail("metrics.avoid", "takes a single token");
}

}  // namespace guard::harness
