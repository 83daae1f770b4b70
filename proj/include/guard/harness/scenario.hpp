#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "guard/composed.hpp"
#include "guard/constraints.hpp"
#include "guard/context_table.hpp"
#include "guard/gold.hpp"
#include "guard/harness/config.hpp"
#include "guard/random.hpp"
#include "guard/serialize.hpp"
#include "guard/training.hpp"

namespace guard::harness {

/// Base model, constraint and exact gold for one config.
struct Scenario {
  Vocabulary vocab;
  ModelPtr base;
  Constraint constraint;
  std::optional<Sequence> keyword;
  std::shared_ptr<const FilteredModel> fm;
};

inline std::vector<Sequence> read_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "model.corpus: cannot open " + path.string());
  std::vector<Sequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(vocab.parse(line));
    } catch (const Error& e) {
      throw Error(ErrorKind::kInvalidInput,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline Sequence to_tokens(const Vocabulary& vocab, const std::vector<std::string>& words) {
  Sequence s;
  for (const auto& w : words) s.push_back(vocab.id(w));
  return s;
}

inline ModelPtr build_base_model(const ExperimentConfig& cfg, const Vocabulary& vocab) {
  const auto& m = cfg.model;
  const std::size_t L = m.max_length;
  ModelPtr base;
  if (m.family == "ngram" || m.family == "tabular") {
    const auto corpus = read_corpus(cfg.corpus_path(), vocab);
    base = fit_ngram(vocab, L, m.family == "tabular" ? L : m.order, corpus, m.add_k);
  } else if (m.family == "uniform") {
    base = make_uniform_model(vocab, L);
  } else {
    std::vector<double> p(m.probs);
    double total = 0.0;
    for (double x : p) total += x;
    if (!(total > 0.0)) throw ConfigError(0, "model.probs: weights sum to zero");
    for (double& x : p) x /= total;
    base = make_iid_model(vocab, L, p);
  }
  if (!m.opening.empty())
    base = std::make_shared<ForcedPrefixModel>(base, to_tokens(vocab, m.opening));
  return base;
}

inline Constraint build_constraint(const ExperimentConfig& cfg, const Vocabulary& vocab) {
  const auto& c = cfg.constraint;
  if (c.kind == "contains") return Constraint::contains(to_tokens(vocab, c.keyword));
  if (c.kind == "avoids") return Constraint::avoids(to_tokens(vocab, c.keyword));
  if (c.kind == "prefix") return Constraint::prefix_required(to_tokens(vocab, c.keyword));
  if (c.kind == "threshold") {
    RatioScorer s;
    for (const auto& w : c.positive) s.positive.insert(vocab.id(w));
    for (const auto& w : c.negative) s.negative.insert(vocab.id(w));
    s.window = c.window;
    return Constraint::threshold(std::move(s), c.threshold);
  }
  return Constraint::always();
}

inline Scenario build_scenario(const ExperimentConfig& cfg) {
  Vocabulary vocab(cfg.model.vocab);
  ModelPtr base = build_base_model(cfg, vocab);
  Constraint b = build_constraint(cfg, vocab);
  std::optional<Sequence> kw;
  if (!cfg.constraint.keyword.empty()) kw = to_tokens(vocab, cfg.constraint.keyword);
  auto fm = std::make_shared<const FilteredModel>(base, b);
  return {std::move(vocab), std::move(base), std::move(b), std::move(kw), std::move(fm)};
}

/// Prompt-like proposal: a logit bias toward the keyword's first token
/// (switched off once the keyword is complete) or, for threshold
/// constraints, toward the positive scorer tokens.
inline ModelPtr build_cap(const ExperimentConfig& cfg, const Scenario& s) {
  if (s.keyword && cfg.constraint.kind != "avoids")
    return cap_model(s.base, *s.keyword, cfg.trainer.cap_bias);
  if (cfg.constraint.positive.empty())
    throw ConfigError(0, "CAP needs constraint.keyword or constraint.positive");
  std::vector<double> bias(s.vocab.size(), 0.0);
  for (const auto& w : cfg.constraint.positive) bias[s.vocab.id(w)] = cfg.trainer.cap_bias;
  return apply_logit_bias(s.base, std::move(bias));
}

inline TrainingBudget training_budget(const ExperimentConfig& cfg, bool with_cap) {
  TrainingBudget tb;
  tb.total = cfg.trainer.budget;
  tb.cap = with_cap ? cfg.trainer.cap_budget : 0;
  tb.samples_per_step = cfg.trainer.samples_per_step;
  tb.checkpoint_fraction = cfg.trainer.checkpoint_fraction;
  return tb;
}

inline DpgOptions dpg_options(const ExperimentConfig& cfg, bool wall_clock) {
  DpgOptions o;
  o.learning_rate = cfg.trainer.learning_rate;
  o.order = cfg.trainer.policy_order;
  o.divergence_factor = cfg.trainer.divergence_factor;
  o.max_logit_step = cfg.trainer.max_logit_step;
  o.record_wall_clock = wall_clock;
  return o;
}

inline FitOptions fit_options(const ExperimentConfig& cfg) {
  FitOptions f;
  f.max_steps = cfg.trainer.fit_steps;
  f.learning_rate = cfg.trainer.fit_learning_rate;
  f.tolerance = cfg.trainer.fit_tolerance;
  return f;
}

/// Trains one method ("sft", "dpg", "warm-dpg") on the scenario. A zero
/// budget returns the base model with a single curve point.
inline TrainResult train_method(const ExperimentConfig& cfg, const Scenario& s,
                                const std::string& method, Rng& rng, bool wall_clock = false) {
  if (cfg.trainer.budget == 0) {
    TrainResult r;
    r.model = s.base;
    CurveRecorder rec(*s.fm, method, wall_clock);
    rec.record(0, *s.base);
    r.curve = rec.curve();
    return r;
  }
  if (method == "sft")
    return sft_train(*s.fm, training_budget(cfg, false), cfg.trainer.policy_order,
                     fit_options(cfg), rng, wall_clock);
  if (method == "dpg")
    return dpg_train(*s.fm, *s.base, training_budget(cfg, false), dpg_options(cfg, wall_clock), rng);
  if (method == "warm-dpg") {
    const ModelPtr cap = build_cap(cfg, s);
    return warm_start_dpg(*s.fm, *cap, training_budget(cfg, true), dpg_options(cfg, wall_clock),
                          fit_options(cfg), rng);
  }
  throw ConfigError(0, "unknown training method '" + method + "'");
}

/// Per-seed random stream shared by every method (paired seeds).
inline std::uint64_t seed_stream(const ExperimentConfig& cfg, std::uint64_t seed_index) {
  return split_seed(cfg.run.seed, seed_index);
}

/// Resolves sampler.proposal to a model. Trained proposals use the stream of
/// seed index 0.
inline ModelPtr build_proposal(const ExperimentConfig& cfg, const Scenario& s,
                               const std::string& name) {
  if (name == "base") return s.base;
  if (name == "cap") return build_cap(cfg, s);
  if (name == "gold") return gold_as_model(*s.fm);
  if (name.rfind("file:", 0) == 0) {
    std::filesystem::path p(name.substr(5));
    if (p.is_relative()) p = cfg.base_dir / p;
    auto m = load_model(p.string());
    if (!(m->vocab() == s.vocab) || m->max_length() != s.base->max_length())
      throw ConfigError(0, "proposal model " + p.string() + " does not match the scenario");
    return m;
  }
  Rng rng(seed_stream(cfg, 0));
  return train_method(cfg, s, name, rng).model;
}

}  // namespace guard::harness
