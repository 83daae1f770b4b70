#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "guard/harness/scenario.hpp"
#include "guard/metrics.hpp"
#include "guard/samplers.hpp"

namespace guard::harness {

/// Bumped whenever a CSV header or JSON layout changes.
inline constexpr int kSchemaVersion = 1;

using Json = nlohmann::ordered_json;

/// Raised when an emitted sample violates the constraint it was drawn under.
class AuditFailure : public Error {
 public:
  explicit AuditFailure(const std::string& what) : Error(ErrorKind::kConstraintViolatingDistribution, what) {}
};

namespace detail {

inline Json number(double x) {
  if (std::isfinite(x)) return x;
  return x > 0 ? "inf" : (x < 0 ? "-inf" : "nan");
}

inline std::string param(double x) {
  std::ostringstream s;
  s << x;
  return s.str();
}

}  // namespace detail

// ------------------------------------------------------------ learning curves

struct MethodRun {
  std::string method;
  std::uint64_t seed_index = 0;
  TrainResult result;
  bool diverged = false;
};

/// Trains every configured method for every seed. All methods of one seed
/// share the same random stream (paired seeds). A run that trips the
/// divergence guard keeps its partial curve and is flagged.
inline std::vector<MethodRun> train_all(const ExperimentConfig& cfg, const Scenario& s,
                                        bool wall_clock = false) {
  std::vector<MethodRun> runs;
  for (std::uint64_t seed = 0; seed < cfg.run.seeds; ++seed)
    for (const auto& method : cfg.trainer.methods) {
      MethodRun r{method, seed, {}, false};
      Rng rng(seed_stream(cfg, seed));
      try {
        r.result = train_method(cfg, s, method, rng, wall_clock);
      } catch (const TrainingDiverged& e) {
        r.result.curve = e.curve();
        r.diverged = true;
      }
      runs.push_back(std::move(r));
    }
  return runs;
}

/// Header: samples,method,seed,kl,ar (plus wall_ms when timing).
inline std::string learning_curve_csv(const std::vector<MethodRun>& runs, bool wall_clock = false) {
  std::ostringstream out;
  out << "samples,method,seed,kl,ar" << (wall_clock ? ",wall_ms" : "") << '\n';
  for (const auto& r : runs)
    for (const auto& p : r.result.curve.points) {
      out << p.samples << ',' << r.method << ',' << r.seed_index << ',' << format_double(p.kl)
          << ',' << format_double(p.ar);
      if (wall_clock) out << ',' << format_double(p.wall_ms);
      out << '\n';
    }
  return out.str();
}

// ------------------------------------------------------------------ tradeoff

struct TradeoffPoint {
  std::string method;
  std::string param;
  std::uint64_t budget = 0;
  double x = 0.0;  // -log AR
  double y = 0.0;  // KL(g || sampler output)
};

/// Projection used for the approximate QRS/IMH comparison: keyword
/// first-occurrence bin (plus one bin for "absent") when the constraint has
/// a keyword, content length otherwise.
struct ProjectionSpec {
  Projection f;
  std::size_t bins = 0;
};

inline ProjectionSpec default_projection(const ExperimentConfig& cfg, const Scenario& s) {
  if (s.keyword && cfg.constraint.kind == "contains")
    return {keyword_position_projection(*s.keyword, cfg.metrics.bins), cfg.metrics.bins + 1};
  return {[](std::span<const Token> y) { return content(y).size(); },
          s.base->max_length() + 1};
}

struct SweepPoint {
  std::string sampler;  // guard | qrs | imh
  double param = 0.0;   // beta multiple (qrs) or steps (imh)
  double relative_cost = 1.0;
  double acceptance_rate = 0.0;
  double projected_kl = 0.0;
  double exact_kl = 0.0;
};

/// Exact QRS beta sweep and IMH step sweep over one proposal. Costs are
/// relative to one rejection-sampler output: QRS needs Z'/AR_qrs times the
/// draws, an IMH chain of n moves costs n + 1 rejection runs: it starts
/// from one accepted sample (law g') and draws every candidate from g'.
inline std::vector<SweepPoint> qrs_imh_sweep(const ExperimentConfig& cfg, const Scenario& s,
                                             const AutoregressiveModel& proposal) {
  const DistTable prop = enumerate_support(proposal);
  const DistTable gprime = condition_on(prop, s.constraint);
  const double z_prime = satisfying_mass(s.constraint, prop);
  const double mean_w = s.fm->partition() / z_prime;
  const auto proj = default_projection(cfg, s);
  const auto g_bar = push_forward(s.fm->gold(), proj.f, proj.bins);
  auto point = [&](std::string name, double param, double cost, double ar, const DistTable& t) {
    return SweepPoint{std::move(name), param, cost, ar,
                      kl_vectors(g_bar, push_forward(t, proj.f, proj.bins)),
                      exact_kl(s.fm->gold(), t)};
  };

  std::vector<SweepPoint> out;
  out.push_back(point("guard", 0.0, 1.0, z_prime, gprime));

  std::vector<double> betas = cfg.sampler.qrs_grid;
  std::sort(betas.begin(), betas.end());
  for (double m : betas) {
    const QrsExact q = qrs_exact_dist(prop, *s.fm, m * mean_w);
    out.push_back(point("qrs", m, z_prime / q.acceptance_rate, q.acceptance_rate, q.table));
  }

  std::vector<std::uint64_t> steps;
  for (double n : cfg.sampler.imh_grid) steps.push_back(static_cast<std::uint64_t>(n));
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  if (!steps.empty()) {
    const ImhStates st = imh_states(gprime, *s.fm);
    const ImhPropagator prop_step(st);
    std::vector<double> p = st.to_vector(gprime);
    std::uint64_t done = 0;
    for (std::uint64_t n : steps) {
      for (; done < n; ++done) p = prop_step.step(p);
      const double cost = static_cast<double>(n + 1);
      out.push_back(point("imh", static_cast<double>(n), cost, z_prime / cost, st.to_table(p)));
    }
  }
  return out;
}

/// Header: sampler,param,relative_cost,projected_kl,exact_kl
inline std::string sweep_csv(const std::vector<SweepPoint>& pts) {
  std::ostringstream out;
  out << "sampler,param,relative_cost,projected_kl,exact_kl\n";
  for (const auto& p : pts)
    out << p.sampler << ',' << detail::param(p.param) << ',' << format_double(p.relative_cost)
        << ',' << format_double(p.projected_kl) << ',' << format_double(p.exact_kl) << '\n';
  return out.str();
}

/// Projected KL reachable by rejection-type samplers (GUARD and QRS) at a
/// given relative cost: linear interpolation between neighbouring sweep
/// points, which a random mixture of the two samplers attains or beats
/// (KL is convex in the sampler law). Past the last point, its value.
inline double qrs_frontier(const std::vector<SweepPoint>& pts, double cost) {
  std::vector<std::pair<double, double>> f;
  for (const auto& p : pts)
    if (p.sampler == "qrs" || p.sampler == "guard") f.emplace_back(p.relative_cost, p.projected_kl);
  if (f.empty()) throw Error(ErrorKind::kInvalidInput, "sweep has no rejection-type points");
  std::sort(f.begin(), f.end());
  double best = kInf;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i].first <= cost) best = std::min(best, f[i].second);
    if (i + 1 < f.size() && f[i].first <= cost && cost < f[i + 1].first) {
      const double t = (cost - f[i].first) / (f[i + 1].first - f[i].first);
      best = std::min(best, f[i].second + t * (f[i + 1].second - f[i].second));
    }
  }
  return best;
}

/// True when, at every IMH point's cost, the rejection-type frontier has no
/// larger projected KL.
inline bool qrs_dominates_imh(const std::vector<SweepPoint>& pts) {
  for (const auto& i : pts)
    if (i.sampler == "imh" && qrs_frontier(pts, i.relative_cost) > i.projected_kl) return false;
  return true;
}

/// Points (x = -log AR, y = KL(g || output)): the ideal g~ at the origin,
/// the base model, CAP when available, every checkpoint of every trained
/// run, and the QRS/IMH sweep over the configured proposal.
inline std::vector<TradeoffPoint> tradeoff_points(const ExperimentConfig& cfg, const Scenario& s,
                                                  const std::vector<MethodRun>& runs,
                                                  const std::vector<SweepPoint>& sweep) {
  std::vector<TradeoffPoint> out;
  out.push_back({"g~", "", 0, 0.0, 0.0});
  auto rejection_point = [&](const std::string& name, const AutoregressiveModel& m) {
    const KlReport r = theorem2_report(*s.fm, m);
    out.push_back({name, "", 0, r.neg_log_ar, r.kl_g_gprime});
  };
  rejection_point("base", *s.base);
  if ((s.keyword && cfg.constraint.kind != "avoids") || !cfg.constraint.positive.empty())
    rejection_point("cap", *build_cap(cfg, s));
  for (const auto& r : runs)
    for (const auto& p : r.result.curve.points) {
      const double x = -std::log(p.ar);
      out.push_back({r.method, "seed=" + std::to_string(r.seed_index), p.samples, x,
                     std::max(0.0, p.kl - x)});
    }
  for (const auto& p : sweep) {
    if (p.sampler == "guard") continue;
    out.push_back({p.sampler, (p.sampler == "qrs" ? "beta=" : "n=") + detail::param(p.param), 0,
                   -std::log(p.acceptance_rate), p.exact_kl});
  }
  return out;
}

/// Header: method,param,budget,x,y
inline std::string tradeoff_csv(const std::vector<TradeoffPoint>& pts) {
  std::ostringstream out;
  out << "method,param,budget,x,y\n";
  for (const auto& p : pts)
    out << p.method << ',' << p.param << ',' << p.budget << ',' << format_double(p.x) << ','
        << format_double(p.y) << '\n';
  return out.str();
}

// ---------------------------------------------------------------- heuristics

/// Per-step-independent control for the avoidance heuristic: i.i.d. tokens
/// with the base model's average token frequencies, no EOS, so every
/// sequence has exactly max_length masked steps.
inline ModelPtr avoidance_control_model(const Scenario& s) {
  std::vector<double> freq(s.vocab.size(), 0.0);
  s.fm->base_table().for_each([&](std::span<const Token> y, double p) {
    auto body = content(y);
    for (Token t : body) freq[t] += p / static_cast<double>(body.size());
  });
  freq[kEos] = 0.0;
  double total = 0.0;
  for (double f : freq) total += f;
  for (double& f : freq) f /= total;
  return make_iid_model(s.vocab, s.base->max_length(), std::move(freq));
}

inline std::optional<Token> avoid_token(const ExperimentConfig& cfg, const Scenario& s) {
  if (!cfg.metrics.avoid.empty()) return s.vocab.id(cfg.metrics.avoid.front());
  if (cfg.constraint.kind == "avoids" && cfg.constraint.keyword.size() == 1)
    return s.vocab.id(cfg.constraint.keyword.front());
  return std::nullopt;
}

inline Json heuristic_comparison(const ExperimentConfig& cfg, const Scenario& s,
                                 const std::vector<MethodRun>& runs) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["scenario"] = cfg.run.name;
  j["z"] = s.fm->partition();
  j["kl_g_base"] = detail::number(-std::log(s.fm->partition()));

  if (cfg.constraint.kind == "contains" && s.keyword && s.keyword->size() == 1) {
    const Token kw = s.keyword->front();
    const DistTable t = enforce_at_end_table(*s.base, kw);
    Json e;
    e["keyword"] = s.vocab.name(kw);
    e["kl"] = detail::number(exact_kl(s.fm->gold(), t));
    j["enforce_at_end"] = e;
  }

  if (const auto tok = avoid_token(cfg, s)) {
    Json a;
    a["token"] = s.vocab.name(*tok);
    const Constraint avoid = Constraint::avoids({*tok});
    const FilteredModel on_base(s.base, avoid);
    a["kl_base"] = detail::number(exact_kl(on_base.gold(), *heuristic_avoidance_model(s.base, *tok)));
    const ModelPtr control = avoidance_control_model(s);
    const FilteredModel on_control(control, avoid);
    a["kl_control"] =
        detail::number(exact_kl(on_control.gold(), *heuristic_avoidance_model(control, *tok)));
    a["note"] =
        "masking equals conditioning only when tokens are independent across steps and every "
        "sequence has the same number of steps; the control is i.i.d. without EOS";
    j["avoidance"] = a;
  }

  Json trained = Json::array();
  for (const auto& r : runs) {
    Json t;
    t["method"] = r.method;
    t["seed"] = r.seed_index;
    t["diverged"] = r.diverged;
    if (r.result.model) {
      const KlReport rep = theorem2_report(*s.fm, *r.result.model);
      t["kl_g_gprime"] = detail::number(rep.kl_g_gprime);
      t["kl_g_aprime"] = detail::number(rep.kl_g_aprime);
      t["ar"] = rep.z_prime;
    }
    trained.push_back(t);
  }
  j["trained"] = trained;
  return j;
}

// ------------------------------------------------------------------ sampling

struct SampleRun {
  std::vector<Sequence> samples;
  SamplerReport report;
  Constraint audited_against = Constraint::always();
};

/// Draws cfg.sampler.samples outputs with the configured sampler. Rejection
/// statistics accumulate over all outputs. Every output is audited.
inline SampleRun run_sampling(const ExperimentConfig& cfg, const Scenario& s,
                              const AutoregressiveModel& proposal, Rng& rng) {
  const auto& sp = cfg.sampler;
  SampleRun run;
  run.report.seed = rng.seed();
  run.audited_against = s.constraint;
  auto absorb = [&](const SamplerReport& r) {
    run.report.draws += r.draws;
    run.report.accepts += r.accepts;
  };
  const std::uint64_t max_draws = sp.max_draws;
  try {
    if (sp.method == "guard") {
      for (std::uint64_t i = 0; i < sp.samples; ++i) {
        auto r = guard_sample(proposal, s.constraint, rng, max_draws);
        absorb(r.report);
        run.samples.push_back(std::move(r.sequence));
      }
    } else if (sp.method == "qrs") {
      const double z_prime = exact_acceptance_rate(proposal, s.constraint);
      if (!(z_prime > 0.0)) throw DrawBudgetExhausted(SamplerReport{});
      const double beta = sp.beta * s.fm->partition() / z_prime;
      for (std::uint64_t i = 0; i < sp.samples; ++i) {
        auto r = qrs_sample(proposal, *s.fm, beta, rng, max_draws);
        absorb(r.report);
        run.samples.push_back(std::move(r.sequence));
      }
    } else if (sp.method == "imh") {
      for (std::uint64_t i = 0; i < sp.samples; ++i) {
        auto first = guard_sample(proposal, s.constraint, rng, max_draws);
        absorb(first.report);
        ImhChainState st;
        st.current = std::move(first.sequence);
        st.log_weight = log_importance_weight(proposal, *s.fm, st.current);
        for (std::uint64_t k = 0; k < sp.imh_steps; ++k)
          st = imh_guarded_step(std::move(st), proposal, *s.fm, rng, max_draws, &run.report);
        run.samples.push_back(std::move(st.current));
      }
    } else if (sp.method == "enforce") {
      const Token kw = s.keyword.value().front();
      for (std::uint64_t i = 0; i < sp.samples; ++i) {
        run.samples.push_back(heuristic_enforce_at_end(*s.base, kw, rng));
        ++run.report.draws;
        ++run.report.accepts;
      }
    } else {
      const Token tok = avoid_token(cfg, s).value();
      run.audited_against = Constraint::avoids({tok});
      const ModelPtr masked = heuristic_avoidance_model(s.base, tok);
      for (std::uint64_t i = 0; i < sp.samples; ++i) {
        run.samples.push_back(sample_sequence(*masked, rng));
        ++run.report.draws;
        ++run.report.accepts;
      }
    }
  } catch (const DrawBudgetExhausted& e) {
    SamplerReport partial = run.report;
    partial.draws += e.report().draws;
    partial.finalize();
    throw DrawBudgetExhausted(partial);
  }
  run.report.finalize();
  for (std::size_t i = 0; i < run.samples.size(); ++i)
    if (!run.audited_against.evaluate(run.samples[i]))
      throw AuditFailure("sample " + std::to_string(i) + " violates the constraint: " +
                         s.vocab.render(run.samples[i]));
  return run;
}

inline Json sampler_report_json(const SamplerReport& r) {
  Json j;
  j["draws"] = r.draws;
  j["accepts"] = r.accepts;
  j["ar_estimate"] = r.ar_estimate;
  j["stderr"] = r.std_error;
  j["seed"] = r.seed;
  return j;
}

inline Json sample_summary(const ExperimentConfig& cfg, const Scenario& s, const SampleRun& run) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["method"] = cfg.sampler.method;
  j["proposal"] = cfg.sampler.proposal;
  j["samples"] = run.samples.size();
  j["report"] = sampler_report_json(run.report);
  j["audit"] = "pass";
  const std::size_t k = std::min<std::size_t>(cfg.metrics.self_bleu_k, run.samples.size());
  if (k >= 2) {
    const std::span<const Sequence> subset(run.samples.data(), k);
    Json sb, shorts;
    for (double n : cfg.metrics.bleu_orders) {
      const auto r = self_bleu(subset, static_cast<std::size_t>(n));
      sb[std::to_string(static_cast<int>(n))] = r.value;
      shorts[std::to_string(static_cast<int>(n))] = r.too_short;
    }
    j["self_bleu_k"] = k;
    j["self_bleu"] = sb;
    j["self_bleu_too_short"] = shorts;
  }
  if (s.keyword && cfg.constraint.kind == "contains" && cfg.sampler.method != "avoid") {
    const auto h = positional_histogram(run.samples, *s.keyword, cfg.metrics.bins);
    j["positional_histogram"] = h.counts;
  }
  j["semantic_similarity"] = "unavailable";
  return j;
}

inline std::string samples_text(const Scenario& s, const std::vector<Sequence>& samples) {
  std::string out;
  for (const auto& y : samples) out += s.vocab.render(y) + '\n';
  return out;
}

// ------------------------------------------------------------ exact reports

inline Json kl_report_json(const KlReport& r) {
  Json j;
  j["kl_g_aprime"] = detail::number(r.kl_g_aprime);
  j["kl_g_gprime"] = detail::number(r.kl_g_gprime);
  j["kl_gprime_aprime"] = detail::number(r.kl_gprime_aprime);
  j["neg_log_ar"] = detail::number(r.neg_log_ar);
  j["residual_pythagorean"] = r.residual_pythagorean;
  j["residual_ar"] = r.residual_ar;
  j["z"] = r.z;
  j["z_prime"] = r.z_prime;
  j["infinite"] = r.infinite;
  return j;
}

/// Exact decomposition for the configured proposal plus the sampled
/// KL(g || g') estimate from metrics.estimator_samples gold samples.
inline Json theorem2_json(const ExperimentConfig& cfg, const Scenario& s,
                          const AutoregressiveModel& proposal, Rng& rng) {
  const KlReport rep = theorem2_report(*s.fm, proposal);
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["proposal"] = cfg.sampler.proposal;
  j["exact"] = kl_report_json(rep);
  if (cfg.metrics.estimator_samples > 0 && !rep.infinite) {
    std::vector<Sequence> g;
    for (std::uint64_t i = 0; i < cfg.metrics.estimator_samples; ++i)
      g.push_back(guard_sample(*s.base, s.constraint, rng, cfg.sampler.max_draws).sequence);
    const auto est = kl_gg_estimator(g, *s.base, proposal, rep.z, rep.z_prime);
    Json e;
    e["value"] = detail::number(est.value);
    e["stderr"] = est.std_error;
    e["samples"] = est.samples;
    e["infinite"] = est.infinite;
    j["estimate"] = e;
  }
  return j;
}

inline Json enumerate_json(const ExperimentConfig& cfg, const Scenario& s) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["scenario"] = cfg.run.name;
  j["z"] = s.fm->partition();
  j["kl_g_base"] = -std::log(s.fm->partition());
  j["base_support"] = s.fm->base_table().size();
  j["gold_support"] = s.fm->gold().size();
  return j;
}

}  // namespace guard::harness
