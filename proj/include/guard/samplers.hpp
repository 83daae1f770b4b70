#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include "guard/composed.hpp"
#include "guard/constraints.hpp"
#include "guard/dist_table.hpp"
#include "guard/errors.hpp"
#include "guard/gold.hpp"
#include "guard/model.hpp"
#include "guard/random.hpp"

namespace guard {

inline constexpr std::uint64_t kDefaultMaxDraws = 10'000'000;

struct SamplerReport {
  std::uint64_t draws = 0;
  std::uint64_t accepts = 0;
  double ar_estimate = 0.0;
  double std_error = 0.0;
  std::uint64_t seed = 0;

  void finalize() {
    ar_estimate = draws ? static_cast<double>(accepts) / static_cast<double>(draws) : 0.0;
    std_error = draws ? std::sqrt(ar_estimate * (1.0 - ar_estimate) / static_cast<double>(draws))
                   : 0.0;
  }
};

/// Raised when a sampler consumes its whole draw budget without producing
/// an output. The partial report is attached.
class DrawBudgetExhausted : public Error {
 public:
  explicit DrawBudgetExhausted(SamplerReport report)
      : Error(ErrorKind::kDrawBudgetExhausted,
              "draw budget of " + std::to_string(report.draws) + " exhausted without acceptance"),
        report_(report) {}
  const SamplerReport& report() const noexcept { return report_; }

 private:
  SamplerReport report_;
};

struct SampleResult {
  Sequence sequence;
  SamplerReport report;
};

/// Rejection sampler: draw from the proposal until b(y) = 1.
inline SampleResult guard_sample(const AutoregressiveModel& proposal, const Constraint& b,
                                 Rng& rng, std::uint64_t max_draws = kDefaultMaxDraws) {
  SamplerReport report;
  report.seed = rng.seed();
  while (report.draws < max_draws) {
    Sequence y = sample_sequence(proposal, rng);
    ++report.draws;
    if (b.evaluate(y)) {
      report.accepts = 1;
      report.finalize();
      return {std::move(y), report};
    }
  }
  report.finalize();
  throw DrawBudgetExhausted(report);
}

struct ArEstimate {
  double ar = 0.0;
  double std_error = 0.0;
  std::uint64_t draws = 0;
};

/// Monte-Carlo acceptance rate E_{y~proposal} b(y) with binomial std_error.
inline ArEstimate estimate_ar(const AutoregressiveModel& proposal, const Constraint& b,
                              std::uint64_t n_draws, Rng& rng) {
  if (n_draws == 0) throw Error(ErrorKind::kInvalidInput, "estimate_ar needs at least one draw");
  std::uint64_t hits = 0;
  for (std::uint64_t i = 0; i < n_draws; ++i)
    if (b.evaluate(sample_sequence(proposal, rng))) ++hits;
  ArEstimate out;
  out.draws = n_draws;
  out.ar = static_cast<double>(hits) / static_cast<double>(n_draws);
  out.std_error = std::sqrt(out.ar * (1.0 - out.ar) / static_cast<double>(n_draws));
  return out;
}

/// log(P(y) / proposal(y)); kNegInf when b(y) = 0 or P(y) = 0.
inline double log_importance_weight(const AutoregressiveModel& proposal, const FilteredModel& fm,
                                    std::span<const Token> y) {
  const double lp = fm.log_potential(y);
  if (lp == kNegInf) return kNegInf;
  return lp - sequence_logprob(proposal, y);
}

/// Quasi-rejection sampling: y ~ proposal accepted with probability
/// min(1, P(y) / (beta proposal(y))).
inline SampleResult qrs_sample(const AutoregressiveModel& proposal, const FilteredModel& fm,
                               double beta, Rng& rng, std::uint64_t max_draws = kDefaultMaxDraws) {
  if (!(beta > 0.0)) throw Error(ErrorKind::kInvalidInput, "QRS beta must be positive");
  SamplerReport report;
  report.seed = rng.seed();
  const double log_beta = std::log(beta);
  while (report.draws < max_draws) {
    Sequence y = sample_sequence(proposal, rng);
    ++report.draws;
    const double lw = log_importance_weight(proposal, fm, y);
    if (lw == kNegInf) continue;
    const double log_accept = std::min(0.0, lw - log_beta);
    if (log_accept == 0.0 || rng.uniform() < std::exp(log_accept)) {
      report.accepts = 1;
      report.finalize();
      return {std::move(y), report};
    }
  }
  report.finalize();
  throw DrawBudgetExhausted(report);
}

struct QrsExact {
  DistTable table;
  double acceptance_rate = 0.0;
};

/// Exact QRS output law: proportional to min(proposal(y), P(y)/beta) over
/// satisfying y, together with its acceptance rate.
inline QrsExact qrs_exact_dist(const DistTable& proposal_table, const FilteredModel& fm,
                               double beta) {
  std::vector<DistTable::Entry> out;
  CompensatedSum ar;
  for (const auto& e : proposal_table.entries()) {
    const double p = fm.base_table().prob_of_key(e.key);
    if (p == 0.0 || !fm.constraint().evaluate(proposal_table.codec().decode(e.key))) continue;
    const double w = std::min(e.prob, p / beta);
    out.push_back({e.key, w});
    ar.add(w);
  }
  QrsExact r;
  r.acceptance_rate = ar.value();
  if (!(r.acceptance_rate > 0.0))
    throw Error(ErrorKind::kEmptyGoldSupport, "proposal puts no mass on satisfying sequences");
  r.table = DistTable::from_sorted(proposal_table.codec(), std::move(out)).normalized();
  return r;
}

inline QrsExact qrs_exact_dist(const AutoregressiveModel& proposal, const FilteredModel& fm,
                               double beta, std::size_t cap = kDefaultEnumerationCap) {
  if (!(beta > 0.0)) throw Error(ErrorKind::kInvalidInput, "QRS beta must be positive");
  const DistTable prop = enumerate_support(proposal, cap);
  return qrs_exact_dist(prop, fm, beta);
}

/// max over satisfying y in the proposal support of P(y) / proposal(y).
inline double max_importance_weight(const DistTable& proposal_table, const FilteredModel& fm) {
  double best = 0.0;
  for (const auto& e : proposal_table.entries()) {
    const double p = fm.gold().prob_of_key(e.key);
    if (p > 0.0) best = std::max(best, fm.base_table().prob_of_key(e.key) / e.prob);
  }
  return best;
}

struct ImhChainState {
  Sequence current;
  double log_weight = kNegInf;  // log P(current) - log proposal(current)
  std::uint64_t steps = 0;
};

/// Starts a chain from one rejection-sampler output, so the chain begins
/// (and stays) inside {b = 1}.
inline ImhChainState imh_init(const AutoregressiveModel& proposal, const FilteredModel& fm,
                              Rng& rng, std::uint64_t max_draws = kDefaultMaxDraws) {
  auto first = guard_sample(proposal, fm.constraint(), rng, max_draws);
  ImhChainState s;
  s.current = std::move(first.sequence);
  s.log_weight = log_importance_weight(proposal, fm, s.current);
  return s;
}

/// One independent Metropolis-Hastings move with importance weight
/// w = P / proposal.
inline ImhChainState imh_step(ImhChainState state, const AutoregressiveModel& proposal,
                              const FilteredModel& fm, Rng& rng) {
  Sequence candidate = sample_sequence(proposal, rng);
  const double lw = log_importance_weight(proposal, fm, candidate);
  ++state.steps;
  if (lw == kNegInf) return state;
  const double log_accept = std::min(0.0, lw - state.log_weight);
  if (log_accept == 0.0 || rng.uniform() < std::exp(log_accept)) {
    state.current = std::move(candidate);
    state.log_weight = lw;
  }
  return state;
}

/// IMH move whose candidate is a rejection-sampler output, i.e. a draw
/// from g'. The acceptance ratio is unchanged because P / g' is
/// proportional to P / proposal on {b = 1}. Each move costs one GUARD run;
/// the draws it consumed are added to `report` when given.
inline ImhChainState imh_guarded_step(ImhChainState state, const AutoregressiveModel& proposal,
                                      const FilteredModel& fm, Rng& rng,
                                      std::uint64_t max_draws = kDefaultMaxDraws,
                                      SamplerReport* report = nullptr) {
  auto cand = guard_sample(proposal, fm.constraint(), rng, max_draws);
  if (report) {
    report->draws += cand.report.draws;
    report->accepts += 1;
  }
  const double lw = log_importance_weight(proposal, fm, cand.sequence);
  ++state.steps;
  if (lw == kNegInf) return state;
  const double log_accept = std::min(0.0, lw - state.log_weight);
  if (log_accept == 0.0 || rng.uniform() < std::exp(log_accept)) {
    state.current = std::move(cand.sequence);
    state.log_weight = lw;
  }
  return state;
}

/// State space of the exact IMH analysis: satisfying sequences in the
/// proposal support, with proposal mass q and weight w = P / q.
struct ImhStates {
  SequenceCodec codec;
  std::vector<std::uint64_t> keys;
  std::vector<double> proposal;
  std::vector<double> weight;

  std::size_t size() const noexcept { return keys.size(); }

  std::size_t index_of(std::uint64_t key) const {
    auto it = std::lower_bound(keys.begin(), keys.end(), key);
    if (it == keys.end() || *it != key)
      throw Error(ErrorKind::kInvalidInput, "sequence is not an IMH state");
    return static_cast<std::size_t>(it - keys.begin());
  }

  std::vector<double> to_vector(const DistTable& t) const {
    std::vector<double> v(size(), 0.0);
    for (const auto& e : t.entries()) v[index_of(e.key)] = e.prob;
    return v;
  }

  DistTable to_table(std::span<const double> v) const {
    std::vector<DistTable::Entry> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back({keys[i], v[i]});
    return DistTable::from_sorted(codec, std::move(out));
  }
};

inline ImhStates imh_states(const DistTable& proposal_table, const FilteredModel& fm) {
  ImhStates s;
  s.codec = proposal_table.codec();
  for (const auto& e : proposal_table.entries()) {
    const double p = fm.base_table().prob_of_key(e.key);
    if (p == 0.0 || !fm.constraint().evaluate(s.codec.decode(e.key))) continue;
    s.keys.push_back(e.key);
    s.proposal.push_back(e.prob);
    s.weight.push_back(p / e.prob);
  }
  if (s.keys.empty())
    throw Error(ErrorKind::kEmptyGoldSupport, "proposal puts no mass on satisfying sequences");
  return s;
}

/// Dense transition matrix (row-major, row = from). Off-diagonal
/// q(y') min(1, w(y')/w(y)); the diagonal holds the remaining mass,
/// including proposals outside {b = 1}.
inline std::vector<double> imh_transition_matrix(const ImhStates& s) {
  const std::size_t n = s.size();
  std::vector<double> t(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    CompensatedSum moved;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = s.proposal[j] * std::min(1.0, s.weight[j] / s.weight[i]);
      t[i * n + j] = v;
      moved.add(v);
    }
    t[i * n + i] = 1.0 - moved.value();
  }
  return t;
}

/// Applies the IMH kernel to a distribution in O(n) per step after an
/// O(n log n) setup, using prefix sums over states sorted by weight.
class ImhPropagator {
 public:
  explicit ImhPropagator(const ImhStates& s) : s_(s) {
    const std::size_t n = s.size();
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::sort(order_.begin(), order_.end(),
              [&](std::size_t a, std::size_t b) { return s.weight[a] < s.weight[b]; });
    // Group boundaries of equal weight in sorted order.
    group_.resize(n);
    std::size_t g = 0;
    for (std::size_t r = 0; r < n; ++r) {
      if (r > 0 && s.weight[order_[r]] != s.weight[order_[r - 1]]) ++g;
      group_[r] = g;
    }
    group_count_ = n ? g + 1 : 0;
    group_end_.assign(group_count_, 0);
    for (std::size_t r = 0; r < n; ++r) group_end_[group_[r]] = r + 1;

    // stay_j = (1 - Q) + q_j + sum_{w_k < w_j} q_k (1 - w_k / w_j)
    CompensatedSum total_q;
    for (double q : s.proposal) total_q.add(q);
    const double rejected = std::max(0.0, 1.0 - total_q.value());
    stay_.assign(n, 0.0);
    CompensatedSum below_q, below_p;  // over strictly smaller weights
    std::size_t r = 0;
    while (r < n) {
      const std::size_t end = group_end_[group_[r]];
      for (std::size_t k = r; k < end; ++k) {
        const std::size_t j = order_[k];
        const double wj = s.weight[j];
        const double lower = std::max(0.0, below_q.value() - below_p.value() / wj);
        stay_[j] = rejected + s.proposal[j] + lower;
      }
      for (std::size_t k = r; k < end; ++k) {
        const std::size_t j = order_[k];
        below_q.add(s.proposal[j]);
        below_p.add(s.proposal[j] * s.weight[j]);
      }
      r = end;
    }
  }

  /// p -> p T
  std::vector<double> step(std::span<const double> p) const {
    const std::size_t n = s_.size();
    // A_j = sum_{w_i <= w_j} p_i ; B_j = sum_{w_i > w_j} p_i / w_i
    std::vector<double> at_or_below(group_count_), above(group_count_);
    double acc = 0.0;
    for (std::size_t r = 0, g = 0; g < group_count_; ++g) {
      for (; r < group_end_[g]; ++r) acc += p[order_[r]];
      at_or_below[g] = acc;
    }
    acc = 0.0;
    for (std::size_t g = group_count_; g-- > 0;) {
      above[g] = acc;
      const std::size_t begin = g == 0 ? 0 : group_end_[g - 1];
      for (std::size_t r = begin; r < group_end_[g]; ++r)
        acc += p[order_[r]] / s_.weight[order_[r]];
    }
    std::vector<double> out(n);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t j = order_[r];
      const std::size_t g = group_[r];
      const double incoming =
          s_.proposal[j] * (at_or_below[g] - p[j] + s_.weight[j] * above[g]);
      out[j] = std::max(0.0, incoming) + p[j] * stay_[j];
    }
    return out;
  }

 private:
  const ImhStates& s_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> group_;
  std::vector<std::size_t> group_end_;
  std::size_t group_count_ = 0;
  std::vector<double> stay_;
};

/// Exact n-step IMH marginal init * T^n.
inline DistTable imh_exact_marginal(const DistTable& proposal_table, const FilteredModel& fm,
                                    std::uint64_t n, const DistTable& init) {
  const ImhStates s = imh_states(proposal_table, fm);
  std::vector<double> p = s.to_vector(init);
  const ImhPropagator prop(s);
  for (std::uint64_t i = 0; i < n; ++i) p = prop.step(p);
  return s.to_table(p);
}

inline DistTable imh_exact_marginal(const AutoregressiveModel& proposal, const FilteredModel& fm,
                                    std::uint64_t n, const DistTable& init) {
  return imh_exact_marginal(enumerate_support(proposal), fm, n, init);
}

/// Per-step masking heuristic for avoids-keyword constraints.
inline ModelPtr heuristic_avoidance_model(ModelPtr base, Token banned) {
  return apply_token_mask(std::move(base), std::set<Token>{banned});
}

/// Enforcement heuristic for a single-token keyword. Rewrites a completed
/// base sample so the keyword is its last content token whenever it is
/// missing: at the final slot the keyword replaces whatever was drawn; an
/// earlier EOS is replaced by the keyword followed by EOS.
inline Sequence enforce_at_end(Sequence y, Token keyword, std::size_t max_length) {
  if (keyword == kEos) throw Error(ErrorKind::kInvalidInput, "keyword must not be EOS");
  auto body = content(y);
  if (std::find(body.begin(), body.end(), keyword) != body.end()) return y;
  Sequence out(body.begin(), body.end());
  if (y.back() == kEos) {
    out.push_back(keyword);
    if (out.size() < max_length) out.push_back(kEos);
  } else {
    out.back() = keyword;
  }
  return out;
}

inline Sequence heuristic_enforce_at_end(const AutoregressiveModel& base, Token keyword,
                                         Rng& rng) {
  return enforce_at_end(sample_sequence(base, rng), keyword, base.max_length());
}

/// Exact output law of the enforcement heuristic (push-forward of the base
/// table through enforce_at_end).
inline DistTable enforce_at_end_table(const AutoregressiveModel& base, Token keyword,
                                      std::size_t cap = kDefaultEnumerationCap) {
  const SequenceCodec codec = base.codec();
  std::vector<DistTable::Entry> out;
  for_each_sequence(
      base,
      [&](std::span<const Token> seq, double lp) {
        out.push_back({codec.encode(enforce_at_end(Sequence(seq.begin(), seq.end()), keyword,
                                                   base.max_length())),
                       std::exp(lp)});
      },
      cap);
  return DistTable::from_entries(codec, std::move(out));
}

}  // namespace guard
