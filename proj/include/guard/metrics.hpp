#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "guard/constraints.hpp"
#include "guard/dist_table.hpp"
#include "guard/errors.hpp"
#include "guard/gold.hpp"
#include "guard/model.hpp"

namespace guard {

/// The four terms of the decomposition
///   KL(g||a') = KL(g||g') + KL(g'||a'),  KL(g'||a') = -log AR(a')
/// computed exactly, in nats.
struct KlReport {
  double kl_g_aprime = 0.0;
  double kl_g_gprime = 0.0;
  double kl_gprime_aprime = 0.0;
  double neg_log_ar = 0.0;
  double residual_pythagorean = 0.0;
  double residual_ar = 0.0;
  double z = 0.0;
  double z_prime = 0.0;
  bool infinite = false;  // g not absolutely continuous w.r.t. a' (or Z' = 0)
};

inline KlReport theorem2_report(const FilteredModel& fm, const AutoregressiveModel& aprime,
                                std::size_t cap = kDefaultEnumerationCap) {
  KlReport r;
  r.z = fm.partition();
  const DistTable aprime_table = enumerate_support(aprime, cap);
  r.z_prime = satisfying_mass(fm.constraint(), aprime_table);
  if (!(r.z_prime > 0.0)) {
    r.kl_g_aprime = r.kl_g_gprime = r.kl_gprime_aprime = r.neg_log_ar = kInf;
    r.infinite = true;
    return r;
  }
  const DistTable gprime = condition_on(aprime_table, fm.constraint());

  r.kl_g_aprime = exact_kl(fm.gold(), aprime_table);
  r.kl_g_gprime = exact_kl(fm.gold(), gprime);
  r.kl_gprime_aprime = exact_kl(gprime, aprime_table);
  r.neg_log_ar = -std::log(r.z_prime);
  r.infinite = std::isinf(r.kl_g_aprime) || std::isinf(r.kl_g_gprime);
  if (!r.infinite) {
    r.residual_pythagorean = std::abs(r.kl_g_aprime - r.kl_g_gprime - r.kl_gprime_aprime);
    r.residual_ar = std::abs(r.kl_gprime_aprime - r.neg_log_ar);
  }
  return r;
}

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  bool infinite = false;
};

/// Monte-Carlo estimate of KL(g||g') = E_g log(a/a') - log(Z/Z') from
/// samples of g. `z` and `z_prime` may be exact or estimated.
inline KlEstimate kl_gg_estimator(std::span<const Sequence> g_samples,
                                  const AutoregressiveModel& a, const AutoregressiveModel& aprime,
                                  double z, double z_prime) {
  if (g_samples.empty()) throw Error(ErrorKind::kInvalidInput, "estimator needs samples");
  if (!(z > 0.0) || !(z_prime > 0.0))
    throw Error(ErrorKind::kInvalidInput, "partition values must be positive");
  KlEstimate est;
  est.samples = g_samples.size();
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (const auto& y : g_samples) {
    const double la = sequence_logprob(a, y);
    const double lap = sequence_logprob(aprime, y);
    if (lap == kNegInf) {
      est.infinite = true;
      est.value = kInf;
      return est;
    }
    const double d = la - lap;
    ++n;
    const double delta = d - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (d - mean);
  }
  est.value = mean - std::log(z / z_prime);
  est.std_error = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
  return est;
}

// ---------------------------------------------------------------- Self-BLEU

namespace detail {

using NgramCounts = std::map<std::vector<Token>, std::size_t>;

inline NgramCounts ngram_counts(std::span<const Token> s, std::size_t k) {
  NgramCounts c;
  if (s.size() < k) return c;
  for (std::size_t i = 0; i + k <= s.size(); ++i) ++c[std::vector<Token>(s.begin() + i, s.begin() + i + k)];
  return c;
}

}  // namespace detail

struct BleuScore {
  double value = 0.0;
  bool too_short = false;  // candidate shorter than n
};

/// Cumulative BLEU-n with uniform weights: brevity penalty times the
/// geometric mean of clipped k-gram precisions, k = 1..n. Clipping uses the
/// maximum count over references; the reference length for the brevity
/// penalty is the closest one (shorter wins ties). Sequences are compared on
/// content tokens.
inline BleuScore bleu(std::span<const Token> candidate, std::span<const Sequence> references,
                      std::size_t n) {
  if (n == 0) throw Error(ErrorKind::kInvalidInput, "BLEU order must be positive");
  BleuScore out;
  auto cand = content(candidate);
  if (cand.size() < n) {
    out.too_short = true;
    return out;
  }
  double log_sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const auto cc = detail::ngram_counts(cand, k);
    detail::NgramCounts max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : detail::ngram_counts(content(r), k)) {
        auto& m = max_ref[g];
        m = std::max(m, c);
      }
    std::size_t clipped = 0, total = 0;
    for (const auto& [g, c] : cc) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) clipped += std::min(c, it->second);
    }
    if (clipped == 0) return out;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }
  const auto c_len = static_cast<double>(cand.size());
  double r_len = 0.0, best = kInf;
  for (const auto& r : references) {
    const auto len = static_cast<double>(content(r).size());
    const double d = std::abs(len - c_len);
    if (d < best || (d == best && len < r_len)) {
      best = d;
      r_len = len;
    }
  }
  const double bp = c_len >= r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  out.value = bp * std::exp(log_sum / static_cast<double>(n));
  return out;
}

struct SelfBleu {
  double value = 0.0;
  std::size_t too_short = 0;  // samples scored 0 for being shorter than n
};

/// Mean BLEU-n of each sample against the remaining K - 1.
inline SelfBleu self_bleu(std::span<const Sequence> samples, std::size_t n) {
  if (samples.size() < 2) throw Error(ErrorKind::kInvalidInput, "Self-BLEU needs at least 2 samples");
  SelfBleu out;
  std::vector<Sequence> refs;
  refs.reserve(samples.size() - 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    refs.clear();
    for (std::size_t j = 0; j < samples.size(); ++j)
      if (j != i) refs.push_back(samples[j]);
    const auto s = bleu(samples[i], refs, n);
    if (s.too_short) ++out.too_short;
    sum += s.value;
  }
  out.value = sum / static_cast<double>(samples.size());
  return out;
}

// ------------------------------------------------------ positional analysis

/// Bin of the keyword's first occurrence: relative position r = (i+1)/n for
/// a 0-based start i in n content tokens, bin = ceil(r * bins) - 1. Returns
/// nullopt when the keyword does not occur.
inline std::optional<std::size_t> first_occurrence_bin(std::span<const Token> seq,
                                                       std::span<const Token> keyword,
                                                       std::size_t bins) {
  auto body = content(seq);
  const auto i = find_subsequence(body, keyword);
  if (i < 0) return std::nullopt;
  const double rel = static_cast<double>(i + 1) / static_cast<double>(body.size());
  const auto b = static_cast<std::size_t>(std::ceil(rel * static_cast<double>(bins) - 1e-12));
  return std::clamp<std::size_t>(b, 1, bins) - 1;
}

struct PositionalHistogram {
  std::vector<double> counts;  // per bin; masses for exact push-forwards
  double total = 0.0;

  double fraction(std::size_t bin) const { return total > 0.0 ? counts.at(bin) / total : 0.0; }
  double leading_mass(std::size_t first_bins) const {
    double s = 0.0;
    for (std::size_t b = 0; b < first_bins && b < counts.size(); ++b) s += fraction(b);
    return s;
  }
};

inline PositionalHistogram positional_histogram(std::span<const Sequence> samples,
                                                std::span<const Token> keyword,
                                                std::size_t bins = 10) {
  if (bins == 0) throw Error(ErrorKind::kInvalidInput, "histogram needs at least one bin");
  PositionalHistogram h{std::vector<double>(bins, 0.0), 0.0};
  for (const auto& y : samples) {
    const auto b = first_occurrence_bin(y, keyword, bins);
    if (!b) throw Error(ErrorKind::kInvalidInput, "sample does not contain the keyword");
    h.counts[*b] += 1.0;
    h.total += 1.0;
  }
  return h;
}

/// Exact push-forward of a table under the first-occurrence binning.
inline PositionalHistogram positional_histogram(const DistTable& table,
                                                std::span<const Token> keyword,
                                                std::size_t bins = 10) {
  if (bins == 0) throw Error(ErrorKind::kInvalidInput, "histogram needs at least one bin");
  std::vector<CompensatedSum> acc(bins);
  CompensatedSum total;
  table.for_each([&](std::span<const Token> y, double p) {
    const auto b = first_occurrence_bin(y, keyword, bins);
    if (!b) throw Error(ErrorKind::kInvalidInput, "table has mass on a sequence without the keyword");
    acc[*b].add(p);
    total.add(p);
  });
  PositionalHistogram h{std::vector<double>(bins), total.value()};
  for (std::size_t b = 0; b < bins; ++b) h.counts[b] = acc[b].value();
  return h;
}

using Projection = std::function<std::size_t(std::span<const Token>)>;

/// Push-forward masses of `table` under `f` onto {0, ..., bins-1}.
inline std::vector<double> push_forward(const DistTable& table, const Projection& f,
                                        std::size_t bins) {
  std::vector<CompensatedSum> acc(bins);
  table.for_each([&](std::span<const Token> y, double p) {
    const std::size_t b = f(y);
    if (b >= bins) throw Error(ErrorKind::kInvalidInput, "projection returned an out-of-range bin");
    acc[b].add(p);
  });
  std::vector<double> out(bins);
  for (std::size_t b = 0; b < bins; ++b) out[b] = acc[b].value();
  return out;
}

/// KL between two finite mass vectors; kInf when q is zero where p is not.
inline double kl_vectors(std::span<const double> p, std::span<const double> q) {
  CompensatedSum s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return kInf;
    s.add(p[i] * (std::log(p[i]) - std::log(q[i])));
  }
  return std::max(0.0, s.value());
}

inline double projected_kl(const DistTable& p, const DistTable& q, const Projection& f,
                           std::size_t bins) {
  return kl_vectors(push_forward(p, f, bins), push_forward(q, f, bins));
}

/// The 10-bin keyword-position projection, for sequences containing it.
/// Sequences without the keyword map to an extra trailing bin.
inline Projection keyword_position_projection(Sequence keyword, std::size_t bins = 10) {
  return [keyword = std::move(keyword), bins](std::span<const Token> y) {
    return first_occurrence_bin(y, keyword, bins).value_or(bins);
  };
}

}  // namespace guard
