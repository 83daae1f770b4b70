#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "guard/guard.hpp"

namespace guard::testing {

/// Vocabulary A, B, C, ... of n non-EOS tokens.
inline Vocabulary letters(std::size_t n) {
  std::vector<std::string> w;
  for (std::size_t i = 0; i < n; ++i) w.emplace_back(1, static_cast<char>('A' + i));
  return Vocabulary(w);
}

/// Two positions, no EOS, P(A) = 0.7 and P(B) = 0.3 at each step.
inline ModelPtr two_position_model() {
  return make_iid_model(letters(2), 2, {0.0, 0.7, 0.3});
}

/// Random full-context tabular model. Rows are Dirichlet(1) draws; with
/// `sparsity` > 0 each entry is zeroed with that probability (one entry per
/// row is always kept).
inline std::shared_ptr<const ContextTableModel> random_tabular(const Vocabulary& vocab,
                                                               std::size_t max_length, Rng& rng,
                                                               double sparsity = 0.0,
                                                               double eos_scale = 1.0) {
  const std::size_t v = vocab.size();
  ContextIndexer idx(v, max_length - 1);
  std::vector<double> rows(idx.size() * v);
  for (std::size_t c = 0; c < idx.size(); ++c) {
    std::vector<double> r(v);
    double total = 0.0;
    for (std::size_t t = 0; t < v; ++t) {
      r[t] = -std::log(1.0 - rng.uniform()) * (t == kEos ? eos_scale : 1.0);
      if (sparsity > 0.0 && rng.uniform() < sparsity) r[t] = 0.0;
    }
    if (std::all_of(r.begin(), r.end(), [](double x) { return x == 0.0; }))
      r[1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(v - 1))] = 1.0;
    for (double x : r) total += x;
    for (std::size_t t = 0; t < v; ++t) rows[c * v + t] = r[t] / total;
    // Exact row sums within 1e-12: fold the rounding residue into the largest entry.
    CompensatedSum s;
    for (std::size_t t = 0; t < v; ++t) s.add(rows[c * v + t]);
    auto* big = &rows[c * v];
    for (std::size_t t = 0; t < v; ++t)
      if (rows[c * v + t] > *big) big = &rows[c * v + t];
    *big += 1.0 - s.value();
  }
  return std::make_shared<ContextTableModel>(vocab, max_length, max_length, std::move(rows));
}

/// Random keyword or threshold constraint over the non-EOS tokens.
inline Constraint random_constraint(std::size_t vocab_size, Rng& rng) {
  auto token = [&] {
    return static_cast<Token>(1 + static_cast<std::size_t>(rng.uniform() *
                                                           static_cast<double>(vocab_size - 1)));
  };
  if (rng.uniform() < 0.5) {
    Sequence kw{token()};
    if (rng.uniform() < 0.3) kw.push_back(token());
    return Constraint::contains(kw);
  }
  RatioScorer s;
  s.positive.insert(token());
  const Token n = token();
  if (!s.positive.contains(n)) s.negative.insert(n);
  s.window = 1 + static_cast<std::size_t>(rng.uniform() * 3.0);
  const double taus[] = {0.3, 0.5, 0.6};
  return Constraint::threshold(s, taus[static_cast<std::size_t>(rng.uniform() * 3.0)]);
}

struct RandomInstance {
  ModelPtr a;
  ModelPtr aprime;
  Constraint b = Constraint::always();
};

/// |V| <= 5 including EOS, max_length <= 6, random a, a' and b with Z > 0.
inline RandomInstance random_instance(Rng& rng) {
  for (;;) {
    const std::size_t v = 3 + static_cast<std::size_t>(rng.uniform() * 3.0);  // 3..5
    const std::size_t len = 2 + static_cast<std::size_t>(rng.uniform() * 5.0);  // 2..6
    const Vocabulary vocab = letters(v - 1);
    RandomInstance inst{random_tabular(vocab, len, rng), random_tabular(vocab, len, rng),
                        random_constraint(v, rng)};
    if (satisfying_mass(inst.b, enumerate_support(*inst.a)) > 0.0) return inst;
  }
}

struct ChiSquareResult {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
};

/// Pearson goodness of fit of observed key counts against a table. A count
/// on a key outside the table's support gives p = 0.
inline ChiSquareResult chi_square(const std::map<std::uint64_t, std::size_t>& counts,
                                  const DistTable& expected) {
  std::size_t n = 0;
  for (const auto& [k, c] : counts) n += c;
  ChiSquareResult r;
  for (const auto& [k, c] : counts)
    if (expected.prob_of_key(k) == 0.0) {
      r.statistic = kInf;
      r.p_value = 0.0;
      return r;
    }
  for (const auto& e : expected.entries()) {
    const double exp_count = e.prob * static_cast<double>(n);
    auto it = counts.find(e.key);
    const double obs = it == counts.end() ? 0.0 : static_cast<double>(it->second);
    r.statistic += (obs - exp_count) * (obs - exp_count) / exp_count;
  }
  r.dof = expected.size() - 1;
  if (r.dof == 0) return r;
  r.p_value = boost::math::cdf(
      boost::math::complement(boost::math::chi_squared(static_cast<double>(r.dof)), r.statistic));
  return r;
}

/// Random distribution supported on the satisfying part of `table`'s support.
inline DistTable random_member_of_constraint_set(const DistTable& base_table, const Constraint& b,
                                                 Rng& rng) {
  std::vector<DistTable::Entry> out;
  for (const auto& e : base_table.entries())
    if (b.evaluate(base_table.codec().decode(e.key)) && rng.uniform() < 0.7)
      out.push_back({e.key, -std::log(1.0 - rng.uniform())});
  if (out.empty())
    for (const auto& e : base_table.entries())
      if (b.evaluate(base_table.codec().decode(e.key))) {
        out.push_back({e.key, 1.0});
        break;
      }
  return DistTable::from_sorted(base_table.codec(), std::move(out)).normalized();
}

inline Sequence seq(const Vocabulary& v, std::string_view text) { return v.parse(text); }

}  // namespace guard::testing
