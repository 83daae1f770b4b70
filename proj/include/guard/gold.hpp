#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "guard/constraints.hpp"
#include "guard/context_table.hpp"
#include "guard/dist_table.hpp"
#include "guard/errors.hpp"
#include "guard/model.hpp"

namespace guard {

/// The pair (base model, constraint) defining the potential
/// P(y) = base(y) b(y), its partition function Z and the normalized gold
/// table P/Z. Everything is computed eagerly at construction.
class FilteredModel {
 public:
  FilteredModel(ModelPtr base, Constraint b, std::size_t cap = kDefaultEnumerationCap)
      : base_(std::move(base)), b_(std::move(b)) {
    base_table_ = enumerate_support(*base_, cap);
    std::vector<DistTable::Entry> kept;
    CompensatedSum z;
    for (const auto& e : base_table_.entries()) {
      if (b_.evaluate(base_table_.codec().decode(e.key))) {
        kept.push_back(e);
        z.add(e.prob);
      }
    }
    partition_ = z.value();
    if (!(partition_ > 0.0))
      throw Error(ErrorKind::kEmptyGoldSupport,
                  "no sequence with positive base probability satisfies the constraint");
    for (auto& e : kept) e.prob /= partition_;
    gold_ = DistTable::from_sorted(base_table_.codec(), std::move(kept));
  }

  const AutoregressiveModel& base() const noexcept { return *base_; }
  const ModelPtr& base_ptr() const noexcept { return base_; }
  const Constraint& constraint() const noexcept { return b_; }
  const Vocabulary& vocab() const noexcept { return base_->vocab(); }

  double partition() const noexcept { return partition_; }
  const DistTable& base_table() const noexcept { return base_table_; }
  const DistTable& gold() const noexcept { return gold_; }

  /// base(y) b(y), evaluated by the chain rule without consulting Z.
  double potential(std::span<const Token> seq) const {
    if (!b_.evaluate(seq)) return 0.0;
    return sequence_prob(*base_, seq);
  }
  double log_potential(std::span<const Token> seq) const {
    if (!b_.evaluate(seq)) return kNegInf;
    return sequence_logprob(*base_, seq);
  }

 private:
  ModelPtr base_;
  Constraint b_;
  DistTable base_table_;
  DistTable gold_;
  double partition_ = 0.0;
};

inline double exact_partition(const FilteredModel& fm) { return fm.partition(); }
inline const DistTable& exact_gold(const FilteredModel& fm) { return fm.gold(); }
inline double potential(const FilteredModel& fm, std::span<const Token> seq) {
  return fm.potential(seq);
}

/// KL(p || q) in nats with 0 log 0 = 0; kInf when p is not absolutely
/// continuous with respect to q.
inline double exact_kl(const DistTable& p, const DistTable& q) {
  auto pe = p.entries();
  auto qe = q.entries();
  CompensatedSum s;
  std::size_t j = 0;
  for (const auto& e : pe) {
    while (j < qe.size() && qe[j].key < e.key) ++j;
    if (j == qe.size() || qe[j].key != e.key) return kInf;
    s.add(e.prob * (std::log(e.prob) - std::log(qe[j].prob)));
  }
  return std::max(0.0, s.value());
}

/// KL(p || q) where q is evaluated through the chain rule.
inline double exact_kl(const DistTable& p, const AutoregressiveModel& q) {
  CompensatedSum s;
  for (const auto& e : p.entries()) {
    const double lq = sequence_logprob(q, p.codec().decode(e.key));
    if (lq == kNegInf) return kInf;
    s.add(e.prob * (std::log(e.prob) - lq));
  }
  return std::max(0.0, s.value());
}

/// |KL(p||a) - KL(p||g) - KL(g||a)| for p supported inside {b = 1} and
/// inside the base support.
inline double pythagorean_residual(const DistTable& p, const FilteredModel& fm) {
  for (const auto& e : p.entries()) {
    const Sequence s = p.codec().decode(e.key);
    if (!fm.constraint().evaluate(s))
      throw Error(ErrorKind::kConstraintViolatingDistribution,
                  "p puts mass on a sequence violating the constraint");
  }
  if (!p.support_within(fm.base_table()))
    throw Error(ErrorKind::kConstraintViolatingDistribution,
                "p puts mass outside the base support");
  const double kl_pa = exact_kl(p, fm.base_table());
  const double kl_pg = exact_kl(p, fm.gold());
  const double kl_ga = exact_kl(fm.gold(), fm.base_table());
  return std::abs(kl_pa - kl_pg - kl_ga);
}

/// Exact acceptance rate E_{y~m} b(y), by enumeration of m.
inline double exact_acceptance_rate(const AutoregressiveModel& m, const Constraint& b,
                                    std::size_t cap = kDefaultEnumerationCap) {
  CompensatedSum s;
  for_each_sequence(
      m,
      [&](std::span<const Token> seq, double lp) {
        if (b.evaluate(seq)) s.add(std::exp(lp));
      },
      cap);
  return s.value();
}

/// The gold distribution as a full-context autoregressive model.
inline std::shared_ptr<const ContextTableModel> gold_as_model(const FilteredModel& fm) {
  return model_from_table(fm.gold(), fm.vocab(), &fm.base());
}

}  // namespace guard
