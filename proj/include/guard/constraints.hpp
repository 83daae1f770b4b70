#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "guard/dist_table.hpp"
#include "guard/errors.hpp"
#include "guard/sequence.hpp"

namespace guard {

/// Token-count sentiment analog: over the last `window` content tokens,
/// #positive / (#positive + #negative), or 0.5 when neither occurs.
struct RatioScorer {
  std::set<Token> positive;
  std::set<Token> negative;
  std::size_t window = 3;

  double score(std::span<const Token> seq) const {
    auto body = content(seq);
    auto tail = body.last(std::min(window, body.size()));
    std::size_t pos = 0, neg = 0;
    for (Token t : tail) {
      if (positive.contains(t)) ++pos;
      if (negative.contains(t)) ++neg;
    }
    if (pos + neg == 0) return 0.5;
    return static_cast<double>(pos) / static_cast<double>(pos + neg);
  }
};

inline double score(const RatioScorer& s, std::span<const Token> seq) { return s.score(seq); }

class Constraint;

namespace constraint_kinds {
struct Constant {
  bool value;
};
struct Contains {
  Sequence keyword;
};
struct Avoids {
  Sequence keyword;
};
struct PrefixRequired {
  Sequence prefix;
};
/// Satisfied when score > threshold (strict).
struct Threshold {
  RatioScorer scorer;
  double threshold;
};
struct Conjunction {
  std::vector<Constraint> parts;
};
}  // namespace constraint_kinds

/// Binary predicate b over completed sequences. Pure and deterministic;
/// evaluation is linear in sequence length.
class Constraint {
 public:
  using Kind = std::variant<constraint_kinds::Constant, constraint_kinds::Contains,
                            constraint_kinds::Avoids, constraint_kinds::PrefixRequired,
                            constraint_kinds::Threshold, constraint_kinds::Conjunction>;

  static Constraint always() { return Constraint(constraint_kinds::Constant{true}); }
  static Constraint never() { return Constraint(constraint_kinds::Constant{false}); }
  static Constraint contains(Sequence keyword) {
    check_keyword(keyword);
    return Constraint(constraint_kinds::Contains{std::move(keyword)});
  }
  static Constraint avoids(Sequence keyword) {
    check_keyword(keyword);
    return Constraint(constraint_kinds::Avoids{std::move(keyword)});
  }
  static Constraint prefix_required(Sequence prefix) {
    check_keyword(prefix);
    return Constraint(constraint_kinds::PrefixRequired{std::move(prefix)});
  }
  static Constraint threshold(RatioScorer scorer, double tau) {
    return Constraint(constraint_kinds::Threshold{std::move(scorer), tau});
  }
  static Constraint conjunction(std::vector<Constraint> parts) {
    return Constraint(constraint_kinds::Conjunction{std::move(parts)});
  }

  const Kind& kind() const noexcept { return kind_; }

  bool operator()(std::span<const Token> seq) const { return evaluate(seq); }

  bool evaluate(std::span<const Token> seq) const {
    namespace ck = constraint_kinds;
    auto body = content(seq);
    return std::visit(
        [&](const auto& k) -> bool {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, ck::Constant>) {
            return k.value;
          } else if constexpr (std::is_same_v<K, ck::Contains>) {
            return find_subsequence(body, k.keyword) >= 0;
          } else if constexpr (std::is_same_v<K, ck::Avoids>) {
            return find_subsequence(body, k.keyword) < 0;
          } else if constexpr (std::is_same_v<K, ck::PrefixRequired>) {
            return body.size() >= k.prefix.size() &&
                   std::equal(k.prefix.begin(), k.prefix.end(), body.begin());
          } else if constexpr (std::is_same_v<K, ck::Threshold>) {
            return k.scorer.score(seq) > k.threshold;
          } else {
            return std::all_of(k.parts.begin(), k.parts.end(),
                               [&](const Constraint& c) { return c.evaluate(seq); });
          }
        },
        kind_);
  }

  /// The keyword of a contains/avoids constraint, if that is what this is.
  std::optional<Sequence> keyword() const {
    if (auto* c = std::get_if<constraint_kinds::Contains>(&kind_)) return c->keyword;
    if (auto* a = std::get_if<constraint_kinds::Avoids>(&kind_)) return a->keyword;
    return std::nullopt;
  }
  bool is_contains() const { return std::holds_alternative<constraint_kinds::Contains>(kind_); }
  bool is_avoids() const { return std::holds_alternative<constraint_kinds::Avoids>(kind_); }

  std::string describe(const Vocabulary& vocab) const {
    namespace ck = constraint_kinds;
    return std::visit(
        [&](const auto& k) -> std::string {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, ck::Constant>) {
            return k.value ? "always" : "never";
          } else if constexpr (std::is_same_v<K, ck::Contains>) {
            return "contains(" + vocab.render(k.keyword) + ")";
          } else if constexpr (std::is_same_v<K, ck::Avoids>) {
            return "avoids(" + vocab.render(k.keyword) + ")";
          } else if constexpr (std::is_same_v<K, ck::PrefixRequired>) {
            return "prefix(" + vocab.render(k.prefix) + ")";
          } else if constexpr (std::is_same_v<K, ck::Threshold>) {
            return "score>" + std::to_string(k.threshold);
          } else {
            std::string s = "and(";
            for (std::size_t i = 0; i < k.parts.size(); ++i)
              s += (i ? "," : "") + k.parts[i].describe(vocab);
            return s + ")";
          }
        },
        kind_);
  }

 private:
  explicit Constraint(Kind k) : kind_(std::move(k)) {}

  static void check_keyword(const Sequence& kw) {
    if (kw.empty()) throw Error(ErrorKind::kInvalidInput, "keyword must be nonempty");
    for (Token t : kw)
      if (t == kEos) throw Error(ErrorKind::kInvalidInput, "keyword must not contain EOS");
  }

  Kind kind_;
};

inline bool evaluate(const Constraint& b, std::span<const Token> seq) { return b.evaluate(seq); }

/// Mass of the table on sequences satisfying b.
inline double satisfying_mass(const Constraint& b, const DistTable& table) {
  CompensatedSum s;
  for (const auto& e : table.entries())
    if (b.evaluate(table.codec().decode(e.key))) s.add(e.prob);
  return s.value();
}

/// The table conditioned on b = 1: the output law of rejection sampling
/// from it. Throws when no satisfying sequence has mass.
inline DistTable condition_on(const DistTable& table, const Constraint& b) {
  std::vector<DistTable::Entry> kept;
  CompensatedSum z;
  for (const auto& e : table.entries())
    if (b.evaluate(table.codec().decode(e.key))) {
      kept.push_back(e);
      z.add(e.prob);
    }
  if (!(z.value() > 0.0))
    throw Error(ErrorKind::kEmptyGoldSupport, "no satisfying sequence has positive mass");
  for (auto& e : kept) e.prob /= z.value();
  return DistTable::from_sorted(table.codec(), std::move(kept));
}

}  // namespace guard
