#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "guard/dist_table.hpp"
#include "guard/errors.hpp"
#include "guard/random.hpp"
#include "guard/sequence.hpp"

namespace guard {

inline constexpr std::size_t kDefaultEnumerationCap = 10'000'000;

/// Conditional next-token distribution over a finite vocabulary with
/// sequences bounded by max_length (forced termination at max_length).
/// Implementations are immutable after construction.
class AutoregressiveModel {
 public:
  AutoregressiveModel(Vocabulary vocab, std::size_t max_length)
      : vocab_(std::move(vocab)), max_length_(max_length) {
    if (max_length_ == 0) throw Error(ErrorKind::kInvalidModel, "max_length must be positive");
    if (vocab_.size() < 2) throw Error(ErrorKind::kInvalidModel, "vocabulary needs a non-EOS token");
  }
  virtual ~AutoregressiveModel() = default;

  const Vocabulary& vocab() const noexcept { return vocab_; }
  std::size_t vocab_size() const noexcept { return vocab_.size(); }
  std::size_t max_length() const noexcept { return max_length_; }
  SequenceCodec codec() const { return {vocab_.size(), max_length_}; }

  /// Variant tag: "tabular", "ngram" or "composed".
  virtual std::string variant() const = 0;

  std::vector<double> next_token_dist(std::span<const Token> prefix) const {
    if (!is_valid_prefix(prefix, vocab_size(), max_length_))
      throw Error(ErrorKind::kInvalidPrefix,
                  "invalid prefix '" + vocab_.render(prefix) + "'");
    std::vector<double> out(vocab_size());
    fill_next(prefix, out);
    return out;
  }

  /// Unchecked hot path; `prefix` must satisfy is_valid_prefix and `out`
  /// must hold vocab_size() entries.
  void conditional_into(std::span<const Token> prefix, std::span<double> out) const {
    fill_next(prefix, out);
  }

 protected:
  virtual void fill_next(std::span<const Token> prefix, std::span<double> out) const = 0;

 private:
  Vocabulary vocab_;
  std::size_t max_length_;
};

using ModelPtr = std::shared_ptr<const AutoregressiveModel>;

inline void require_valid_sequence(const AutoregressiveModel& m, std::span<const Token> seq) {
  if (!is_valid_sequence(seq, m.vocab_size(), m.max_length()))
    throw Error(ErrorKind::kInvalidSequence, "invalid sequence '" +
                                                 (seq.empty() ? std::string("<empty>")
                                                              : m.vocab().render(seq)) +
                                                 "'");
}

/// Natural-log probability by the chain rule; kNegInf for zero mass.
inline double sequence_logprob(const AutoregressiveModel& m, std::span<const Token> seq) {
  require_valid_sequence(m, seq);
  std::vector<double> dist(m.vocab_size());
  double lp = 0.0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    m.conditional_into(seq.first(t), dist);
    const double p = dist[seq[t]];
    if (p <= 0.0) return kNegInf;
    lp += std::log(p);
  }
  return lp;
}

inline double sequence_prob(const AutoregressiveModel& m, std::span<const Token> seq) {
  return std::exp(sequence_logprob(m, seq));
}

/// Ancestral sample. Terminates at EOS or at max_length.
inline Sequence sample_sequence(const AutoregressiveModel& m, Rng& rng) {
  Sequence seq;
  seq.reserve(m.max_length());
  std::vector<double> dist(m.vocab_size());
  while (seq.size() < m.max_length()) {
    m.conditional_into(seq, dist);
    const Token t = static_cast<Token>(rng.categorical(dist));
    seq.push_back(t);
    if (t == kEos) break;
  }
  return seq;
}

/// Depth-first visit of every positive-probability completed sequence in
/// lexicographic token-id order. `fn(span<const Token> seq, double logprob)`.
/// Throws kEnumerationTooLarge once more than `cap` sequences are visited.
template <class Fn>
void for_each_sequence(const AutoregressiveModel& m, Fn&& fn,
                       std::size_t cap = kDefaultEnumerationCap) {
  const std::size_t v = m.vocab_size();
  const std::size_t len = m.max_length();
  std::vector<std::vector<double>> dist(len, std::vector<double>(v));
  Sequence buf;
  buf.reserve(len);
  std::size_t visited = 0;
  auto leaf = [&](double lp) {
    if (++visited > cap)
      throw Error(ErrorKind::kEnumerationTooLarge,
                  "support exceeds enumeration cap of " + std::to_string(cap) + " sequences");
    fn(std::span<const Token>(buf), lp);
  };
  auto recurse = [&](auto&& self, double lp) -> void {
    const std::size_t depth = buf.size();
    auto& d = dist[depth];
    m.conditional_into(buf, d);
    for (std::size_t t = 0; t < v; ++t) {
      if (d[t] <= 0.0) continue;
      const double child = lp + std::log(d[t]);
      buf.push_back(static_cast<Token>(t));
      if (t == kEos || depth + 1 == len)
        leaf(child);
      else
        self(self, child);
      buf.pop_back();
    }
  };
  recurse(recurse, 0.0);
}

/// Exact table over all sequences with positive probability.
inline DistTable enumerate_support(const AutoregressiveModel& m,
                                   std::size_t cap = kDefaultEnumerationCap) {
  const SequenceCodec codec = m.codec();
  std::vector<DistTable::Entry> entries;
  for_each_sequence(
      m,
      [&](std::span<const Token> seq, double lp) {
        entries.push_back({codec.encode(seq), std::exp(lp)});
      },
      cap);
  return DistTable::from_sorted(codec, std::move(entries));
}

/// Checks that every reachable conditional is a probability vector within
/// `tol`. Visits contexts depth-first; throws kInvalidModel on failure.
inline void validate_model(const AutoregressiveModel& m, double tol = 1e-12,
                           std::size_t cap = kDefaultEnumerationCap) {
  const std::size_t v = m.vocab_size();
  std::vector<std::vector<double>> dist(m.max_length(), std::vector<double>(v));
  Sequence buf;
  std::size_t visited = 0;
  auto recurse = [&](auto&& self) -> void {
    if (++visited > cap)
      throw Error(ErrorKind::kEnumerationTooLarge, "context tree exceeds enumeration cap");
    auto& d = dist[buf.size()];
    m.conditional_into(buf, d);
    CompensatedSum s;
    for (double p : d) {
      if (!(p >= 0.0) || !std::isfinite(p))
        throw Error(ErrorKind::kInvalidModel,
                    "negative or non-finite probability at '" + m.vocab().render(buf) + "'");
      s.add(p);
    }
    if (std::abs(s.value() - 1.0) > tol)
      throw Error(ErrorKind::kInvalidModel,
                  "conditional at '" + m.vocab().render(buf) + "' sums to " +
                      std::to_string(s.value()));
    if (buf.size() + 1 == m.max_length()) return;
    const std::vector<double> here = d;
    for (std::size_t t = 1; t < v; ++t) {
      if (here[t] <= 0.0) continue;
      buf.push_back(static_cast<Token>(t));
      self(self);
      buf.pop_back();
    }
  };
  recurse(recurse);
}

}  // namespace guard
