#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "guard/errors.hpp"
#include "guard/sequence.hpp"

namespace guard {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Explicit finite distribution over completed sequences, stored as
/// (key, probability) pairs sorted by key. Entries with zero probability are
/// not stored.
class DistTable {
 public:
  struct Entry {
    std::uint64_t key;
    double prob;
  };

  DistTable() = default;
  explicit DistTable(SequenceCodec codec) : codec_(codec) {}

  /// Builds from arbitrary entries: sorts, merges duplicate keys by summing
  /// and drops zeros.
  static DistTable from_entries(SequenceCodec codec, std::vector<Entry> entries) {
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.key < b.key; });
    DistTable t(codec);
    t.entries_.reserve(entries.size());
    for (const auto& e : entries) {
      if (!(e.prob >= 0.0) || !std::isfinite(e.prob))
        throw Error(ErrorKind::kInvalidInput, "table probability must be finite and nonnegative");
      if (!t.entries_.empty() && t.entries_.back().key == e.key)
        t.entries_.back().prob += e.prob;
      else
        t.entries_.push_back(e);
    }
    std::erase_if(t.entries_, [](const Entry& e) { return e.prob == 0.0; });
    return t;
  }

  /// Entries must already be sorted by strictly increasing key.
  static DistTable from_sorted(SequenceCodec codec, std::vector<Entry> entries) {
    DistTable t(codec);
    t.entries_ = std::move(entries);
    std::erase_if(t.entries_, [](const Entry& e) { return e.prob == 0.0; });
    return t;
  }

  const SequenceCodec& codec() const noexcept { return codec_; }
  std::span<const Entry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  Sequence sequence(std::size_t i) const { return codec_.decode(entries_[i].key); }
  double prob(std::size_t i) const { return entries_[i].prob; }

  double prob_of_key(std::uint64_t key) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), key,
                               [](const Entry& e, std::uint64_t k) { return e.key < k; });
    return (it != entries_.end() && it->key == key) ? it->prob : 0.0;
  }
  double prob(std::span<const Token> seq) const { return prob_of_key(codec_.encode(seq)); }

  double total() const {
    CompensatedSum s;
    for (const auto& e : entries_) s.add(e.prob);
    return s.value();
  }

  /// Copy scaled to unit mass. Throws when the mass is zero.
  DistTable normalized() const {
    const double z = total();
    if (!(z > 0.0)) throw Error(ErrorKind::kInvalidInput, "cannot normalize a zero-mass table");
    DistTable t(codec_);
    t.entries_ = entries_;
    for (auto& e : t.entries_) e.prob /= z;
    return t;
  }

  /// True when every support key of *this is in `other`'s support.
  bool support_within(const DistTable& other) const {
    std::size_t j = 0;
    for (const auto& e : entries_) {
      while (j < other.entries_.size() && other.entries_[j].key < e.key) ++j;
      if (j == other.entries_.size() || other.entries_[j].key != e.key) return false;
    }
    return true;
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    for (const auto& e : entries_) fn(codec_.decode(e.key), e.prob);
  }

 private:
  SequenceCodec codec_;
  std::vector<Entry> entries_;
};

/// Total-variation distance between two tables over the same space.
inline double total_variation(const DistTable& p, const DistTable& q) {
  auto pe = p.entries();
  auto qe = q.entries();
  std::size_t i = 0, j = 0;
  CompensatedSum s;
  while (i < pe.size() || j < qe.size()) {
    if (j == qe.size() || (i < pe.size() && pe[i].key < qe[j].key)) {
      s.add(pe[i++].prob);
    } else if (i == pe.size() || qe[j].key < pe[i].key) {
      s.add(qe[j++].prob);
    } else {
      s.add(std::abs(pe[i++].prob - qe[j++].prob));
    }
  }
  return 0.5 * s.value();
}

/// Largest absolute entrywise difference.
inline double max_abs_difference(const DistTable& p, const DistTable& q) {
  auto pe = p.entries();
  auto qe = q.entries();
  std::size_t i = 0, j = 0;
  double worst = 0.0;
  while (i < pe.size() || j < qe.size()) {
    if (j == qe.size() || (i < pe.size() && pe[i].key < qe[j].key)) {
      worst = std::max(worst, pe[i++].prob);
    } else if (i == pe.size() || qe[j].key < pe[i].key) {
      worst = std::max(worst, qe[j++].prob);
    } else {
      worst = std::max(worst, std::abs(pe[i++].prob - qe[j++].prob));
    }
  }
  return worst;
}

}  // namespace guard
