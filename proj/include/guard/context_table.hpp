#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "guard/dist_table.hpp"
#include "guard/errors.hpp"
#include "guard/model.hpp"
#include "guard/sequence.hpp"

namespace guard {

/// Dense numbering of EOS-free contexts of length <= depth. A prefix maps to
/// its last min(|prefix|, depth) tokens; contexts of equal length are ordered
/// lexicographically by token id.
class ContextIndexer {
 public:
  static constexpr std::size_t kMaxContexts = 20'000'000;

  ContextIndexer() = default;
  ContextIndexer(std::size_t vocab_size, std::size_t depth) : v_(vocab_size), depth_(depth) {
    const std::size_t base = v_ - 1;
    offsets_.assign(1, 0);
    std::size_t width = 1;
    for (std::size_t l = 0; l <= depth_; ++l) {
      offsets_.push_back(offsets_.back() + width);
      if (offsets_.back() > kMaxContexts)
        throw Error(ErrorKind::kEnumerationTooLarge, "context table too large");
      width *= base;
    }
  }

  std::size_t vocab_size() const noexcept { return v_; }
  std::size_t depth() const noexcept { return depth_; }
  std::size_t size() const noexcept { return offsets_.back(); }

  std::size_t index(std::span<const Token> prefix) const {
    const std::size_t l = std::min(prefix.size(), depth_);
    std::size_t value = 0;
    for (Token t : prefix.last(l)) value = value * (v_ - 1) + (t - 1);
    return offsets_[l] + value;
  }

  Sequence tokens(std::size_t index) const {
    std::size_t l = 0;
    while (index >= offsets_[l + 1]) ++l;
    std::size_t value = index - offsets_[l];
    Sequence out(l);
    for (std::size_t i = l; i-- > 0;) {
      out[i] = static_cast<Token>(value % (v_ - 1) + 1);
      value /= (v_ - 1);
    }
    return out;
  }

 private:
  std::size_t v_ = 2;
  std::size_t depth_ = 0;
  std::vector<std::size_t> offsets_{0, 1};
};

/// Model backed by an explicit probability row per context. Covers both the
/// n-gram family (context = last order-1 tokens) and the tabular family
/// (context = whole prefix, i.e. order = max_length).
class ContextTableModel final : public AutoregressiveModel {
 public:
  /// `rows` holds indexer.size() * |V| probabilities, context-major.
  ContextTableModel(Vocabulary vocab, std::size_t max_length, std::size_t order,
                    std::vector<double> rows)
      : AutoregressiveModel(std::move(vocab), max_length),
        order_(order),
        indexer_(vocab_size(), context_depth(order, max_length)),
        rows_(std::move(rows)) {
    if (order_ == 0) throw Error(ErrorKind::kInvalidModel, "n-gram order must be >= 1");
    if (rows_.size() != indexer_.size() * vocab_size())
      throw Error(ErrorKind::kInvalidModel, "row table has wrong size");
    for (std::size_t c = 0; c < indexer_.size(); ++c) {
      CompensatedSum s;
      for (double p : row(c)) {
        if (!(p >= 0.0) || !std::isfinite(p))
          throw Error(ErrorKind::kInvalidModel, "negative or non-finite probability in row " +
                                                    std::to_string(c));
        s.add(p);
      }
      if (std::abs(s.value() - 1.0) > 1e-12)
        throw Error(ErrorKind::kInvalidModel, "row " + std::to_string(c) + " sums to " +
                                                  std::to_string(s.value()));
    }
  }

  static std::size_t context_depth(std::size_t order, std::size_t max_length) {
    return std::min(order == 0 ? 0 : order - 1, max_length - 1);
  }

  std::string variant() const override { return is_tabular() ? "tabular" : "ngram"; }
  bool is_tabular() const noexcept { return indexer_.depth() + 1 >= max_length(); }
  std::size_t order() const noexcept { return order_; }
  const ContextIndexer& indexer() const noexcept { return indexer_; }
  std::span<const double> row(std::size_t context) const {
    return std::span<const double>(rows_).subspan(context * vocab_size(), vocab_size());
  }
  std::span<const double> rows() const noexcept { return rows_; }

 protected:
  void fill_next(std::span<const Token> prefix, std::span<double> out) const override {
    auto r = row(indexer_.index(prefix));
    std::copy(r.begin(), r.end(), out.begin());
  }

 private:
  std::size_t order_;
  ContextIndexer indexer_;
  std::vector<double> rows_;
};

inline std::shared_ptr<const ContextTableModel> make_uniform_model(const Vocabulary& vocab,
                                                                   std::size_t max_length,
                                                                   std::size_t order = 1) {
  const std::size_t v = vocab.size();
  ContextIndexer idx(v, ContextTableModel::context_depth(order, max_length));
  std::vector<double> rows(idx.size() * v, 1.0 / static_cast<double>(v));
  return std::make_shared<ContextTableModel>(vocab, max_length, order, std::move(rows));
}

/// Same next-token distribution at every step (order-1 model).
inline std::shared_ptr<const ContextTableModel> make_iid_model(const Vocabulary& vocab,
                                                               std::size_t max_length,
                                                               std::vector<double> probs) {
  if (probs.size() != vocab.size())
    throw Error(ErrorKind::kInvalidModel, "probability vector has wrong size");
  return std::make_shared<ContextTableModel>(vocab, max_length, 1, std::move(probs));
}

/// Maximum-likelihood n-gram fit. Each corpus sentence is a token list
/// without EOS; an EOS transition is counted at its end. `add_k` pseudo
/// counts go to every token of every observed context. Contexts never
/// observed back off to the longest observed suffix.
inline std::shared_ptr<const ContextTableModel> fit_ngram(const Vocabulary& vocab,
                                                          std::size_t max_length,
                                                          std::size_t order,
                                                          std::span<const Sequence> corpus,
                                                          double add_k = 0.0) {
  if (corpus.empty()) throw Error(ErrorKind::kInvalidInput, "empty n-gram corpus");
  const std::size_t v = vocab.size();
  const std::size_t depth = ContextTableModel::context_depth(order, max_length);
  ContextIndexer idx(v, depth);
  std::vector<double> counts(idx.size() * v, 0.0);
  for (const auto& sentence : corpus) {
    Sequence s = sentence;
    for (Token t : s)
      if (t == kEos || t >= v) throw Error(ErrorKind::kInvalidInput, "corpus token out of range");
    s.push_back(kEos);
    for (std::size_t i = 0; i < s.size(); ++i) {
      auto prefix = std::span<const Token>(s).first(i);
      counts[idx.index(prefix) * v + s[i]] += 1.0;
    }
  }
  std::vector<double> rows(counts.size(), 0.0);
  std::vector<bool> observed(idx.size(), false);
  for (std::size_t c = 0; c < idx.size(); ++c) {
    double n = 0.0;
    for (std::size_t t = 0; t < v; ++t) n += counts[c * v + t];
    if (n == 0.0) continue;
    observed[c] = true;
    const double denom = n + add_k * static_cast<double>(v);
    for (std::size_t t = 0; t < v; ++t) rows[c * v + t] = (counts[c * v + t] + add_k) / denom;
  }
  // Back off by dropping the oldest token until an observed context is found.
  for (std::size_t c = 0; c < idx.size(); ++c) {
    if (observed[c]) continue;
    Sequence ctx = idx.tokens(c);
    std::size_t src = 0;
    bool found = false;
    while (!ctx.empty()) {
      ctx.erase(ctx.begin());
      src = idx.index(ctx);
      if (observed[src] && idx.tokens(src).size() == ctx.size()) {
        found = true;
        break;
      }
    }
    if (!found) src = 0;
    if (!observed[src]) {
      for (std::size_t t = 0; t < v; ++t) rows[c * v + t] = 1.0 / static_cast<double>(v);
    } else {
      for (std::size_t t = 0; t < v; ++t) rows[c * v + t] = rows[src * v + t];
    }
  }
  return std::make_shared<ContextTableModel>(vocab, max_length, order, std::move(rows));
}

/// Materializes any model as a full-context tabular model. Contexts that are
/// unreachable under `m` get uniform rows.
inline std::shared_ptr<const ContextTableModel> tabulate(const AutoregressiveModel& m) {
  const std::size_t v = m.vocab_size();
  const std::size_t len = m.max_length();
  ContextIndexer idx(v, len - 1);
  std::vector<double> rows(idx.size() * v, 1.0 / static_cast<double>(v));
  Sequence buf;
  auto recurse = [&](auto&& self) -> void {
    const std::size_t c = idx.index(buf);
    std::span<double> r(rows.data() + c * v, v);
    m.conditional_into(buf, r);
    if (buf.size() + 1 == len) return;
    for (std::size_t t = 1; t < v; ++t) {
      if (rows[c * v + t] <= 0.0) continue;
      buf.push_back(static_cast<Token>(t));
      self(self);
      buf.pop_back();
    }
  };
  recurse(recurse);
  return std::make_shared<ContextTableModel>(m.vocab(), len, len, std::move(rows));
}

/// Full-context tabular model whose sequence probabilities reproduce
/// `table` exactly: p(t | c) = mass(c t) / mass(c). Contexts with zero mass
/// copy `fallback`'s conditional (uniform when fallback is null).
inline std::shared_ptr<const ContextTableModel> model_from_table(
    const DistTable& table, const Vocabulary& vocab, const AutoregressiveModel* fallback = nullptr) {
  const std::size_t v = vocab.size();
  const std::size_t len = table.codec().max_length();
  if (table.codec().vocab_size() != v)
    throw Error(ErrorKind::kInvalidInput, "table and vocabulary disagree");
  ContextIndexer idx(v, len - 1);
  std::vector<double> mass(idx.size() * v, 0.0);
  for (const auto& e : table.entries()) {
    const Sequence s = table.codec().decode(e.key);
    for (std::size_t t = 0; t < s.size(); ++t)
      mass[idx.index(std::span<const Token>(s).first(t)) * v + s[t]] += e.prob;
  }
  std::vector<double> rows(mass.size());
  std::vector<double> tmp(v);
  for (std::size_t c = 0; c < idx.size(); ++c) {
    double total = 0.0;
    for (std::size_t t = 0; t < v; ++t) total += mass[c * v + t];
    if (total > 0.0) {
      for (std::size_t t = 0; t < v; ++t) rows[c * v + t] = mass[c * v + t] / total;
      double fix = 0.0;  // absorb rounding so the row sums to 1
      for (std::size_t t = 0; t < v; ++t) fix += rows[c * v + t];
      if (fix != 1.0)
        for (std::size_t t = 0; t < v; ++t) rows[c * v + t] /= fix;
    } else if (fallback) {
      fallback->conditional_into(idx.tokens(c), tmp);
      std::copy(tmp.begin(), tmp.end(), rows.begin() + static_cast<std::ptrdiff_t>(c * v));
    } else {
      for (std::size_t t = 0; t < v; ++t) rows[c * v + t] = 1.0 / static_cast<double>(v);
    }
  }
  return std::make_shared<ContextTableModel>(vocab, len, len, std::move(rows));
}

}  // namespace guard
