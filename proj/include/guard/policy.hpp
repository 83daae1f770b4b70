#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "guard/context_table.hpp"
#include "guard/errors.hpp"
#include "guard/model.hpp"
#include "guard/sequence.hpp"

namespace guard {

/// Sparse accumulator for gradients over per-context logit rows.
class GradientBuffer {
 public:
  GradientBuffer(std::size_t contexts, std::size_t vocab_size)
      : v_(vocab_size), values_(contexts * vocab_size, 0.0), touched_flag_(contexts, 0) {}

  std::span<double> row(std::size_t c) {
    if (!touched_flag_[c]) {
      touched_flag_[c] = 1;
      touched_.push_back(c);
    }
    return std::span<double>(values_).subspan(c * v_, v_);
  }

  const std::vector<std::size_t>& touched() const noexcept { return touched_; }
  std::span<const double> peek(std::size_t c) const {
    return std::span<const double>(values_).subspan(c * v_, v_);
  }

  void clear() {
    for (std::size_t c : touched_) {
      std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(c * v_), v_, 0.0);
      touched_flag_[c] = 0;
    }
    touched_.clear();
  }

 private:
  std::size_t v_;
  std::vector<double> values_;
  std::vector<char> touched_flag_;
  std::vector<std::size_t> touched_;
};

/// pi_theta: one free logit vector per context, softmax-normalized. The
/// context family is the n-gram family of the given order; order equal to
/// max_length is the tabular (full-context) family.
class SoftmaxPolicy final : public AutoregressiveModel {
 public:
  /// Logits of tokens with zero initial probability are clamped here, which
  /// keeps every softmax strictly positive.
  static constexpr double kLogitFloor = -50.0;

  /// Initializes logits to log-probabilities of `init` at each context.
  SoftmaxPolicy(const AutoregressiveModel& init, std::size_t order)
      : AutoregressiveModel(init.vocab(), init.max_length()),
        order_(order),
        indexer_(vocab_size(), ContextTableModel::context_depth(order, init.max_length())),
        logits_(indexer_.size() * vocab_size()),
        probs_(logits_.size()) {
    std::vector<double> row(vocab_size());
    for (std::size_t c = 0; c < indexer_.size(); ++c) {
      init.conditional_into(indexer_.tokens(c), row);
      for (std::size_t t = 0; t < vocab_size(); ++t)
        logits_[c * vocab_size() + t] =
            row[t] > 0.0 ? std::max(kLogitFloor, std::log(row[t])) : kLogitFloor;
      refresh(c);
    }
  }

  std::string variant() const override { return order_ >= max_length() ? "tabular" : "ngram"; }
  std::size_t order() const noexcept { return order_; }
  const ContextIndexer& indexer() const noexcept { return indexer_; }
  std::size_t parameter_count() const noexcept { return logits_.size(); }

  std::span<const double> logits(std::size_t c) const {
    return std::span<const double>(logits_).subspan(c * vocab_size(), vocab_size());
  }
  std::span<const double> probs(std::size_t c) const {
    return std::span<const double>(probs_).subspan(c * vocab_size(), vocab_size());
  }
  std::span<const double> all_logits() const noexcept { return logits_; }

  void set_logits(std::span<const double> logits) {
    if (logits.size() != logits_.size())
      throw Error(ErrorKind::kInvalidInput, "logit vector has wrong size");
    std::copy(logits.begin(), logits.end(), logits_.begin());
    for (std::size_t c = 0; c < indexer_.size(); ++c) refresh(c);
  }

  /// theta_c += scale * delta
  void add_to_row(std::size_t c, std::span<const double> delta, double scale) {
    for (std::size_t t = 0; t < vocab_size(); ++t)
      logits_[c * vocab_size() + t] += scale * delta[t];
    refresh(c);
  }

  /// Applies theta += scale * buffer on every touched row.
  void apply(const GradientBuffer& g, double scale) {
    for (std::size_t c : g.touched()) add_to_row(c, g.peek(c), scale);
  }

  /// log pi(y) for a valid sequence (unchecked).
  double logprob(std::span<const Token> y) const {
    double lp = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t)
      lp += std::log(probs_[indexer_.index(y.first(t)) * vocab_size() + y[t]]);
    return lp;
  }

  /// buffer += scale * grad_theta log pi(y). Per step t with context c:
  /// d/d theta_{c,v} = [v = y_t] - pi(v | c).
  void accumulate_grad_logprob(std::span<const Token> y, double scale, GradientBuffer& out) const {
    for (std::size_t t = 0; t < y.size(); ++t) {
      const std::size_t c = indexer_.index(y.first(t));
      auto row = out.row(c);
      auto p = probs(c);
      for (std::size_t v = 0; v < vocab_size(); ++v) row[v] -= scale * p[v];
      row[y[t]] += scale;
    }
  }

  std::vector<double> dense_grad_logprob(std::span<const Token> y) const {
    std::vector<double> g(logits_.size(), 0.0);
    for (std::size_t t = 0; t < y.size(); ++t) {
      const std::size_t c = indexer_.index(y.first(t));
      auto p = probs(c);
      for (std::size_t v = 0; v < vocab_size(); ++v) g[c * vocab_size() + v] -= p[v];
      g[c * vocab_size() + y[t]] += 1.0;
    }
    return g;
  }

  /// Immutable copy of the current conditionals.
  std::shared_ptr<const ContextTableModel> snapshot() const {
    return std::make_shared<ContextTableModel>(vocab(), max_length(), order_, probs_);
  }

 protected:
  void fill_next(std::span<const Token> prefix, std::span<double> out) const override {
    auto r = probs(indexer_.index(prefix));
    std::copy(r.begin(), r.end(), out.begin());
  }

 private:
  void refresh(std::size_t c) {
    const std::size_t v = vocab_size();
    const double* l = logits_.data() + c * v;
    double* p = probs_.data() + c * v;
    const double m = *std::max_element(l, l + v);
    double z = 0.0;
    for (std::size_t t = 0; t < v; ++t) {
      p[t] = std::exp(l[t] - m);
      z += p[t];
    }
    double s = 0.0;
    for (std::size_t t = 0; t < v; ++t) {
      p[t] /= z;
      s += p[t];
    }
    // One corrective pass keeps the row sum within an ulp of 1.
    if (s != 1.0)
      for (std::size_t t = 0; t < v; ++t) p[t] /= s;
  }

  std::size_t order_;
  ContextIndexer indexer_;
  std::vector<double> logits_;
  std::vector<double> probs_;
};

}  // namespace guard
