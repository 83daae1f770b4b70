#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "guard/errors.hpp"
#include "guard/model.hpp"
#include "guard/sequence.hpp"

namespace guard {

/// Adds a per-token logit bias to a base model and renormalizes. When a
/// deactivation keyword is given, the bias applies only while the keyword
/// has not yet occurred in the prefix; afterwards the base conditionals are
/// returned unchanged.
class LogitBiasModel final : public AutoregressiveModel {
 public:
  LogitBiasModel(ModelPtr base, std::vector<double> bias, Sequence deactivate_after = {})
      : AutoregressiveModel(base->vocab(), base->max_length()),
        base_(std::move(base)),
        bias_(std::move(bias)),
        keyword_(std::move(deactivate_after)) {
    if (bias_.size() != vocab_size())
      throw Error(ErrorKind::kInvalidInput, "bias vector has wrong size");
    for (double b : bias_)
      if (!std::isfinite(b)) throw Error(ErrorKind::kInvalidInput, "logit bias must be finite");
    for (Token t : keyword_)
      if (t == kEos || t >= vocab_size())
        throw Error(ErrorKind::kInvalidInput, "deactivation keyword must be non-EOS tokens");
    identity_ = std::all_of(bias_.begin(), bias_.end(), [](double b) { return b == 0.0; });
  }

  std::string variant() const override { return "composed"; }
  const ModelPtr& base() const noexcept { return base_; }

  bool active(std::span<const Token> prefix) const {
    return keyword_.empty() || find_subsequence(prefix, keyword_) < 0;
  }

 protected:
  void fill_next(std::span<const Token> prefix, std::span<double> out) const override {
    base_->conditional_into(prefix, out);
    if (identity_ || !active(prefix)) return;
    // Shift by the largest active logit so exp() stays in range.
    double shift = kNegInf;
    for (std::size_t t = 0; t < out.size(); ++t)
      if (out[t] > 0.0) shift = std::max(shift, std::log(out[t]) + bias_[t]);
    double total = 0.0;
    for (std::size_t t = 0; t < out.size(); ++t) {
      out[t] = out[t] > 0.0 ? std::exp(std::log(out[t]) + bias_[t] - shift) : 0.0;
      total += out[t];
    }
    for (double& p : out) p /= total;
  }

 private:
  ModelPtr base_;
  std::vector<double> bias_;
  Sequence keyword_;
  bool identity_ = false;
};

/// Removes banned tokens from every conditional and renormalizes.
class TokenMaskModel final : public AutoregressiveModel {
 public:
  /// Throws kDeadEnd if some reachable context has all of its mass banned.
  TokenMaskModel(ModelPtr base, std::set<Token> banned,
                 std::size_t cap = kDefaultEnumerationCap)
      : AutoregressiveModel(base->vocab(), base->max_length()),
        base_(std::move(base)),
        banned_(std::move(banned)) {
    for (Token t : banned_)
      if (t >= vocab_size()) throw Error(ErrorKind::kInvalidInput, "banned token out of range");
    check_reachable(cap);
  }

  std::string variant() const override { return "composed"; }
  const std::set<Token>& banned() const noexcept { return banned_; }

 protected:
  void fill_next(std::span<const Token> prefix, std::span<double> out) const override {
    base_->conditional_into(prefix, out);
    double total = 0.0;
    for (std::size_t t = 0; t < out.size(); ++t) {
      if (banned_.contains(static_cast<Token>(t))) out[t] = 0.0;
      total += out[t];
    }
    if (!(total > 0.0))
      throw Error(ErrorKind::kDeadEnd,
                  "every token with mass is banned after '" + vocab().render(prefix) + "'");
    for (double& p : out) p /= total;
  }

 private:
  void check_reachable(std::size_t cap) const {
    std::vector<std::vector<double>> dist(max_length(), std::vector<double>(vocab_size()));
    Sequence buf;
    std::size_t visited = 0;
    auto recurse = [&](auto&& self) -> void {
      if (++visited > cap)
        throw Error(ErrorKind::kEnumerationTooLarge, "context tree exceeds enumeration cap");
      auto& d = dist[buf.size()];
      fill_next(buf, d);
      if (buf.size() + 1 == max_length()) return;
      for (std::size_t t = 1; t < vocab_size(); ++t) {
        if (dist[buf.size()][t] <= 0.0) continue;
        buf.push_back(static_cast<Token>(t));
        self(self);
        buf.pop_back();
      }
    };
    recurse(recurse);
  }

  ModelPtr base_;
  std::set<Token> banned_;
};

/// Generation that starts with a fixed opening: the first |opening| steps
/// emit the opening tokens with probability 1, later steps follow the base
/// model conditioned on everything generated so far.
class ForcedPrefixModel final : public AutoregressiveModel {
 public:
  ForcedPrefixModel(ModelPtr base, Sequence opening)
      : AutoregressiveModel(base->vocab(), base->max_length()),
        base_(std::move(base)),
        opening_(std::move(opening)) {
    if (opening_.size() >= max_length())
      throw Error(ErrorKind::kInvalidInput, "opening must be shorter than max_length");
    for (Token t : opening_)
      if (t == kEos || t >= vocab_size())
        throw Error(ErrorKind::kInvalidInput, "opening must consist of non-EOS tokens");
  }

  std::string variant() const override { return "composed"; }
  const Sequence& opening() const noexcept { return opening_; }

 protected:
  void fill_next(std::span<const Token> prefix, std::span<double> out) const override {
    const std::size_t i = prefix.size();
    if (i < opening_.size()) {
      std::fill(out.begin(), out.end(), 0.0);
      if (std::equal(prefix.begin(), prefix.end(), opening_.begin())) {
        out[opening_[i]] = 1.0;
      } else {
        base_->conditional_into(prefix, out);
      }
      return;
    }
    base_->conditional_into(prefix, out);
  }

 private:
  ModelPtr base_;
  Sequence opening_;
};

/// Logit-bias composition; `deactivate_after` empty means always active.
inline ModelPtr apply_logit_bias(ModelPtr base, std::vector<double> bias,
                                 Sequence deactivate_after = {}) {
  return std::make_shared<LogitBiasModel>(std::move(base), std::move(bias),
                                          std::move(deactivate_after));
}

inline ModelPtr apply_token_mask(ModelPtr base, std::set<Token> banned) {
  return std::make_shared<TokenMaskModel>(std::move(base), std::move(banned));
}

}  // namespace guard
