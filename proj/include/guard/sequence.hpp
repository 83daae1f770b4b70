#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "guard/errors.hpp"

namespace guard {

using Token = std::uint16_t;
using Sequence = std::vector<Token>;

inline constexpr Token kEos = 0;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Finite vocabulary. Id 0 is always the end-of-sequence token.
class Vocabulary {
 public:
  static constexpr std::string_view kEosString = "</s>";

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// `words` are the non-EOS tokens; they receive ids 1..words.size().
  explicit Vocabulary(const std::vector<std::string>& words) {
    names_.emplace_back(kEosString);
    ids_.emplace(std::string(kEosString), kEos);
    for (const auto& w : words) {
      if (w.empty() || w.find_first_of(" \t\r\n,[]") != std::string::npos)
        throw Error(ErrorKind::kInvalidInput, "invalid token string '" + w + "'");
      if (ids_.contains(w))
        throw Error(ErrorKind::kInvalidInput, "duplicate token '" + w + "'");
      if (names_.size() > std::numeric_limits<Token>::max())
        throw Error(ErrorKind::kInvalidInput, "vocabulary too large");
      ids_.emplace(w, static_cast<Token>(names_.size()));
      names_.push_back(w);
    }
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(Token t) const { return names_.at(t); }
  bool contains(std::string_view w) const { return ids_.contains(std::string(w)); }

  Token id(std::string_view w) const {
    auto it = ids_.find(std::string(w));
    if (it == ids_.end())
      throw Error(ErrorKind::kInvalidInput, "unknown token '" + std::string(w) + "'");
    return it->second;
  }

  /// Non-EOS token strings in id order.
  std::vector<std::string> words() const { return {names_.begin() + 1, names_.end()}; }

  Sequence parse(std::string_view text) const {
    Sequence out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) out.push_back(id(w));
    return out;
  }

  std::string render(std::span<const Token> seq) const {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out += ' ';
      out += name(seq[i]);
    }
    return out;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Token> ids_;
};

/// A prefix is usable as a generation context: shorter than max_length and EOS-free.
inline bool is_valid_prefix(std::span<const Token> prefix, std::size_t vocab_size,
                            std::size_t max_length) {
  if (prefix.size() >= max_length) return false;
  return std::all_of(prefix.begin(), prefix.end(),
                     [&](Token t) { return t != kEos && t < vocab_size; });
}

/// Completed output: nonempty, ends with EOS and has no earlier EOS, or has
/// exactly max_length tokens and no EOS at all (forced termination).
inline bool is_valid_sequence(std::span<const Token> seq, std::size_t vocab_size,
                              std::size_t max_length) {
  if (seq.empty() || seq.size() > max_length) return false;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i)
    if (seq[i] == kEos || seq[i] >= vocab_size) return false;
  const Token last = seq.back();
  if (last >= vocab_size) return false;
  return last == kEos || seq.size() == max_length;
}

/// Tokens of a completed sequence without the terminating EOS.
inline std::span<const Token> content(std::span<const Token> seq) {
  if (!seq.empty() && seq.back() == kEos) return seq.first(seq.size() - 1);
  return seq;
}

/// Index of the first occurrence of `pattern` as a contiguous run in `tokens`.
inline std::ptrdiff_t find_subsequence(std::span<const Token> tokens,
                                       std::span<const Token> pattern) {
  if (pattern.empty()) return 0;
  if (pattern.size() > tokens.size()) return -1;
  auto it = std::search(tokens.begin(), tokens.end(), pattern.begin(), pattern.end());
  return it == tokens.end() ? -1 : it - tokens.begin();
}

/// Packs a completed sequence into an integer key: base-|V| digits for
/// positions 0..L-1, zero-padded after EOS. Numeric order of keys equals
/// lexicographic order of the token-id sequences.
class SequenceCodec {
 public:
  SequenceCodec() = default;
  SequenceCodec(std::size_t vocab_size, std::size_t max_length)
      : vocab_size_(vocab_size), max_length_(max_length) {
    const double bits = static_cast<double>(max_length) * std::log2(static_cast<double>(vocab_size));
    if (vocab_size < 2 || max_length == 0 || bits > 62.0)
      throw Error(ErrorKind::kEnumerationTooLarge,
                  "sequence space |V|^L_max does not fit a 62-bit key");
  }

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t max_length() const noexcept { return max_length_; }

  std::uint64_t encode(std::span<const Token> seq) const {
    std::uint64_t key = 0;
    for (std::size_t i = 0; i < max_length_; ++i)
      key = key * vocab_size_ + (i < seq.size() ? seq[i] : 0);
    return key;
  }

  Sequence decode(std::uint64_t key) const {
    Sequence digits(max_length_);
    for (std::size_t i = max_length_; i-- > 0;) {
      digits[i] = static_cast<Token>(key % vocab_size_);
      key /= vocab_size_;
    }
    auto eos = std::find(digits.begin(), digits.end(), kEos);
    if (eos != digits.end()) digits.erase(eos + 1, digits.end());
    return digits;
  }

  friend bool operator==(const SequenceCodec&, const SequenceCodec&) = default;

 private:
  std::size_t vocab_size_ = 2;
  std::size_t max_length_ = 1;
};

}  // namespace guard
