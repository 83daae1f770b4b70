#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "guard/context_table.hpp"
#include "guard/dist_table.hpp"
#include "guard/errors.hpp"
#include "guard/model.hpp"

namespace guard {

/// Shortest-safe decimal rendering: 17 significant digits, which strtod
/// reads back to the identical double.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double x = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw Error(ErrorKind::kInvalidInput, "not a number: '" + s + "'");
  return x;
}

// Model text format:
//   guard-model 1
//   vocab <word> <word> ...        (non-EOS tokens, ids 1..n; EOS is id 0)
//   max_length <L>
//   variant <tabular|ngram>
//   order <k>
//   contexts <count>
//   [<ctx tokens>] <p_0> <p_1> ... <p_{|V|-1}>     one line per context
// Context lines appear in indexer order. Non-table models are tabulated first.

inline void write_model(std::ostream& out, const AutoregressiveModel& model) {
  std::shared_ptr<const ContextTableModel> owned;
  const auto* table = dynamic_cast<const ContextTableModel*>(&model);
  if (!table) {
    owned = tabulate(model);
    table = owned.get();
  }
  const Vocabulary& vocab = table->vocab();
  out << "guard-model 1\n";
  out << "vocab";
  for (const auto& w : vocab.words()) out << ' ' << w;
  out << "\nmax_length " << table->max_length() << "\nvariant " << table->variant()
      << "\norder " << table->order() << "\ncontexts " << table->indexer().size() << '\n';
  for (std::size_t c = 0; c < table->indexer().size(); ++c) {
    out << '[' << vocab.render(table->indexer().tokens(c)) << ']';
    for (double p : table->row(c)) out << ' ' << format_double(p);
    out << '\n';
  }
}

inline std::string model_to_string(const AutoregressiveModel& model) {
  std::ostringstream out;
  write_model(out, model);
  return out.str();
}

inline std::shared_ptr<const ContextTableModel> read_model(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  auto next = [&](const std::string& key) {
    if (!std::getline(in, line))
      throw Error(ErrorKind::kInvalidInput, "model file truncated before '" + key + "'");
    ++lineno;
    std::istringstream ls(line);
    std::string k;
    ls >> k;
    if (k != key)
      throw Error(ErrorKind::kInvalidInput, "model file line " + std::to_string(lineno) +
                                                ": expected '" + key + "'");
    std::string rest;
    std::getline(ls >> std::ws, rest);
    return rest;
  };
  if (next("guard-model") != "1") throw Error(ErrorKind::kInvalidInput, "unsupported model version");
  std::vector<std::string> words;
  {
    std::istringstream ws(next("vocab"));
    std::string w;
    while (ws >> w) words.push_back(w);
  }
  Vocabulary vocab(words);
  const std::size_t max_length = std::stoul(next("max_length"));
  const std::string variant = next("variant");
  const std::size_t order = std::stoul(next("order"));
  const std::size_t contexts = std::stoul(next("contexts"));
  if (variant != "tabular" && variant != "ngram")
    throw Error(ErrorKind::kInvalidInput, "unknown model variant '" + variant + "'");
  ContextIndexer idx(vocab.size(), ContextTableModel::context_depth(order, max_length));
  if (idx.size() != contexts)
    throw Error(ErrorKind::kInvalidInput, "context count does not match order and max_length");
  std::vector<double> rows;
  rows.reserve(contexts * vocab.size());
  for (std::size_t c = 0; c < contexts; ++c) {
    if (!std::getline(in, line)) throw Error(ErrorKind::kInvalidInput, "model file truncated");
    ++lineno;
    const auto close = line.find(']');
    if (line.empty() || line[0] != '[' || close == std::string::npos)
      throw Error(ErrorKind::kInvalidInput,
                  "model file line " + std::to_string(lineno) + ": malformed context");
    if (vocab.parse(line.substr(1, close - 1)) != idx.tokens(c))
      throw Error(ErrorKind::kInvalidInput,
                  "model file line " + std::to_string(lineno) + ": context out of order");
    std::istringstream ps(line.substr(close + 1));
    std::string tok;
    std::size_t n = 0;
    while (ps >> tok) {
      rows.push_back(parse_double(tok));
      ++n;
    }
    if (n != vocab.size())
      throw Error(ErrorKind::kInvalidInput,
                  "model file line " + std::to_string(lineno) + ": wrong number of probabilities");
  }
  return std::make_shared<ContextTableModel>(vocab, max_length, order, std::move(rows));
}

inline std::shared_ptr<const ContextTableModel> model_from_string(const std::string& text) {
  std::istringstream in(text);
  return read_model(in);
}

inline void save_model(const std::string& path, const AutoregressiveModel& model) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path + "'");
  write_model(out, model);
}

inline std::shared_ptr<const ContextTableModel> load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read '" + path + "'");
  return read_model(in);
}

/// CSV with header `sequence,probability`, rows in canonical (token-id
/// lexicographic) order, tokens space-joined.
inline void write_table_csv(std::ostream& out, const DistTable& table, const Vocabulary& vocab) {
  out << "sequence,probability\n";
  for (const auto& e : table.entries())
    out << vocab.render(table.codec().decode(e.key)) << ',' << format_double(e.prob) << '\n';
}

inline DistTable read_table_csv(std::istream& in, const Vocabulary& vocab, std::size_t max_length) {
  std::string line;
  if (!std::getline(in, line) || line != "sequence,probability")
    throw Error(ErrorKind::kInvalidInput, "table CSV must start with 'sequence,probability'");
  SequenceCodec codec(vocab.size(), max_length);
  std::vector<DistTable::Entry> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw Error(ErrorKind::kInvalidInput, "malformed CSV row");
    const Sequence s = vocab.parse(line.substr(0, comma));
    if (!is_valid_sequence(s, vocab.size(), max_length))
      throw Error(ErrorKind::kInvalidSequence, "invalid sequence in CSV: '" + line + "'");
    entries.push_back({codec.encode(s), parse_double(line.substr(comma + 1))});
  }
  return DistTable::from_entries(codec, std::move(entries));
}

}  // namespace guard
