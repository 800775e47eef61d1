#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "silt/error.hpp"

namespace silt {

// ---------------------------------------------------------------------------
// Labels, languages, splits

enum class Label : int { contradiction = 0, entailment = 1, neutral = 2 };
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<Label, 3> kLabels{Label::contradiction, Label::entailment, Label::neutral};

inline std::string_view label_name(Label l) {
  static constexpr std::array<std::string_view, 3> names{"contradiction", "entailment", "neutral"};
  return names[static_cast<int>(l)];
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Case-insensitive; accepts the XNLI-MT spelling "contradictory".
inline std::optional<Label> parse_label(std::string_view raw) {
  const std::string s = lowercase(raw);
  if (s == "contradiction" || s == "contradictory") return Label::contradiction;
  if (s == "entailment") return Label::entailment;
  if (s == "neutral") return Label::neutral;
  return std::nullopt;
}

inline Label label_from_index(int i) {
  if (i < 0 || i >= 3) throw LabelError("class index " + std::to_string(i) + " outside [0, 3)");
  return static_cast<Label>(i);
}

enum class Lang : std::uint8_t { en = 0, es = 1 };

inline std::string_view lang_code(Lang l) { return l == Lang::en ? "en" : "es"; }

inline Lang parse_lang(std::string_view s) {
  const std::string v = lowercase(s);
  if (v == "en") return Lang::en;
  if (v == "es") return Lang::es;
  throw DataError("unsupported language '" + std::string(s) + "' (expected en or es)");
}

/// "En-Es" style name: premise language first.
inline std::string language_pair_name(Lang premise, Lang hypothesis) {
  auto cap = [](Lang l) { return l == Lang::en ? std::string("En") : std::string("Es"); };
  return cap(premise) + "-" + cap(hypothesis);
}

inline const std::array<std::string, 4>& language_pair_names() {
  static const std::array<std::string, 4> names{"En-En", "En-Es", "Es-En", "Es-Es"};
  return names;
}

enum class Split { train, valid, test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view raw) {
  const std::string s = lowercase(raw);
  if (s == "train") return Split::train;
  if (s == "valid" || s == "trial" || s == "dev" || s == "validation") return Split::valid;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + std::string(raw) + "'");
}

/// Number of Unicode code points in a UTF-8 string.
inline std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) {
    return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  }));
}

// ---------------------------------------------------------------------------
// PairExample

struct PairExample {
  std::string pair_id;
  std::string premise_id;
  std::string hypothesis_id;
  Lang premise_lang = Lang::en;
  Lang hypothesis_lang = Lang::en;
  std::string premise;
  std::string hypothesis;
  Label label = Label::neutral;
  std::optional<double> relatedness;
  std::optional<std::string> genre;
  Split split = Split::train;

  std::string language_pair() const { return language_pair_name(premise_lang, hypothesis_lang); }
  /// Pair length in characters: the longer of the two sentences.
  std::size_t char_length() const { return std::max(utf8_length(premise), utf8_length(hypothesis)); }

  friend bool operator==(const PairExample&, const PairExample&) = default;
};

inline std::string sentence_id(std::string_view pair_id, char side, Lang lang) {
  return std::string(pair_id) + ":" + side + ":" + std::string(lang_code(lang));
}

inline void validate(const PairExample& ex) {
  if (ex.relatedness && (*ex.relatedness < 1.0 || *ex.relatedness > 5.0)) {
    throw DataError("pair " + ex.pair_id + ": relatedness " + std::to_string(*ex.relatedness) + " outside [1, 5]");
  }
}

inline nlohmann::json to_json(const PairExample& ex) {
  nlohmann::json j{{"pair_id", ex.pair_id},
                   {"premise_id", ex.premise_id},
                   {"hypothesis_id", ex.hypothesis_id},
                   {"premise_lang", lang_code(ex.premise_lang)},
                   {"hypothesis_lang", lang_code(ex.hypothesis_lang)},
                   {"premise", ex.premise},
                   {"hypothesis", ex.hypothesis},
                   {"label", label_name(ex.label)},
                   {"split", split_name(ex.split)}};
  j["relatedness"] = ex.relatedness ? nlohmann::json(*ex.relatedness) : nlohmann::json(nullptr);
  j["genre"] = ex.genre ? nlohmann::json(*ex.genre) : nlohmann::json(nullptr);
  return j;
}

inline PairExample pair_example_from_json(const nlohmann::json& j) {
  PairExample ex;
  try {
    ex.pair_id = j.at("pair_id").get<std::string>();
    ex.premise_id = j.at("premise_id").get<std::string>();
    ex.hypothesis_id = j.at("hypothesis_id").get<std::string>();
    ex.premise_lang = parse_lang(j.at("premise_lang").get<std::string>());
    ex.hypothesis_lang = parse_lang(j.at("hypothesis_lang").get<std::string>());
    ex.premise = j.value("premise", "");
    ex.hypothesis = j.value("hypothesis", "");
    const auto raw = j.at("label").get<std::string>();
    const auto label = parse_label(raw);
    if (!label) throw DataError("unknown label '" + raw + "'");
    ex.label = *label;
    ex.split = parse_split(j.at("split").get<std::string>());
    if (j.contains("relatedness") && !j["relatedness"].is_null()) ex.relatedness = j["relatedness"].get<double>();
    if (j.contains("genre") && !j["genre"].is_null()) ex.genre = j["genre"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed corpus record: ") + e.what());
  }
  validate(ex);
  return ex;
}

inline void write_corpus_jsonl(const std::string& path, const std::vector<PairExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StoreError("cannot open " + path + " for writing");
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
  if (!out) throw StoreError("write failed: " + path);
}

inline std::vector<PairExample> read_corpus_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open corpus " + path);
  std::vector<PairExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(pair_example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tab-separated input

namespace detail {

struct TsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::optional<std::size_t> column(std::initializer_list<std::string_view> names) const {
    for (auto name : names) {
      const std::string want = lowercase(name);
      for (std::size_t i = 0; i < header.size(); ++i)
        if (lowercase(header[i]) == want) return i;
    }
    return std::nullopt;
  }

  std::size_t require(std::initializer_list<std::string_view> names, const std::string& path) const {
    if (auto c = column(names)) return *c;
    throw FormatError(path + ": missing required column '" + std::string(*names.begin()) + "'");
  }
};

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

inline TsvTable read_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path);
  TsvTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      table.header = split_tabs(line);
      continue;
    }
    if (line.empty()) continue;
    auto cells = split_tabs(line);
    if (cells.size() < table.header.size()) cells.resize(table.header.size());
    table.rows.push_back(std::move(cells));
    table.line_numbers.push_back(lineno);
  }
  if (table.header.empty()) throw FormatError(path + ": empty file");
  return table;
}

inline double parse_relatedness(const std::string& cell, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": bad relatedness score '" + cell + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SICK / SICK-ES

struct SickOptions {
  /// Split used when the files carry no SemEval_set column.
  std::optional<Split> default_split;
  /// Accept English rows without a Spanish counterpart.
  bool allow_partial = false;
};

namespace detail {

struct SickRow {
  std::string pair_id, a, b;
  Label label;
  std::optional<double> relatedness;
  Split split;
  std::size_t line;
};

inline std::vector<SickRow> read_sick_file(const std::string& path, const SickOptions& opt, bool require_label) {
  const auto table = read_tsv(path);
  const auto c_id = table.require({"pair_ID"}, path);
  const auto c_a = table.require({"sentence_A"}, path);
  const auto c_b = table.require({"sentence_B"}, path);
  const auto c_label = table.column({"entailment_label", "entailment_judgment", "entailment_judgement"});
  if (require_label && !c_label) throw FormatError(path + ": missing required column 'entailment_label'");
  const auto c_rel = table.column({"relatedness_score"});
  const auto c_set = table.column({"SemEval_set"});
  if (!c_set && !opt.default_split) {
    throw FormatError(path + ": no SemEval_set column and no default split given");
  }
  std::vector<SickRow> rows;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    const std::string where = path + ":" + std::to_string(table.line_numbers[r]);
    SickRow row;
    row.pair_id = cells[c_id];
    row.a = cells[c_a];
    row.b = cells[c_b];
    row.line = table.line_numbers[r];
    row.label = Label::neutral;
    if (c_label) {
      const auto label = parse_label(cells[*c_label]);
      if (!label) throw DataError(where + ": unknown label '" + cells[*c_label] + "' (pair " + row.pair_id + ")");
      row.label = *label;
    }
    if (c_rel && !cells[*c_rel].empty()) {
      row.relatedness = parse_relatedness(cells[*c_rel], where);
      if (*row.relatedness < 1.0 || *row.relatedness > 5.0) {
        throw DataError(where + ": relatedness outside [1, 5] (pair " + row.pair_id + ")");
      }
    }
    row.split = c_set ? parse_split(cells[*c_set]) : *opt.default_split;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline PairExample make_example(const std::string& pair_id, Lang lang, const std::string& a, const std::string& b,
                                Label label, std::optional<double> rel, std::optional<std::string> genre, Split split) {
  PairExample ex;
  ex.pair_id = pair_id;
  ex.premise_lang = lang;
  ex.hypothesis_lang = lang;
  ex.premise_id = sentence_id(pair_id, 'A', lang);
  ex.hypothesis_id = sentence_id(pair_id, 'B', lang);
  ex.premise = a;
  ex.hypothesis = b;
  ex.label = label;
  ex.relatedness = rel;
  ex.genre = std::move(genre);
  ex.split = split;
  return ex;
}

}  // namespace detail

/// Reads an English SICK file and its Spanish counterpart (row-aligned by
/// pair_ID). Emits the matched-language En-En and Es-Es examples; use
/// expand_language_pairs() for the cross-language combinations.
inline std::vector<PairExample> load_sick(const std::string& path_en, const std::string& path_es,
                                          const SickOptions& opt = {}) {
  const auto en = detail::read_sick_file(path_en, opt, true);
  std::vector<detail::SickRow> es;
  if (!path_es.empty()) es = detail::read_sick_file(path_es, opt, false);

  std::unordered_map<std::string, std::size_t> en_index;
  for (std::size_t i = 0; i < en.size(); ++i) {
    if (!en_index.emplace(en[i].pair_id, i).second) throw DataError(path_en + ": duplicate pair_ID " + en[i].pair_id);
  }
  std::unordered_map<std::string, std::size_t> es_index;
  for (std::size_t i = 0; i < es.size(); ++i) {
    const auto& row = es[i];
    auto it = en_index.find(row.pair_id);
    if (it == en_index.end()) {
      throw AlignmentError(path_es + ":" + std::to_string(row.line) + ": pair_ID " + row.pair_id +
                           " has no English counterpart");
    }
    if (!es_index.emplace(row.pair_id, i).second) throw DataError(path_es + ": duplicate pair_ID " + row.pair_id);
  }

  std::vector<PairExample> out;
  out.reserve(en.size() * 2);
  for (const auto& row : en) {
    out.push_back(detail::make_example(row.pair_id, Lang::en, row.a, row.b, row.label, row.relatedness, std::nullopt,
                                       row.split));
    auto it = es_index.find(row.pair_id);
    if (it == es_index.end()) {
      if (!path_es.empty() && !opt.allow_partial) {
        throw AlignmentError(path_en + ":" + std::to_string(row.line) + ": pair_ID " + row.pair_id +
                             " missing from Spanish file " + path_es);
      }
      continue;
    }
    const auto& tr = es[it->second];
    if (tr.split != row.split) throw AlignmentError("pair_ID " + row.pair_id + ": split differs between EN and ES files");
    out.push_back(detail::make_example(row.pair_id, Lang::es, tr.a, tr.b, row.label, row.relatedness, std::nullopt,
                                       row.split));
  }
  return out;
}

// ---------------------------------------------------------------------------
// MNLI / XNLI

struct MnliXnliPaths {
  std::string mnli_train;     // MNLI distribution file (English train)
  std::string mnli_train_es;  // machine-translated MNLI train (Spanish)
  std::string xnli_dev;       // XNLI dev (validation), multilingual
  std::string xnli_test;      // XNLI test, multilingual
};

struct LoadReport {
  std::vector<PairExample> examples;
  std::size_t skipped_unlabeled = 0;
};

namespace detail {

inline std::optional<Label> nli_label(const std::string& raw, const std::string& where) {
  if (raw == "-") return std::nullopt;
  auto l = parse_label(raw);
  if (!l) throw DataError(where + ": unknown label '" + raw + "'");
  return l;
}

}  // namespace detail

/// English train from MNLI, Spanish train from its machine translation
/// (joined on pairID when present, otherwise by row), valid/test from XNLI
/// restricted to en/es. Rows with gold label "-" are dropped and counted.
inline LoadReport load_mnli_xnli(const MnliXnliPaths& paths) {
  LoadReport report;
  if (!paths.mnli_train.empty()) {
    const auto mnli = detail::read_tsv(paths.mnli_train);
    const auto c_label = mnli.require({"gold_label", "label"}, paths.mnli_train);
    const auto c_s1 = mnli.require({"sentence1", "premise"}, paths.mnli_train);
    const auto c_s2 = mnli.require({"sentence2", "hypothesis", "hypo"}, paths.mnli_train);
    const auto c_pid = mnli.column({"pairID"});
    const auto c_genre = mnli.column({"genre"});

    std::optional<detail::TsvTable> mt;
    std::size_t m_s1 = 0, m_s2 = 0;
    std::optional<std::size_t> m_pid;
    std::unordered_map<std::string, std::size_t> mt_by_pid;
    if (!paths.mnli_train_es.empty()) {
      mt = detail::read_tsv(paths.mnli_train_es);
      m_s1 = mt->require({"sentence1", "premise"}, paths.mnli_train_es);
      m_s2 = mt->require({"sentence2", "hypothesis", "hypo"}, paths.mnli_train_es);
      m_pid = mt->column({"pairID"});
      if (m_pid && c_pid) {
        for (std::size_t i = 0; i < mt->rows.size(); ++i) mt_by_pid.emplace(mt->rows[i][*m_pid], i);
      } else if (mt->rows.size() != mnli.rows.size()) {
        throw AlignmentError(paths.mnli_train_es + ": " + std::to_string(mt->rows.size()) + " rows, expected " +
                             std::to_string(mnli.rows.size()) + " (row-aligned with " + paths.mnli_train + ")");
      }
    }
    for (std::size_t r = 0; r < mnli.rows.size(); ++r) {
      const auto& cells = mnli.rows[r];
      const std::string where = paths.mnli_train + ":" + std::to_string(mnli.line_numbers[r]);
      const auto label = detail::nli_label(cells[c_label], where);
      if (!label) {
        ++report.skipped_unlabeled;
        continue;
      }
      const std::string pid = "mnli-" + (c_pid ? cells[*c_pid] : std::to_string(r));
      std::optional<std::string> genre;
      if (c_genre) genre = cells[*c_genre];
      report.examples.push_back(
          detail::make_example(pid, Lang::en, cells[c_s1], cells[c_s2], *label, std::nullopt, genre, Split::train));
      if (mt) {
        std::size_t row = r;
        if (!mt_by_pid.empty()) {
          auto it = mt_by_pid.find(cells[*c_pid]);
          if (it == mt_by_pid.end()) continue;  // reported by expand_language_pairs
          row = it->second;
        }
        const auto& tr = mt->rows[row];
        report.examples.push_back(
            detail::make_example(pid, Lang::es, tr[m_s1], tr[m_s2], *label, std::nullopt, genre, Split::train));
      }
    }
  }

  auto load_xnli = [&](const std::string& path, Split split) {
    if (path.empty()) return;
    const auto xnli = detail::read_tsv(path);
    const auto c_lang = xnli.require({"language"}, path);
    const auto c_label = xnli.require({"gold_label", "label"}, path);
    const auto c_s1 = xnli.require({"sentence1", "premise"}, path);
    const auto c_s2 = xnli.require({"sentence2", "hypothesis"}, path);
    const auto c_pid = xnli.require({"pairID"}, path);
    const auto c_genre = xnli.column({"genre"});
    const std::string prefix = std::string("xnli-") + std::string(split_name(split)) + "-";
    for (std::size_t r = 0; r < xnli.rows.size(); ++r) {
      const auto& cells = xnli.rows[r];
      const std::string lang = lowercase(cells[c_lang]);
      if (lang != "en" && lang != "es") continue;
      const std::string where = path + ":" + std::to_string(xnli.line_numbers[r]);
      const auto label = detail::nli_label(cells[c_label], where);
      if (!label) {
        ++report.skipped_unlabeled;
        continue;
      }
      std::optional<std::string> genre;
      if (c_genre) genre = cells[*c_genre];
      report.examples.push_back(detail::make_example(prefix + cells[c_pid], parse_lang(lang), cells[c_s1], cells[c_s2],
                                                     *label, std::nullopt, genre, split));
    }
  };
  load_xnli(paths.xnli_dev, Split::valid);
  load_xnli(paths.xnli_test, Split::test);
  return report;
}

// ---------------------------------------------------------------------------
// Language-pair expansion

struct ExpandResult {
  std::vector<PairExample> examples;
  /// Logical pairs for which at least one of the four combinations could
  /// not be formed.
  std::size_t missing_translations = 0;
};

/// Emits every logical pair in the combinations En-En, En-Es, Es-En, Es-Es
/// that its available sentence variants allow, keeping pair_id and label.
inline ExpandResult expand_language_pairs(const std::vector<PairExample>& examples) {
  struct Variants {
    const PairExample* first = nullptr;
    std::array<bool, 2> premise{false, false};
    std::array<bool, 2> hypothesis{false, false};
    std::array<std::pair<std::string, std::string>, 2> premise_ref;     // id, text
    std::array<std::pair<std::string, std::string>, 2> hypothesis_ref;  // id, text
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, Variants> groups;
  for (const auto& ex : examples) {
    auto [it, inserted] = groups.try_emplace(ex.pair_id);
    auto& g = it->second;
    if (inserted) {
      order.push_back(ex.pair_id);
      g.first = &ex;
    } else if (g.first->label != ex.label || g.first->split != ex.split) {
      throw DataError("pair " + ex.pair_id + ": variants disagree on label or split");
    }
    const auto p = static_cast<std::size_t>(ex.premise_lang);
    const auto h = static_cast<std::size_t>(ex.hypothesis_lang);
    g.premise[p] = true;
    g.premise_ref[p] = {ex.premise_id, ex.premise};
    g.hypothesis[h] = true;
    g.hypothesis_ref[h] = {ex.hypothesis_id, ex.hypothesis};
  }
  ExpandResult result;
  result.examples.reserve(order.size() * 4);
  for (const auto& pid : order) {
    const auto& g = groups.at(pid);
    std::size_t made = 0;
    for (Lang pl : {Lang::en, Lang::es}) {
      for (Lang hl : {Lang::en, Lang::es}) {
        const auto p = static_cast<std::size_t>(pl);
        const auto h = static_cast<std::size_t>(hl);
        if (!g.premise[p] || !g.hypothesis[h]) continue;
        PairExample ex = *g.first;
        ex.premise_lang = pl;
        ex.hypothesis_lang = hl;
        ex.premise_id = g.premise_ref[p].first;
        ex.premise = g.premise_ref[p].second;
        ex.hypothesis_id = g.hypothesis_ref[h].first;
        ex.hypothesis = g.hypothesis_ref[h].second;
        result.examples.push_back(std::move(ex));
        ++made;
      }
    }
    if (made < 4) ++result.missing_translations;
  }
  return result;
}

/// Throws DataError when a pair_id occurs in more than one split.
inline void check_split_integrity(const std::vector<PairExample>& examples) {
  std::unordered_map<std::string, Split> seen;
  std::set<std::string> offending;
  for (const auto& ex : examples) {
    auto [it, inserted] = seen.emplace(ex.pair_id, ex.split);
    if (!inserted && it->second != ex.split) offending.insert(ex.pair_id);
  }
  if (!offending.empty()) {
    std::string msg = "pair ids present in more than one split:";
    std::size_t shown = 0;
    for (const auto& id : offending) {
      if (shown++ == 20) {
        msg += " ...";
        break;
      }
      msg += " " + id;
    }
    throw DataError(msg);
  }
}

inline std::vector<PairExample> filter_split(const std::vector<PairExample>& examples, Split split) {
  std::vector<PairExample> out;
  std::copy_if(examples.begin(), examples.end(), std::back_inserter(out),
               [split](const PairExample& ex) { return ex.split == split; });
  return out;
}

// ---------------------------------------------------------------------------
// Summary (split x language pair x label counts)

class CorpusSummary {
 public:
  using Key = std::tuple<Split, std::string, Label>;

  void add(const PairExample& ex) {
    ++counts_[{ex.split, ex.language_pair(), ex.label}];
    ++total_;
  }
  void set(Split s, const std::string& lp, Label l, std::size_t n) {
    total_ = total_ - count(s, lp, l) + n;
    counts_[{s, lp, l}] = n;
  }

  std::size_t count(Split s, const std::string& lp, Label l) const {
    auto it = counts_.find({s, lp, l});
    return it == counts_.end() ? 0 : it->second;
  }
  std::size_t total() const { return total_; }
  const std::map<Key, std::size_t>& counts() const { return counts_; }

  /// Every (split, language pair, label) cell that differs from `expected`.
  std::vector<std::string> mismatches(const CorpusSummary& expected) const {
    std::vector<std::string> out;
    std::set<Key> keys;
    for (const auto& [k, v] : counts_) keys.insert(k);
    for (const auto& [k, v] : expected.counts_) keys.insert(k);
    for (const auto& k : keys) {
      const auto& [s, lp, l] = k;
      const auto got = count(s, lp, l), want = expected.count(s, lp, l);
      if (got != want) {
        out.push_back(std::string(split_name(s)) + " " + lp + " " + std::string(label_name(l)) + ": got " +
                      std::to_string(got) + ", expected " + std::to_string(want));
      }
    }
    return out;
  }

  /// Table laid out like the published label summary: one row per split,
  /// label-major columns with the four language pairs under each label.
  std::string to_table() const {
    std::ostringstream os;
    os << "| Split |";
    for (Label l : kLabels)
      for (const auto& lp : language_pair_names()) os << ' ' << label_name(l).substr(0, 1) << ' ' << lp << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < 12; ++i) os << "---|";
    os << '\n';
    for (Split s : {Split::train, Split::valid, Split::test}) {
      os << "| " << split_name(s) << " |";
      for (Label l : kLabels)
        for (const auto& lp : language_pair_names()) os << ' ' << count(s, lp, l) << " |";
      os << '\n';
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : counts_) {
      const auto& [s, lp, l] = k;
      j[std::string(split_name(s))][lp][std::string(label_name(l))] = v;
    }
    return j;
  }

 private:
  std::map<Key, std::size_t> counts_;
  std::size_t total_ = 0;
};

inline CorpusSummary summarize(const std::vector<PairExample>& examples) {
  CorpusSummary s;
  for (const auto& ex : examples) s.add(ex);
  return s;
}

/// Published per-language-pair label counts (contradiction, entailment,
/// neutral) for the SICK / SICK-ES release.
inline CorpusSummary sick_reference_counts() {
  CorpusSummary s;
  const std::array<std::pair<Split, std::array<std::size_t, 3>>, 3> rows{{
      {Split::train, {641, 1274, 2524}},
      {Split::valid, {71, 143, 281}},
      {Split::test, {712, 1404, 2790}},
  }};
  for (const auto& [split, counts] : rows)
    for (const auto& lp : language_pair_names())
      for (std::size_t c = 0; c < 3; ++c) s.set(split, lp, kLabels[c], counts[c]);
  return s;
}

/// Same for MNLI (train) and XNLI (valid/test).
inline CorpusSummary mnli_xnli_reference_counts() {
  CorpusSummary s;
  const std::array<std::pair<Split, std::array<std::size_t, 3>>, 3> rows{{
      {Split::train, {130903, 130899, 130900}},
      {Split::valid, {830, 830, 830}},
      {Split::test, {1670, 1670, 1670}},
  }};
  for (const auto& [split, counts] : rows)
    for (const auto& lp : language_pair_names())
      for (std::size_t c = 0; c < 3; ++c) s.set(split, lp, kLabels[c], counts[c]);
  return s;
}

}  // namespace silt
