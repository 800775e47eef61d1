#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "silt/checkpoint.hpp"
#include "silt/corpus.hpp"
#include "silt/error.hpp"

namespace silt {

/// Rows are gold labels, columns predictions.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 3>, 3> counts{};

  void add(int gold, int pred) {
    label_from_index(gold);
    label_from_index(pred);
    ++counts[gold][pred];
  }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& r : counts)
      for (auto c : r) n += c;
    return n;
  }
  std::size_t trace() const { return counts[0][0] + counts[1][1] + counts[2][2]; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) counts[i][j] += o.counts[i][j];
    return *this;
  }

  nlohmann::json to_json() const { return counts; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const int> gold, std::span<const int> pred) {
  if (gold.size() != pred.size()) {
    throw ContractError("confusion: " + std::to_string(gold.size()) + " gold labels but " +
                        std::to_string(pred.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < gold.size(); ++i) cm.add(gold[i], pred[i]);
  return cm;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // gold count
};

struct Metrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::array<ClassMetrics, 3> per_class{};

  nlohmann::json to_json() const {
    nlohmann::json pc = nlohmann::json::object();
    for (Label l : kLabels) {
      const auto& m = per_class[static_cast<int>(l)];
      pc[std::string(label_name(l))] = {
          {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
    }
    return {{"count", count}, {"accuracy", accuracy}, {"macro_f1", macro_f1}, {"per_class", pc}};
  }
};

/// Precision or recall with an empty denominator is 0, and F1 is 0 whenever
/// P + R = 0.
inline Metrics metrics(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw MetricsError("metrics are undefined for an empty confusion matrix");
  Metrics m;
  m.count = total;
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      row += cm.counts[c][k];
      col += cm.counts[k][c];
    }
    const double tp = static_cast<double>(cm.counts[c][c]);
    auto& out = m.per_class[c];
    out.support = row;
    out.precision = col ? tp / static_cast<double>(col) : 0.0;
    out.recall = row ? tp / static_cast<double>(row) : 0.0;
    const double pr = out.precision + out.recall;
    out.f1 = pr > 0.0 ? 2.0 * out.precision * out.recall / pr : 0.0;
    f1_sum += out.f1;
  }
  m.macro_f1 = f1_sum / 3.0;
  return m;
}

// ---------------------------------------------------------------------------
// Scored examples (preds.jsonl rows)

struct ScoredExample {
  std::string pair_id;
  std::string language_pair;
  int gold = 0;
  int pred = 0;
  std::array<float, 3> logits{};
  std::optional<double> relatedness;
  std::optional<std::string> genre;
  std::optional<std::size_t> char_length;

  nlohmann::json to_json() const {
    nlohmann::json j{{"pair_id", pair_id},
                     {"language_pair", language_pair},
                     {"gold", std::string(label_name(label_from_index(gold)))},
                     {"pred", std::string(label_name(label_from_index(pred)))},
                     {"logits", logits}};
    if (relatedness) j["relatedness"] = *relatedness;
    if (genre) j["genre"] = *genre;
    if (char_length) j["char_length"] = *char_length;
    return j;
  }

  static ScoredExample from_json(const nlohmann::json& j) {
    auto label = [&](const char* key) {
      const auto raw = j.at(key).get<std::string>();
      const auto l = parse_label(raw);
      if (!l) throw LabelError("unknown " + std::string(key) + " label '" + raw + "'");
      return static_cast<int>(*l);
    };
    ScoredExample s;
    s.pair_id = j.at("pair_id").get<std::string>();
    s.language_pair = j.at("language_pair").get<std::string>();
    s.gold = label("gold");
    s.pred = label("pred");
    s.logits = j.at("logits").get<std::array<float, 3>>();
    if (j.contains("relatedness")) s.relatedness = j["relatedness"].get<double>();
    if (j.contains("genre")) s.genre = j["genre"].get<std::string>();
    if (j.contains("char_length")) s.char_length = j["char_length"].get<std::size_t>();
    return s;
  }
};

inline std::vector<ScoredExample> score_examples(std::span<const PairExample> examples, std::span<const int> preds,
                                                 std::span<const std::array<float, 3>> logits) {
  if (examples.size() != preds.size() || examples.size() != logits.size()) {
    throw ContractError("score_examples: examples, predictions and logits differ in length");
  }
  std::vector<ScoredExample> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    out.push_back({ex.pair_id, ex.language_pair(), static_cast<int>(ex.label), preds[i], logits[i], ex.relatedness,
                   ex.genre, ex.char_length()});
  }
  return out;
}

inline void write_preds_jsonl(const std::filesystem::path& path, std::span<const ScoredExample> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot open " + path.string() + " for writing");
  for (const auto& r : rows) out << r.to_json().dump() << '\n';
  if (!out) throw StoreError("write failed: " + path.string());
}

inline std::vector<ScoredExample> read_preds_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open " + path.string());
  std::vector<ScoredExample> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(ScoredExample::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Groupings

enum class Grouping { label, language_pair, relatedness, genre, length };

inline std::string grouping_name(Grouping g) {
  switch (g) {
    case Grouping::label: return "label";
    case Grouping::language_pair: return "language_pair";
    case Grouping::relatedness: return "relatedness";
    case Grouping::genre: return "genre";
    case Grouping::length: return "length";
  }
  return "?";
}

inline Grouping parse_grouping(std::string_view raw) {
  const std::string s = lowercase(raw);
  if (s == "label") return Grouping::label;
  if (s == "language_pair" || s == "language" || s == "lang") return Grouping::language_pair;
  if (s == "relatedness") return Grouping::relatedness;
  if (s == "genre") return Grouping::genre;
  if (s == "length") return Grouping::length;
  throw ConfigError("unknown grouping '" + std::string(raw) +
                    "' (expected label, language_pair, relatedness, genre or length)");
}

inline std::vector<Grouping> parse_groupings(const std::string& csv) {
  std::vector<Grouping> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto g = parse_grouping(item);
    if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  }
  return out;
}

/// Score 1.0 (the scale minimum) falls in the first bucket.
inline const std::vector<std::string>& relatedness_buckets() {
  static const std::vector<std::string> b{"[1,2]", "(2,3]", "(3,4]", "(4,5]"};
  return b;
}

inline const std::vector<std::string>& length_buckets() {
  static const std::vector<std::string> b{"(0,125]", "(125,250]", "(250,375]", "(375,500]", ">500"};
  return b;
}

inline std::string relatedness_bucket(double r) {
  if (!(r >= 1.0 && r <= 5.0)) throw DataError("relatedness " + std::to_string(r) + " outside [1, 5]");
  const auto& b = relatedness_buckets();
  if (r <= 2.0) return b[0];
  if (r <= 3.0) return b[1];
  if (r <= 4.0) return b[2];
  return b[3];
}

inline std::string length_bucket(std::size_t chars) {
  const auto& b = length_buckets();
  if (chars <= 125) return b[0];
  if (chars <= 250) return b[1];
  if (chars <= 375) return b[2];
  if (chars <= 500) return b[3];
  return b[4];
}

inline std::optional<std::string> group_key(const ScoredExample& s, Grouping g) {
  switch (g) {
    case Grouping::label: return std::string(label_name(label_from_index(s.gold)));
    case Grouping::language_pair:
      if (s.language_pair.empty()) return std::nullopt;
      return s.language_pair;
    case Grouping::relatedness:
      if (!s.relatedness) return std::nullopt;
      return relatedness_bucket(*s.relatedness);
    case Grouping::genre: return s.genre;
    case Grouping::length:
      if (!s.char_length) return std::nullopt;
      return length_bucket(*s.char_length);
  }
  return std::nullopt;
}

struct GroupEntry {
  std::string key;
  ConfusionMatrix confusion;
  Metrics metrics;
};

struct GroupBlock {
  Grouping grouping = Grouping::label;
  std::vector<std::string> buckets;  // every defined key, including empty ones
  std::vector<GroupEntry> entries;   // non-empty groups, in bucket order
};

struct EvalReport {
  ConfusionMatrix confusion;
  Metrics overall;
  std::vector<GroupBlock> groups;

  nlohmann::json to_json() const {
    nlohmann::json j{{"overall", overall.to_json()}, {"confusion", confusion.to_json()}};
    j["groups"] = nlohmann::json::object();
    for (const auto& g : groups) {
      nlohmann::json block{{"buckets", g.buckets}, {"groups", nlohmann::json::object()}};
      for (const auto& e : g.entries) {
        auto m = e.metrics.to_json();
        m["confusion"] = e.confusion.to_json();
        block["groups"][e.key] = m;
      }
      j["groups"][grouping_name(g.grouping)] = block;
    }
    return j;
  }

  std::string to_markdown() const {
    auto fmt = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v);
      return std::string(buf);
    };
    std::ostringstream os;
    os << "# Evaluation report\n\n";
    os << "| examples | accuracy | macro F1 |\n|---|---|---|\n";
    os << "| " << overall.count << " | " << fmt(overall.accuracy) << " | " << fmt(overall.macro_f1) << " |\n\n";
    os << "| class | precision | recall | F1 | support |\n|---|---|---|---|---|\n";
    for (Label l : kLabels) {
      const auto& m = overall.per_class[static_cast<int>(l)];
      os << "| " << label_name(l) << " | " << fmt(m.precision) << " | " << fmt(m.recall) << " | " << fmt(m.f1) << " | "
         << m.support << " |\n";
    }
    os << "\nConfusion (rows gold, columns predicted: C, E, N)\n\n```\n";
    for (const auto& r : confusion.counts) os << r[0] << '\t' << r[1] << '\t' << r[2] << '\n';
    os << "```\n";
    for (const auto& g : groups) {
      os << "\n## By " << grouping_name(g.grouping) << "\n\n";
      os << "| group | count | accuracy | macro F1 |\n|---|---|---|---|\n";
      for (const auto& e : g.entries) {
        os << "| " << e.key << " | " << e.metrics.count << " | " << fmt(e.metrics.accuracy) << " | "
           << fmt(e.metrics.macro_f1) << " |\n";
      }
    }
    return os.str();
  }
};

/// Overall metrics plus one block per requested grouping. An example that
/// lacks the metadata a grouping needs is an error.
inline EvalReport grouped_report(std::span<const ScoredExample> rows, std::span<const Grouping> groupings) {
  EvalReport r;
  for (const auto& s : rows) r.confusion.add(s.gold, s.pred);
  r.overall = metrics(r.confusion);
  for (Grouping g : groupings) {
    std::map<std::string, ConfusionMatrix> cms;
    std::vector<std::string> missing;
    for (const auto& s : rows) {
      const auto key = group_key(s, g);
      if (!key) {
        missing.push_back(s.pair_id + "/" + s.language_pair);
        continue;
      }
      cms[*key].add(s.gold, s.pred);
    }
    if (!missing.empty()) {
      std::string ids;
      for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 10); ++i) ids += (i ? ", " : "") + missing[i];
      if (missing.size() > 10) ids += ", ...";
      throw GroupingError("grouping '" + grouping_name(g) + "' needs metadata missing from " +
                          std::to_string(missing.size()) + " example(s): " + ids);
    }
    GroupBlock block;
    block.grouping = g;
    switch (g) {
      case Grouping::label:
        for (Label l : kLabels) block.buckets.emplace_back(label_name(l));
        break;
      case Grouping::language_pair: {
        const auto& names = language_pair_names();
        block.buckets.assign(names.begin(), names.end());
        for (const auto& [k, cm] : cms)
          if (std::find(names.begin(), names.end(), k) == names.end()) block.buckets.push_back(k);
        break;
      }
      case Grouping::relatedness: block.buckets = relatedness_buckets(); break;
      case Grouping::length: block.buckets = length_buckets(); break;
      case Grouping::genre:
        for (const auto& [k, cm] : cms) block.buckets.push_back(k);
        break;
    }
    for (const auto& key : block.buckets) {
      const auto it = cms.find(key);
      if (it != cms.end()) block.entries.push_back({key, it->second, metrics(it->second)});
    }
    r.groups.push_back(std::move(block));
  }
  return r;
}

inline void write_report(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  detail::write_json(dir / "report.json", report.to_json());
  std::ofstream md(dir / "report.md", std::ios::binary | std::ios::trunc);
  if (!md) throw StoreError("cannot open " + (dir / "report.md").string() + " for writing");
  md << report.to_markdown();
}

}  // namespace silt
