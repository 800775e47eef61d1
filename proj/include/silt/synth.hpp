#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "silt/corpus.hpp"
#include "silt/embed_store.hpp"
#include "silt/rng.hpp"

namespace silt {

/// Random-embedding pair dataset with uniformly drawn labels.
struct SynthSpec {
  std::size_t train_pairs = 32;
  std::size_t valid_pairs = 0;
  std::size_t H = 2;
  std::size_t D = 4;
  std::size_t min_len = 2;
  std::size_t max_len = 4;
  std::uint64_t seed = 1;
};

struct SynthData {
  MemoryStore store;
  std::vector<PairExample> examples;
};

inline constexpr std::uint64_t kSynthStream = 0x5e7;

inline EmbeddingRecord random_embedding(const std::string& id, std::size_t L, std::size_t H, std::size_t D,
                                        RngState& rng) {
  EmbeddingRecord rec{id, Lang::en, static_cast<std::uint32_t>(L), static_cast<std::uint32_t>(H),
                      static_cast<std::uint32_t>(D), std::vector<float>(L * H * D)};
  for (auto& x : rec.data) x = static_cast<float>(2.0 * rng.uniform() - 1.0);
  return rec;
}

inline SynthData make_synthetic(const SynthSpec& spec) {
  if (spec.min_len < 1 || spec.max_len < spec.min_len) throw ConfigError("synthetic lengths need 1 <= min <= max");
  SynthData out;
  RngState rng = derive_stream(spec.seed, kSynthStream, 0);
  const std::size_t n = spec.train_pairs + spec.valid_pairs;
  for (std::size_t i = 0; i < n; ++i) {
    PairExample ex;
    ex.pair_id = "syn-" + std::to_string(i);
    ex.premise_id = sentence_id(ex.pair_id, 'A', Lang::en);
    ex.hypothesis_id = sentence_id(ex.pair_id, 'B', Lang::en);
    ex.premise = "premise " + std::to_string(i);
    ex.hypothesis = "hypothesis " + std::to_string(i);
    ex.label = kLabels[rng.below(3)];
    ex.split = i < spec.train_pairs ? Split::train : Split::valid;
    for (const auto& id : {ex.premise_id, ex.hypothesis_id}) {
      const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
      out.store.add(random_embedding(id, len, spec.H, spec.D, rng));
    }
    out.examples.push_back(std::move(ex));
  }
  return out;
}

/// Writes the dataset as `<store_dir>/` (embed store) and a corpus.jsonl.
inline void write_synthetic(const SynthData& data, const SynthSpec& spec, const std::filesystem::path& store_dir,
                            const std::filesystem::path& corpus_path) {
  {
    EmbedStoreWriter w(store_dir, "synthetic", static_cast<std::uint32_t>(spec.H), static_cast<std::uint32_t>(spec.D));
    for (const auto& ex : data.examples) {
      w.write_record(data.store.read_record(ex.premise_id));
      w.write_record(data.store.read_record(ex.hypothesis_id));
    }
  }
  write_corpus_jsonl(corpus_path.string(), data.examples);
}

/// SICK-layout EN and ES files whose label counts per split follow `counts`
/// ({contradiction, entailment, neutral} for train, valid, test).
inline void write_sick_fixture(const std::filesystem::path& path_en, const std::filesystem::path& path_es,
                               const std::array<std::array<std::size_t, 3>, 3>& counts, std::uint64_t seed = 3) {
  std::ofstream en(path_en, std::ios::binary), es(path_es, std::ios::binary);
  if (!en || !es) throw StoreError("cannot write SICK fixture files");
  en << "pair_ID\tsentence_A\tsentence_B\tentailment_label\trelatedness_score\tentailment_AB\tentailment_BA\t"
        "sentence_A_original\tsentence_B_original\tsentence_A_dataset\tsentence_B_dataset\tSemEval_set\n";
  es << "pair_ID\tsentence_A\tsentence_B\tentailment_label\trelatedness_score\tSemEval_set\n";
  const std::array<std::string, 3> label_text{"CONTRADICTION", "ENTAILMENT", "NEUTRAL"};
  const std::array<std::string, 3> set_text{"TRAIN", "TRIAL", "TEST"};
  RngState rng{seed, 0};
  // Rows are shuffled, not grouped by label.
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < counts[s][c]; ++k) rows.emplace_back(s, c);
  for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.below(i)]);
  std::size_t id = 1;
  for (const auto& [s, c] : rows) {
    const std::string rel = std::to_string(1 + static_cast<int>(rng.below(5)));
    en << id << "\tA man is playing " << id << "\tA person plays " << id << '\t' << label_text[c] << '\t' << rel
       << "\tA_neutral\tB_neutral\toriginal A\toriginal B\tFLICKR\tFLICKR\t" << set_text[s] << '\n';
    es << id << "\tUn hombre toca " << id << "\tUna persona toca " << id << '\t' << label_text[c] << '\t' << rel << '\t'
       << set_text[s] << '\n';
    ++id;
  }
}

}  // namespace silt
