#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "silt/corpus.hpp"
#include "silt/error.hpp"

namespace silt {

inline constexpr int kStoreFormatVersion = 1;
inline constexpr std::size_t kDefaultLcapSick = 125;
inline constexpr std::size_t kDefaultLcapMnli = 500;

/// All hidden states of one tokenized sentence, laid out [H][L][D].
/// Position 0 of every hidden state is the sentence-level cls token.
struct EmbeddingRecord {
  std::string sentence_id;
  Lang language = Lang::en;
  std::uint32_t L = 0;
  std::uint32_t H = 0;
  std::uint32_t D = 0;
  std::vector<float> data;

  float at(std::size_t h, std::size_t pos, std::size_t d) const { return data[(h * L + pos) * D + d]; }

  void validate() const {
    if (L < 1 || H < 1 || D < 1) throw FormatError("record " + sentence_id + ": L, H and D must be >= 1");
    if (data.size() != static_cast<std::size_t>(H) * L * D) {
      throw FormatError("record " + sentence_id + ": payload length " + std::to_string(data.size()) +
                        " != H*L*D = " + std::to_string(static_cast<std::size_t>(H) * L * D));
    }
    if (sentence_id.empty() || sentence_id.size() > 0xFFFF) throw FormatError("record id length out of range");
  }

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct StoreManifest {
  int format_version = kStoreFormatVersion;
  std::string transformer_name;
  std::uint32_t H = 0;
  std::uint32_t D = 0;
  std::size_t record_count = 0;
  /// sentence id -> byte offset in records.bin. Several ids may alias one
  /// record (deduplicated sentences); record_count counts distinct records.
  std::map<std::string, std::uint64_t> index;

  nlohmann::json to_json() const {
    nlohmann::json idx = nlohmann::json::object();
    for (const auto& [id, off] : index) idx[id] = off;
    return {{"format_version", format_version}, {"transformer_name", transformer_name}, {"H", H}, {"D", D},
            {"record_count", record_count},     {"index", idx}};
  }

  static StoreManifest from_json(const nlohmann::json& j) {
    StoreManifest m;
    try {
      m.format_version = j.at("format_version").get<int>();
      m.transformer_name = j.at("transformer_name").get<std::string>();
      m.H = j.at("H").get<std::uint32_t>();
      m.D = j.at("D").get<std::uint32_t>();
      m.record_count = j.at("record_count").get<std::size_t>();
      for (const auto& [id, off] : j.at("index").items()) m.index[id] = off.get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed manifest: ") + e.what());
    }
    if (m.format_version != kStoreFormatVersion) {
      throw FormatError("unsupported store format_version " + std::to_string(m.format_version));
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// Little-endian byte helpers

namespace bytes {

inline void put_u8(std::vector<unsigned char>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<unsigned char>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (static_cast<std::uint16_t>(p[1]) << 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::uint32_t crc32_of(std::span<const unsigned char> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large payloads.
  std::size_t done = 0;
  while (done < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - done, 1u << 30));
    crc = ::crc32(crc, data.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace bytes

/// Serialized form of one record:
/// [u16 id_len][id][u8 lang][u32 L][u32 H][u32 D][f32 x H*L*D][u32 crc32(payload)]
/// where payload is the f32 block as stored.
inline std::vector<unsigned char> encode_record(const EmbeddingRecord& rec) {
  rec.validate();
  std::vector<unsigned char> out;
  out.reserve(2 + rec.sentence_id.size() + 13 + rec.data.size() * 4 + 4);
  bytes::put_u16(out, static_cast<std::uint16_t>(rec.sentence_id.size()));
  out.insert(out.end(), rec.sentence_id.begin(), rec.sentence_id.end());
  bytes::put_u8(out, static_cast<std::uint8_t>(rec.language));
  bytes::put_u32(out, rec.L);
  bytes::put_u32(out, rec.H);
  bytes::put_u32(out, rec.D);
  const std::size_t payload_start = out.size();
  for (float v : rec.data) bytes::put_f32(out, v);
  const auto crc = bytes::crc32_of(std::span<const unsigned char>(out.data() + payload_start, rec.data.size() * 4));
  bytes::put_u32(out, crc);
  return out;
}

namespace detail {

/// Reads one record at the stream's current position. Returns nullopt at a
/// clean end of file.
inline std::optional<EmbeddingRecord> read_record_at(std::istream& in, const std::string& where) {
  unsigned char head[2];
  in.read(reinterpret_cast<char*>(head), 2);
  if (in.gcount() == 0 && in.eof()) return std::nullopt;
  if (in.gcount() != 2) throw FormatError(where + ": truncated record header");
  EmbeddingRecord rec;
  const std::uint16_t id_len = bytes::get_u16(head);
  rec.sentence_id.resize(id_len);
  in.read(rec.sentence_id.data(), id_len);
  unsigned char dims[13];
  in.read(reinterpret_cast<char*>(dims), 13);
  if (!in) throw FormatError(where + ": truncated record header");
  if (dims[0] > 1) throw FormatError(where + ": bad language code " + std::to_string(dims[0]));
  rec.language = static_cast<Lang>(dims[0]);
  rec.L = bytes::get_u32(dims + 1);
  rec.H = bytes::get_u32(dims + 5);
  rec.D = bytes::get_u32(dims + 9);
  const std::uint64_t count = static_cast<std::uint64_t>(rec.L) * rec.H * rec.D;
  if (rec.L == 0 || rec.H == 0 || rec.D == 0 || count > (std::uint64_t{1} << 34)) {
    throw FormatError(where + ": implausible record dimensions for " + rec.sentence_id);
  }
  std::vector<unsigned char> payload(count * 4 + 4);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!in) throw FormatError(where + ": truncated payload for " + rec.sentence_id);
  const auto stored = bytes::get_u32(payload.data() + count * 4);
  const auto actual = bytes::crc32_of(std::span<const unsigned char>(payload.data(), count * 4));
  if (stored != actual) throw FormatError(where + ": CRC mismatch for record " + rec.sentence_id);
  rec.data.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) rec.data[i] = bytes::get_f32(payload.data() + i * 4);
  return rec;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Writer

/// Appends records to `<dir>/records.bin`; `manifest.json` is written on
/// close() through a temporary file and rename.
class EmbedStoreWriter {
 public:
  EmbedStoreWriter(const std::filesystem::path& dir, std::string transformer_name, std::uint32_t H, std::uint32_t D)
      : dir_(dir) {
    manifest_.transformer_name = std::move(transformer_name);
    manifest_.H = H;
    manifest_.D = D;
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw StoreError("cannot create store directory " + dir_.string() + ": " + ec.message());
    if (std::filesystem::exists(dir_ / "records.bin")) throw StoreError("store already exists at " + dir_.string());
    out_.open(dir_ / "records.bin", std::ios::binary | std::ios::trunc);
    if (!out_) throw StoreError("cannot open " + (dir_ / "records.bin").string() + " for writing");
  }

  EmbedStoreWriter(const EmbedStoreWriter&) = delete;
  EmbedStoreWriter& operator=(const EmbedStoreWriter&) = delete;

  ~EmbedStoreWriter() {
    try {
      close();
    } catch (...) {
    }
  }

  std::uint64_t write_record(const EmbeddingRecord& rec) {
    if (closed_) throw StoreError("write to closed store " + dir_.string());
    rec.validate();
    if (rec.H != manifest_.H || rec.D != manifest_.D) {
      throw StoreError("record " + rec.sentence_id + " has H=" + std::to_string(rec.H) + ", D=" + std::to_string(rec.D) +
                       " but store uses H=" + std::to_string(manifest_.H) + ", D=" + std::to_string(manifest_.D));
    }
    if (manifest_.index.contains(rec.sentence_id)) throw StoreError("duplicate sentence id " + rec.sentence_id);
    const auto buf = encode_record(rec);
    out_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out_) throw StoreError("write failed: " + (dir_ / "records.bin").string());
    const std::uint64_t offset = offset_;
    offset_ += buf.size();
    manifest_.index[rec.sentence_id] = offset;
    ++manifest_.record_count;
    return offset;
  }

  /// Maps an extra id onto an already-written record.
  void add_alias(const std::string& alias, const std::string& canonical) {
    auto it = manifest_.index.find(canonical);
    if (it == manifest_.index.end()) throw LookupError("alias target " + canonical + " not in store");
    if (!manifest_.index.emplace(alias, it->second).second) throw StoreError("duplicate sentence id " + alias);
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    out_.close();
    const auto tmp = dir_ / "manifest.json.tmp";
    {
      std::ofstream m(tmp, std::ios::binary | std::ios::trunc);
      if (!m) throw StoreError("cannot write " + tmp.string());
      m << manifest_.to_json().dump(1) << '\n';
      if (!m) throw StoreError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, dir_ / "manifest.json");
  }

  const StoreManifest& manifest() const { return manifest_; }

 private:
  std::filesystem::path dir_;
  std::ofstream out_;
  StoreManifest manifest_;
  std::uint64_t offset_ = 0;
  bool closed_ = false;
};

// ---------------------------------------------------------------------------
// Readers

/// Read-only view of a store directory. Every read opens its own stream, so
/// one instance may serve concurrent readers.
class EmbedStore {
 public:
  explicit EmbedStore(const std::filesystem::path& dir) : dir_(dir) {
    std::ifstream m(dir_ / "manifest.json", std::ios::binary);
    if (!m) throw LookupError("no manifest.json in " + dir_.string());
    nlohmann::json j;
    try {
      m >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError((dir_ / "manifest.json").string() + ": " + e.what());
    }
    manifest_ = StoreManifest::from_json(j);
  }

  const StoreManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  bool contains(const std::string& id) const { return manifest_.index.contains(id); }

  EmbeddingRecord read_record(const std::string& id) const {
    auto it = manifest_.index.find(id);
    if (it == manifest_.index.end()) throw LookupError("sentence id '" + id + "' not in store " + dir_.string());
    std::ifstream in(dir_ / "records.bin", std::ios::binary);
    if (!in) throw StoreError("cannot open " + (dir_ / "records.bin").string());
    in.seekg(static_cast<std::streamoff>(it->second));
    auto rec = detail::read_record_at(in, (dir_ / "records.bin").string() + "@" + std::to_string(it->second));
    if (!rec) throw FormatError("offset " + std::to_string(it->second) + " past end of records.bin");
    if (rec->H != manifest_.H || rec->D != manifest_.D) throw FormatError("record " + rec->sentence_id + ": H/D differ from manifest");
    if (rec->sentence_id != id) {
      // Aliased id: the stored record carries the canonical id.
      rec->sentence_id = id;
    }
    return *rec;
  }

  /// Rebuilds the manifest from a linear scan of records.bin (aliases are
  /// not recoverable from the data file).
  static StoreManifest scan_manifest(const std::filesystem::path& dir, std::string transformer_name = {}) {
    std::ifstream in(dir / "records.bin", std::ios::binary);
    if (!in) throw LookupError("no records.bin in " + dir.string());
    StoreManifest m;
    m.transformer_name = std::move(transformer_name);
    std::uint64_t offset = 0;
    while (true) {
      auto rec = detail::read_record_at(in, (dir / "records.bin").string() + "@" + std::to_string(offset));
      if (!rec) break;
      if (m.record_count == 0) {
        m.H = rec->H;
        m.D = rec->D;
      } else if (rec->H != m.H || rec->D != m.D) {
        throw FormatError("record " + rec->sentence_id + ": H/D not uniform across store");
      }
      if (!m.index.emplace(rec->sentence_id, offset).second) throw FormatError("duplicate id " + rec->sentence_id);
      ++m.record_count;
      offset = static_cast<std::uint64_t>(in.tellg());
    }
    return m;
  }

  /// Rewrites manifest.json from scan_manifest().
  static void rebuild_manifest(const std::filesystem::path& dir, std::string transformer_name = {}) {
    const auto m = scan_manifest(dir, std::move(transformer_name));
    const auto tmp = dir / "manifest.json.tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << m.to_json().dump(1) << '\n';
      if (!out) throw StoreError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, dir / "manifest.json");
  }

 private:
  std::filesystem::path dir_;
  StoreManifest manifest_;
};

/// In-memory record source with the same lookup contract as EmbedStore.
class MemoryStore {
 public:
  MemoryStore() = default;

  static MemoryStore preload(const EmbedStore& store) {
    MemoryStore m;
    for (const auto& [id, off] : store.manifest().index) m.add(store.read_record(id));
    return m;
  }

  void add(EmbeddingRecord rec) {
    rec.validate();
    const std::string id = rec.sentence_id;
    if (!records_.emplace(id, std::move(rec)).second) throw StoreError("duplicate sentence id " + id);
  }

  bool contains(const std::string& id) const { return records_.contains(id); }

  const EmbeddingRecord& read_record(const std::string& id) const {
    auto it = records_.find(id);
    if (it == records_.end()) throw LookupError("sentence id '" + id + "' not in memory store");
    return it->second;
  }

  std::size_t size() const { return records_.size(); }

 private:
  std::unordered_map<std::string, EmbeddingRecord> records_;
};

// ---------------------------------------------------------------------------
// Batches

struct PairMeta {
  std::string pair_id;
  std::string language_pair;
  std::optional<double> relatedness;
  std::optional<std::string> genre;
  std::size_t char_length = 0;
};

/// Zero-padded pair batch. Raw tensors are [B][H][L][D] with a single
/// padded length L shared by both sides; masks are [B][L].
struct Batch {
  std::size_t B = 0, H = 0, L = 0, D = 0;
  std::vector<float> u_raw, v_raw;
  std::vector<float> u_mask, v_mask;
  std::vector<std::size_t> u_len, v_len;
  std::vector<int> labels;  // empty when unlabeled
  std::vector<PairMeta> meta;

  /// Premise and hypothesis exchanged.
  Batch swapped() const {
    Batch s = *this;
    std::swap(s.u_raw, s.v_raw);
    std::swap(s.u_mask, s.v_mask);
    std::swap(s.u_len, s.v_len);
    return s;
  }
};

namespace detail {

inline void copy_sequence(const EmbeddingRecord& rec, std::size_t len, std::size_t b, const Batch& batch,
                          std::vector<float>& raw, std::vector<float>& mask) {
  for (std::size_t h = 0; h < batch.H; ++h)
    for (std::size_t pos = 0; pos < len; ++pos)
      std::copy_n(rec.data.data() + (h * rec.L + pos) * rec.D, rec.D,
                  raw.data() + ((b * batch.H + h) * batch.L + pos) * batch.D);
  for (std::size_t pos = 0; pos < len; ++pos) mask[b * batch.L + pos] = 1.0f;
}

template <class Source>
Batch assemble(const Source& source, const std::vector<std::pair<std::string, std::string>>& ids, std::size_t lcap) {
  if (lcap < 1) throw ConfigError("Lcap must be >= 1");
  if (ids.empty()) throw DataError("cannot assemble an empty batch");
  using Rec = std::decay_t<decltype(source.read_record(std::string()))>;
  std::vector<Rec> premises, hypotheses;
  premises.reserve(ids.size());
  hypotheses.reserve(ids.size());
  for (const auto& [p, h] : ids) {
    premises.push_back(source.read_record(p));
    hypotheses.push_back(source.read_record(h));
  }
  Batch batch;
  batch.B = ids.size();
  batch.H = premises.front().H;
  batch.D = premises.front().D;
  for (std::size_t i = 0; i < batch.B; ++i) {
    for (const EmbeddingRecord* r : {&premises[i], &hypotheses[i]}) {
      if (r->H != batch.H || r->D != batch.D) throw StoreError("record " + r->sentence_id + ": H/D differ within batch");
    }
    batch.u_len.push_back(std::min<std::size_t>(premises[i].L, lcap));
    batch.v_len.push_back(std::min<std::size_t>(hypotheses[i].L, lcap));
    batch.L = std::max({batch.L, batch.u_len.back(), batch.v_len.back()});
  }
  const std::size_t raw_size = batch.B * batch.H * batch.L * batch.D;
  batch.u_raw.assign(raw_size, 0.0f);
  batch.v_raw.assign(raw_size, 0.0f);
  batch.u_mask.assign(batch.B * batch.L, 0.0f);
  batch.v_mask.assign(batch.B * batch.L, 0.0f);
  for (std::size_t i = 0; i < batch.B; ++i) {
    copy_sequence(premises[i], batch.u_len[i], i, batch, batch.u_raw, batch.u_mask);
    copy_sequence(hypotheses[i], batch.v_len[i], i, batch, batch.v_raw, batch.v_mask);
  }
  return batch;
}

}  // namespace detail

/// Builds a batch for `pairs`: sequences truncated to `lcap` (keeping the cls
/// prefix) and zero-padded to the longest sequence on either side.
template <class Source>
Batch assemble_batch(const Source& source, std::span<const PairExample> pairs, std::size_t lcap) {
  std::vector<std::pair<std::string, std::string>> ids;
  ids.reserve(pairs.size());
  for (const auto& ex : pairs) ids.emplace_back(ex.premise_id, ex.hypothesis_id);
  Batch batch = detail::assemble(source, ids, lcap);
  for (const auto& ex : pairs) {
    batch.labels.push_back(static_cast<int>(ex.label));
    batch.meta.push_back({ex.pair_id, ex.language_pair(), ex.relatedness, ex.genre, ex.char_length()});
  }
  return batch;
}

/// Single unlabeled pair by sentence ids.
template <class Source>
Batch assemble_pair(const Source& source, const std::string& premise_id, const std::string& hypothesis_id,
                    std::size_t lcap) {
  Batch batch = detail::assemble(source, {{premise_id, hypothesis_id}}, lcap);
  batch.meta.push_back({premise_id + "|" + hypothesis_id, "", std::nullopt, std::nullopt, 0});
  return batch;
}

}  // namespace silt
