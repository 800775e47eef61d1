#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <limits>
#include <vector>

#include "silt/embed_store.hpp"
#include "silt/rng.hpp"
#include "test_util.hpp"

using namespace silt;
using silt::testing::TempDir;

namespace {

EmbeddingRecord random_record(const std::string& id, std::uint32_t L, std::uint32_t H, std::uint32_t D, RngState& rng) {
  EmbeddingRecord rec{id, rng.below(2) ? Lang::es : Lang::en, L, H, D, {}};
  rec.data.resize(static_cast<std::size_t>(L) * H * D);
  for (auto& x : rec.data) x = static_cast<float>(rng.uniform() * 8.0 - 4.0);
  return rec;
}

/// Record whose value at (h, pos, d) encodes its coordinates.
EmbeddingRecord coded_record(const std::string& id, std::uint32_t L, std::uint32_t H, std::uint32_t D, float tag) {
  EmbeddingRecord rec{id, Lang::en, L, H, D, std::vector<float>(static_cast<std::size_t>(L) * H * D)};
  for (std::uint32_t h = 0; h < H; ++h)
    for (std::uint32_t p = 0; p < L; ++p)
      for (std::uint32_t d = 0; d < D; ++d) rec.data[(h * L + p) * D + d] = tag + 100.0f * h + 10.0f * p + d + 1.0f;
  return rec;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

PairExample pair(const std::string& pid, const std::string& p, const std::string& h, Label l = Label::neutral) {
  PairExample ex;
  ex.pair_id = pid;
  ex.premise_id = p;
  ex.hypothesis_id = h;
  ex.label = l;
  return ex;
}

}  // namespace

TEST(EmbedStore, RoundtripIsBitwiseExact) {
  TempDir dir;
  RngState rng{5, 0};
  std::vector<EmbeddingRecord> recs;
  for (int i = 0; i < 50; ++i) recs.push_back(random_record("s" + std::to_string(i), 1 + rng.below(9), 3, 4, rng));
  // Extreme but finite payloads.
  recs[0].data[0] = std::numeric_limits<float>::max();
  recs[0].data[1] = std::numeric_limits<float>::denorm_min();
  recs[0].data[2] = -0.0f;
  {
    EmbedStoreWriter w(dir.path(), "test-model", 3, 4);
    for (const auto& r : recs) w.write_record(r);
  }
  EmbedStore store(dir.path());
  EXPECT_EQ(store.manifest().record_count, recs.size());
  EXPECT_EQ(store.manifest().transformer_name, "test-model");
  for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
    const auto back = store.read_record(it->sentence_id);
    EXPECT_EQ(back.sentence_id, it->sentence_id);
    EXPECT_EQ(back.language, it->language);
    EXPECT_EQ(back.L, it->L);
    EXPECT_TRUE(bitwise_equal(back.data, it->data)) << it->sentence_id;
  }
  EXPECT_TRUE(std::signbit(store.read_record("s0").data[2]));
}

TEST(EmbedStore, ReadsAreIdempotentAndOrderIndependent) {
  TempDir dir;
  RngState rng{9, 0};
  auto a = random_record("a", 4, 2, 3, rng);
  auto b = random_record("b", 6, 2, 3, rng);
  {
    EmbedStoreWriter w(dir.path(), "m", 2, 3);
    w.write_record(a);
    w.write_record(b);
  }
  EmbedStore store(dir.path());
  EXPECT_EQ(store.read_record("b"), b);
  EXPECT_EQ(store.read_record("a"), a);
  EXPECT_EQ(store.read_record("b"), b);
  EXPECT_EQ(store.read_record("a"), store.read_record("a"));
}

TEST(EmbedStore, PayloadSizeArithmetic) {
  TempDir dir;
  RngState rng{1, 0};
  const auto rec = random_record("x", 20, 13, 768, rng);
  const auto bytes = encode_record(rec);
  const std::size_t payload = 13u * 20u * 768u * 4u;
  EXPECT_EQ(payload, 798720u);
  EXPECT_EQ(bytes.size(), 2 + 1 + 1 + 12 + payload + 4);
  {
    EmbedStoreWriter w(dir.path(), "bert", 13, 768);
    w.write_record(rec);
  }
  EXPECT_EQ(std::filesystem::file_size(dir / "records.bin"), bytes.size());
}

TEST(EmbedStore, HeaderLayoutIsLittleEndian) {
  EmbeddingRecord rec{"ab", Lang::es, 1, 1, 1, {1.0f}};
  const auto b = encode_record(rec);
  ASSERT_EQ(b.size(), 2u + 2 + 1 + 12 + 4 + 4);
  EXPECT_EQ(b[0], 2);
  EXPECT_EQ(b[1], 0);
  EXPECT_EQ(b[2], 'a');
  EXPECT_EQ(b[4], 1);  // es
  EXPECT_EQ(b[5], 1);  // L low byte
  // 1.0f = 0x3F800000
  EXPECT_EQ(b[17], 0x00);
  EXPECT_EQ(b[20], 0x3F);
  const std::uint32_t crc = bytes::get_u32(b.data() + 21);
  const unsigned char payload[4] = {0x00, 0x00, 0x80, 0x3F};
  EXPECT_EQ(crc, bytes::crc32_of(payload));
}

TEST(EmbedStore, UnknownIdIsLookupError) {
  TempDir dir;
  RngState rng{2, 0};
  {
    EmbedStoreWriter w(dir.path(), "m", 1, 2);
    w.write_record(random_record("k", 2, 1, 2, rng));
  }
  EmbedStore store(dir.path());
  EXPECT_THROW(store.read_record("nope"), LookupError);
  EXPECT_THROW(EmbedStore(dir / "missing"), LookupError);
}

TEST(EmbedStore, DuplicateIdAndShapeMismatchRejected) {
  TempDir dir;
  RngState rng{3, 0};
  EmbedStoreWriter w(dir.path(), "m", 2, 2);
  w.write_record(random_record("k", 2, 2, 2, rng));
  EXPECT_THROW(w.write_record(random_record("k", 3, 2, 2, rng)), StoreError);
  EXPECT_THROW(w.write_record(random_record("j", 3, 1, 2, rng)), StoreError);
  EXPECT_THROW(EmbedStoreWriter(dir.path(), "m", 2, 2), StoreError);
}

TEST(EmbedStore, CorruptPayloadIsFormatError) {
  TempDir dir;
  RngState rng{4, 0};
  {
    EmbedStoreWriter w(dir.path(), "m", 2, 2);
    w.write_record(random_record("a", 3, 2, 2, rng));
    w.write_record(random_record("b", 3, 2, 2, rng));
  }
  const auto off_b = EmbedStore(dir.path()).manifest().index.at("b");
  {
    std::fstream f(dir / "records.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(off_b + 2 + 1 + 13 + 5));
    const char junk = 0x5A;
    f.write(&junk, 1);
  }
  EmbedStore store(dir.path());
  EXPECT_NO_THROW(store.read_record("a"));
  EXPECT_THROW(store.read_record("b"), FormatError);
}

TEST(EmbedStore, TruncatedFileIsFormatError) {
  TempDir dir;
  RngState rng{4, 0};
  {
    EmbedStoreWriter w(dir.path(), "m", 2, 2);
    w.write_record(random_record("a", 3, 2, 2, rng));
  }
  std::filesystem::resize_file(dir / "records.bin", std::filesystem::file_size(dir / "records.bin") - 3);
  EXPECT_THROW(EmbedStore(dir.path()).read_record("a"), FormatError);
}

TEST(EmbedStore, ManifestRebuildFromLinearScan) {
  TempDir dir;
  RngState rng{6, 0};
  std::vector<EmbeddingRecord> recs;
  for (int i = 0; i < 7; ++i) recs.push_back(random_record("r" + std::to_string(i), 1 + rng.below(5), 2, 3, rng));
  {
    EmbedStoreWriter w(dir.path(), "m", 2, 3);
    for (const auto& r : recs) w.write_record(r);
  }
  const auto original = EmbedStore(dir.path()).manifest();
  std::filesystem::remove(dir / "manifest.json");
  EmbedStore::rebuild_manifest(dir.path(), "m");
  EmbedStore store(dir.path());
  EXPECT_EQ(store.manifest().index, original.index);
  EXPECT_EQ(store.manifest().record_count, 7u);
  for (const auto& r : recs) EXPECT_EQ(store.read_record(r.sentence_id), r);
}

TEST(EmbedStore, AliasesShareOneRecord) {
  TempDir dir;
  RngState rng{8, 0};
  const auto rec = random_record("1:A:en", 2, 1, 2, rng);
  {
    EmbedStoreWriter w(dir.path(), "m", 1, 2);
    w.write_record(rec);
    w.add_alias("2:A:en", "1:A:en");
    EXPECT_THROW(w.add_alias("3:A:en", "missing"), LookupError);
  }
  EmbedStore store(dir.path());
  EXPECT_EQ(store.manifest().record_count, 1u);
  const auto back = store.read_record("2:A:en");
  EXPECT_EQ(back.sentence_id, "2:A:en");
  EXPECT_TRUE(bitwise_equal(back.data, rec.data));
}

TEST(EmbedStore, ManifestJsonFields) {
  TempDir dir;
  RngState rng{8, 0};
  {
    EmbedStoreWriter w(dir.path(), "distil", 1, 2);
    w.write_record(random_record("x", 2, 1, 2, rng));
  }
  const auto j = nlohmann::json::parse(silt::testing::read_text(dir / "manifest.json"));
  EXPECT_EQ(j.at("format_version"), 1);
  EXPECT_EQ(j.at("transformer_name"), "distil");
  EXPECT_EQ(j.at("H"), 1);
  EXPECT_EQ(j.at("D"), 2);
  EXPECT_EQ(j.at("record_count"), 1);
  EXPECT_EQ(j.at("index").at("x"), 0);
  EXPECT_FALSE(std::filesystem::exists(dir / "manifest.json.tmp"));
}

TEST(AssembleBatch, PadsToLongestWithMasks) {
  MemoryStore store;
  store.add(coded_record("p", 3, 2, 2, 0));
  store.add(coded_record("h", 5, 2, 2, 1000));
  const std::vector<PairExample> pairs{pair("x", "p", "h", Label::entailment)};
  const auto b = assemble_batch(store, std::span<const PairExample>(pairs), 125);
  EXPECT_EQ(b.B, 1u);
  EXPECT_EQ(b.L, 5u);
  EXPECT_EQ(b.u_mask, (std::vector<float>{1, 1, 1, 0, 0}));
  EXPECT_EQ(b.v_mask, (std::vector<float>{1, 1, 1, 1, 1}));
  EXPECT_EQ(b.labels, (std::vector<int>{1}));
  // h=1, pos=2, d=1 of the premise.
  EXPECT_EQ(b.u_raw[(1 * 5 + 2) * 2 + 1], 100.0f + 20.0f + 1.0f + 1.0f);
}

TEST(AssembleBatch, TruncationKeepsClsPrefix) {
  MemoryStore store;
  store.add(coded_record("p", 7, 1, 2, 0));
  store.add(coded_record("h", 2, 1, 2, 0));
  const std::vector<PairExample> pairs{pair("x", "p", "h")};
  const auto b = assemble_batch(store, std::span<const PairExample>(pairs), 4);
  EXPECT_EQ(b.L, 4u);
  EXPECT_EQ(b.u_len[0], 4u);
  EXPECT_EQ(b.u_raw[0], 1.0f);  // cls at position 0
  EXPECT_EQ(b.u_raw[3 * 2], 31.0f);
}

TEST(AssembleBatch, PaddedCellsAreExactlyZero) {
  MemoryStore store;
  RngState rng{12, 0};
  for (std::uint32_t L : {3u, 5u, 1u, 4u}) store.add(random_record("s" + std::to_string(L), L, 3, 2, rng));
  const std::vector<PairExample> pairs{pair("a", "s3", "s5"), pair("b", "s1", "s4")};
  const auto b = assemble_batch(store, std::span<const PairExample>(pairs), 125);
  ASSERT_EQ(b.L, 5u);
  for (std::size_t i = 0; i < b.B; ++i) {
    for (std::size_t j = 0; j < b.L; ++j) {
      for (const auto* side : {&b.u_raw, &b.v_raw}) {
        const auto& mask = side == &b.u_raw ? b.u_mask : b.v_mask;
        EXPECT_EQ(mask[i * b.L + j] == 1.0f, j < (side == &b.u_raw ? b.u_len[i] : b.v_len[i]));
        if (mask[i * b.L + j] == 0.0f) {
          for (std::size_t h = 0; h < b.H; ++h)
            for (std::size_t d = 0; d < b.D; ++d) EXPECT_EQ((*side)[((i * b.H + h) * b.L + j) * b.D + d], 0.0f);
        }
      }
    }
  }
}

TEST(AssembleBatch, MissingIdAndBadCap) {
  MemoryStore store;
  store.add(coded_record("p", 2, 1, 1, 0));
  const std::vector<PairExample> pairs{pair("x", "p", "absent")};
  EXPECT_THROW(assemble_batch(store, std::span<const PairExample>(pairs), 10), LookupError);
  const std::vector<PairExample> ok{pair("x", "p", "p")};
  EXPECT_THROW(assemble_batch(store, std::span<const PairExample>(ok), 0), ConfigError);
}

TEST(AssembleBatch, FileAndMemoryStoresAgree) {
  TempDir dir;
  RngState rng{13, 0};
  std::vector<EmbeddingRecord> recs{random_record("p", 3, 2, 2, rng), random_record("h", 4, 2, 2, rng)};
  {
    EmbedStoreWriter w(dir.path(), "m", 2, 2);
    for (const auto& r : recs) w.write_record(r);
  }
  EmbedStore file(dir.path());
  const auto mem = MemoryStore::preload(file);
  const std::vector<PairExample> pairs{pair("x", "p", "h"), pair("y", "h", "p")};
  const auto a = assemble_batch(file, std::span<const PairExample>(pairs), 125);
  const auto b = assemble_batch(mem, std::span<const PairExample>(pairs), 125);
  EXPECT_TRUE(bitwise_equal(a.u_raw, b.u_raw));
  EXPECT_TRUE(bitwise_equal(a.v_raw, b.v_raw));
  EXPECT_EQ(a.u_mask, b.u_mask);
}
