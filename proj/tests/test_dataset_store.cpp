#include <emoforge/dataset_store.hpp>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace emoforge {
namespace {

const Taxonomy& emoset() {
  static const Taxonomy t = load_taxonomy("emoset");
  return t;
}

std::vector<InstructionRecord> triple(const std::string& id, const std::string& emotion) {
  auto split = split_conversation_reasoning(
      {{"What is in " + id + "?", "A lake."}, {"Time of day?", "Dusk."}, {"Why " + emotion + "?", "Because it is quiet."}},
      id, Provenance{false, "gpt-4", "2024-01-01T00:00:00Z", sha256_hex(id)}, emotion);
  return {make_categorical(id, emotion, emoset()), split.conversation, split.reasoning};
}

Dataset dataset_of(std::size_t n_images, const std::string& prefix = "img") {
  Dataset d;
  d.manifest().taxonomy = "emoset";
  for (std::size_t i = 0; i < n_images; ++i) {
    for (const auto& r : triple(prefix + std::to_string(i), emoset().labels()[i % 8])) d.insert(r);
  }
  return d;
}

TEST(Dataset, AppendCountsAndDedup) {
  auto records = triple("a", "awe");
  auto d = append(Dataset{}, records);
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.manifest().count(InstructionKind::reasoning), 1u);
  auto again = append(d, records);
  EXPECT_EQ(again.size(), 3u);
  auto other = records[0];
  other.turns[0].first = "A different question";
  EXPECT_TRUE(again.insert(other));
  EXPECT_EQ(again.manifest().count(InstructionKind::categorical), 2u);
}

TEST(Dataset, RejectsSchemaMismatchAndInvalidRecords) {
  Dataset d;
  auto r = triple("a", "awe")[0];
  r.schema_version = 2;
  try {
    d.insert(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::schema_mismatch);
  }
  auto bad = triple("a", "awe")[1];
  bad.turns.resize(1);
  EXPECT_THROW(d.insert(bad), RecordValidationError);
  EXPECT_TRUE(d.empty());
}

TEST(SelectKinds, CategoricalOnlyAndIdentity) {
  auto d = dataset_of(100);
  ASSERT_EQ(d.size(), 300u);
  auto c = select_kinds(d, {InstructionKind::categorical});
  EXPECT_EQ(c.size(), 100u);
  for (const auto& r : c.records()) EXPECT_EQ(r.kind, InstructionKind::categorical);
  EXPECT_EQ(c.manifest().composition, "categorical");
  EXPECT_EQ(c.manifest().count(InstructionKind::conversation), 0u);
  auto all = select_kinds(d, {kAllKinds.begin(), kAllKinds.end()});
  EXPECT_EQ(all.records(), d.records());
  EXPECT_EQ(all.manifest().composition, "categorical+conversation+reasoning");
  auto cr = select_kinds(d, {InstructionKind::reasoning, InstructionKind::categorical});
  EXPECT_EQ(cr.manifest().composition, "categorical+reasoning");
  EXPECT_THROW(select_kinds(d, {}), Error);
}

TEST(SelectKinds, AblationLabels) {
  using K = InstructionKind;
  EXPECT_EQ(ablation_label({}), "none");
  EXPECT_EQ(ablation_label({K::categorical}), "C");
  EXPECT_EQ(ablation_label({K::categorical, K::conversation}), "C+Conv");
  EXPECT_EQ(ablation_label({K::categorical, K::conversation, K::reasoning}), "C+Conv+R");
}

std::vector<StratifiedItem> emoset_sized_items() {
  std::vector<StratifiedItem> items;
  for (std::size_t i = 0; i < 51200; ++i) items.push_back({"e" + std::to_string(i), emoset().labels()[i % 8]});
  return items;
}

TEST(Sample, HalfOfFullCorpus) {
  auto items = emoset_sized_items();
  auto a = stratified_sample(items, 0.5, 42);
  auto b = stratified_sample(items, 0.5, 42);
  EXPECT_EQ(a.size(), 25600u);
  EXPECT_EQ(a, b);
  std::map<std::string, std::size_t> per_class;
  std::unordered_map<std::string, std::string> stratum;
  for (const auto& it : items) stratum[it.id] = it.stratum;
  for (const auto& id : a) ++per_class[stratum.at(id)];
  for (const auto& [label, n] : per_class) EXPECT_NEAR(static_cast<double>(n), 3200.0, 1.0) << label;
  EXPECT_NE(stratified_sample(items, 0.5, 43), a);
}

TEST(Sample, RoundingAndApportionment) {
  // 7 items in strata of 4 and 3; 0.5 * 7 = 3.5 rounds to 4.
  std::vector<StratifiedItem> items = {{"a1", "x"}, {"a2", "x"}, {"a3", "x"}, {"a4", "x"},
                                       {"b1", "y"}, {"b2", "y"}, {"b3", "y"}};
  auto s = stratified_sample(items, 0.5, 1);
  ASSERT_EQ(s.size(), 4u);
  auto in_y = std::count_if(s.begin(), s.end(), [](const std::string& id) { return id[0] == 'b'; });
  EXPECT_EQ(in_y, 2);
  // Equal remainders: the alphabetically first stratum wins the extra slot.
  std::vector<StratifiedItem> tie = {{"p", "b"}, {"q", "a"}};
  auto t = stratified_sample(tie, 0.5, 1);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0], "q");
}

TEST(Sample, FractionBounds) {
  std::vector<StratifiedItem> items = {{"a", "x"}};
  EXPECT_THROW(stratified_sample(items, 0.0, 1), Error);
  EXPECT_THROW(stratified_sample(items, 1.5, 1), Error);
  EXPECT_THROW(stratified_sample(items, std::nan(""), 1), Error);
  EXPECT_EQ(stratified_sample(items, 1.0, 1).size(), 1u);
}

TEST(Sample, DatasetSamplingKeepsImagesWhole) {
  auto d = dataset_of(200);
  auto full = sample_fraction(d, 1.0, 9);
  EXPECT_EQ(full.records(), d.records());
  auto half = sample_fraction(d, 0.5, 9);
  EXPECT_EQ(half.image_ids().size(), 100u);
  EXPECT_EQ(half.size(), 300u);
  EXPECT_EQ(half.manifest().sample_fraction, 0.5);
  EXPECT_EQ(half.manifest().sample_seed, 9u);
  auto ids = d.image_ids();
  std::set<std::string> all(ids.begin(), ids.end());
  for (const auto& id : half.image_ids()) EXPECT_TRUE(all.count(id));
  EXPECT_EQ(sample_fraction(d, 0.5, 9).records(), half.records());
}

TEST(SplitHeld, DisjointAndOverlap) {
  std::map<std::string, Dataset> sets = {
      {"emoset", dataset_of(10, "es")}, {"fi", dataset_of(5, "fi")}, {"webemo", dataset_of(5, "we")}};
  auto ok = split_held(sets, {"emoset", {"fi", "webemo"}});
  EXPECT_EQ(ok.held_in.size(), 30u);
  EXPECT_EQ(ok.held_out.size(), 2u);

  sets["fi"] = append(sets["fi"], triple("es3", "awe"));
  sets["webemo"] = append(sets["webemo"], triple("fi1", "awe"));
  try {
    split_held(sets, {"emoset", {"fi", "webemo"}});
    FAIL();
  } catch (const OverlapError& e) {
    EXPECT_EQ(e.ids(), (std::set<std::string>{"es3", "fi1"}));
    EXPECT_EQ(e.code(), ErrorCode::overlap);
  }
  EXPECT_THROW(split_held(sets, {"emoset", {"missing"}}), Error);
  EXPECT_THROW(split_held(sets, {"emoset", {"emoset"}}), Error);
}

TEST(Stats, EmptyAndHistogram) {
  auto empty = stats(Dataset{});
  EXPECT_EQ(empty.total_records, 0u);
  EXPECT_EQ(empty.records_per_kind.at("reasoning"), 0u);
  EXPECT_TRUE(empty.turn_histogram.empty());

  auto conv = select_kinds(dataset_of(100), {InstructionKind::conversation});
  auto s = stats(conv);
  EXPECT_EQ(s.turn_histogram, (std::map<std::size_t, std::size_t>{{2, 100}}));
  auto j = to_json(stats(dataset_of(16)));
  EXPECT_EQ(j["kinds_per_image"]["(1,1,1)"], 16);
  EXPECT_EQ(j["images_per_emotion"]["awe"], 2);
  EXPECT_EQ(j["turn_histogram"]["1"], 32);
}

TEST(Files, WriteReadWriteIsByteIdentical) {
  testing::TempDir dir;
  auto d = dataset_of(30);
  d.manifest().config_digest = "abc";
  write_dataset(d, dir / "a.jsonl");
  auto back = read_dataset(dir / "a.jsonl");
  write_dataset(back, dir / "b.jsonl");
  EXPECT_EQ(read_file(dir / "a.jsonl"), read_file(dir / "b.jsonl"));
  EXPECT_EQ(read_file(dir / "a.manifest"), read_file(dir / "b.manifest"));
  EXPECT_EQ(back.manifest(), d.manifest());
  EXPECT_EQ(back.size(), d.size());
}

TEST(Files, CanonicalOrderIgnoresInsertionOrder) {
  auto d = dataset_of(20);
  auto recs = d.records();
  std::reverse(recs.begin(), recs.end());
  auto rev = append(d.empty_like(), recs);
  EXPECT_EQ(serialize_records(rev), serialize_records(d));
}

TEST(Files, ReadRejectsCountMismatch) {
  testing::TempDir dir;
  write_dataset(dataset_of(3), dir / "d.jsonl");
  auto text = read_file(dir / "d.jsonl");
  testing::write_text(dir / "d.jsonl", text.substr(0, text.rfind('\n', text.size() - 2) + 1));
  EXPECT_THROW(read_dataset(dir / "d.jsonl"), Error);
}

TEST(Files, ValidateReportsLineNumbers) {
  testing::TempDir dir;
  write_dataset(dataset_of(3), dir / "d.jsonl");
  auto clean = validate_dataset_file(dir / "d.jsonl");
  EXPECT_TRUE(clean.ok());
  EXPECT_EQ(clean.records, 9u);

  auto lines = std::vector<std::string>{};
  {
    std::istringstream in(read_file(dir / "d.jsonl"));
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  auto j = json::parse(lines[4]);
  j["turns"] = json::array();
  lines[4] = j.dump();
  lines[6] = "{broken";
  std::string joined;
  for (const auto& l : lines) joined += l + "\n";
  testing::write_text(dir / "d.jsonl", joined);
  auto v = validate_dataset_file(dir / "d.jsonl");
  EXPECT_FALSE(v.ok());
  auto has = [&](const std::string& prefix) {
    return std::any_of(v.errors.begin(), v.errors.end(), [&](const auto& e) { return e.rfind(prefix, 0) == 0; });
  };
  EXPECT_TRUE(has("line 5: "));
  EXPECT_TRUE(has("line 7: "));
  EXPECT_TRUE(has("manifest count"));
}

TEST(Files, ValidateWarnsOnShortReasoning) {
  testing::TempDir dir;
  Dataset d;
  auto split = split_conversation_reasoning({{"q1", "a long descriptive answer"}, {"q2", "another long one"}, {"q3", "ok"}},
                                            "x", Provenance::local(), "awe");
  d.insert(split.conversation);
  d.insert(split.reasoning);
  write_dataset(d, dir / "d.jsonl");
  auto v = validate_dataset_file(dir / "d.jsonl");
  EXPECT_TRUE(v.ok());
  EXPECT_EQ(v.warnings.size(), 1u);
}

TEST(Export, OneRowPerTurn) {
  auto d = dataset_of(2);
  auto text = export_instruction_pairs(d);
  std::istringstream in(text);
  std::size_t rows = 0;
  for (std::string l; std::getline(in, l); ++rows) {
    auto j = json::parse(l);
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    EXPECT_EQ(keys, (std::vector<std::string>{"image_id", "instruction", "output"}));
  }
  EXPECT_EQ(rows, 2u * (1 + 2 + 1));
}

}  // namespace
}  // namespace emoforge
