#include <emoforge/prompt_builder.hpp>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace emoforge {
namespace {

using testing::make_attribute;

std::vector<SeedExample> two_seeds() {
  return {SeedExample{"A dog runs on a beach.", "joy", std::vector<QaPair>{{"What runs?", "A dog."}}},
          SeedExample{"Storm clouds over a field.", "fear", std::nullopt}};
}

TEST(SystemPrompt, VerbatimContent) {
  auto p = build_system_prompt();
  EXPECT_EQ(p.rfind("You are an AI visual assistant, and you are seeing a single image.", 0), 0u);
  EXPECT_NE(p.find("Design two questions for a conversation"), std::string::npos);
  EXPECT_NE(p.find("include one complex question"), std::string::npos);
  EXPECT_NE(p.find("The range of brightness is from 0 (darkest) to 1 (brightest)"), std::string::npos);
  EXPECT_NE(p.find("Please answer with the format\nQuestion:\nAnswer:"), std::string::npos);
}

TEST(SystemPrompt, PinnedChecksumAndResourceFile) {
  EXPECT_EQ(sha256_hex(build_system_prompt()), kSystemPromptSha256);
  EXPECT_EQ(read_file(testing::data_file("system_prompt.txt")), build_system_prompt());
}

TEST(ContextBlock, FixedOrderAndDefaults) {
  auto a = make_attribute("x", "joy", 0.8, 0.25);
  a.human_action = "jumping";
  auto block = build_context_block({"x", "a smiling child"}, a);
  EXPECT_EQ(block,
            "Caption: a smiling child\n"
            "Emotion class: joy\n"
            "Brightness: 0.8\n"
            "Colorfulness: 0.25\n"
            "Scene type: park\n"
            "Object class: tree, bench\n"
            "Facial expression: none\n"
            "Human action: jumping");
}

TEST(ContextBlock, MismatchedIds) {
  EXPECT_THROW(build_context_block({"y", "c"}, make_attribute("x", "joy")), Error);
}

TEST(BuildRequest, MessageLayout) {
  auto a = make_attribute("x", "joy");
  CaptionRecord c{"x", "a smiling child"};
  auto req = build_request(InstructionKind::conversation, c, a, two_seeds());
  ASSERT_EQ(req.messages.size(), 6u);
  EXPECT_EQ(req.messages[0].role, Role::system);
  EXPECT_EQ(req.messages[0].content, build_system_prompt());
  EXPECT_EQ(req.messages[1].role, Role::user);
  EXPECT_EQ(req.messages[2].role, Role::assistant);
  EXPECT_EQ(req.messages[2].content, "Question: What runs?\nAnswer: A dog.");
  EXPECT_EQ(req.messages[4].content, "Question: Which emotion does this image evoke?\nAnswer: The image evokes fear.");
  EXPECT_EQ(req.messages[5].role, Role::user);
  EXPECT_EQ(req.image_id, "x");

  auto zero_shot = build_request(InstructionKind::categorical, c, a, {});
  EXPECT_EQ(zero_shot.messages.size(), 2u);
}

TEST(BuildRequest, FinalTurnCarriesAllAttributesForEveryKind) {
  auto a = make_attribute("x", "joy");
  for (auto kind : kAllKinds) {
    auto req = build_request(kind, {"x", "cap"}, a, two_seeds());
    const auto& last = req.messages.back().content;
    for (auto name : {"Caption:", "Emotion class:", "Brightness:", "Colorfulness:", "Scene type:", "Object class:",
                      "Facial expression:", "Human action:"}) {
      EXPECT_NE(last.find(name), std::string::npos) << to_string(kind) << " " << name;
    }
  }
}

TEST(BuildRequest, DeterministicHash) {
  auto a = make_attribute("x", "joy");
  auto r1 = build_request(InstructionKind::reasoning, {"x", "cap"}, a, two_seeds());
  auto r2 = build_request(InstructionKind::reasoning, {"x", "cap"}, a, two_seeds());
  EXPECT_EQ(r1, r2);
  EXPECT_EQ(r1.prompt_hash.size(), 64u);
  auto r3 = build_request(InstructionKind::conversation, {"x", "cap"}, a, two_seeds());
  EXPECT_NE(r1.prompt_hash, r3.prompt_hash);
  auto b = a;
  b.brightness = 0.61;
  EXPECT_NE(build_request(InstructionKind::reasoning, {"x", "cap"}, b, two_seeds()).prompt_hash, r1.prompt_hash);
  EXPECT_NE(with_format_reminder(r1).prompt_hash, r1.prompt_hash);
}

TEST(BuildRequest, InvalidKindAndSeed) {
  auto a = make_attribute("x", "joy");
  EXPECT_THROW(build_request("summary", {"x", "c"}, a, {}), Error);
  EXPECT_NO_THROW(build_request("Conversation", {"x", "c"}, a, {}));
  std::vector<SeedExample> bad = {SeedExample{"desc", "joy", std::vector<QaPair>{{"q", " "}}}};
  EXPECT_THROW(build_request(InstructionKind::conversation, {"x", "c"}, a, bad), Error);
}

TEST(SeedExamples, EmotionDescriptorFixture) {
  auto seeds = load_seed_examples(testing::data_file("seeds/emotion_descriptors.jsonl"));
  ASSERT_EQ(seeds.size(), 16u);
  auto has = [&](const std::string& d, const std::string& e) {
    return std::any_of(seeds.begin(), seeds.end(),
                       [&](const SeedExample& s) { return s.description == d && s.emotion == e; });
  };
  EXPECT_TRUE(has("Unleashed Fury: A portrait of raw, unfiltered anger etched on the subject's face.", "Anger"));
  EXPECT_TRUE(has("Overflowing with joy, like a puppy at a park!", "Joy"));
}

TEST(SeedExamples, GenerationSeedsHaveDialogues) {
  auto seeds = load_seed_examples(testing::data_file("seeds/generation_seeds.jsonl"));
  ASSERT_EQ(seeds.size(), kDefaultSeedCount);
  for (const auto& s : seeds) {
    ASSERT_TRUE(s.full_dialogue);
    EXPECT_EQ(s.full_dialogue->size(), 3u);
  }
}

TEST(SeedExamples, EmptyFileAndMalformedRows) {
  testing::TempDir dir;
  testing::write_text(dir / "empty.jsonl", "");
  EXPECT_TRUE(load_seed_examples(dir / "empty.jsonl").empty());
  testing::write_text(dir / "bad.jsonl", "{\"description\":\"d\",\"emotion\":\"joy\"}\n{\"description\":\"d\"}\n");
  try {
    load_seed_examples(dir / "bad.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace emoforge
