#pragma once

// Generation prompt assembly: the fixed system prompt, the per-image context
// block, and few-shot seed exemplars rendered as chat turns.
//
// Message layout of a request:
//   system     system prompt
//   user       "Caption: <description>\nEmotion class: <emotion>"   } once per
//   assistant  rendered "Question:/Answer:" dialogue                } seed
//   user       context block, blank line, kind-specific task sentence

#include <emoforge/attribute_schema.hpp>
#include <emoforge/instruction_kind.hpp>

namespace emoforge {

inline constexpr std::string_view kSystemPromptVersion = "1";
inline constexpr std::string_view kSystemPromptSha256 =
    "89bfb32f4ed6eed9cd953e2ae7c9408da3313f18f5830c8645b6e8fed3ee09d0";

// Kept byte-identical to data/system_prompt.txt.
inline constexpr std::string_view kSystemPrompt =
    R"(You are an AI visual assistant, and you are seeing a single image. What you see are provided with one caption and some emotion related attributes, describing the same image you are looking at. Answer all questions as you are seeing the image.
The range of brightness is from 0 (darkest) to 1 (brightest), and the range of colorfulness is from 0 (black-and-white) to 1 (the most colorful).

Design two questions for a conversation between you and a person asking about this photo. The answers should be in a tone that a visual AI assistant is seeing the image and answering the question.
Ask diverse questions and give corresponding answers.

Include questions asking about the visual content of the image, including the object types, object actions, relationship among objects, etc. Only include questions that have definite answers:
(1) one can see the content in the image that the question asks about and can answer confidently;
(2) one can determine confidently from the image that it is not in the image.
Do not ask any question that cannot be answered confidently.
Please answer with the format
Question:
Answer:

Also include one complex question that is relevant to the content in the image, for example, asking about background knowledge of the objects in the image, asking to discuss about events happening in the image, etc. Again, do not ask about uncertain details.
Provide detailed answers when answering complex questions. For example, give detailed examples or reasoning steps to make the content more convincing and well-organized.  You can include multiple paragraphs if necessary.)";

inline constexpr std::string_view kDialogueTask =
    "Write the conversation for this image: two questions with their answers, followed by one "
    "complex question with a detailed answer. Use the format Question: Answer: for every pair.";

inline constexpr std::string_view kCategoricalTask =
    "Identify the emotion that most accurately reflects the image. Respond in the format: "
    "Predicted emotion:";

inline constexpr std::string_view kFormatReminder =
    "Your previous reply did not follow the required format. Start every question with "
    "\"Question:\" and every answer with \"Answer:\".";

inline constexpr std::size_t kDefaultSeedCount = 3;

using QaPair = std::pair<std::string, std::string>;

struct SeedExample {
  std::string description;
  std::string emotion;
  std::optional<std::vector<QaPair>> full_dialogue;

  friend bool operator==(const SeedExample&, const SeedExample&) = default;
};

enum class Role { system, user, assistant };

inline const char* to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "unknown";
}

struct ChatMessage {
  Role role;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct GenerationRequest {
  std::string system_prompt;
  std::vector<ChatMessage> messages;
  InstructionKind kind = InstructionKind::conversation;
  std::string image_id;
  std::string prompt_hash;

  friend bool operator==(const GenerationRequest&, const GenerationRequest&) = default;
};

inline std::string build_system_prompt() { return std::string(kSystemPrompt); }

// Renders pairs in the "Question:/Answer:" grammar, pairs separated by a
// blank line.
inline std::string render_dialogue(const std::vector<QaPair>& pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i) out += "\n\n";
    out += "Question: " + pairs[i].first + "\nAnswer: " + pairs[i].second;
  }
  return out;
}

inline std::string build_context_block(const CaptionRecord& caption, const AttributeRecord& attributes) {
  if (caption.image_id != attributes.image_id) {
    throw Error(ErrorCode::invalid_argument, "image_id mismatch: caption '" + caption.image_id +
                                                 "' vs attributes '" + attributes.image_id + "'");
  }
  auto or_none = [](const std::optional<std::string>& v) { return v ? *v : std::string("none"); };
  std::string objects = attributes.object_class.empty() ? "none" : join(attributes.object_class, ", ");
  std::string scene = trim(attributes.scene_type).empty() ? "none" : attributes.scene_type;

  std::string block;
  block += "Caption: " + std::string(trim(caption.caption)) + "\n";
  block += "Emotion class: " + attributes.emotion_class + "\n";
  block += "Brightness: " + format_number(attributes.brightness) + "\n";
  block += "Colorfulness: " + format_number(attributes.colorfulness) + "\n";
  block += "Scene type: " + scene + "\n";
  block += "Object class: " + objects + "\n";
  block += "Facial expression: " + or_none(attributes.facial_expression) + "\n";
  block += "Human action: " + or_none(attributes.human_action);
  return block;
}

inline std::string compute_prompt_hash(std::string_view system_prompt,
                                       const std::vector<ChatMessage>& messages,
                                       InstructionKind kind) {
  json payload = json::array();
  payload.push_back(to_string(kind));
  payload.push_back(system_prompt);
  for (const auto& m : messages) payload.push_back(json::array({to_string(m.role), m.content}));
  return sha256_hex(payload.dump());
}

inline void validate_seed(const SeedExample& seed) {
  if (trim(seed.description).empty()) throw FieldError(ErrorCode::invalid_argument, "description", "must be non-empty");
  if (trim(seed.emotion).empty()) throw FieldError(ErrorCode::invalid_argument, "emotion", "must be non-empty");
  if (seed.full_dialogue) {
    for (const auto& [q, a] : *seed.full_dialogue) {
      if (trim(q).empty() || trim(a).empty()) {
        throw FieldError(ErrorCode::invalid_argument, "full_dialogue",
                         "every pair needs a non-empty question and answer");
      }
    }
  }
}

inline std::string render_seed_user_turn(const SeedExample& seed) {
  return "Caption: " + seed.description + "\nEmotion class: " + seed.emotion;
}

// Seeds without a dialogue fall back to a one-pair exchange naming the emotion.
inline std::string render_seed_assistant_turn(const SeedExample& seed) {
  if (seed.full_dialogue && !seed.full_dialogue->empty()) return render_dialogue(*seed.full_dialogue);
  return render_dialogue({{"Which emotion does this image evoke?",
                           "The image evokes " + to_lower(seed.emotion) + "."}});
}

inline GenerationRequest build_request(InstructionKind kind, const CaptionRecord& caption,
                                       const AttributeRecord& attributes,
                                       const std::vector<SeedExample>& seeds) {
  GenerationRequest req;
  req.kind = kind;
  req.image_id = attributes.image_id;
  req.system_prompt = build_system_prompt();
  req.messages.push_back({Role::system, req.system_prompt});
  for (const auto& seed : seeds) {
    validate_seed(seed);
    req.messages.push_back({Role::user, render_seed_user_turn(seed)});
    req.messages.push_back({Role::assistant, render_seed_assistant_turn(seed)});
  }
  auto task = kind == InstructionKind::categorical ? kCategoricalTask : kDialogueTask;
  req.messages.push_back(
      {Role::user, build_context_block(caption, attributes) + "\n\n" + std::string(task)});
  req.prompt_hash = compute_prompt_hash(req.system_prompt, req.messages, req.kind);
  return req;
}

inline GenerationRequest build_request(std::string_view kind, const CaptionRecord& caption,
                                       const AttributeRecord& attributes,
                                       const std::vector<SeedExample>& seeds) {
  return build_request(parse_kind(kind), caption, attributes, seeds);
}

// The same request with a format reminder appended to the final user turn;
// used for the single regeneration attempt after a parse failure.
inline GenerationRequest with_format_reminder(GenerationRequest req) {
  req.messages.back().content += "\n\n" + std::string(kFormatReminder);
  req.prompt_hash = compute_prompt_hash(req.system_prompt, req.messages, req.kind);
  return req;
}

// ---------------------------------------------------------------------------
// Seed-example files: one JSON object per line with description, emotion and
// an optional full_dialogue list of {question, answer}.

inline json to_json(const SeedExample& s) {
  json j{{"description", s.description}, {"emotion", s.emotion}};
  if (s.full_dialogue) {
    json d = json::array();
    for (const auto& [q, a] : *s.full_dialogue) d.push_back(json{{"question", q}, {"answer", a}});
    j["full_dialogue"] = std::move(d);
  }
  return j;
}

inline SeedExample seed_from_json(const json& j) {
  SeedExample s;
  s.description = require_string(j, "description");
  s.emotion = require_string(j, "emotion");
  if (auto it = j.find("full_dialogue"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw FieldError(ErrorCode::parse, "full_dialogue", "expected a list");
    std::vector<QaPair> pairs;
    for (const auto& p : *it) pairs.emplace_back(require_string(p, "question"), require_string(p, "answer"));
    s.full_dialogue = std::move(pairs);
  }
  validate_seed(s);
  return s;
}

inline std::vector<SeedExample> load_seed_examples(const std::filesystem::path& path) {
  std::vector<SeedExample> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) { out.push_back(seed_from_json(j)); });
  return out;
}

}  // namespace emoforge
