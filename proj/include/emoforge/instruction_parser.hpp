#pragma once

// Turns raw model replies and attribute records into validated Categorical,
// Conversation and Reasoning instruction records.
//
// Accepted dialogue markers (case-insensitive, one per line start):
//   Question:  Question 1:  Q:  Q2:  Q 3:          -> question
//   Answer:    Answer 1:    A:  A2:  A 3:          -> answer
// Each may be preceded by indentation, markdown heading hashes or a "- "
// bullet, and wrapped in ** or __ either before or after the colon
// ("**Question:**", "**Q1**:"). Anything else is plain text.

#include <emoforge/attribute_schema.hpp>
#include <emoforge/llm_client.hpp>
#include <emoforge/prompt_builder.hpp>

namespace emoforge {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kPredictedEmotionPrefix = "Predicted emotion: ";

enum class DialogueErrorKind {
  answer_before_question,
  question_without_answer,
  empty_question,
  empty_answer,
  no_pairs,
};

inline const char* to_string(DialogueErrorKind k) {
  switch (k) {
    case DialogueErrorKind::answer_before_question: return "answer_before_question";
    case DialogueErrorKind::question_without_answer: return "question_without_answer";
    case DialogueErrorKind::empty_question: return "empty_question";
    case DialogueErrorKind::empty_answer: return "empty_answer";
    case DialogueErrorKind::no_pairs: return "no_pairs";
  }
  return "unknown";
}

class DialogueError : public Error {
 public:
  DialogueError(DialogueErrorKind kind, std::size_t offset)
      : Error(ErrorCode::parse,
              std::string(to_string(kind)) + " at byte " + std::to_string(offset)),
        kind_(kind),
        offset_(offset) {}

  DialogueErrorKind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  DialogueErrorKind kind_;
  std::size_t offset_;
};

namespace detail {

enum class MarkerType { question, answer };

struct Marker {
  MarkerType type;
  std::size_t marker_offset;   // within the line
  std::size_t content_offset;  // within the line
};

inline std::optional<Marker> match_marker(std::string_view line) {
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  };
  auto skip_emphasis = [&] {
    if (line.substr(i, 2) == "**" || line.substr(i, 2) == "__") i += 2;
  };

  skip_ws();
  while (i < line.size() && line[i] == '#') ++i;
  skip_ws();
  if (line.substr(i, 2) == "- ") {
    i += 2;
    skip_ws();
  }
  std::size_t marker_offset = i;
  skip_emphasis();

  MarkerType type;
  auto rest = line.substr(i);
  if (istarts_with(rest, "question")) {
    type = MarkerType::question;
    i += 8;
  } else if (istarts_with(rest, "answer")) {
    type = MarkerType::answer;
    i += 6;
  } else if (istarts_with(rest, "q")) {
    type = MarkerType::question;
    i += 1;
  } else if (istarts_with(rest, "a")) {
    type = MarkerType::answer;
    i += 1;
  } else {
    return std::nullopt;
  }

  skip_ws();
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  skip_ws();
  skip_emphasis();
  if (i >= line.size() || line[i] != ':') return std::nullopt;
  ++i;
  skip_emphasis();
  return Marker{type, marker_offset, i};
}

}  // namespace detail

// Parses "Question:/Answer:" text into ordered pairs. Text before the first
// marker is ignored; answers run until the next question marker.
inline std::vector<QaPair> parse_dialogue(std::string_view raw) {
  enum class State { idle, question, answer };
  State state = State::idle;
  std::vector<QaPair> pairs;
  std::vector<std::string_view> q_lines, a_lines;
  std::size_t q_offset = 0, a_offset = 0;

  auto joined = [](const std::vector<std::string_view>& lines) {
    std::string s;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (i) s += '\n';
      s += lines[i];
    }
    return std::string(trim(s));
  };
  auto flush = [&] {
    auto q = joined(q_lines);
    auto a = joined(a_lines);
    if (q.empty()) throw DialogueError(DialogueErrorKind::empty_question, q_offset);
    if (a.empty()) throw DialogueError(DialogueErrorKind::empty_answer, a_offset);
    pairs.emplace_back(std::move(q), std::move(a));
    q_lines.clear();
    a_lines.clear();
  };

  std::size_t line_start = 0;
  while (line_start <= raw.size()) {
    auto end = raw.find('\n', line_start);
    if (end == std::string_view::npos) end = raw.size();
    auto line = raw.substr(line_start, end - line_start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (auto m = detail::match_marker(line)) {
      auto content = line.substr(m->content_offset);
      std::size_t at = line_start + m->marker_offset;
      if (m->type == detail::MarkerType::question) {
        if (state == State::question) throw DialogueError(DialogueErrorKind::question_without_answer, q_offset);
        if (state == State::answer) flush();
        state = State::question;
        q_offset = at;
        q_lines.push_back(content);
      } else {
        if (state != State::question) throw DialogueError(DialogueErrorKind::answer_before_question, at);
        state = State::answer;
        a_offset = at;
        a_lines.push_back(content);
      }
    } else if (state == State::question) {
      q_lines.push_back(line);
    } else if (state == State::answer) {
      a_lines.push_back(line);
    }

    if (end == raw.size()) break;
    line_start = end + 1;
  }

  if (state == State::question) throw DialogueError(DialogueErrorKind::question_without_answer, q_offset);
  if (state == State::answer) flush();
  if (pairs.empty()) throw DialogueError(DialogueErrorKind::no_pairs, raw.size());
  return pairs;
}

// ---------------------------------------------------------------------------
// Instruction records

struct Provenance {
  bool synthesized_local = false;
  std::string model_name;
  std::string timestamp;
  std::string prompt_hash;

  static Provenance local() { return Provenance{true, {}, {}, {}}; }
  static Provenance from(const CompletionResult& r) {
    return Provenance{false, r.model_name, r.timestamp, r.prompt_hash};
  }

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct InstructionRecord {
  int schema_version = kSchemaVersion;
  std::string image_id;
  InstructionKind kind = InstructionKind::categorical;
  std::string emotion_class;
  std::string sub_kind;  // Basic/Advanced interaction tag; not populated by the pipeline
  std::vector<QaPair> turns;
  Provenance provenance;

  friend bool operator==(const InstructionRecord&, const InstructionRecord&) = default;
};

class SplitError : public Error {
 public:
  explicit SplitError(std::size_t pairs)
      : Error(ErrorCode::parse, "split_failure: need at least 3 question/answer pairs, got " +
                                    std::to_string(pairs)) {}
};

struct ConversationReasoning {
  InstructionRecord conversation;
  InstructionRecord reasoning;
};

// All but the final pair form the conversation; the final pair is the
// complex (reasoning) question.
inline ConversationReasoning split_conversation_reasoning(const std::vector<QaPair>& pairs,
                                                          const std::string& image_id,
                                                          const Provenance& provenance,
                                                          const std::string& emotion_class = {}) {
  if (pairs.size() < 3) throw SplitError(pairs.size());
  ConversationReasoning out;
  out.conversation.image_id = image_id;
  out.conversation.kind = InstructionKind::conversation;
  out.conversation.emotion_class = emotion_class;
  out.conversation.turns.assign(pairs.begin(), pairs.end() - 1);
  out.conversation.provenance = provenance;
  out.reasoning.image_id = image_id;
  out.reasoning.kind = InstructionKind::reasoning;
  out.reasoning.emotion_class = emotion_class;
  out.reasoning.turns.push_back(pairs.back());
  out.reasoning.provenance = provenance;
  return out;
}

inline std::string categorical_question(const Taxonomy& taxonomy) {
  return "From the given options: " + join(taxonomy.labels(), ", ") +
         ", identify the emotion that most accurately reflects the image. Ensure your selection "
         "is confined to the listed options. Respond in the format: Predicted emotion:";
}

inline InstructionRecord make_categorical(const std::string& image_id, std::string_view emotion_class,
                                          const Taxonomy& taxonomy) {
  auto label = taxonomy.resolve(emotion_class);
  if (!label) {
    throw Error(ErrorCode::unknown_label, "emotion_class '" + std::string(emotion_class) +
                                              "' not in taxonomy '" + taxonomy.name() + "'");
  }
  InstructionRecord r;
  r.image_id = image_id;
  r.kind = InstructionKind::categorical;
  r.emotion_class = *label;
  r.turns.emplace_back(categorical_question(taxonomy), std::string(kPredictedEmotionPrefix) + *label);
  r.provenance = Provenance::local();
  return r;
}

enum class ViolationKind {
  empty_image_id,
  categorical_turn_count,
  categorical_answer_prefix,
  conversation_turn_count,
  reasoning_turn_count,
  empty_question,
  empty_answer,
};

inline const char* to_string(ViolationKind v) {
  switch (v) {
    case ViolationKind::empty_image_id: return "empty_image_id";
    case ViolationKind::categorical_turn_count: return "categorical_turn_count";
    case ViolationKind::categorical_answer_prefix: return "categorical_answer_prefix";
    case ViolationKind::conversation_turn_count: return "conversation_turn_count";
    case ViolationKind::reasoning_turn_count: return "reasoning_turn_count";
    case ViolationKind::empty_question: return "empty_question";
    case ViolationKind::empty_answer: return "empty_answer";
  }
  return "unknown";
}

struct Violation {
  ViolationKind kind;
  std::string message;
};

inline std::vector<Violation> check_record(const InstructionRecord& r) {
  std::vector<Violation> out;
  if (trim(r.image_id).empty()) out.push_back({ViolationKind::empty_image_id, "image_id must be non-empty"});
  switch (r.kind) {
    case InstructionKind::categorical:
      if (r.turns.size() != 1) {
        out.push_back({ViolationKind::categorical_turn_count, "categorical requires exactly 1 turn"});
      }
      if (!r.turns.empty() && r.turns.front().second.rfind(kPredictedEmotionPrefix, 0) != 0) {
        out.push_back({ViolationKind::categorical_answer_prefix,
                       "categorical answer must begin with \"Predicted emotion: \""});
      }
      break;
    case InstructionKind::conversation:
      if (r.turns.size() < 2) {
        out.push_back({ViolationKind::conversation_turn_count, "conversation requires >=2 turns"});
      }
      break;
    case InstructionKind::reasoning:
      if (r.turns.size() != 1) {
        out.push_back({ViolationKind::reasoning_turn_count, "reasoning requires exactly 1 turn"});
      }
      break;
  }
  for (std::size_t i = 0; i < r.turns.size(); ++i) {
    if (trim(r.turns[i].first).empty()) {
      out.push_back({ViolationKind::empty_question, "turn " + std::to_string(i + 1) + " has an empty question"});
    }
    if (trim(r.turns[i].second).empty()) {
      out.push_back({ViolationKind::empty_answer, "turn " + std::to_string(i + 1) + " has an empty answer"});
    }
  }
  return out;
}

class RecordValidationError : public Error {
 public:
  explicit RecordValidationError(std::vector<Violation> violations)
      : Error(ErrorCode::invalid_argument, describe(violations)), violations_(std::move(violations)) {}

  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  static std::string describe(const std::vector<Violation>& vs) {
    std::vector<std::string> parts;
    for (const auto& v : vs) parts.push_back(v.message);
    return join(parts, "; ");
  }

  std::vector<Violation> violations_;
};

inline InstructionRecord validate_record(const InstructionRecord& record) {
  auto violations = check_record(record);
  if (!violations.empty()) throw RecordValidationError(std::move(violations));
  return record;
}

// Warning (not an error) when a reasoning answer is shorter than the median
// conversation answer for the same image.
inline std::optional<std::string> reasoning_length_warning(const InstructionRecord& reasoning,
                                                           const std::vector<InstructionRecord>& conversations) {
  if (reasoning.turns.empty()) return std::nullopt;
  std::vector<std::size_t> lengths;
  for (const auto& c : conversations) {
    for (const auto& [q, a] : c.turns) lengths.push_back(a.size());
  }
  double median = 1.0;
  if (!lengths.empty()) {
    std::sort(lengths.begin(), lengths.end());
    auto n = lengths.size();
    median = n % 2 ? static_cast<double>(lengths[n / 2])
                   : 0.5 * static_cast<double>(lengths[n / 2 - 1] + lengths[n / 2]);
    median = std::max(median, 1.0);
  }
  auto len = static_cast<double>(reasoning.turns.front().second.size());
  if (len >= median) return std::nullopt;
  return "reasoning answer for '" + reasoning.image_id + "' (" + std::to_string(reasoning.turns.front().second.size()) +
         " chars) is shorter than the median conversation answer (" + format_number(median) + ")";
}

// ---------------------------------------------------------------------------
// Serialization (keys in fixed order)

inline json to_json(const InstructionRecord& r) {
  json j;
  j["schema_version"] = r.schema_version;
  j["image_id"] = r.image_id;
  j["kind"] = to_string(r.kind);
  j["emotion_class"] = r.emotion_class;
  if (!r.sub_kind.empty()) j["sub_kind"] = r.sub_kind;
  json turns = json::array();
  for (const auto& [q, a] : r.turns) turns.push_back(json{{"question", q}, {"answer", a}});
  j["turns"] = std::move(turns);
  if (r.provenance.synthesized_local) {
    j["provenance"] = "synthesized-local";
  } else {
    j["provenance"] = json{{"model_name", r.provenance.model_name},
                           {"timestamp", r.provenance.timestamp},
                           {"prompt_hash", r.provenance.prompt_hash}};
  }
  return j;
}

inline InstructionRecord record_from_json(const json& j) {
  InstructionRecord r;
  const auto& version = require_field(j, "schema_version");
  if (!version.is_number_integer()) throw FieldError(ErrorCode::parse, "schema_version", "expected an integer");
  r.schema_version = version.get<int>();
  r.image_id = require_string(j, "image_id");
  r.kind = parse_kind(require_string(j, "kind"));
  r.emotion_class = j.value("emotion_class", std::string{});
  r.sub_kind = j.value("sub_kind", std::string{});
  const auto& turns = require_field(j, "turns");
  if (!turns.is_array()) throw FieldError(ErrorCode::parse, "turns", "expected a list");
  for (const auto& t : turns) r.turns.emplace_back(require_string(t, "question"), require_string(t, "answer"));
  const auto& prov = require_field(j, "provenance");
  if (prov.is_string()) {
    if (prov.get<std::string>() != "synthesized-local") {
      throw FieldError(ErrorCode::parse, "provenance", "unknown provenance tag");
    }
    r.provenance = Provenance::local();
  } else if (prov.is_object()) {
    r.provenance = Provenance{false, require_string(prov, "model_name"), require_string(prov, "timestamp"),
                              require_string(prov, "prompt_hash")};
  } else {
    throw FieldError(ErrorCode::parse, "provenance", "expected a string or object");
  }
  return r;
}

struct QuarantineEntry {
  std::string image_id;
  std::string raw_text;
  std::string error;

  friend bool operator==(const QuarantineEntry&, const QuarantineEntry&) = default;
};

inline json to_json(const QuarantineEntry& q) {
  return json{{"image_id", q.image_id}, {"raw_text", q.raw_text}, {"error", q.error}};
}

inline QuarantineEntry quarantine_from_json(const json& j) {
  return QuarantineEntry{require_string(j, "image_id"), require_string(j, "raw_text"), require_string(j, "error")};
}

}  // namespace emoforge
