#pragma once

// Scoring of model outputs: prediction parsing, accuracy, instruction
// sensitivity, vote tallies and the reference tables.

#include <emoforge/attribute_schema.hpp>

#include <cmath>

namespace emoforge {

enum class ParseStatus { ok, fallback, unparseable };

inline const char* to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::ok: return "ok";
    case ParseStatus::fallback: return "fallback";
    case ParseStatus::unparseable: return "unparseable";
  }
  return "unknown";
}

struct PredictionRecord {
  std::string image_id;
  std::string raw_text;
  std::optional<std::string> parsed_label;
  std::optional<std::string> parsed_reason;
  ParseStatus parse_status = ParseStatus::unparseable;
};

namespace detail {

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || static_cast<unsigned char>(c) >= 0x80;
}

// Case-insensitive whole-word search.
inline std::size_t find_word(std::string_view text, std::string_view word) {
  for (std::size_t pos = ifind(text, word); pos != std::string_view::npos; pos = ifind(text, word, pos + 1)) {
    bool left = pos == 0 || !is_word_char(text[pos - 1]);
    std::size_t end = pos + word.size();
    bool right = end >= text.size() || !is_word_char(text[end]);
    if (left && right) return pos;
  }
  return std::string_view::npos;
}

inline std::string_view strip_decoration(std::string_view s) {
  constexpr std::string_view kDecor = " \t\r\n*\"'`[]()<>_";
  while (!s.empty() && kDecor.find(s.front()) != std::string_view::npos) s.remove_prefix(1);
  while (!s.empty() && kDecor.find(s.back()) != std::string_view::npos) s.remove_suffix(1);
  return s;
}

inline std::optional<std::string> reason_after(std::string_view text, std::size_t from) {
  auto pos = ifind(text, "reason:", from);
  if (pos == std::string_view::npos) return std::nullopt;
  return std::string(trim(text.substr(pos + 7)));
}

}  // namespace detail

// Stage 1: "Predicted emotion:" / "Predict emotion:" marker followed by an
// exact (case-insensitive) label up to the sentence end. Stage 2, only when
// no marker exists: exactly one distinct taxonomy label as a whole word.
inline PredictionRecord parse_prediction(std::string_view raw_text, const Taxonomy& taxonomy,
                                         std::string image_id = {}) {
  PredictionRecord rec;
  rec.image_id = std::move(image_id);
  rec.raw_text = std::string(raw_text);

  std::size_t marker = std::string_view::npos;
  std::size_t marker_len = 0;
  for (std::string_view m : {"predicted emotion:", "predict emotion:"}) {
    auto pos = ifind(raw_text, m);
    if (pos < marker) {
      marker = pos;
      marker_len = m.size();
    }
  }

  if (marker != std::string_view::npos) {
    std::size_t start = marker + marker_len;
    std::size_t end = raw_text.find_first_of(".!?\n", start);
    if (end == std::string_view::npos) end = raw_text.size();
    auto candidate = detail::strip_decoration(raw_text.substr(start, end - start));
    if (auto label = taxonomy.resolve(candidate)) {
      rec.parsed_label = *label;
      rec.parsed_reason = detail::reason_after(raw_text, end);
      rec.parse_status = ParseStatus::ok;
    }
    return rec;
  }

  std::optional<std::string> found;
  std::size_t found_at = 0;
  for (const auto& label : taxonomy.labels()) {
    auto pos = detail::find_word(raw_text, label);
    if (pos == std::string_view::npos) continue;
    if (found) return rec;  // two distinct labels: ambiguous
    found = label;
    found_at = pos + label.size();
  }
  if (found) {
    rec.parsed_label = *found;
    rec.parsed_reason = detail::reason_after(raw_text, found_at);
    rec.parse_status = ParseStatus::fallback;
  }
  return rec;
}

// The affective-reasoning output template.
inline std::string render_prediction(std::string_view label, std::string_view reason) {
  return "Predicted emotion: " + std::string(label) + ". Reason: " + std::string(reason);
}

struct AccuracyReport {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t unparseable = 0;
  double accuracy = 0.0;
};

// Unparseable predictions count as incorrect.
inline AccuracyReport accuracy(const std::vector<PredictionRecord>& predictions,
                               const std::map<std::string, std::string>& gold) {
  if (predictions.empty()) throw Error(ErrorCode::empty_input, "empty evaluation set");
  AccuracyReport r;
  for (const auto& p : predictions) {
    auto it = gold.find(p.image_id);
    if (it == gold.end()) throw Error(ErrorCode::invalid_argument, "missing gold label for '" + p.image_id + "'");
    ++r.total;
    if (p.parse_status == ParseStatus::unparseable || !p.parsed_label) {
      ++r.unparseable;
      continue;
    }
    if (iequals(trim(*p.parsed_label), trim(it->second))) ++r.correct;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

// ---------------------------------------------------------------------------
// Sensitivity: mean over tasks of the coefficient of variation (std / mean)
// of accuracy across instruction phrasings.

struct RunAccuracy {
  std::string task_id;
  std::string instruction_id;
  double accuracy = 0.0;
};

enum class StdMode { population, sample };

struct SensitivityResult {
  double value = 0.0;
  std::map<std::string, double> per_task;  // coefficient of variation
  std::vector<std::string> skipped;        // diagnostics for tasks with zero mean
};

inline SensitivityResult sensitivity(const std::map<std::string, std::vector<RunAccuracy>>& input,
                                     StdMode mode = StdMode::population) {
  if (input.empty()) throw Error(ErrorCode::empty_input, "no tasks given");
  SensitivityResult out;
  for (const auto& [task, runs] : input) {
    if (runs.size() < 2) {
      throw Error(ErrorCode::invalid_argument,
                  "task '" + task + "' has " + std::to_string(runs.size()) + " instruction(s); at least 2 required");
    }
    std::set<std::string> ids;
    // Welford update.
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (const auto& r : runs) {
      if (!ids.insert(r.instruction_id).second) {
        throw Error(ErrorCode::duplicate, "task '" + task + "' repeats instruction '" + r.instruction_id + "'");
      }
      if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) {
        throw Error(ErrorCode::out_of_range, "accuracy " + format_number(r.accuracy) + " outside [0, 1]");
      }
      ++n;
      double delta = r.accuracy - mean;
      mean += delta / static_cast<double>(n);
      m2 += delta * (r.accuracy - mean);
    }
    if (mean <= 0.0) {
      out.skipped.push_back("task '" + task + "' skipped: mean accuracy is 0, coefficient of variation undefined");
      continue;
    }
    double divisor = mode == StdMode::population ? static_cast<double>(n) : static_cast<double>(n - 1);
    double sd = std::sqrt(std::max(0.0, m2 / divisor));
    out.per_task[task] = sd / mean;
  }
  if (out.per_task.empty()) throw Error(ErrorCode::empty_input, "all tasks skipped");
  double sum = 0.0;
  for (const auto& [task, cov] : out.per_task) sum += cov;
  out.value = sum / static_cast<double>(out.per_task.size());
  return out;
}

inline std::map<std::string, std::vector<RunAccuracy>> group_by_task(const std::vector<RunAccuracy>& runs) {
  std::map<std::string, std::vector<RunAccuracy>> out;
  for (const auto& r : runs) out[r.task_id].push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Vote tally

enum class VoteChoice { model, human };

struct Vote {
  std::string item_id;
  VoteChoice choice;
};

struct ItemTally {
  std::size_t model_votes = 0;
  std::size_t total = 0;
  double proportion() const { return total ? static_cast<double>(model_votes) / static_cast<double>(total) : 0.0; }
};

struct VoteTally {
  ItemTally overall;
  std::map<std::string, ItemTally> per_item;
};

inline VoteTally tally_votes(const std::vector<Vote>& votes) {
  if (votes.empty()) throw Error(ErrorCode::empty_input, "no votes");
  VoteTally t;
  for (const auto& v : votes) {
    auto& item = t.per_item[v.item_id];
    ++item.total;
    ++t.overall.total;
    if (v.choice == VoteChoice::model) {
      ++item.model_votes;
      ++t.overall.model_votes;
    }
  }
  return t;
}

inline VoteChoice parse_vote_choice(std::string_view s) {
  if (iequals(trim(s), "model")) return VoteChoice::model;
  if (iequals(trim(s), "human")) return VoteChoice::human;
  throw Error(ErrorCode::parse, "vote choice must be 'model' or 'human', got '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Reference values, kept as printed.

struct ReferenceRow {
  std::string label;
  std::string value;  // as printed, e.g. "42.20"
};

struct ReferenceTable {
  std::string title;
  std::string column;
  std::vector<ReferenceRow> rows;
};

struct HeldOutRow {
  std::string method;
  std::vector<std::string> values;  // one per dataset, in held_out_datasets() order
};

struct ReferenceTables {
  ReferenceTable ablation;
  ReferenceTable scaling;
  std::vector<std::string> held_out_datasets;
  std::vector<HeldOutRow> held_out;
};

inline ReferenceTables emit_reference_tables() {
  ReferenceTables t;
  t.ablation = {"Instruction data ablation (EmoSet test accuracy, %)",
                "data",
                {{"none", "42.20"}, {"C", "80.90"}, {"C+Conv", "81.95"}, {"C+Conv+R", "83.36"}}};
  t.scaling = {"Pre-training data portion (EmoSet test accuracy, %)",
               "portion",
               {{"5%", "79.00"}, {"10%", "81.00"}, {"30%", "79.34"}, {"50%", "83.36"}}};
  t.held_out_datasets = {"WebEmo", "FI", "Emotion6", "Abstract", "ArtPhoto", "IAPSa", "EmotionROI", "EmoSet"};
  t.held_out = {
      {"Flamingo", {"9.36", "14.91", "21.67", "3.57", "17.5", "10.13", "21.72", "29.59"}},
      {"LLaVA", {"12.55", "56.04", "49.44", "19.54", "36.25", "42.43", "46.46", "44.03"}},
      {"BLIP2", {"20.10", "57.72", "50.00", "28.57", "36.25", "39.24", "50.51", "46.79"}},
      {"InstructBLIP", {"12.80", "37.97", "46.11", "21.42", "26.25", "34.18", "46.13", "42.20"}},
      {"Ours*", {"21.12", "68.09", "57.81", "32.34", "44.90", "44.13", "53.87", "83.36"}},
  };
  return t;
}

inline std::string render_reference_tables(const ReferenceTables& t) {
  std::ostringstream out;
  for (const auto* table : {&t.ablation, &t.scaling}) {
    out << "[reference] " << table->title << "\n";
    for (const auto& row : table->rows) {
      out << "  " << row.label << std::string(row.label.size() < 12 ? 12 - row.label.size() : 1, ' ')
          << row.value << "\n";
    }
  }
  out << "[reference] Held-out accuracy (%)\n  method       ";
  for (const auto& d : t.held_out_datasets) out << " " << d;
  out << "\n";
  for (const auto& row : t.held_out) {
    out << "  " << row.method << std::string(row.method.size() < 13 ? 13 - row.method.size() : 1, ' ');
    for (std::size_t i = 0; i < row.values.size(); ++i) {
      const auto& d = t.held_out_datasets[i];
      const auto& v = row.values[i];
      out << " " << std::string(d.size() > v.size() ? d.size() - v.size() : 0, ' ') << v;
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Files

inline std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path, const Taxonomy& taxonomy) {
  std::vector<PredictionRecord> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    out.push_back(parse_prediction(require_string(j, "raw_text"), taxonomy, require_string(j, "image_id")));
  });
  return out;
}

inline std::map<std::string, std::string> read_gold(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    auto id = require_string(j, "image_id");
    if (!out.emplace(id, require_string(j, "label")).second) {
      throw Error(ErrorCode::duplicate, "duplicate gold label for '" + id + "'");
    }
  });
  return out;
}

inline std::vector<RunAccuracy> read_run_accuracies(const std::filesystem::path& path) {
  std::vector<RunAccuracy> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    const auto& acc = require_field(j, "accuracy");
    if (!acc.is_number()) throw FieldError(ErrorCode::parse, "accuracy", "expected a number");
    out.push_back({require_string(j, "task_id"), require_string(j, "instruction_id"), acc.get<double>()});
  });
  return out;
}

inline std::vector<Vote> read_votes(const std::filesystem::path& path) {
  std::vector<Vote> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    out.push_back({require_string(j, "item_id"), parse_vote_choice(require_string(j, "choice"))});
  });
  return out;
}

inline json to_json(const AccuracyReport& r) {
  return json{{"metrics", {{"accuracy", r.accuracy}}},
              {"counts", {{"correct", r.correct}, {"total", r.total}, {"unparseable", r.unparseable}}}};
}

inline json to_json(const SensitivityResult& r) {
  json per_task = json::object();
  for (const auto& [t, v] : r.per_task) per_task[t] = v;
  return json{{"metrics", {{"sensitivity", r.value}}}, {"per_task", per_task}, {"skipped", r.skipped}};
}

inline json to_json(const VoteTally& t) {
  json items = json::object();
  for (const auto& [id, it] : t.per_item) {
    items[id] = json{{"model_votes", it.model_votes}, {"total", it.total}, {"proportion", it.proportion()}};
  }
  return json{{"metrics", {{"model_vote_share", t.overall.proportion()}}},
              {"counts", {{"model_votes", t.overall.model_votes}, {"total", t.overall.total}}},
              {"per_item", items}};
}

}  // namespace emoforge
