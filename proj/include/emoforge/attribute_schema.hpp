#pragma once

// Emotion taxonomies and the per-image attribute records that condition
// instruction generation.

#include <emoforge/common.hpp>

#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace emoforge {

class Taxonomy {
 public:
  Taxonomy() = default;

  Taxonomy(std::string name, std::vector<std::string> labels)
      : name_(std::move(name)), labels_(std::move(labels)) {
    if (trim(name_).empty()) {
      throw Error(ErrorCode::invalid_argument, "taxonomy name must be non-empty");
    }
    if (labels_.empty()) {
      throw Error(ErrorCode::invalid_argument, "taxonomy '" + name_ + "' has no labels");
    }
    std::set<std::string> seen;
    for (auto& label : labels_) {
      label = std::string(trim(label));
      if (label.empty()) {
        throw Error(ErrorCode::invalid_argument, "taxonomy '" + name_ + "' has an empty label");
      }
      if (!seen.insert(to_lower(label)).second) {
        throw Error(ErrorCode::duplicate,
                    "taxonomy '" + name_ + "' has duplicate label '" + label + "'");
      }
    }
  }

  const std::string& name() const noexcept { return name_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }

  // Canonical spelling of a label, matched case-insensitively after trimming.
  std::optional<std::string> resolve(std::string_view label) const {
    auto needle = trim(label);
    for (const auto& l : labels_) {
      if (iequals(l, needle)) return l;
    }
    return std::nullopt;
  }

  bool contains(std::string_view label) const { return resolve(label).has_value(); }

  friend bool operator==(const Taxonomy&, const Taxonomy&) = default;

 private:
  std::string name_;
  std::vector<std::string> labels_;
};

struct AttributeRecord {
  std::string image_id;
  std::string emotion_class;
  double brightness = 0.0;
  double colorfulness = 0.0;
  std::string scene_type;
  std::vector<std::string> object_class;
  std::optional<std::string> facial_expression;
  std::optional<std::string> human_action;

  friend bool operator==(const AttributeRecord&, const AttributeRecord&) = default;
};

struct CaptionRecord {
  std::string image_id;
  std::string caption;

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

// ---------------------------------------------------------------------------
// Built-in taxonomies. Class counts follow the benchmark datasets; the label
// strings are reference lists and can be overridden with a taxonomy file.

namespace detail {

inline const std::vector<std::string>& ekman6() {
  static const std::vector<std::string> labels = {"anger", "disgust", "fear",
                                                  "joy",   "sadness", "surprise"};
  return labels;
}

inline const std::vector<std::string>& mikels8() {
  static const std::vector<std::string> labels = {"amusement", "anger",      "awe",  "contentment",
                                                  "disgust",   "excitement", "fear", "sadness"};
  return labels;
}

inline const std::vector<std::string>& webemo25() {
  static const std::vector<std::string> labels = {
      "affection",   "cheerfulness", "confusion", "contentment", "disappointment",
      "disgust",     "enthrallment", "envy",      "exasperation", "gratitude",
      "horror",      "irritability", "lust",      "neglect",      "nervousness",
      "optimism",    "pride",        "rage",      "relief",       "sadness",
      "shame",       "suffering",    "surprise",  "sympathy",     "zest"};
  return labels;
}

}  // namespace detail

inline const std::vector<std::string>& builtin_taxonomy_names() {
  static const std::vector<std::string> names = {"webemo",  "fi",    "emotion6",   "abstract",
                                                 "artphoto", "iapsa", "emotionroi", "emoset"};
  return names;
}

inline std::optional<Taxonomy> builtin_taxonomy(std::string_view name) {
  auto key = to_lower(trim(name));
  if (key == "webemo") return Taxonomy("webemo", detail::webemo25());
  if (key == "emotion6" || key == "emotionroi") return Taxonomy(key, detail::ekman6());
  if (key == "fi" || key == "abstract" || key == "artphoto" || key == "iapsa" || key == "emoset") {
    return Taxonomy(key, detail::mikels8());
  }
  return std::nullopt;
}

// One label per line, '#' comment lines and blank lines ignored.
inline Taxonomy parse_taxonomy(std::string name, std::string_view text) {
  std::vector<std::string> labels;
  for (auto line : split_lines(text)) {
    auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    labels.emplace_back(t);
  }
  return Taxonomy(std::move(name), std::move(labels));
}

// Resolves a built-in name first, then a file path.
inline Taxonomy load_taxonomy(std::string_view source) {
  if (auto builtin = builtin_taxonomy(source)) return *builtin;
  std::filesystem::path path{std::string(source)};
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorCode::invalid_argument,
                "unknown taxonomy '" + std::string(source) + "' (not a built-in or readable file)");
  }
  return parse_taxonomy(path.stem().string(), read_file(path));
}

// Returns the record unchanged if valid; otherwise throws FieldError naming
// the offending field.
inline AttributeRecord validate_attributes(const AttributeRecord& record, const Taxonomy& taxonomy) {
  if (trim(record.image_id).empty()) {
    throw FieldError(ErrorCode::invalid_argument, "image_id", "must be non-empty");
  }
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(record.brightness)) {
    throw FieldError(ErrorCode::out_of_range, "brightness",
                     format_number(record.brightness) + " outside [0, 1]");
  }
  if (!in_unit(record.colorfulness)) {
    throw FieldError(ErrorCode::out_of_range, "colorfulness",
                     format_number(record.colorfulness) + " outside [0, 1]");
  }
  if (!taxonomy.contains(record.emotion_class)) {
    throw FieldError(ErrorCode::unknown_label, "emotion_class",
                     "'" + record.emotion_class + "' not in taxonomy '" + taxonomy.name() + "'");
  }
  return record;
}

inline CaptionRecord validate_caption(const CaptionRecord& record) {
  if (trim(record.image_id).empty()) {
    throw FieldError(ErrorCode::invalid_argument, "image_id", "must be non-empty");
  }
  if (trim(record.caption).empty()) {
    throw FieldError(ErrorCode::invalid_argument, "caption", "must be non-empty");
  }
  return record;
}

struct JoinResult {
  std::vector<std::pair<AttributeRecord, CaptionRecord>> pairs;
  std::vector<std::string> missing_caption;     // ids with attributes only
  std::vector<std::string> missing_attributes;  // ids with captions only
};

inline JoinResult join_inputs(const std::vector<AttributeRecord>& attributes,
                              const std::vector<CaptionRecord>& captions) {
  std::unordered_map<std::string, std::size_t> caption_index;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (!caption_index.emplace(captions[i].image_id, i).second) {
      throw Error(ErrorCode::duplicate, "duplicate image_id '" + captions[i].image_id + "' in captions");
    }
  }
  std::unordered_set<std::string> attribute_ids;
  for (const auto& a : attributes) {
    if (!attribute_ids.insert(a.image_id).second) {
      throw Error(ErrorCode::duplicate, "duplicate image_id '" + a.image_id + "' in attributes");
    }
  }

  JoinResult result;
  for (const auto& a : attributes) {
    auto it = caption_index.find(a.image_id);
    if (it == caption_index.end()) {
      result.missing_caption.push_back(a.image_id);
    } else {
      result.pairs.emplace_back(a, captions[it->second]);
    }
  }
  for (const auto& c : captions) {
    if (!attribute_ids.count(c.image_id)) result.missing_attributes.push_back(c.image_id);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Line-delimited record files

inline json to_json(const AttributeRecord& r) {
  json j;
  j["image_id"] = r.image_id;
  j["emotion_class"] = r.emotion_class;
  j["brightness"] = r.brightness;
  j["colorfulness"] = r.colorfulness;
  j["scene_type"] = r.scene_type;
  j["object_class"] = r.object_class;
  j["facial_expression"] = r.facial_expression ? json(*r.facial_expression) : json(nullptr);
  j["human_action"] = r.human_action ? json(*r.human_action) : json(nullptr);
  return j;
}

inline AttributeRecord attribute_from_json(const json& j) {
  AttributeRecord r;
  r.image_id = require_string(j, "image_id");
  r.emotion_class = require_string(j, "emotion_class");
  const auto& b = require_field(j, "brightness");
  const auto& c = require_field(j, "colorfulness");
  if (!b.is_number()) throw FieldError(ErrorCode::parse, "brightness", "expected a number");
  if (!c.is_number()) throw FieldError(ErrorCode::parse, "colorfulness", "expected a number");
  r.brightness = b.get<double>();
  r.colorfulness = c.get<double>();
  r.scene_type = j.value("scene_type", std::string{});
  if (auto it = j.find("object_class"); it != j.end() && !it->is_null()) {
    if (it->is_string()) {
      r.object_class.push_back(it->get<std::string>());
    } else if (it->is_array()) {
      for (const auto& o : *it) {
        if (!o.is_string()) throw FieldError(ErrorCode::parse, "object_class", "expected strings");
        r.object_class.push_back(o.get<std::string>());
      }
    } else {
      throw FieldError(ErrorCode::parse, "object_class", "expected a string list");
    }
  }
  auto optional_string = [&](const char* name) -> std::optional<std::string> {
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw FieldError(ErrorCode::parse, name, "expected a string");
    auto s = std::string(trim(it->get<std::string>()));
    if (s.empty()) return std::nullopt;
    return s;
  };
  r.facial_expression = optional_string("facial_expression");
  r.human_action = optional_string("human_action");
  return r;
}

inline json to_json(const CaptionRecord& r) {
  return json{{"image_id", r.image_id}, {"caption", r.caption}};
}

inline CaptionRecord caption_from_json(const json& j) {
  return CaptionRecord{require_string(j, "image_id"), require_string(j, "caption")};
}

inline std::vector<AttributeRecord> read_attributes(const std::filesystem::path& path) {
  std::vector<AttributeRecord> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) { out.push_back(attribute_from_json(j)); });
  return out;
}

inline std::vector<CaptionRecord> read_captions(const std::filesystem::path& path) {
  std::vector<CaptionRecord> out;
  for_each_jsonl(path, [&](std::size_t, const json& j) {
    out.push_back(validate_caption(caption_from_json(j)));
  });
  return out;
}

}  // namespace emoforge
