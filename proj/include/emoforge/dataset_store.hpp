#pragma once

// Instruction datasets: deduplicated append, kind selection, stratified
// fractional sampling, held-in/held-out splits, statistics and canonical
// line-delimited serialization with a ".manifest" sidecar.

#include <emoforge/instruction_parser.hpp>

#include <cmath>
#include <set>

namespace emoforge {

struct Manifest {
  int schema_version = kSchemaVersion;
  std::string taxonomy;
  std::string config_digest;
  std::string composition = "categorical+conversation+reasoning";
  std::map<InstructionKind, std::size_t> counts;
  std::optional<double> sample_fraction;
  std::optional<std::uint64_t> sample_seed;

  std::size_t count(InstructionKind k) const {
    auto it = counts.find(k);
    return it == counts.end() ? 0 : it->second;
  }

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

inline std::string composition_string(const std::set<InstructionKind>& kinds) {
  std::vector<std::string> parts;
  for (auto k : kAllKinds) {
    if (kinds.count(k)) parts.emplace_back(to_string(k));
  }
  return join(parts, "+");
}

// Short row label used by the ablation reference table ("C+Conv+R").
inline std::string ablation_label(const std::set<InstructionKind>& kinds) {
  if (kinds.empty()) return "none";
  std::vector<std::string> parts;
  if (kinds.count(InstructionKind::categorical)) parts.emplace_back("C");
  if (kinds.count(InstructionKind::conversation)) parts.emplace_back("Conv");
  if (kinds.count(InstructionKind::reasoning)) parts.emplace_back("R");
  return join(parts, "+");
}

class Dataset {
 public:
  Dataset() { reset_counts(); }

  explicit Dataset(Manifest manifest) : manifest_(std::move(manifest)) { reset_counts(); }

  const std::vector<InstructionRecord>& records() const noexcept { return records_; }
  const Manifest& manifest() const noexcept { return manifest_; }
  Manifest& manifest() noexcept { return manifest_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  static std::string uniqueness_key(const InstructionRecord& r) {
    std::string first_q = r.turns.empty() ? std::string{} : r.turns.front().first;
    return r.image_id + '\x1f' + to_string(r.kind) + '\x1f' + sha256_hex(first_q);
  }

  // Returns false when the uniqueness key is already present.
  bool insert(const InstructionRecord& record) {
    if (record.schema_version != manifest_.schema_version) {
      throw Error(ErrorCode::schema_mismatch,
                  "record schema_version " + std::to_string(record.schema_version) +
                      " does not match dataset schema_version " + std::to_string(manifest_.schema_version));
    }
    validate_record(record);
    if (!keys_.insert(uniqueness_key(record)).second) return false;
    records_.push_back(record);
    ++manifest_.counts[record.kind];
    return true;
  }

  std::vector<std::string> image_ids() const {
    std::vector<std::string> ids;
    std::unordered_set<std::string> seen;
    for (const auto& r : records_) {
      if (seen.insert(r.image_id).second) ids.push_back(r.image_id);
    }
    return ids;
  }

  // Empty copy carrying the same manifest metadata.
  Dataset empty_like() const {
    Manifest m = manifest_;
    m.counts.clear();
    return Dataset(std::move(m));
  }

 private:
  void reset_counts() {
    manifest_.counts.clear();
    for (auto k : kAllKinds) manifest_.counts[k] = 0;
  }

  std::vector<InstructionRecord> records_;
  std::unordered_set<std::string> keys_;
  Manifest manifest_;
};

inline Dataset append(Dataset dataset, const std::vector<InstructionRecord>& records) {
  for (const auto& r : records) dataset.insert(r);
  return dataset;
}

inline Dataset select_kinds(const Dataset& dataset, const std::set<InstructionKind>& kinds) {
  if (kinds.empty()) throw Error(ErrorCode::invalid_argument, "select_kinds needs at least one kind");
  Dataset out = dataset.empty_like();
  out.manifest().composition = composition_string(kinds);
  for (const auto& r : dataset.records()) {
    if (kinds.count(r.kind)) out.insert(r);
  }
  return out;
}

struct StratifiedItem {
  std::string id;
  std::string stratum;
};

// Round half up of fraction * total, apportioned across strata by largest
// remainder (ties by stratum name). Inside a stratum the ids with the
// smallest sha256(seed:id) keys are kept. Returned ids keep input order.
inline std::vector<std::string> stratified_sample(const std::vector<StratifiedItem>& items, double fraction,
                                                  std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::out_of_range, "fraction must be in (0, 1], got " + format_number(fraction));
  }
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < items.size(); ++i) strata[items[i].stratum].push_back(i);

  const auto total = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(items.size()) + 0.5));
  struct Quota {
    std::string name;
    std::size_t base;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [name, members] : strata) {
    double exact = fraction * static_cast<double>(members.size());
    auto base = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({name, base, exact - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t k = 0; assigned < total && k < order.size(); ++k) {
    auto& q = quotas[order[k]];
    if (q.base < strata[q.name].size()) {
      ++q.base;
      ++assigned;
    }
  }

  std::vector<bool> keep(items.size(), false);
  const std::string prefix = std::to_string(seed) + ":";
  for (const auto& q : quotas) {
    auto members = strata[q.name];
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    keyed.reserve(members.size());
    for (auto idx : members) keyed.emplace_back(sha256_u64(prefix + items[idx].id), idx);
    std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return items[a.second].id < items[b.second].id;
    });
    for (std::size_t k = 0; k < q.base; ++k) keep[keyed[k].second] = true;
  }
  std::vector<std::string> out;
  out.reserve(total);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (keep[i]) out.push_back(items[i].id);
  }
  return out;
}

// Samples whole images (all kinds move together), stratified by emotion_class.
inline Dataset sample_fraction(const Dataset& dataset, double fraction, std::uint64_t seed) {
  std::vector<StratifiedItem> items;
  std::unordered_set<std::string> seen;
  for (const auto& r : dataset.records()) {
    if (seen.insert(r.image_id).second) items.push_back({r.image_id, to_lower(trim(r.emotion_class))});
  }
  auto chosen = stratified_sample(items, fraction, seed);
  std::unordered_set<std::string> keep(chosen.begin(), chosen.end());
  Dataset out = dataset.empty_like();
  out.manifest().sample_fraction = fraction;
  out.manifest().sample_seed = seed;
  for (const auto& r : dataset.records()) {
    if (keep.count(r.image_id)) out.insert(r);
  }
  return out;
}

struct SplitSpec {
  std::string held_in;
  std::vector<std::string> held_out;
};

class OverlapError : public Error {
 public:
  explicit OverlapError(std::set<std::string> ids)
      : Error(ErrorCode::overlap, describe(ids)), ids_(std::move(ids)) {}

  const std::set<std::string>& ids() const noexcept { return ids_; }

 private:
  static std::string describe(const std::set<std::string>& ids) {
    return "image_id overlap between splits: " + join(std::vector<std::string>(ids.begin(), ids.end()), ", ");
  }
  std::set<std::string> ids_;
};

struct SplitResult {
  Dataset held_in;
  std::map<std::string, Dataset> held_out;
};

inline SplitResult split_held(const std::map<std::string, Dataset>& datasets, const SplitSpec& spec) {
  auto find = [&](const std::string& name) -> const Dataset& {
    auto it = datasets.find(name);
    if (it == datasets.end()) throw Error(ErrorCode::invalid_argument, "unknown dataset '" + name + "'");
    return it->second;
  };
  if (std::find(spec.held_out.begin(), spec.held_out.end(), spec.held_in) != spec.held_out.end()) {
    throw Error(ErrorCode::invalid_argument, "held-in dataset '" + spec.held_in + "' is also listed as held-out");
  }

  std::vector<std::pair<std::string, std::set<std::string>>> id_sets;
  id_sets.emplace_back(spec.held_in, std::set<std::string>{});
  for (const auto& id : find(spec.held_in).image_ids()) id_sets.back().second.insert(id);
  for (const auto& name : spec.held_out) {
    id_sets.emplace_back(name, std::set<std::string>{});
    for (const auto& id : find(name).image_ids()) id_sets.back().second.insert(id);
  }

  std::set<std::string> overlap;
  for (std::size_t a = 0; a < id_sets.size(); ++a) {
    for (std::size_t b = a + 1; b < id_sets.size(); ++b) {
      std::set_intersection(id_sets[a].second.begin(), id_sets[a].second.end(), id_sets[b].second.begin(),
                            id_sets[b].second.end(), std::inserter(overlap, overlap.end()));
    }
  }
  if (!overlap.empty()) throw OverlapError(std::move(overlap));

  SplitResult out{find(spec.held_in), {}};
  for (const auto& name : spec.held_out) out.held_out.emplace(name, find(name));
  return out;
}

struct DatasetStats {
  std::size_t total_records = 0;
  std::size_t image_count = 0;
  std::map<std::string, std::size_t> records_per_kind;
  std::map<std::string, std::size_t> images_per_emotion;
  std::map<std::string, std::array<std::size_t, 3>> kinds_per_image;
  std::map<std::size_t, std::size_t> turn_histogram;
  std::map<std::string, std::map<std::size_t, std::size_t>> turn_histogram_per_kind;
};

inline DatasetStats stats(const Dataset& dataset) {
  DatasetStats s;
  for (auto k : kAllKinds) s.records_per_kind[to_string(k)] = 0;
  std::unordered_set<std::string> seen;
  for (const auto& r : dataset.records()) {
    ++s.total_records;
    ++s.records_per_kind[to_string(r.kind)];
    ++s.kinds_per_image[r.image_id][static_cast<std::size_t>(r.kind)];
    ++s.turn_histogram[r.turns.size()];
    ++s.turn_histogram_per_kind[to_string(r.kind)][r.turns.size()];
    if (seen.insert(r.image_id).second) ++s.images_per_emotion[r.emotion_class];
  }
  s.image_count = seen.size();
  return s;
}

inline json to_json(const DatasetStats& s) {
  auto hist = [](const std::map<std::size_t, std::size_t>& h) {
    json j = json::object();
    for (const auto& [turns, n] : h) j[std::to_string(turns)] = n;
    return j;
  };
  json per_kind_hist = json::object();
  for (const auto& [k, h] : s.turn_histogram_per_kind) per_kind_hist[k] = hist(h);
  json per_emotion = json::object();
  for (const auto& [e, n] : s.images_per_emotion) per_emotion[e] = n;
  json per_kind = json::object();
  for (const auto& [k, n] : s.records_per_kind) per_kind[k] = n;

  // Per-image kind counts are summarized as a histogram of (c, conv, r) tuples.
  std::map<std::string, std::size_t> tuple_counts;
  for (const auto& [id, c] : s.kinds_per_image) {
    ++tuple_counts["(" + std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]) + ")"];
  }
  json tuples = json::object();
  for (const auto& [t, n] : tuple_counts) tuples[t] = n;

  return json{{"total_records", s.total_records},
              {"image_count", s.image_count},
              {"records_per_kind", per_kind},
              {"images_per_emotion", per_emotion},
              {"kinds_per_image", tuples},
              {"turn_histogram", hist(s.turn_histogram)},
              {"turn_histogram_per_kind", per_kind_hist}};
}

// ---------------------------------------------------------------------------
// Files

inline std::filesystem::path manifest_path(std::filesystem::path dataset_path) {
  return dataset_path.replace_extension(".manifest");
}

inline json to_json(const Manifest& m) {
  json counts = json::object();
  for (auto k : kAllKinds) counts[to_string(k)] = m.count(k);
  json j{{"schema_version", m.schema_version},
         {"taxonomy", m.taxonomy},
         {"config_digest", m.config_digest},
         {"composition", m.composition},
         {"counts", counts}};
  if (m.sample_fraction) j["sample_fraction"] = *m.sample_fraction;
  if (m.sample_seed) j["sample_seed"] = *m.sample_seed;
  return j;
}

inline Manifest manifest_from_json(const json& j) {
  Manifest m;
  m.schema_version = require_field(j, "schema_version").get<int>();
  m.taxonomy = j.value("taxonomy", std::string{});
  m.config_digest = j.value("config_digest", std::string{});
  m.composition = j.value("composition", m.composition);
  if (auto it = j.find("counts"); it != j.end() && it->is_object()) {
    for (auto k : kAllKinds) m.counts[k] = it->value(to_string(k), std::size_t{0});
  }
  if (auto it = j.find("sample_fraction"); it != j.end() && it->is_number()) m.sample_fraction = it->get<double>();
  if (auto it = j.find("sample_seed"); it != j.end() && it->is_number()) m.sample_seed = it->get<std::uint64_t>();
  return m;
}

inline bool canonical_less(const InstructionRecord& a, const InstructionRecord& b) {
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  if (a.kind != b.kind) return a.kind < b.kind;
  const std::string qa = a.turns.empty() ? std::string{} : a.turns.front().first;
  const std::string qb = b.turns.empty() ? std::string{} : b.turns.front().first;
  return qa < qb;
}

// Records sorted by (image_id, kind, first question), one compact JSON
// object per line.
inline std::string serialize_records(const Dataset& dataset) {
  std::vector<const InstructionRecord*> sorted;
  sorted.reserve(dataset.size());
  for (const auto& r : dataset.records()) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return canonical_less(*a, *b); });
  std::string out;
  for (const auto* r : sorted) {
    out += to_json(*r).dump();
    out += '\n';
  }
  return out;
}

inline void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_records(dataset));
  write_file_atomic(manifest_path(path), to_json(dataset.manifest()).dump(2) + "\n");
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  Manifest meta;
  auto mpath = manifest_path(path);
  bool has_manifest = std::filesystem::exists(mpath);
  if (has_manifest) {
    try {
      meta = manifest_from_json(json::parse(read_file(mpath)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse, mpath.string() + ": " + e.what());
    }
  }
  Manifest expected = meta;
  meta.counts.clear();
  Dataset dataset(meta);
  for_each_jsonl(path, [&](std::size_t, const json& j) { dataset.insert(record_from_json(j)); });
  if (has_manifest) {
    for (auto k : kAllKinds) {
      if (expected.count(k) != dataset.manifest().count(k)) {
        throw Error(ErrorCode::schema_mismatch, mpath.string() + ": manifest count for " + to_string(k) + " is " +
                                                    std::to_string(expected.count(k)) + " but file holds " +
                                                    std::to_string(dataset.manifest().count(k)));
      }
    }
  }
  return dataset;
}

// Every problem in a dataset file, each prefixed with its line number.
struct FileValidation {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  std::size_t records = 0;

  bool ok() const noexcept { return errors.empty(); }
};

inline FileValidation validate_dataset_file(const std::filesystem::path& path) {
  FileValidation out;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    out.errors.push_back("cannot open " + path.string());
    return out;
  }
  int schema_version = kSchemaVersion;
  std::optional<Manifest> manifest;
  auto mpath = manifest_path(path);
  if (std::filesystem::exists(mpath)) {
    try {
      manifest = manifest_from_json(json::parse(read_file(mpath)));
      schema_version = manifest->schema_version;
    } catch (const std::exception& e) {
      out.errors.push_back(mpath.string() + ": " + e.what());
    }
  }

  std::unordered_set<std::string> keys;
  std::map<InstructionKind, std::size_t> counts;
  std::map<std::string, std::vector<InstructionRecord>> conversations;
  std::vector<InstructionRecord> reasonings;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto where = "line " + std::to_string(line_no) + ": ";
    InstructionRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const std::exception& e) {
      out.errors.push_back(where + e.what());
      continue;
    }
    ++out.records;
    if (r.schema_version != schema_version) {
      out.errors.push_back(where + "schema_version " + std::to_string(r.schema_version) + " != " +
                           std::to_string(schema_version));
    }
    for (const auto& v : check_record(r)) out.errors.push_back(where + v.message);
    if (!keys.insert(Dataset::uniqueness_key(r)).second) {
      out.errors.push_back(where + "duplicate record for image '" + r.image_id + "' kind " + to_string(r.kind));
    }
    ++counts[r.kind];
    if (r.kind == InstructionKind::conversation) conversations[r.image_id].push_back(r);
    if (r.kind == InstructionKind::reasoning) reasonings.push_back(r);
  }
  for (const auto& r : reasonings) {
    if (auto w = reasoning_length_warning(r, conversations[r.image_id])) out.warnings.push_back(*w);
  }
  if (manifest) {
    for (auto k : kAllKinds) {
      if (manifest->count(k) != counts[k]) {
        out.errors.push_back("manifest count for " + std::string(to_string(k)) + " is " +
                             std::to_string(manifest->count(k)) + " but file holds " + std::to_string(counts[k]));
      }
    }
  }
  return out;
}

// One row per turn in the two-column instruction/output layout, keyed by
// image_id for the trainer's image lookup.
inline std::string export_instruction_pairs(const Dataset& dataset) {
  std::vector<const InstructionRecord*> sorted;
  for (const auto& r : dataset.records()) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return canonical_less(*a, *b); });
  std::string out;
  for (const auto* r : sorted) {
    for (const auto& [q, a] : r->turns) {
      out += json{{"image_id", r->image_id}, {"instruction", q}, {"output", a}}.dump();
      out += '\n';
    }
  }
  return out;
}

}  // namespace emoforge
