#pragma once

// End-to-end generation: join inputs, synthesize categorical records
// locally, request conversation + reasoning in one call per image, parse and
// split replies, and write dataset, completions log and quarantine.

#include <emoforge/run_config.hpp>

#include <ostream>

namespace emoforge {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 1,
  kExitConfig = 2,
  kExitBackend = 3,
};

struct GenerateReport {
  std::size_t input_pairs = 0;
  std::size_t invalid_attributes = 0;
  std::size_t images_ok = 0;
  std::size_t quarantined = 0;
  std::size_t backend_failures = 0;
  std::size_t replayed = 0;
  std::size_t queried = 0;
  std::size_t regenerated = 0;
  std::size_t records_written = 0;
  std::vector<std::string> warnings;
  UsageSnapshot usage;
  int exit_code = kExitOk;
};

inline json to_json(const GenerateReport& r) {
  return json{{"input_pairs", r.input_pairs},
              {"invalid_attributes", r.invalid_attributes},
              {"images_ok", r.images_ok},
              {"quarantined", r.quarantined},
              {"backend_failures", r.backend_failures},
              {"replayed", r.replayed},
              {"queried", r.queried},
              {"regenerated", r.regenerated},
              {"records_written", r.records_written},
              {"warnings", r.warnings.size()},
              {"usage", to_json(r.usage)},
              {"exit_code", r.exit_code}};
}

namespace detail {

// Serves requests from the completions log when possible and queries the
// backend (appending to the log) for the rest.
class ReplayingClient {
 public:
  ReplayingClient(const RunConfig& config, ChatBackend& backend, UsageLedger& ledger)
      : config_(config), backend_(backend), ledger_(ledger) {
    const auto& log = config.paths.completions_log;
    if (config.fresh) {
      std::filesystem::remove(log);
    } else if (std::filesystem::exists(log)) {
      for (auto& r : read_completions_log(log)) {
        if (r.ok()) cache_[key(r.image_id, r.prompt_hash)] = std::move(r);
      }
    }
  }

  std::vector<CompletionResult> run(const std::vector<GenerationRequest>& requests, GenerateReport& report) {
    std::vector<CompletionResult> out(requests.size());
    std::vector<GenerationRequest> pending;
    std::vector<std::size_t> pending_index;
    for (std::size_t i = 0; i < requests.size(); ++i) {
      auto it = cache_.find(key(requests[i].image_id, requests[i].prompt_hash));
      if (it != cache_.end()) {
        out[i] = it->second;
        ++report.replayed;
      } else {
        pending.push_back(requests[i]);
        pending_index.push_back(i);
      }
    }
    if (!pending.empty()) {
      auto fetched = complete_batch(pending, config_.backend, backend_, ledger_);
      for (std::size_t k = 0; k < fetched.size(); ++k) {
        append_completion(config_.paths.completions_log, fetched[k]);
        if (fetched[k].ok()) cache_[key(fetched[k].image_id, fetched[k].prompt_hash)] = fetched[k];
        out[pending_index[k]] = std::move(fetched[k]);
      }
      report.queried += pending.size();
    }
    return out;
  }

 private:
  static std::string key(const std::string& id, const std::string& hash) { return id + '\x1f' + hash; }

  const RunConfig& config_;
  ChatBackend& backend_;
  UsageLedger& ledger_;
  std::map<std::string, CompletionResult> cache_;
};

inline std::optional<ConversationReasoning> try_split(const CompletionResult& r, const std::string& emotion,
                                                      std::string& error) {
  try {
    return split_conversation_reasoning(parse_dialogue(*r.raw_text), r.image_id, Provenance::from(r), emotion);
  } catch (const Error& e) {
    error = e.what();
    return std::nullopt;
  }
}

}  // namespace detail

inline GenerateReport run_generate(const RunConfig& config, ChatBackend& backend, std::ostream& log) {
  config.validate();
  GenerateReport report;

  const Taxonomy taxonomy = load_taxonomy(config.taxonomy);
  std::vector<SeedExample> seeds;
  if (!config.seed_examples.empty()) seeds = load_seed_examples(config.seed_examples);
  if (seeds.size() > config.seed_count) seeds.resize(config.seed_count);

  auto attributes = read_attributes(config.paths.attributes);
  auto captions = read_captions(config.paths.captions);
  std::vector<AttributeRecord> valid;
  for (const auto& a : attributes) {
    try {
      valid.push_back(validate_attributes(a, taxonomy));
    } catch (const Error& e) {
      ++report.invalid_attributes;
      log << "attributes: '" << a.image_id << "': " << e.what() << "\n";
    }
  }
  auto joined = join_inputs(valid, captions);
  for (const auto& id : joined.missing_caption) log << "join: '" << id << "' has no caption\n";
  for (const auto& id : joined.missing_attributes) log << "join: '" << id << "' has no attributes\n";
  report.input_pairs = joined.pairs.size();
  if (report.invalid_attributes > 0) {
    log << "validation failed: " << report.invalid_attributes << " invalid attribute record(s) of "
        << attributes.size() << "\n";
    report.exit_code = kExitValidation;
    return report;
  }
  if (joined.pairs.empty()) throw Error(ErrorCode::empty_input, "no input pairs");

  const bool want_dialogue =
      config.kinds.count(InstructionKind::conversation) || config.kinds.count(InstructionKind::reasoning);

  UsageLedger ledger;
  detail::ReplayingClient client(config, backend, ledger);

  std::vector<std::optional<ConversationReasoning>> dialogues(joined.pairs.size());
  std::vector<QuarantineEntry> quarantine_entries(joined.pairs.size());
  std::vector<bool> quarantined(joined.pairs.size(), false);

  if (want_dialogue) {
    std::vector<GenerationRequest> requests;
    for (const auto& [attr, cap] : joined.pairs) {
      requests.push_back(build_request(InstructionKind::conversation, cap, attr, seeds));
    }
    auto results = client.run(requests, report);

    std::vector<std::size_t> retry_index;
    std::vector<GenerationRequest> retry_requests;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      const auto& emotion = *taxonomy.resolve(joined.pairs[i].first.emotion_class);
      if (!r.ok()) {
        ++report.backend_failures;
        quarantined[i] = true;
        quarantine_entries[i] = {r.image_id, "",
                                 std::string("backend ") + to_string(r.error->kind) + " after " +
                                     std::to_string(r.error->attempts) + " attempt(s): " + r.error->message};
        continue;
      }
      std::string error;
      dialogues[i] = detail::try_split(r, emotion, error);
      if (!dialogues[i]) {
        quarantine_entries[i] = {r.image_id, *r.raw_text, error};
        if (config.regenerate_on_parse_failure) {
          retry_index.push_back(i);
          retry_requests.push_back(with_format_reminder(requests[i]));
        } else {
          quarantined[i] = true;
        }
      }
    }

    if (!retry_requests.empty()) {
      auto retried = client.run(retry_requests, report);
      for (std::size_t k = 0; k < retried.size(); ++k) {
        auto i = retry_index[k];
        ++report.regenerated;
        const auto& r = retried[k];
        if (r.ok()) {
          std::string error;
          const auto& emotion = *taxonomy.resolve(joined.pairs[i].first.emotion_class);
          dialogues[i] = detail::try_split(r, emotion, error);
          if (dialogues[i]) continue;
          quarantine_entries[i] = {r.image_id, *r.raw_text, error + " (after regeneration)"};
        } else {
          ++report.backend_failures;
        }
        quarantined[i] = true;
      }
    }
  }

  std::vector<InstructionRecord> records;
  std::vector<QuarantineEntry> quarantine;
  for (std::size_t i = 0; i < joined.pairs.size(); ++i) {
    const auto& attr = joined.pairs[i].first;
    if (quarantined[i]) {
      quarantine.push_back(quarantine_entries[i]);
      continue;
    }
    ++report.images_ok;
    if (config.kinds.count(InstructionKind::categorical)) {
      records.push_back(make_categorical(attr.image_id, attr.emotion_class, taxonomy));
    }
    if (dialogues[i]) {
      if (config.kinds.count(InstructionKind::conversation)) records.push_back(dialogues[i]->conversation);
      if (config.kinds.count(InstructionKind::reasoning)) records.push_back(dialogues[i]->reasoning);
      if (auto w = reasoning_length_warning(dialogues[i]->reasoning, {dialogues[i]->conversation})) {
        report.warnings.push_back(*w);
        log << "warning: " << *w << "\n";
      }
    }
  }
  report.quarantined = quarantine.size();

  Manifest manifest;
  manifest.taxonomy = taxonomy.name();
  manifest.config_digest = generation_config_digest(config, taxonomy, seeds);
  manifest.composition = composition_string(config.kinds);
  Dataset dataset(manifest);
  if (std::filesystem::exists(config.paths.output)) {
    dataset = read_dataset(config.paths.output);
    dataset.manifest().config_digest = manifest.config_digest;
  }
  dataset = append(std::move(dataset), records);
  if (config.sample_fraction) dataset = sample_fraction(dataset, *config.sample_fraction, config.seed);
  write_dataset(dataset, config.paths.output);
  report.records_written = dataset.size();

  std::string qtext;
  for (const auto& q : quarantine) qtext += to_json(q).dump() + "\n";
  write_file_atomic(config.paths.quarantine, qtext);

  report.usage = ledger.snapshot();
  if (report.backend_failures > 0) {
    report.exit_code = kExitBackend;
  } else if (!quarantine.empty()) {
    report.exit_code = kExitValidation;
  }
  return report;
}

}  // namespace emoforge
