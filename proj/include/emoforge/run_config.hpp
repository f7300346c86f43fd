#pragma once

// Run configuration: a flat INI file whose sections mirror the modules.
//
//   [backend]            endpoint, model_name, max_in_flight, max_retries,
//                        base_backoff_ms, temperature, timeout_ms
//   [mock]               corruption_rate, max_latency_ms
//   [attribute_schema]   taxonomy
//   [prompt_builder]     seed_examples, seed_count
//   [instruction_parser] regenerate_on_parse_failure
//   [dataset_store]      kinds, sample_fraction
//   [paths]              attributes, captions, output, completions_log, quarantine
//   [run]                seed
//
// Relative paths resolve against the config file's directory.

#include <emoforge/dataset_store.hpp>
#include <emoforge/llm_client.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace emoforge {

struct RunPaths {
  std::filesystem::path attributes;
  std::filesystem::path captions;
  std::filesystem::path output;
  std::filesystem::path completions_log;
  std::filesystem::path quarantine;
};

struct RunConfig {
  BackendConfig backend;
  MockOptions mock;
  std::string taxonomy = "emoset";
  std::filesystem::path seed_examples;
  std::size_t seed_count = kDefaultSeedCount;
  std::set<InstructionKind> kinds = {kAllKinds.begin(), kAllKinds.end()};
  std::optional<double> sample_fraction;
  bool regenerate_on_parse_failure = false;
  bool fresh = false;
  std::uint64_t seed = 0;
  RunPaths paths;

  void validate() const {
    backend.validate();
    if (kinds.empty()) throw Error(ErrorCode::invalid_argument, "kinds must be non-empty");
    if (!(mock.corruption_rate >= 0.0 && mock.corruption_rate <= 1.0)) {
      throw Error(ErrorCode::invalid_argument, "mock corruption_rate must be in [0, 1]");
    }
    if (sample_fraction && !(*sample_fraction > 0.0 && *sample_fraction <= 1.0)) {
      throw Error(ErrorCode::invalid_argument, "sample_fraction must be in (0, 1]");
    }
    std::vector<std::pair<std::string, std::filesystem::path>> named = {
        {"attributes", paths.attributes}, {"captions", paths.captions}, {"output", paths.output},
        {"completions_log", paths.completions_log}, {"quarantine", paths.quarantine}};
    for (const auto& [name, p] : named) {
      if (p.empty()) throw Error(ErrorCode::invalid_argument, "paths." + name + " is not set");
    }
    for (std::size_t a = 0; a < named.size(); ++a) {
      for (std::size_t b = a + 1; b < named.size(); ++b) {
        if (named[a].second.lexically_normal() == named[b].second.lexically_normal()) {
          throw Error(ErrorCode::invalid_argument,
                      "paths." + named[a].first + " and paths." + named[b].first + " must differ");
        }
      }
    }
    if (manifest_path(paths.output).lexically_normal() == paths.output.lexically_normal()) {
      throw Error(ErrorCode::invalid_argument, "output dataset must not use the .manifest extension");
    }
  }
};

inline std::set<InstructionKind> parse_kinds(std::string_view text) {
  std::set<InstructionKind> kinds;
  std::string token;
  for (char c : std::string(text) + ",") {
    if (c == ',' || c == '+') {
      if (!trim(token).empty()) kinds.insert(parse_kind(token));
      token.clear();
    } else {
      token += c;
    }
  }
  if (kinds.empty()) throw Error(ErrorCode::invalid_argument, "kinds must be non-empty");
  return kinds;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ptree_error& e) {
    throw Error(ErrorCode::invalid_argument, "config " + path.string() + ": " + e.what());
  }
  auto base = path.parent_path();
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  RunConfig c;
  try {
    c.backend.endpoint = tree.get("backend.endpoint", c.backend.endpoint);
    c.backend.model_name = tree.get("backend.model_name", c.backend.model_name);
    c.backend.max_in_flight = tree.get("backend.max_in_flight", c.backend.max_in_flight);
    c.backend.max_retries = tree.get("backend.max_retries", c.backend.max_retries);
    c.backend.base_backoff =
        std::chrono::milliseconds(tree.get("backend.base_backoff_ms", c.backend.base_backoff.count()));
    c.backend.temperature = tree.get("backend.temperature", c.backend.temperature);
    c.backend.timeout = std::chrono::milliseconds(tree.get("backend.timeout_ms", c.backend.timeout.count()));
    c.mock.corruption_rate = tree.get("mock.corruption_rate", c.mock.corruption_rate);
    c.mock.max_latency = std::chrono::milliseconds(tree.get("mock.max_latency_ms", c.mock.max_latency.count()));
    c.taxonomy = tree.get("attribute_schema.taxonomy", c.taxonomy);
    if (!builtin_taxonomy(c.taxonomy)) c.taxonomy = resolve(c.taxonomy).string();
    c.seed_examples = resolve(tree.get("prompt_builder.seed_examples", std::string{}));
    c.seed_count = tree.get("prompt_builder.seed_count", c.seed_count);
    c.regenerate_on_parse_failure =
        tree.get("instruction_parser.regenerate_on_parse_failure", c.regenerate_on_parse_failure);
    if (auto kinds = tree.get_optional<std::string>("dataset_store.kinds")) c.kinds = parse_kinds(*kinds);
    if (auto f = tree.get_optional<double>("dataset_store.sample_fraction")) c.sample_fraction = *f;
    c.paths.attributes = resolve(tree.get("paths.attributes", std::string{}));
    c.paths.captions = resolve(tree.get("paths.captions", std::string{}));
    c.paths.output = resolve(tree.get("paths.output", std::string{}));
    c.paths.completions_log = resolve(tree.get("paths.completions_log", std::string{}));
    c.paths.quarantine = resolve(tree.get("paths.quarantine", std::string{}));
    c.seed = tree.get("run.seed", c.seed);
  } catch (const pt::ptree_error& e) {
    throw Error(ErrorCode::invalid_argument, "config " + path.string() + ": " + e.what());
  }
  c.backend.seed = c.seed;
  c.mock.seed = c.seed;
  return c;
}

// Digest of everything that shapes generated content.
inline std::string generation_config_digest(const RunConfig& c, const Taxonomy& taxonomy,
                                            const std::vector<SeedExample>& seeds) {
  json seed_json = json::array();
  for (const auto& s : seeds) seed_json.push_back(to_json(s));
  json j{{"model_name", c.backend.model_name},
         {"temperature", c.backend.temperature},
         {"system_prompt_sha256", kSystemPromptSha256},
         {"taxonomy", taxonomy.name()},
         {"labels", taxonomy.labels()},
         {"seeds", seed_json},
         {"kinds", composition_string(c.kinds)}};
  return sha256_hex(j.dump());
}

}  // namespace emoforge
