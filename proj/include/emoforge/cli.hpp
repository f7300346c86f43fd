#pragma once

// Subcommand dispatch for the emoforge tool. Exit codes: 0 success,
// 1 validation/parse failures, 2 configuration errors, 3 backend failures.

#include <emoforge/eval_harness.hpp>
#include <emoforge/http_backend.hpp>
#include <emoforge/pipeline.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <memory>

namespace emoforge {

namespace detail {

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::io:
      return kExitConfig;
    default:
      return kExitValidation;
  }
}

inline void write_or_print(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

inline std::string percent(double fraction) { return format_fixed(fraction * 100.0, 2) + "%"; }

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"emoforge: emotion visual-instruction data generation and evaluation"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> global_seed;
  app.add_option("--seed", global_seed, "Seed for every stochastic operation");

  // generate
  auto* gen = app.add_subcommand("generate", "Generate categorical, conversation and reasoning records");
  std::string config_path;
  struct GenerateFlags {
    std::string attributes, captions, output, completions_log, quarantine, taxonomy, seeds, kinds, endpoint, model;
    std::optional<std::size_t> seed_count;
    std::optional<int> max_in_flight, max_retries;
    std::optional<double> temperature, corruption, sample_fraction;
    bool fresh = false, regenerate = false;
  } g;
  gen->add_option("--config", config_path, "INI run configuration");
  gen->add_option("--attributes", g.attributes);
  gen->add_option("--captions", g.captions);
  gen->add_option("--output", g.output);
  gen->add_option("--completions-log", g.completions_log);
  gen->add_option("--quarantine", g.quarantine);
  gen->add_option("--taxonomy", g.taxonomy);
  gen->add_option("--seed-examples", g.seeds);
  gen->add_option("--seed-count", g.seed_count);
  gen->add_option("--kinds", g.kinds, "Comma-separated subset of categorical,conversation,reasoning");
  gen->add_option("--endpoint", g.endpoint, "'mock' or an http(s) chat-completions URL");
  gen->add_option("--model", g.model);
  gen->add_option("--max-in-flight", g.max_in_flight);
  gen->add_option("--max-retries", g.max_retries);
  gen->add_option("--temperature", g.temperature);
  gen->add_option("--mock-corruption", g.corruption);
  gen->add_option("--sample-fraction", g.sample_fraction);
  gen->add_flag("--fresh", g.fresh, "Ignore and replace the completions log");
  gen->add_flag("--regenerate", g.regenerate, "Retry unparseable replies once");

  auto* val = app.add_subcommand("validate", "Check every record of a dataset file");
  std::string validate_path;
  val->add_option("path", validate_path)->required();

  auto* split = app.add_subcommand("split", "Check held-in/held-out disjointness and write the splits");
  std::vector<std::string> split_datasets, held_out;
  std::string held_in, out_dir;
  split->add_option("--dataset", split_datasets, "name=path (repeatable)")->required();
  split->add_option("--held-in", held_in)->required();
  split->add_option("--held-out", held_out);
  split->add_option("--out-dir", out_dir);

  auto* sample = app.add_subcommand("sample", "Stratified fractional sample by image");
  std::string sample_in, sample_out;
  double fraction = 1.0;
  sample->add_option("--input", sample_in)->required();
  sample->add_option("--output", sample_out)->required();
  sample->add_option("--fraction", fraction)->required();

  auto* select = app.add_subcommand("select", "Keep only the given instruction kinds");
  std::string select_in, select_out, select_kinds_arg;
  select->add_option("--input", select_in)->required();
  select->add_option("--output", select_out)->required();
  select->add_option("--kinds", select_kinds_arg)->required();

  auto* st = app.add_subcommand("stats", "Dataset counts and turn histograms");
  std::string stats_path;
  st->add_option("path", stats_path)->required();

  auto* ev = app.add_subcommand("eval", "Accuracy of a predictions file against gold labels");
  std::string preds_path, gold_path, eval_taxonomy = "emoset", eval_summary;
  ev->add_option("--predictions", preds_path)->required();
  ev->add_option("--gold", gold_path)->required();
  ev->add_option("--taxonomy", eval_taxonomy);
  ev->add_option("--summary", eval_summary, "Write the machine-readable summary here");

  auto* sens = app.add_subcommand("sensitivity", "Mean coefficient of variation across instruction phrasings");
  std::vector<std::string> run_files;
  std::string std_mode = "population", sens_summary;
  sens->add_option("runs", run_files, "Run files with task_id, instruction_id, accuracy")->required();
  sens->add_option("--std", std_mode)->check(CLI::IsMember({"population", "sample"}));
  sens->add_option("--summary", sens_summary);

  auto* rep = app.add_subcommand("report", "Summaries side by side with the reference values");
  bool fixtures = false;
  std::vector<std::string> result_files;
  std::string votes_path;
  rep->add_flag("--fixtures", fixtures, "Include reference tables");
  rep->add_option("--results", result_files, "Summary files written by eval/sensitivity");
  rep->add_option("--votes", votes_path, "Vote file with item_id, choice");

  auto* exp = app.add_subcommand("export", "Instruction/output rows for trainers");
  std::string export_in, export_out;
  exp->add_option("--input", export_in)->required();
  exp->add_option("--output", export_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*gen) {
      RunConfig c;
      if (!config_path.empty()) c = load_run_config(config_path);
      if (!g.attributes.empty()) c.paths.attributes = g.attributes;
      if (!g.captions.empty()) c.paths.captions = g.captions;
      if (!g.output.empty()) c.paths.output = g.output;
      if (!g.completions_log.empty()) c.paths.completions_log = g.completions_log;
      if (!g.quarantine.empty()) c.paths.quarantine = g.quarantine;
      if (!g.taxonomy.empty()) c.taxonomy = g.taxonomy;
      if (!g.seeds.empty()) c.seed_examples = g.seeds;
      if (g.seed_count) c.seed_count = *g.seed_count;
      if (!g.kinds.empty()) c.kinds = parse_kinds(g.kinds);
      if (!g.endpoint.empty()) c.backend.endpoint = g.endpoint;
      if (!g.model.empty()) c.backend.model_name = g.model;
      if (g.max_in_flight) c.backend.max_in_flight = *g.max_in_flight;
      if (g.max_retries) c.backend.max_retries = *g.max_retries;
      if (g.temperature) c.backend.temperature = *g.temperature;
      if (g.corruption) c.mock.corruption_rate = *g.corruption;
      if (g.sample_fraction) c.sample_fraction = *g.sample_fraction;
      if (g.fresh) c.fresh = true;
      if (g.regenerate) c.regenerate_on_parse_failure = true;
      if (global_seed) c.seed = c.backend.seed = c.mock.seed = *global_seed;
      c.validate();

      std::unique_ptr<ChatBackend> backend;
      if (c.backend.endpoint == "mock") {
        backend = std::make_unique<MockBackend>(c.mock);
      } else {
        auto key = api_key_from_env();
        if (key.empty()) {
          err << "error: " << kApiKeyEnv << " is not set\n";
          return kExitConfig;
        }
        backend = std::make_unique<HttpBackend>(c.backend.endpoint, key);
      }
      auto report = run_generate(c, *backend, err);
      out << "images: " << report.input_pairs << " input, " << report.images_ok << " ok, " << report.quarantined
          << " quarantined (" << report.backend_failures << " backend failures)\n";
      out << "completions: " << report.queried << " queried, " << report.replayed << " replayed\n";
      out << "records written: " << report.records_written << "\n";
      out << "usage: " << to_json(report.usage).dump() << "\n";
      return report.exit_code;
    }

    if (*val) {
      auto v = validate_dataset_file(validate_path);
      for (const auto& e : v.errors) err << validate_path << ": " << e << "\n";
      for (const auto& w : v.warnings) err << validate_path << ": warning: " << w << "\n";
      out << v.records << " record(s), " << v.errors.size() << " error(s), " << v.warnings.size()
          << " warning(s)\n";
      return v.ok() ? kExitOk : kExitValidation;
    }

    if (*split) {
      std::map<std::string, Dataset> datasets;
      for (const auto& spec : split_datasets) {
        auto eq = spec.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::invalid_argument, "--dataset expects name=path");
        datasets.emplace(spec.substr(0, eq), read_dataset(spec.substr(eq + 1)));
      }
      try {
        auto result = split_held(datasets, SplitSpec{held_in, held_out});
        out << "held-in " << held_in << ": " << result.held_in.image_ids().size() << " images\n";
        for (const auto& [name, d] : result.held_out) {
          out << "held-out " << name << ": " << d.image_ids().size() << " images\n";
        }
        if (!out_dir.empty()) {
          write_dataset(result.held_in, std::filesystem::path(out_dir) / ("held_in_" + held_in + ".jsonl"));
          for (const auto& [name, d] : result.held_out) {
            write_dataset(d, std::filesystem::path(out_dir) / ("held_out_" + name + ".jsonl"));
          }
        }
        return kExitOk;
      } catch (const OverlapError& e) {
        err << "error: " << e.what() << "\n";
        for (const auto& id : e.ids()) out << id << "\n";
        return kExitValidation;
      }
    }

    if (*sample) {
      auto d = read_dataset(sample_in);
      auto s = sample_fraction(d, fraction, global_seed.value_or(0));
      write_dataset(s, sample_out);
      out << "sampled " << s.image_ids().size() << " of " << d.image_ids().size() << " images (" << s.size()
          << " records)\n";
      return kExitOk;
    }

    if (*select) {
      auto d = select_kinds(read_dataset(select_in), parse_kinds(select_kinds_arg));
      write_dataset(d, select_out);
      out << d.manifest().composition << ": " << d.size() << " records\n";
      return kExitOk;
    }

    if (*st) {
      out << to_json(stats(read_dataset(stats_path))).dump(2) << "\n";
      return kExitOk;
    }

    if (*ev) {
      auto taxonomy = load_taxonomy(eval_taxonomy);
      auto report = accuracy(read_predictions(preds_path, taxonomy), read_gold(gold_path));
      out << "accuracy: " << detail::percent(report.accuracy) << " (" << report.correct << "/" << report.total
          << " correct, " << report.unparseable << " unparseable)\n";
      if (!eval_summary.empty()) {
        auto j = to_json(report);
        j["task_id"] = taxonomy.name();
        write_file_atomic(eval_summary, j.dump(2) + "\n");
      }
      return kExitOk;
    }

    if (*sens) {
      std::vector<RunAccuracy> runs;
      for (const auto& f : run_files) {
        auto part = read_run_accuracies(f);
        runs.insert(runs.end(), part.begin(), part.end());
      }
      auto result = sensitivity(group_by_task(runs), std_mode == "sample" ? StdMode::sample : StdMode::population);
      for (const auto& s : result.skipped) err << "warning: " << s << "\n";
      for (const auto& [task, cov] : result.per_task) out << "  " << task << ": " << format_fixed(cov, 6) << "\n";
      out << "sensitivity: " << format_fixed(result.value, 6) << "\n";
      if (!sens_summary.empty()) write_file_atomic(sens_summary, to_json(result).dump(2) + "\n");
      return kExitOk;
    }

    if (*rep) {
      for (const auto& f : result_files) {
        auto j = json::parse(read_file(f));
        out << "[result] " << f;
        if (j.contains("task_id")) out << " (" << j["task_id"].get<std::string>() << ")";
        out << "\n";
        for (const auto& [name, value] : j.at("metrics").items()) {
          double v = value.get<double>();
          out << "  " << name << ": " << (name == "accuracy" ? detail::percent(v) : format_fixed(v, 6)) << "\n";
        }
      }
      if (!votes_path.empty()) {
        auto t = tally_votes(read_votes(votes_path));
        out << "[result] votes: model share " << detail::percent(t.overall.proportion()) << " ("
            << t.overall.model_votes << "/" << t.overall.total << ")\n";
      }
      if (fixtures) out << render_reference_tables(emit_reference_tables());
      return kExitOk;
    }

    if (*exp) {
      detail::write_or_print(export_out, export_instruction_pairs(read_dataset(export_in)), out);
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return detail::exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitConfig;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  std::vector<const char*> argv;
  argv.push_back("emoforge");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace emoforge
