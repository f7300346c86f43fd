#pragma once

// Chat-completion driver: retries with exponential backoff, bounded batch
// concurrency, usage accounting and a deterministic mock backend.

#include <emoforge/prompt_builder.hpp>

#include <atomic>
#include <cmath>
#include <deque>
#include <mutex>
#include <random>
#include <thread>

namespace emoforge {

struct BackendConfig {
  std::string endpoint = "mock";
  std::string model_name = "gpt-4";
  int max_in_flight = 4;
  int max_retries = 3;
  std::chrono::milliseconds base_backoff{1000};
  double temperature = 0.2;
  std::chrono::milliseconds timeout{60000};
  std::uint64_t seed = 0;

  void validate() const {
    if (max_in_flight < 1) throw Error(ErrorCode::invalid_argument, "max_in_flight must be >= 1");
    if (max_retries < 0) throw Error(ErrorCode::invalid_argument, "max_retries must be >= 0");
    if (base_backoff.count() <= 0) throw Error(ErrorCode::invalid_argument, "base_backoff must be > 0");
    if (!(temperature >= 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be >= 0");
    if (timeout.count() <= 0) throw Error(ErrorCode::invalid_argument, "timeout must be > 0");
  }
};

enum class FailureClass { auth, rate_limit, transport, timeout, malformed_response, rejected };

inline const char* to_string(FailureClass f) {
  switch (f) {
    case FailureClass::auth: return "auth";
    case FailureClass::rate_limit: return "rate_limit";
    case FailureClass::transport: return "transport";
    case FailureClass::timeout: return "timeout";
    case FailureClass::malformed_response: return "malformed_response";
    case FailureClass::rejected: return "rejected";
  }
  return "unknown";
}

inline FailureClass parse_failure_class(std::string_view s) {
  for (auto f : {FailureClass::auth, FailureClass::rate_limit, FailureClass::transport,
                 FailureClass::timeout, FailureClass::malformed_response, FailureClass::rejected}) {
    if (s == to_string(f)) return f;
  }
  throw Error(ErrorCode::parse, "unknown failure class '" + std::string(s) + "'");
}

inline bool is_retryable(FailureClass f) {
  return f == FailureClass::rate_limit || f == FailureClass::transport || f == FailureClass::timeout;
}

// What a backend reports for a single attempt.
struct AttemptOutcome {
  std::optional<FailureClass> failure;
  std::string text;
  std::string message;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::optional<std::chrono::milliseconds> retry_after;

  static AttemptOutcome success(std::string text, std::int64_t prompt_tokens = 0,
                                std::int64_t completion_tokens = 0) {
    AttemptOutcome o;
    o.text = std::move(text);
    o.prompt_tokens = prompt_tokens;
    o.completion_tokens = completion_tokens;
    return o;
  }

  static AttemptOutcome fail(FailureClass f, std::string message = {}) {
    AttemptOutcome o;
    o.failure = f;
    o.message = std::move(message);
    return o;
  }
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual AttemptOutcome attempt(const GenerationRequest& request, const BackendConfig& config) = 0;
};

struct BackendError {
  FailureClass kind = FailureClass::transport;
  int attempts = 0;
  std::string message;

  friend bool operator==(const BackendError&, const BackendError&) = default;
};

struct CompletionResult {
  std::string image_id;
  InstructionKind kind = InstructionKind::conversation;
  std::optional<std::string> raw_text;
  std::string prompt_hash;
  std::string model_name;
  std::string timestamp;
  std::optional<BackendError> error;

  bool ok() const noexcept { return raw_text.has_value(); }

  friend bool operator==(const CompletionResult&, const CompletionResult&) = default;
};

struct UsageSnapshot {
  std::int64_t request_count = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::map<std::string, std::int64_t> failures_by_class;
};

// Thread-safe; one record_attempt call per backend attempt.
class UsageLedger {
 public:
  void record_attempt(const AttemptOutcome& outcome) {
    std::lock_guard lock(mu_);
    ++state_.request_count;
    state_.prompt_tokens += outcome.prompt_tokens;
    state_.completion_tokens += outcome.completion_tokens;
    if (outcome.failure) ++state_.failures_by_class[to_string(*outcome.failure)];
  }

  UsageSnapshot snapshot() const {
    std::lock_guard lock(mu_);
    return state_;
  }

 private:
  mutable std::mutex mu_;
  UsageSnapshot state_;
};

inline json to_json(const UsageSnapshot& u) {
  json failures = json::object();
  for (const auto& [k, v] : u.failures_by_class) failures[k] = v;
  return json{{"request_count", u.request_count},
              {"prompt_tokens", u.prompt_tokens},
              {"completion_tokens", u.completion_tokens},
              {"failures_by_class", failures}};
}

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) {
    if (d.count() > 0) std::this_thread::sleep_for(d);
  };
}

inline constexpr std::chrono::milliseconds kMaxBackoff{60'000};

// base * 2^retry, scaled by a jitter factor in [0.5, 1). Retry-After from the
// backend wins when present.
inline std::chrono::milliseconds backoff_delay(const BackendConfig& config, int retry,
                                               double jitter_unit,
                                               std::optional<std::chrono::milliseconds> retry_after) {
  if (retry_after) return std::min(*retry_after, kMaxBackoff);
  double scaled = static_cast<double>(config.base_backoff.count()) * std::ldexp(1.0, retry);
  scaled *= 0.5 + 0.5 * jitter_unit;
  scaled = std::min(scaled, static_cast<double>(kMaxBackoff.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(scaled));
}

inline CompletionResult complete(const GenerationRequest& request, const BackendConfig& config,
                                 ChatBackend& backend, UsageLedger& ledger,
                                 const Sleeper& sleep = real_sleeper()) {
  config.validate();
  CompletionResult result;
  result.image_id = request.image_id;
  result.kind = request.kind;
  result.prompt_hash = request.prompt_hash;
  result.model_name = config.model_name;

  std::mt19937_64 jitter_rng(config.seed ^ sha256_u64(request.prompt_hash));
  int attempts = 0;
  for (int retry = 0;; ++retry) {
    AttemptOutcome outcome;
    try {
      outcome = backend.attempt(request, config);
    } catch (const std::exception& e) {
      outcome = AttemptOutcome::fail(FailureClass::transport, e.what());
    }
    ++attempts;
    ledger.record_attempt(outcome);
    if (!outcome.failure) {
      result.raw_text = std::move(outcome.text);
      result.timestamp = utc_timestamp();
      return result;
    }
    if (!is_retryable(*outcome.failure) || retry >= config.max_retries) {
      std::string message = outcome.message;
      if (is_retryable(*outcome.failure)) {
        message = "retries exhausted" + (message.empty() ? std::string{} : ": " + message);
      }
      result.error = BackendError{*outcome.failure, attempts, std::move(message)};
      result.timestamp = utc_timestamp();
      return result;
    }
    double unit = static_cast<double>(jitter_rng() >> 11) * 0x1.0p-53;
    sleep(backoff_delay(config, retry, unit, outcome.retry_after));
  }
}

// Output order matches input order; per-item failures never abort the batch.
inline std::vector<CompletionResult> complete_batch(const std::vector<GenerationRequest>& requests,
                                                    const BackendConfig& config, ChatBackend& backend,
                                                    UsageLedger& ledger,
                                                    const Sleeper& sleep = real_sleeper()) {
  config.validate();
  std::vector<CompletionResult> results(requests.size());
  if (requests.empty()) return results;

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= requests.size()) return;
      results[i] = complete(requests[i], config, backend, ledger, sleep);
    }
  };
  std::size_t n_workers =
      std::min(requests.size(), static_cast<std::size_t>(config.max_in_flight));
  {
    std::vector<std::jthread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  return results;
}

// ---------------------------------------------------------------------------
// Mock backend

struct MockOptions {
  double corruption_rate = 0.0;
  std::chrono::milliseconds max_latency{0};
  std::uint64_t seed = 0;
};

namespace detail {

struct ContextFields {
  std::string caption = "an image";
  std::string emotion = "neutral";
  std::string brightness = "0.5";
  std::string colorfulness = "0.5";
  std::string scene = "none";
  std::string objects = "none";
  std::string face = "none";
  std::string action = "none";
};

inline ContextFields read_context_fields(const GenerationRequest& request) {
  ContextFields f;
  if (request.messages.empty()) return f;
  for (auto line : split_lines(request.messages.back().content)) {
    auto take = [&](std::string_view key, std::string& out) {
      if (line.substr(0, key.size()) == key) out = std::string(trim(line.substr(key.size())));
    };
    take("Caption: ", f.caption);
    take("Emotion class: ", f.emotion);
    take("Brightness: ", f.brightness);
    take("Colorfulness: ", f.colorfulness);
    take("Scene type: ", f.scene);
    take("Object class: ", f.objects);
    take("Facial expression: ", f.face);
    take("Human action: ", f.action);
  }
  return f;
}

inline std::string pick(std::mt19937_64& rng, std::initializer_list<const char*> options) {
  return *(options.begin() + static_cast<std::ptrdiff_t>(rng() % options.size()));
}

inline std::string mock_dialogue(const GenerationRequest& request, std::mt19937_64& rng) {
  auto f = read_context_fields(request);
  std::string scene_text = f.caption;
  while (!scene_text.empty() && scene_text.back() == '.') scene_text.pop_back();
  if (!scene_text.empty()) scene_text[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(scene_text[0])));
  std::vector<QaPair> pairs;
  pairs.emplace_back(pick(rng, {"What is shown in this image?", "What can you see in the photo?",
                                "What is happening in the picture?"}),
                     "The image shows " + scene_text + ". The main objects are " + f.objects + ".");
  double brightness = std::strtod(f.brightness.c_str(), nullptr);
  std::string light = brightness >= 0.5 ? "fairly bright" : "rather dark";
  pairs.emplace_back(pick(rng, {"How would you describe the lighting and colors?",
                                "What are the lighting conditions like?"}),
                     "The scene is " + light + ", with a brightness of " + f.brightness +
                         " and a colorfulness of " + f.colorfulness + ". It is set in a " +
                         f.scene + " scene.");
  std::string people = f.face == "none" && f.action == "none"
                           ? "No person is clearly visible, so the mood comes from the setting itself."
                           : "The person in the image shows a " + f.face + " expression while " +
                                 f.action + ", which reinforces the mood.";
  pairs.emplace_back(
      pick(rng, {"What emotion does this image convey, and why?",
                 "Why might a viewer feel a particular emotion when looking at this image?"}),
      "The image conveys a clear sense of " + f.emotion + ". The " + f.scene +
          " setting and the presence of " + f.objects + " set the overall tone of the scene.\n\n" +
          people + " Low-level cues matter as well: a brightness of " + f.brightness +
          " and a colorfulness of " + f.colorfulness +
          " shape how intense the scene feels. Taken together, these details explain why " +
          f.emotion + " is the dominant emotion here.");
  return render_dialogue(pairs);
}

inline std::string corrupt_dialogue(const std::string& clean, std::mt19937_64& rng) {
  switch (rng() % 4) {
    case 0: {  // markers stripped
      std::string out;
      for (auto line : split_lines(clean)) {
        auto t = std::string(line);
        for (std::string_view m : {"Question: ", "Answer: "}) {
          if (t.rfind(m, 0) == 0) t = t.substr(m.size());
        }
        out += t + "\n";
      }
      return out;
    }
    case 1:
      return "Answer: I can describe this image.\n" + clean;
    case 2: {  // too few pairs to split
      auto cut = clean.find("\n\nQuestion:");
      return clean.substr(0, cut);
    }
    default:
      return clean + "\n\nQuestion: Is there anything else worth noting?";
  }
}

}  // namespace detail

// Deterministic replies seeded by prompt_hash. Tracks concurrency and can
// replay scripted failures per image for retry tests.
class MockBackend : public ChatBackend {
 public:
  explicit MockBackend(MockOptions options = {}) : options_(options) {}

  void script_failures(const std::string& image_id, std::vector<FailureClass> failures) {
    std::lock_guard lock(mu_);
    auto& q = scripted_[image_id];
    q.insert(q.end(), failures.begin(), failures.end());
  }

  std::string reply_for(const GenerationRequest& request) const {
    std::mt19937_64 rng(sha256_u64(request.prompt_hash) ^ options_.seed);
    if (request.kind == InstructionKind::categorical) {
      return "Predicted emotion: " + detail::read_context_fields(request).emotion + ".";
    }
    std::string clean = detail::mock_dialogue(request, rng);
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    if (u < options_.corruption_rate) return detail::corrupt_dialogue(clean, rng);
    return clean;
  }

  AttemptOutcome attempt(const GenerationRequest& request, const BackendConfig&) override {
    int now = in_flight_.fetch_add(1) + 1;
    int prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
    calls_.fetch_add(1);

    if (options_.max_latency.count() > 0) {
      std::uint64_t h = sha256_u64(request.prompt_hash + "#" + std::to_string(calls_.load()));
      auto span = static_cast<std::uint64_t>(options_.max_latency.count()) + 1;
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<std::int64_t>(h % span)));
    }

    std::optional<FailureClass> scripted;
    {
      std::lock_guard lock(mu_);
      auto it = scripted_.find(request.image_id);
      if (it != scripted_.end() && !it->second.empty()) {
        scripted = it->second.front();
        it->second.pop_front();
      }
    }

    AttemptOutcome outcome;
    if (scripted) {
      outcome = AttemptOutcome::fail(*scripted, std::string("scripted ") + to_string(*scripted));
    } else {
      std::string text = reply_for(request);
      std::int64_t prompt_chars = 0;
      for (const auto& m : request.messages) prompt_chars += static_cast<std::int64_t>(m.content.size());
      auto completion_tokens = static_cast<std::int64_t>(text.size() / 4);
      outcome = AttemptOutcome::success(std::move(text), prompt_chars / 4, completion_tokens);
    }
    in_flight_.fetch_sub(1);
    return outcome;
  }

  int peak_in_flight() const { return peak_.load(); }
  int calls() const { return calls_.load(); }

 private:
  MockOptions options_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_{0};
  std::atomic<int> calls_{0};
  std::mutex mu_;
  std::map<std::string, std::deque<FailureClass>> scripted_;
};

inline CompletionResult mock_complete(const GenerationRequest& request, MockOptions options = {}) {
  MockBackend backend(options);
  UsageLedger ledger;
  BackendConfig config;
  config.seed = options.seed;
  return complete(request, config, backend, ledger);
}

// ---------------------------------------------------------------------------
// Completions log: one CompletionResult per line, append-only.

inline json to_json(const CompletionResult& r) {
  json j;
  j["image_id"] = r.image_id;
  j["kind"] = to_string(r.kind);
  j["prompt_hash"] = r.prompt_hash;
  j["model_name"] = r.model_name;
  j["timestamp"] = r.timestamp;
  j["raw_text"] = r.raw_text ? json(*r.raw_text) : json(nullptr);
  if (r.error) {
    j["error"] = json{{"class", to_string(r.error->kind)},
                      {"attempts", r.error->attempts},
                      {"message", r.error->message}};
  } else {
    j["error"] = nullptr;
  }
  return j;
}

inline CompletionResult completion_from_json(const json& j) {
  CompletionResult r;
  r.image_id = require_string(j, "image_id");
  r.kind = parse_kind(require_string(j, "kind"));
  r.prompt_hash = require_string(j, "prompt_hash");
  r.model_name = j.value("model_name", std::string{});
  r.timestamp = j.value("timestamp", std::string{});
  if (auto it = j.find("raw_text"); it != j.end() && it->is_string()) r.raw_text = it->get<std::string>();
  if (auto it = j.find("error"); it != j.end() && it->is_object()) {
    r.error = BackendError{parse_failure_class(require_string(*it, "class")),
                           it->value("attempts", 0), it->value("message", std::string{})};
  }
  if (r.raw_text.has_value() == r.error.has_value()) {
    throw Error(ErrorCode::parse, "completion must carry exactly one of raw_text or error");
  }
  return r;
}

inline void append_completion(const std::filesystem::path& log, const CompletionResult& r) {
  append_line(log, to_json(r).dump());
}

inline std::vector<CompletionResult> read_completions_log(const std::filesystem::path& log) {
  std::vector<CompletionResult> out;
  for_each_jsonl(log, [&](std::size_t, const json& j) { out.push_back(completion_from_json(j)); });
  return out;
}

}  // namespace emoforge
