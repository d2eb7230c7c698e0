#pragma once

// Skill sequencing through a language model: action catalogs, prompt
// templates, response parsing and plan scoring.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqskill {

enum class CatalogVariant { skills_only, with_relevant, with_irrelevant, both, hidden_env };

std::string to_string(CatalogVariant v);
CatalogVariant catalog_variant_from(const std::string& name);

struct ActionCatalog {
  CatalogVariant variant = CatalogVariant::skills_only;
  std::map<int, std::string> actions;

  [[nodiscard]] bool contains(int key) const { return actions.count(key) != 0; }
};

ActionCatalog make_catalog(CatalogVariant v);

enum class PromptTemplate { basic, hidden_prior, exploration };

std::string to_string(PromptTemplate t);
PromptTemplate prompt_template_from(const std::string& name);

struct TaskSpec {
  std::vector<std::string> ingredients;
  /// Ground truth, read only when scoring.
  std::map<std::string, int> ingredient_to_key;
  /// Retrieval key -> the key that must come before it (closed containers).
  std::map<int, int> requires_open;
  /// Keys that are neither required nor counted as extra (closing actions).
  std::set<int> tolerated;
  /// Replaces the default object-location sentence of the hidden template.
  std::optional<std::string> environment_note;
};

/// The five stew ingredients in their canonical order.
const std::vector<std::string>& stew_ingredients();

/// Task for `ingredients` against `variant`'s key layout. The hidden
/// variant adds the open-before-retrieve pairs and tolerates closing.
TaskSpec make_stew_task(const std::vector<std::string>& ingredients, CatalogVariant variant);

/// All non-empty subsets of the stew ingredients, in canonical order within
/// each subset; 31 of them.
std::vector<std::vector<std::string>> ingredient_combinations();

/// `{ 1:"...", 2:"...", }`
std::string render_actions(const ActionCatalog& catalog);

std::string build_prompt(const TaskSpec& task, const ActionCatalog& catalog, PromptTemplate tmpl);

struct Plan {
  std::vector<int> keys;
  std::string raw_response;
};

class PlanParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NoListError : public PlanParseError {
 public:
  NoListError() : PlanParseError("response contains no bracketed integer list") {}
};
class OutOfCatalogError : public PlanParseError {
 public:
  explicit OutOfCatalogError(int key)
      : PlanParseError("key " + std::to_string(key) + " is not in the action catalog"), key_(key) {}
  [[nodiscard]] int key() const { return key_; }

 private:
  int key_;
};

/// First well-formed `[int, int, ...]` in the text. Fences and prose around
/// it are ignored.
Plan parse_plan(const std::string& response, const ActionCatalog& catalog);

/// `[1, 3, 5]`
std::string render_plan(const std::vector<int>& keys);

struct Verdict {
  bool success = false;
  std::vector<int> missing;
  std::vector<int> extra;
  /// Retrieval keys that appear before their container was opened.
  std::vector<int> order_violation;
  /// Fraction of required ingredients whose retrieval key appears.
  double recall = 0.0;
};

Verdict validate_plan(const Plan& plan, const TaskSpec& task);

// --- clients -----------------------------------------------------------

struct LlmRequest {
  std::string prompt;
  /// Opaque image payloads forwarded unchanged (PNG/JPEG bytes).
  std::vector<std::string> images;
  PromptTemplate tmpl = PromptTemplate::basic;
  /// Set by plan_task for scripting mocks; never sent over the wire.
  std::vector<std::string> ingredients;
  CatalogVariant variant = CatalogVariant::skills_only;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Throws ClientError on transport failure after retries.
  virtual std::string send(const LlmRequest& request) = 0;
};

/// Deterministic client for offline runs. Scripted responses take priority;
/// otherwise the responder is asked; otherwise the correct plan is returned.
class MockClient : public LlmClient {
 public:
  using Responder = std::function<std::string(const LlmRequest&, long call_index)>;

  MockClient() = default;
  explicit MockClient(Responder responder) : responder_(std::move(responder)) {}

  void script(PromptTemplate tmpl, const std::vector<std::string>& ingredients, std::string response);
  std::string send(const LlmRequest& request) override;
  [[nodiscard]] long calls() const { return calls_; }

 private:
  std::map<std::pair<PromptTemplate, std::vector<std::string>>, std::string> scripted_;
  Responder responder_;
  long calls_ = 0;
};

/// Response that a perfect planner would give for this request.
std::string oracle_response(const LlmRequest& request);

struct HttpClientConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o";
  double timeout_s = 60.0;
  int retries = 2;
  /// Name of the environment variable holding the bearer token.
  std::string credential_env = "VQSKILL_LLM_API_KEY";
};

/// Chat-completions style HTTP client. Retries transport errors, 429 and 5xx.
class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(HttpClientConfig cfg);
  std::string send(const LlmRequest& request) override;

 private:
  HttpClientConfig cfg_;
  std::string token_;
};

// --- runs ----------------------------------------------------------------

struct TrialRecord {
  CatalogVariant variant = CatalogVariant::skills_only;
  std::vector<std::string> ingredients;
  int trial = 0;
  std::string prompt;
  std::string response;
  Plan plan;
  Verdict verdict;
  /// Set when the response could not be parsed; the trial counts as failed.
  std::optional<std::string> parse_error;
};

TrialRecord plan_task(LlmClient& client, const TaskSpec& task, const ActionCatalog& catalog, PromptTemplate tmpl,
                      const std::vector<std::string>& images = {});

struct VariantScore {
  CatalogVariant variant = CatalogVariant::skills_only;
  int trials = 0;
  int successes = 0;
  double recall_sum = 0.0;

  [[nodiscard]] double success_rate() const { return trials ? static_cast<double>(successes) / trials : 0.0; }
  [[nodiscard]] double mean_recall() const { return trials ? recall_sum / trials : 0.0; }
};

struct BenchmarkOptions {
  std::vector<CatalogVariant> variants{CatalogVariant::skills_only};
  int trials_per_combination = 1;
  PromptTemplate tmpl = PromptTemplate::basic;
  std::vector<std::string> images;
  /// When set, every finished trial is appended here as one JSON line.
  std::optional<std::filesystem::path> trial_log;
};

struct BenchmarkReport {
  std::vector<VariantScore> scores;
  std::vector<TrialRecord> trials;
  /// Client failure that stopped the run; trials so far are kept.
  std::optional<std::string> error;
  int error_attempts = 0;
};

BenchmarkReport run_benchmark(LlmClient& client, const BenchmarkOptions& opt);

/// Columns per catalog variant, rows for strict success and recall.
std::string format_benchmark_table(const BenchmarkReport& report);

std::string trial_record_json(const TrialRecord& r);

}  // namespace vqskill
