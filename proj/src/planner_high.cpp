#include "vqskill/planner_high.hpp"

#include "vqskill/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace vqskill {

namespace {

const std::map<int, std::string> kSkills = {
    {1, "retrieve the object in the right cupboard and add to the pan"},
    {2, "retrieve the object in the left cupboard and add to the pan"},
    {3, "retrieve the object in the drawer and add to the pan"},
    {4, "retrieve the object on the left of the stove and add to the pan"},
    {5, "retrieve the object on the right of the stove and add to the pan "},
};

const std::map<int, std::string> kRelevant = {
    {1, "retrieve the object in the right cupboard and add it to the pan"},
    {2, "retrieve the object in the left cupboard and add it to the pan"},
    {3, "retrieve the object in the drawer and add it to the pan"},
    {4, "retrieve the object on the left of the stove and add to the pan\""},
    {5, "retrieve the object on the right of the stove and add it to the pan"},
    {6, "put the pan to top right stove"},
    {7, "put the pan to the top left stove"},
    {8, "put the pan on the bottom right stove"},
    {9, "put the pan to the bottom left stove"},
    {10, "close the right cupboard"},
    {11, "close the left cupboard"},
    {12, "close the drawer"},
    {13, "open the drawer"},
    {14, "open the right cupboard"},
    {15, "open the left cupboard"},
    {16, "open the oven"},
    {17, "start the blender"},
    {18, "close the microwave"},
    {19, "open the microwave"},
    {20, "start the microwave at high heat"},
    {21, "start the microwave at low heat"},
    {22, "stop the microwave"},
    {23, "plug in the microwave"},
};

// Key 13 is absent from the published list; the gap is kept.
const std::map<int, std::string> kIrrelevant = {
    {1, "retrieve the object in the right cupboard and add it to the pan"},
    {2, "retrieve the object in the left cupboard and add to the pan"},
    {3, "retrieve the object in the drawer and add to the pan"},
    {4, "retrieve the object on the left of the stove and add to the pan"},
    {5, "retrieve the object on the right of the stove and add to the pan"},
    {6, "charge the phone"},
    {7, "plug in the microwave"},
    {8, "plug in the phone charger"},
    {9, "open the door"},
    {10, "close the door"},
    {11, "synchronize the clock"},
    {12, "fill the glass with water"},
    {14, "wipe the floor"},
    {15, "mop the floor"},
    {16, "vacuum the living room"},
    {17, "vacuum the dining room"},
    {18, "vacuum the bedroom"},
    {19, "vacuum the cellar"},
    {20, "turn on the lights"},
    {21, "turn off the lights"},
    {22, "charge the laptop"},
    {23, "put the kids to sleep"},
    {24, "wash the clothes"},
    {25, "start the washing machine"},
    {26, "start the dryer"},
    {27, "dry the clothes"},
    {28, "hang the clothes"},
    {29, "make the beds"},
    {30, "clean the desk"},
};

const std::map<std::string, int> kIngredientKey = {
    {"tomato", 1}, {"mushroom", 2}, {"potato", 3}, {"oil", 4}, {"salt", 5}};

// Hidden environment: cupboards and drawer start closed.
const std::map<int, int> kOpenBefore = {{1, 14}, {2, 15}, {3, 13}};
const std::set<int> kClosing = {10, 11, 12};

const char* kDefaultHiddenNote =
    "The tomato is located in the right cupboard, the mushroom in the left cupboard, and the potato in the drawer.";

std::string join_ingredients(const std::vector<std::string>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += xs[i];
  }
  return out;
}

}  // namespace

std::string to_string(CatalogVariant v) {
  switch (v) {
    case CatalogVariant::skills_only: return "skills_only";
    case CatalogVariant::with_relevant: return "with_relevant";
    case CatalogVariant::with_irrelevant: return "with_irrelevant";
    case CatalogVariant::both: return "both";
    case CatalogVariant::hidden_env: return "hidden_env";
  }
  return "?";
}

CatalogVariant catalog_variant_from(const std::string& name) {
  for (auto v : {CatalogVariant::skills_only, CatalogVariant::with_relevant, CatalogVariant::with_irrelevant,
                 CatalogVariant::both, CatalogVariant::hidden_env})
    if (to_string(v) == name) return v;
  throw ConfigError("unknown catalog variant '" + name + "'");
}

std::string to_string(PromptTemplate t) {
  switch (t) {
    case PromptTemplate::basic: return "basic";
    case PromptTemplate::hidden_prior: return "hidden_prior";
    case PromptTemplate::exploration: return "exploration";
  }
  return "?";
}

PromptTemplate prompt_template_from(const std::string& name) {
  for (auto t : {PromptTemplate::basic, PromptTemplate::hidden_prior, PromptTemplate::exploration})
    if (to_string(t) == name) return t;
  throw ConfigError("unknown prompt template '" + name + "'");
}

ActionCatalog make_catalog(CatalogVariant v) {
  ActionCatalog c;
  c.variant = v;
  switch (v) {
    case CatalogVariant::skills_only:
      c.actions = kSkills;
      break;
    case CatalogVariant::with_relevant:
      c.actions = kRelevant;
      break;
    case CatalogVariant::with_irrelevant:
      c.actions = kIrrelevant;
      break;
    case CatalogVariant::both: {
      // Skills and household actions first, then the unrelated chores
      // renumbered after them; the microwave plug appears once.
      c.actions = kRelevant;
      int next = 24;
      for (const auto& [k, text] : kIrrelevant) {
        if (k <= 5) continue;
        const bool dup = std::any_of(c.actions.begin(), c.actions.end(), [&](const auto& kv) { return kv.second == text; });
        if (!dup) c.actions[next++] = text;
      }
      break;
    }
    case CatalogVariant::hidden_env:
      for (const auto& [k, text] : kRelevant)
        if (k <= 5 || (k >= 10 && k <= 15)) c.actions[k] = text;
      break;
  }
  return c;
}

const std::vector<std::string>& stew_ingredients() {
  static const std::vector<std::string> xs{"tomato", "mushroom", "potato", "salt", "oil"};
  return xs;
}

TaskSpec make_stew_task(const std::vector<std::string>& ingredients, CatalogVariant variant) {
  if (ingredients.empty()) throw ConfigError("a stew needs at least one ingredient");
  TaskSpec t;
  t.ingredients = ingredients;
  for (const auto& ing : ingredients) {
    const auto it = kIngredientKey.find(ing);
    if (it == kIngredientKey.end()) throw ConfigError("unknown ingredient '" + ing + "'");
    t.ingredient_to_key[ing] = it->second;
  }
  if (variant == CatalogVariant::hidden_env) {
    t.requires_open = kOpenBefore;
    t.tolerated = kClosing;
  }
  return t;
}

std::vector<std::vector<std::string>> ingredient_combinations() {
  const auto& all = stew_ingredients();
  std::vector<std::vector<std::string>> out;
  for (unsigned mask = 1; mask < (1u << all.size()); ++mask) {
    std::vector<std::string> combo;
    for (std::size_t i = 0; i < all.size(); ++i)
      if (mask & (1u << i)) combo.push_back(all[i]);
    out.push_back(std::move(combo));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
  return out;
}

std::string render_actions(const ActionCatalog& catalog) {
  std::string out = "{ ";
  for (const auto& [k, text] : catalog.actions) out += std::to_string(k) + ":\"" + text + "\", ";
  out += "}";
  return out;
}

std::string build_prompt(const TaskSpec& task, const ActionCatalog& catalog, PromptTemplate tmpl) {
  if (catalog.actions.empty()) throw ConfigError("build_prompt: empty action catalog");
  if (task.ingredients.empty()) throw ConfigError("build_prompt: no ingredients");
  const std::string ing = join_ingredients(task.ingredients);
  const std::string actions = render_actions(catalog);
  switch (tmpl) {
    case PromptTemplate::basic:
      return "Given the robotic environment in the image, how can the robot make a stew using the following "
             "ingredients: " +
             ing + "? The available actions are: \n" + actions +
             "\nSelect the necessary actions to achieve the goal and return only their corresponding keys in a list, "
             "formatted as JSON. No explanation, descriptions, or additional output is needed.";
    case PromptTemplate::hidden_prior:
      return "Given the robotic environment in the image, how can the robot make a stew using the following "
             "ingredients: " +
             ing + "? " + task.environment_note.value_or(kDefaultHiddenNote) + " The available actions are: " +
             actions +
             ". Return only the keys of the actions necessary to complete the task in the correct sequence, "
             "formatted as a list in JSON. No additional text or explanations are required.";
    case PromptTemplate::exploration:
      return "Given the robotic environment in the image, how can the robot make a stew made of " + ing +
             "? Only the following actions can be used: " + actions +
             ". You are free to explore the environment using the given actions and ask for an updated version of "
             "the environment. ";
  }
  throw ConfigError("build_prompt: unknown template");
}

namespace {

// Parses `[ int (, int)* ]` or `[ ]` starting at text[pos] == '['.
std::optional<std::vector<int>> parse_list_at(const std::string& s, std::size_t pos, std::size_t& end) {
  std::size_t i = pos + 1;
  auto skip_ws = [&] {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  };
  std::vector<int> keys;
  skip_ws();
  if (i < s.size() && s[i] == ']') {
    end = i + 1;
    return keys;
  }
  for (;;) {
    skip_ws();
    const std::size_t start = i;
    if (i < s.size() && (s[i] == '-' || s[i] == '+')) ++i;
    const std::size_t digits = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i == digits || i - digits > 9) return std::nullopt;
    keys.push_back(std::stoi(s.substr(start, i - start)));
    skip_ws();
    if (i >= s.size()) return std::nullopt;
    if (s[i] == ',') {
      ++i;
      continue;
    }
    if (s[i] == ']') {
      end = i + 1;
      return keys;
    }
    return std::nullopt;
  }
}

}  // namespace

Plan parse_plan(const std::string& response, const ActionCatalog& catalog) {
  for (std::size_t pos = response.find('['); pos != std::string::npos; pos = response.find('[', pos + 1)) {
    std::size_t end = 0;
    auto keys = parse_list_at(response, pos, end);
    if (!keys) continue;
    for (int k : *keys)
      if (!catalog.contains(k)) throw OutOfCatalogError(k);
    return Plan{std::move(*keys), response};
  }
  throw NoListError();
}

std::string render_plan(const std::vector<int>& keys) {
  std::string out = "[";
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(keys[i]);
  }
  return out + "]";
}

Verdict validate_plan(const Plan& plan, const TaskSpec& task) {
  std::set<int> required;
  for (const auto& ing : task.ingredients) {
    const auto it = task.ingredient_to_key.find(ing);
    if (it == task.ingredient_to_key.end()) throw ConfigError("validate_plan: no key for ingredient '" + ing + "'");
    required.insert(it->second);
  }
  std::set<int> opens;
  for (int r : required)
    if (const auto it = task.requires_open.find(r); it != task.requires_open.end()) opens.insert(it->second);

  Verdict v;
  std::set<int> seen;
  for (int k : plan.keys) {
    const bool first = seen.insert(k).second;
    if (required.count(k)) {
      if (!first) {
        v.extra.push_back(k);
        continue;
      }
      if (const auto it = task.requires_open.find(k); it != task.requires_open.end() && !seen.count(it->second))
        v.order_violation.push_back(k);
    } else if (opens.count(k)) {
      if (!first) v.extra.push_back(k);
    } else if (!task.tolerated.count(k)) {
      v.extra.push_back(k);
    }
  }
  int hit = 0;
  for (int r : required) {
    if (seen.count(r))
      ++hit;
    else
      v.missing.push_back(r);
  }
  for (int o : opens)
    if (!seen.count(o)) v.missing.push_back(o);
  v.recall = required.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(required.size());
  v.success = v.missing.empty() && v.extra.empty() && v.order_violation.empty();
  return v;
}

// --- mock --------------------------------------------------------------------

std::string oracle_response(const LlmRequest& request) {
  const TaskSpec task = make_stew_task(request.ingredients, request.variant);
  std::vector<int> keys;
  for (const auto& ing : request.ingredients) {
    const int k = task.ingredient_to_key.at(ing);
    if (const auto it = task.requires_open.find(k); it != task.requires_open.end()) keys.push_back(it->second);
    keys.push_back(k);
  }
  return render_plan(keys);
}

void MockClient::script(PromptTemplate tmpl, const std::vector<std::string>& ingredients, std::string response) {
  scripted_[{tmpl, ingredients}] = std::move(response);
}

std::string MockClient::send(const LlmRequest& request) {
  const long index = calls_++;
  if (const auto it = scripted_.find({request.tmpl, request.ingredients}); it != scripted_.end()) return it->second;
  if (responder_) return responder_(request, index);
  return oracle_response(request);
}

// --- runs ----------------------------------------------------------------

TrialRecord plan_task(LlmClient& client, const TaskSpec& task, const ActionCatalog& catalog, PromptTemplate tmpl,
                      const std::vector<std::string>& images) {
  TrialRecord rec;
  rec.variant = catalog.variant;
  rec.ingredients = task.ingredients;
  rec.prompt = build_prompt(task, catalog, tmpl);

  LlmRequest req;
  req.prompt = rec.prompt;
  req.images = images;
  req.tmpl = tmpl;
  req.ingredients = task.ingredients;
  req.variant = catalog.variant;
  rec.response = client.send(req);

  try {
    rec.plan = parse_plan(rec.response, catalog);
    rec.verdict = validate_plan(rec.plan, task);
  } catch (const PlanParseError& e) {
    rec.parse_error = e.what();
    rec.plan.raw_response = rec.response;
    rec.verdict = validate_plan(Plan{{}, rec.response}, task);
  }
  return rec;
}

std::string trial_record_json(const TrialRecord& r) {
  nlohmann::json j;
  j["variant"] = to_string(r.variant);
  j["ingredients"] = r.ingredients;
  j["trial"] = r.trial;
  j["prompt"] = r.prompt;
  j["response"] = r.response;
  j["keys"] = r.plan.keys;
  j["success"] = r.verdict.success;
  j["missing"] = r.verdict.missing;
  j["extra"] = r.verdict.extra;
  j["order_violation"] = r.verdict.order_violation;
  j["recall"] = r.verdict.recall;
  j["parse_error"] = r.parse_error ? nlohmann::json(*r.parse_error) : nlohmann::json(nullptr);
  return j.dump();
}

BenchmarkReport run_benchmark(LlmClient& client, const BenchmarkOptions& opt) {
  if (opt.variants.empty()) throw ConfigError("run_benchmark: no catalog variants");
  if (opt.trials_per_combination < 1) throw ConfigError("run_benchmark: trials per combination must be >= 1");
  std::ofstream log;
  if (opt.trial_log) {
    log.open(*opt.trial_log, std::ios::app);
    if (!log) throw DataError("cannot open trial log " + opt.trial_log->string());
  }

  BenchmarkReport rep;
  const auto combos = ingredient_combinations();
  for (CatalogVariant v : opt.variants) {
    const ActionCatalog catalog = make_catalog(v);
    VariantScore score;
    score.variant = v;
    for (const auto& combo : combos) {
      const TaskSpec task = make_stew_task(combo, v);
      for (int t = 0; t < opt.trials_per_combination; ++t) {
        TrialRecord rec;
        try {
          rec = plan_task(client, task, catalog, opt.tmpl, opt.images);
        } catch (const ClientError& e) {
          rep.error = e.what();
          rep.error_attempts = e.attempts();
          if (score.trials) rep.scores.push_back(score);
          return rep;
        }
        rec.trial = t;
        score.trials += 1;
        score.successes += rec.verdict.success ? 1 : 0;
        score.recall_sum += rec.verdict.recall;
        if (log) log << trial_record_json(rec) << '\n' << std::flush;
        rep.trials.push_back(std::move(rec));
      }
    }
    rep.scores.push_back(score);
  }
  return rep;
}

std::string format_benchmark_table(const BenchmarkReport& report) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-22s", "");
  os << buf;
  for (const auto& s : report.scores) {
    std::snprintf(buf, sizeof buf, " | %15s", to_string(s.variant).c_str());
    os << buf;
  }
  os << '\n';
  auto row = [&](const char* name, auto&& value) {
    std::snprintf(buf, sizeof buf, "%-22s", name);
    os << buf;
    for (const auto& s : report.scores) {
      std::snprintf(buf, sizeof buf, " | %14.2f%%", 100.0 * value(s));
      os << buf;
    }
    os << '\n';
  };
  row("planning performance", [](const VariantScore& s) { return s.success_rate(); });
  row("ingredient recall", [](const VariantScore& s) { return s.mean_recall(); });
  std::snprintf(buf, sizeof buf, "%-22s", "trials");
  os << buf;
  for (const auto& s : report.scores) {
    std::snprintf(buf, sizeof buf, " | %15d", s.trials);
    os << buf;
  }
  os << '\n';
  return os.str();
}

}  // namespace vqskill
