// vqskill: skill discovery and bi-level planning from the command line.
//
// Exit codes: 0 ok, 1 unexpected, 2 config, 3 data, 4 training, 5 client.
// A command that ran but failed its own check (gradcheck over threshold,
// plan verdict unsuccessful) also exits 1.

#include "vqskill/errors.hpp"
#include "vqskill/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

using namespace vqskill;
namespace fs = std::filesystem;

namespace {

std::vector<int> parse_int_list(const std::string& text, const char* what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// name=x,y,z
std::pair<std::string, Eigen::Vector3d> parse_object(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("--object expects name=x,y,z, got '" + text + "'");
  std::vector<double> v;
  std::stringstream ss(text.substr(eq + 1));
  std::string item;
  try {
    while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  } catch (const std::exception&) {
    throw ConfigError("--object expects name=x,y,z, got '" + text + "'");
  }
  if (v.size() != 3) throw ConfigError("--object expects name=x,y,z, got '" + text + "'");
  return {text.substr(0, eq), Eigen::Vector3d(v[0], v[1], v[2])};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skill discovery and bi-level planning with a vector-quantized trajectory model"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> jobs;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "base random seed");
  app.add_option("--out", out, "output directory");
  app.add_option("--jobs", jobs, "parallel jobs for batch commands");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic kitchen dataset");
  std::string demos_per_skill;
  gen->add_option("--demos-per-skill", demos_per_skill, "one count, or one per skill: 15,40,100,33,70");

  std::string data;
  auto* tb = app.add_subcommand("train-batch", "train a batch of models with consecutive seeds");
  std::optional<int> models;
  std::optional<int> iterations;
  tb->add_option("--data", data, "dataset file")->required();
  tb->add_option("--models", models, "number of models");
  tb->add_option("--iterations", iterations, "training iterations per model");
  std::optional<int> codebook_size;
  tb->add_option("--codebook-size", codebook_size, "number of skill vectors K");

  std::string model;
  auto* disc = app.add_subcommand("discover", "cluster report, prototypes and plots for a model");
  bool plots = false;
  disc->add_option("--model", model, "checkpoint")->required();
  disc->add_option("--data", data, "dataset file")->required();
  disc->add_flag("--plots", plots, "write an SVG of the skill prototypes");

  auto* ft = app.add_subcommand("finetune", "self-supervised fine-tuning on the frozen assignment");
  ft->add_option("--model", model, "phase-1 checkpoint")->required();
  ft->add_option("--data", data, "dataset file")->required();
  ft->add_option("--iterations", iterations, "training iterations");

  auto* plan = app.add_subcommand("plan", "plan a stew task with the language model and the skill vectors");
  std::string ingredients = "tomato";
  std::string variant = "skills_only";
  std::string tmpl = "basic";
  std::string assignment;
  std::vector<std::string> images;
  std::vector<std::string> objects;
  std::optional<std::string> client_kind;
  plan->add_option("--model", model, "checkpoint")->required();
  plan->add_option("--data", data, "labeled dataset used to name the vectors")->required();
  plan->add_option("--assignment", assignment, "assignment.json from discover or finetune");
  plan->add_option("--ingredients", ingredients, "comma-separated ingredients");
  plan->add_option("--catalog", variant, "skills_only|with_relevant|with_irrelevant|both|hidden_env");
  plan->add_option("--template", tmpl, "basic|hidden_prior|exploration");
  plan->add_option("--image", images, "image attached to the request (repeatable)");
  plan->add_option("--object", objects, "object position name=x,y,z (repeatable)");
  plan->add_option("--client", client_kind, "mock|http");

  auto* bench = app.add_subcommand("benchmark", "score the planner on every ingredient combination");
  std::string variants = "skills_only";
  int trials = 1;
  bench->add_option("--catalogs", variants, "comma-separated catalog variants");
  bench->add_option("--trials", trials, "trials per combination");
  bench->add_option("--template", tmpl, "basic|hidden_prior|exploration");
  bench->add_option("--client", client_kind, "mock|http");

  auto* sweep = app.add_subcommand("sweep", "codebook-size sweep with clustering scores");
  std::string sizes;
  std::optional<int> sweep_batch;
  sweep->add_option("--data", data, "labeled dataset file")->required();
  sweep->add_option("--sizes", sizes, "codebook sizes, e.g. 3,5,10,20");
  sweep->add_option("--batch", sweep_batch, "models per size");
  sweep->add_option("--iterations", iterations, "training iterations per model");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  int instances = 100;
  gc->add_option("--instances", instances, "random instances per family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    if (jobs) cfg.jobs = *jobs;
    if (models) cfg.batch_models = *models;
    if (iterations) cfg.training.iterations = *iterations;
    if (codebook_size) cfg.training.codebook_size = *codebook_size;
    if (!demos_per_skill.empty()) cfg.kitchen.demos_per_skill = parse_int_list(demos_per_skill, "demos-per-skill");
    if (!sizes.empty()) cfg.sweep_sizes = parse_int_list(sizes, "sizes");
    if (sweep_batch) cfg.sweep_batch = *sweep_batch;
    if (client_kind) cfg.client_kind = *client_kind;
    cfg.validate();

    nlohmann::json summary;
    bool ok = true;
    if (gen->parsed()) {
      summary = cmd_gen_data(cfg);
    } else if (tb->parsed()) {
      summary = cmd_train_batch(cfg, {data});
    } else if (disc->parsed()) {
      summary = cmd_discover(cfg, {model, data, plots});
    } else if (ft->parsed()) {
      summary = cmd_finetune(cfg, {model, data});
    } else if (plan->parsed()) {
      PlanArgs args;
      args.model = model;
      args.data = data;
      if (!assignment.empty()) args.assignment = assignment;
      args.ingredients = split_names(ingredients);
      args.variant = catalog_variant_from(variant);
      args.tmpl = prompt_template_from(tmpl);
      for (const auto& img : images) args.images.emplace_back(img);
      for (const auto& o : objects) args.objects.insert(parse_object(o));
      auto client = make_client(cfg);
      summary = cmd_plan(cfg, args, *client);
      ok = summary["verdict"]["success"].get<bool>();
    } else if (bench->parsed()) {
      BenchmarkArgs args;
      args.variants.clear();
      for (const auto& v : split_names(variants)) args.variants.push_back(catalog_variant_from(v));
      args.trials = trials;
      args.tmpl = prompt_template_from(tmpl);
      auto client = make_client(cfg);
      summary = cmd_benchmark(cfg, args, *client);
      std::cout << summary["table"].get<std::string>();
      return 0;
    } else if (sweep->parsed()) {
      summary = cmd_sweep(cfg, {data});
      std::cout << summary["table"].get<std::string>();
      return 0;
    } else if (gc->parsed()) {
      summary = cmd_gradcheck(cfg, instances);
      for (const auto& f : summary["families"])
        std::cout << f["name"].get<std::string>() << "  max rel err " << f["max_rel_err"].get<double>() << '\n';
      std::cout << "max rel err " << summary["max_rel_err"].get<double>() << '\n';
      ok = summary["passed"].get<bool>();
    }
    std::cout << summary.dump(2) << '\n';
    return ok ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return 4;
  } catch (const ClientError& e) {
    std::cerr << "client error: " << e.what() << '\n';
    return 5;
  } catch (const PlanParseError& e) {
    std::cerr << "plan error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
