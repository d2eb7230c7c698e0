#include "vqskill/errors.hpp"
#include "vqskill/pipeline.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

using namespace vqskill;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vqskill_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(VQSKILL_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small, fast settings for end-to-end runs.
fs::path tiny_config(const fs::path& dir,
                     const std::string& training = R"({"iterations": 300, "hidden": 16, "d_z": 4})") {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << R"({"kitchen": {"demos_per_skill": 4}, "batch": {"models": 2}, "jobs": 2, "training": )"
                   << training << "}";
  return p;
}

PipelineConfig tiny_cfg(const fs::path& out) {
  PipelineConfig cfg = load_config(tiny_config(out));
  cfg.out = out;
  return cfg;
}

}  // namespace

TEST_CASE("gen-data is reproducible from config and seed") {
  const fs::path d = scratch("gen");
  const fs::path cfg = tiny_config(d);
  REQUIRE(run("--config " + cfg.string() + " --seed 7 --out " + (d / "a").string() + " gen-data") == 0);
  REQUIRE(run("--config " + cfg.string() + " --seed 7 --out " + (d / "b").string() + " gen-data") == 0);
  REQUIRE(run("--config " + cfg.string() + " --seed 8 --out " + (d / "c").string() + " gen-data") == 0);
  const std::string a = sha256_file(d / "a" / "dataset.jsonl");
  CHECK(a == sha256_file(d / "b" / "dataset.jsonl"));
  CHECK(a != sha256_file(d / "c" / "dataset.jsonl"));
  const json s = read_json(d / "a" / "gen-data.summary.json");
  CHECK(s["sha256"] == a);
  CHECK(s["demos"] == 20);
  // The effective configuration lands beside the outputs, flags applied.
  CHECK(read_json(d / "a" / "effective_config.json")["seed"] == 7);
}

TEST_CASE("sha256 of a known string") {
  const fs::path d = scratch("sha");
  std::ofstream(d / "abc") << "abc";
  CHECK(sha256_file(d / "abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("the default dataset has 100 demonstrations per skill") {
  const fs::path d = scratch("default");
  REQUIRE(run("--out " + d.string() + " gen-data") == 0);
  const json s = read_json(d / "gen-data.summary.json");
  CHECK(s["demos"] == 500);
  for (const auto& [skill, n] : s["per_skill"].items()) CHECK(n == 100);
}

TEST_CASE("uneven demonstration counts are accepted") {
  const fs::path d = scratch("uneven");
  REQUIRE(run("--out " + d.string() + " gen-data --demos-per-skill 15,40,100,33,70") == 0);
  const json s = read_json(d / "gen-data.summary.json");
  const auto& ps = s["per_skill"];
  CHECK(ps["right_cupboard"] == 15);
  CHECK(ps["left_cupboard"] == 40);
  CHECK(ps["drawer"] == 100);
  CHECK(ps["stove_left"] == 33);
  CHECK(ps["stove_right"] == 70);
  CHECK(s["demos"] == 258);
}

TEST_CASE("exit codes follow the failure class") {
  const fs::path d = scratch("codes");
  std::ofstream(d / "bad.json") << R"({"training": {"itrations": 10}})";
  CHECK(run("--config " + (d / "bad.json").string() + " --out " + d.string() + " gen-data") == 2);
  CHECK(run("--out " + d.string() + " gen-data --demos-per-skill 1,2") == 2);
  CHECK(run("--out " + d.string() + " no-such-command") == 2);
  CHECK(run("--out " + d.string() + " train-batch --data " + (d / "missing.jsonl").string()) == 3);
  std::ofstream(d / "junk.jsonl") << "{not json\n";
  CHECK(run("--out " + d.string() + " train-batch --data " + (d / "junk.jsonl").string()) == 3);
  CHECK(run("--out " + d.string() + " discover --model " + (d / "junk.jsonl").string() + " --data " +
            (d / "junk.jsonl").string()) == 3);
}

TEST_CASE("unknown configuration fields are rejected before any work") {
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"sede": 1})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"planner": {"step": 0.1}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"training": {"iterations": "many"}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"jobs": 0})")).validate(), ConfigError);
  const PipelineConfig c = config_from_json(json::parse(R"({"sweep": {"sizes": [3, 5]}, "seed": 4})"));
  CHECK(c.sweep_sizes == std::vector<int>{3, 5});
  CHECK(c.seed == 4);
  // Round trip through the saved form.
  const PipelineConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
}

TEST_CASE("a training error inside the batch is reported with exit code 4") {
  const fs::path d = scratch("trainerr");
  const fs::path cfg = tiny_config(d, R"({"iterations": 50, "lr": 1e300, "hidden": 16, "d_z": 4})");
  REQUIRE(run("--config " + cfg.string() + " --out " + d.string() + " gen-data") == 0);
  CHECK(run("--config " + cfg.string() + " --out " + d.string() + " train-batch --data " +
            (d / "dataset.jsonl").string()) == 4);
  const json s = read_json(d / "train-batch.summary.json");
  CHECK(s["failures"].size() == 2);
}

TEST_CASE("train-batch is reproducible, ranked and resumable") {
  const fs::path d = scratch("batch");
  const fs::path cfg = tiny_config(d);
  const std::string common = "--config " + cfg.string() + " --seed 3 ";
  REQUIRE(run(common + "--out " + d.string() + " gen-data") == 0);
  const std::string data = (d / "dataset.jsonl").string();
  REQUIRE(run(common + "--out " + (d / "a").string() + " train-batch --data " + data) == 0);
  REQUIRE(run(common + "--out " + (d / "b").string() + " --jobs 1 train-batch --data " + data) == 0);
  for (int seed : {3, 4}) {
    const std::string f = "model_seed" + std::to_string(seed) + ".ckpt";
    CHECK(sha256_file(d / "a" / "models" / f) == sha256_file(d / "b" / "models" / f));
  }
  const json s = read_json(d / "a" / "train-batch.summary.json");
  REQUIRE(s["models"].size() == 2);
  CHECK(s["models"][0]["combined_loss"].get<double>() <= s["models"][1]["combined_loss"].get<double>());
  CHECK(fs::exists(d / "a" / "rank.txt"));

  // Resume: the finished models are kept, only the new seed is trained.
  const auto before = fs::last_write_time(d / "a" / "models" / "model_seed3.ckpt");
  REQUIRE(run(common + "--out " + (d / "a").string() + " train-batch --models 3 --data " + data) == 0);
  CHECK(fs::last_write_time(d / "a" / "models" / "model_seed3.ckpt") == before);
  const json r = read_json(d / "a" / "train-batch.summary.json");
  CHECK(r["trained"] == 1);
  CHECK(r["models"].size() == 3);
  CHECK(read_json(d / "a" / "models" / "manifest.json")["models"].size() == 3);
}

TEST_CASE("discover reports, falls back to a histogram and plots on the time grid") {
  const fs::path d = scratch("discover");
  PipelineConfig cfg = tiny_cfg(d);
  cfg.batch_models = 1;
  cmd_gen_data(cfg);
  cmd_train_batch(cfg, {d / "dataset.jsonl"});
  const fs::path model = d / "models" / "model_seed0.ckpt";

  const json labeled = cmd_discover(cfg, {model, d / "dataset.jsonl", true});
  CHECK(labeled["mode"] == "labeled");
  CHECK(labeled["report"].contains("perfect"));
  const std::string svg = slurp(d / "prototypes.svg");
  const std::regex poly("points=\"([^\"]*)\"");
  int polylines = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), poly); it != std::sregex_iterator(); ++it) {
    const std::string pts = (*it)[1];
    CHECK(std::count(pts.begin(), pts.end(), ',') == cfg.planner.grid_length);
    ++polylines;
  }
  CHECK(polylines == 2 * labeled["prototypes"].get<int>());

  write_dataset(strip_labels(read_dataset(d / "dataset.jsonl")), d / "unlabeled.jsonl");
  const json hist = cmd_discover(cfg, {model, d / "unlabeled.jsonl", false});
  CHECK(hist["mode"] == "histogram");
  CHECK_FALSE(hist.contains("report"));
  int total = 0;
  for (const auto& [k, n] : hist["histogram"].items()) total += n.get<int>();
  CHECK(total == 20);
}

TEST_CASE("finetune and plan run end to end with the mock client") {
  const fs::path d = scratch("plan");
  PipelineConfig cfg = tiny_cfg(d);
  cfg.batch_models = 1;
  cfg.planner.max_iters = 50;
  cmd_gen_data(cfg);
  cmd_train_batch(cfg, {d / "dataset.jsonl"});

  // One vector per skill, so every retrieval key resolves to a vector.
  const Dataset ds = read_dataset(d / "dataset.jsonl");
  json asg = json::object();
  std::map<std::string, int> index;
  for (const auto& demo : ds.demos) {
    const int k = index.emplace(*demo.skill_label, static_cast<int>(index.size())).first->second;
    asg[demo.id] = k;
  }
  std::ofstream(d / "labels_assignment.json") << asg.dump();

  const json ft = cmd_finetune(cfg, {d / "models" / "model_seed0.ckpt", d / "dataset.jsonl"});
  CHECK(ft["nearest_neighbor_calls"] == 0);
  CHECK(fs::exists(d / "finetuned.ckpt"));

  PlanArgs args;
  args.model = d / "finetuned.ckpt";
  args.data = d / "dataset.jsonl";
  args.assignment = d / "labels_assignment.json";
  args.ingredients = {"tomato", "salt"};
  args.objects["tomato"] = Eigen::Vector3d(0.55, -0.35, 0.45);
  MockClient client;
  const json s = cmd_plan(cfg, args, client);
  CHECK(s["verdict"]["success"] == true);
  CHECK(s["keys"] == json::array({1, 5}));
  REQUIRE(s["results"].size() == 2);
  for (const auto& r : s["results"]) {
    CHECK(r.contains("k"));
    CHECK(r.contains("iterations"));
    CHECK(r.contains("final_error"));
    CHECK(r["converged"] == (r["final_error"].get<double>() < cfg.planner.tolerance));
  }
  CHECK(s["steps"][0]["skill"] == "right_cupboard");
  CHECK(s["steps"][0]["object_pose"] == json::array({0.55, -0.35, 0.45}));
  CHECK(s["steps"][1]["skill"] == "stove_right");
  const Dataset traj = read_dataset(d / "plan_trajectories.jsonl");
  REQUIRE(traj.demos.size() == 2);
  CHECK(traj.demos[0].points.size() == static_cast<std::size_t>(cfg.planner.grid_length));
  CHECK(slurp(d / "prompt.txt").find("tomato, salt") != std::string::npos);
}

TEST_CASE("benchmark with the mock scores every combination and a dead endpoint exits 5") {
  const fs::path d = scratch("bench");
  REQUIRE(run("--out " + d.string() + " benchmark --catalogs skills_only,both") == 0);
  const json s = read_json(d / "benchmark.summary.json");
  REQUIRE(s["scores"].size() == 2);
  for (const auto& sc : s["scores"]) {
    CHECK(sc["trials"] == 31);
    CHECK(sc["success_rate"] == 1.0);
  }

  std::ofstream(d / "http.json") << R"({"client": {"kind": "http", "endpoint": "http://127.0.0.1:9/v1/chat",
    "retries": 0, "timeout_s": 2, "credential_env": "VQSKILL_TEST_KEY"}})";
  ::setenv("VQSKILL_TEST_KEY", "k", 1);
  CHECK(run("--config " + (d / "http.json").string() + " --out " + d.string() + " benchmark") == 5);
  ::unsetenv("VQSKILL_TEST_KEY");
  CHECK(run("--config " + (d / "http.json").string() + " --out " + d.string() + " benchmark") == 2);
}

TEST_CASE("sweep writes one column per codebook size") {
  const fs::path d = scratch("sweep");
  PipelineConfig cfg = tiny_cfg(d);
  cfg.training.iterations = 100;
  cfg.sweep_batch = 1;
  cmd_gen_data(cfg);
  const json s = cmd_sweep(cfg, {d / "dataset.jsonl"});
  REQUIRE(s["rows"].size() == 4);
  std::vector<int> ks;
  for (const auto& r : s["rows"]) ks.push_back(r["K"]);
  CHECK(ks == std::vector<int>{3, 5, 10, 20});
  const std::string table = slurp(d / "sweep.txt");
  const std::string first = table.substr(0, table.find('\n'));
  for (const char* k : {"3", "5", "10", "20"}) CHECK(first.find(k) != std::string::npos);
}

TEST_CASE("gradcheck exits 0 and reports the worst error") {
  const fs::path d = scratch("gradcheck");
  CHECK(run("--out " + d.string() + " gradcheck --instances 20") == 0);
  const json s = read_json(d / "gradcheck.summary.json");
  CHECK(s["passed"] == true);
  CHECK(s["families"].size() == 5);
  CHECK(s["max_rel_err"].get<double>() < 1e-4);
}
