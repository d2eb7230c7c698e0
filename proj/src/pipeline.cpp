#include "vqskill/pipeline.hpp"

#include "vqskill/discovery.hpp"
#include "vqskill/errors.hpp"
#include "vqskill/gradcheck.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace vqskill {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// --- config parsing --------------------------------------------------------

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!ok) throw ConfigError("unknown field '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field '" + where + "." + key + "' has the wrong type");
  }
}

Eigen::Vector3d vec3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + " must be a 3-element array");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw ConfigError(where + " must hold numbers");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

json vec3_json(const Eigen::Vector3d& v) { return json::array({v[0], v[1], v[2]}); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

fs::path prepare_out(const PipelineConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw DataError("cannot create output directory " + cfg.out.string() + ": " + ec.message());
  write_json(cfg.out / "effective_config.json", config_to_json(cfg));
  return cfg.out;
}

json finish(const PipelineConfig& cfg, const std::string& command, json summary) {
  summary["command"] = command;
  write_json(cfg.out / (command + ".summary.json"), summary);
  return summary;
}

Dataset training_view(const Dataset& ds) {
  Dataset n = ds.normalized() ? ds : normalize_dataset(ds);
  return n;
}

bool has_labels(const Dataset& ds) {
  return !ds.demos.empty() &&
         std::all_of(ds.demos.begin(), ds.demos.end(), [](const Demonstration& d) { return d.skill_label.has_value(); });
}

json assignment_json(const Assignment& asg) {
  json j = json::object();
  for (const auto& [id, k] : asg) j[id] = k;
  return j;
}

Assignment assignment_from_json(const json& j) {
  Assignment asg;
  try {
    for (const auto& [id, k] : j.items()) asg[id] = k.get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed assignment: ") + e.what());
  }
  return asg;
}

json report_json(const ClusterReport& r) {
  json v2l = json::object();
  for (const auto& [k, l] : r.vector_to_label) v2l[std::to_string(k)] = l;
  json split = json::object();
  for (const auto& [s, ks] : r.per_skill_split) split[s] = std::vector<int>(ks.begin(), ks.end());
  return {{"accuracy", r.accuracy},
          {"perfect", r.perfect},
          {"skill_accuracy", r.skill_accuracy},
          {"codebook_size", r.codebook_size},
          {"vector_to_label", v2l},
          {"per_skill_split", split}};
}

}  // namespace

// --- config ------------------------------------------------------------------

void PipelineConfig::validate() const {
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (batch_models < 1) throw ConfigError("batch.models must be >= 1");
  if (sweep_sizes.empty()) throw ConfigError("sweep.sizes must not be empty");
  for (int k : sweep_sizes)
    if (k < 1) throw ConfigError("sweep sizes must be >= 1");
  if (sweep_batch < 1) throw ConfigError("sweep.batch must be >= 1");
  if (!(planner.tolerance > 0.0) || planner.max_iters < 0 || !(planner.step_size > 0.0) || planner.grid_length < 2)
    throw ConfigError("invalid planner settings");
  if (client_kind != "mock" && client_kind != "http") throw ConfigError("client.kind must be 'mock' or 'http'");
  kitchen.validate();
  training.validate();
}

PipelineConfig config_from_json(const json& j, PipelineConfig c) {
  reject_unknown(j, {"seed", "out", "jobs", "kitchen", "training", "batch", "sweep", "planner", "client"}, "");
  read(j, "seed", c.seed, "");
  if (j.contains("out")) {
    std::string out;
    read(j, "out", out, "");
    c.out = out;
  }
  read(j, "jobs", c.jobs, "");

  if (j.contains("kitchen")) {
    const json& k = j["kitchen"];
    reject_unknown(k,
                   {"skills", "demos_per_skill", "noise_std", "length", "home", "contact_lo", "contact_hi",
                    "transfer_duration", "lift_height"},
                   "kitchen");
    if (k.contains("demos_per_skill")) {
      if (k["demos_per_skill"].is_number_integer())
        c.kitchen.demos_per_skill = {k["demos_per_skill"].get<int>()};
      else
        read(k, "demos_per_skill", c.kitchen.demos_per_skill, "kitchen");
    }
    read(k, "noise_std", c.kitchen.noise_std, "kitchen");
    read(k, "length", c.kitchen.length, "kitchen");
    read(k, "contact_lo", c.kitchen.contact_lo, "kitchen");
    read(k, "contact_hi", c.kitchen.contact_hi, "kitchen");
    read(k, "transfer_duration", c.kitchen.transfer_duration, "kitchen");
    read(k, "lift_height", c.kitchen.lift_height, "kitchen");
    if (k.contains("home")) c.kitchen.home = vec3(k["home"], "kitchen.home");
    if (k.contains("skills")) {
      if (!k["skills"].is_array()) throw ConfigError("kitchen.skills must be an array");
      c.kitchen.skills.clear();
      for (const auto& s : k["skills"]) {
        reject_unknown(s, {"name", "lo", "hi", "sink"}, "kitchen.skills[]");
        SkillSpec spec;
        read(s, "name", spec.name, "kitchen.skills[]");
        if (!s.contains("lo") || !s.contains("hi") || !s.contains("sink"))
          throw ConfigError("kitchen.skills[] needs lo, hi and sink");
        spec.source.lo = vec3(s["lo"], "kitchen.skills[].lo");
        spec.source.hi = vec3(s["hi"], "kitchen.skills[].hi");
        spec.sink = vec3(s["sink"], "kitchen.skills[].sink");
        c.kitchen.skills.push_back(spec);
      }
    }
  }

  if (j.contains("training")) {
    const json& t = j["training"];
    reject_unknown(t,
                   {"beta", "iterations", "n_max", "m_max", "lr", "clip_norm", "codebook_size", "d_z", "hidden",
                    "hidden_layers", "encoder_output_gain"},
                   "training");
    read(t, "beta", c.training.beta, "training");
    read(t, "iterations", c.training.iterations, "training");
    read(t, "n_max", c.training.n_max, "training");
    read(t, "m_max", c.training.m_max, "training");
    read(t, "lr", c.training.lr, "training");
    read(t, "clip_norm", c.training.clip_norm, "training");
    read(t, "codebook_size", c.training.codebook_size, "training");
    read(t, "d_z", c.training.arch.d_z, "training");
    read(t, "hidden", c.training.arch.hidden, "training");
    read(t, "hidden_layers", c.training.arch.hidden_layers, "training");
    read(t, "encoder_output_gain", c.training.arch.encoder_output_gain, "training");
  }
  if (j.contains("batch")) {
    reject_unknown(j["batch"], {"models"}, "batch");
    read(j["batch"], "models", c.batch_models, "batch");
  }
  if (j.contains("sweep")) {
    reject_unknown(j["sweep"], {"sizes", "batch"}, "sweep");
    read(j["sweep"], "sizes", c.sweep_sizes, "sweep");
    read(j["sweep"], "batch", c.sweep_batch, "sweep");
  }
  if (j.contains("planner")) {
    const json& p = j["planner"];
    reject_unknown(p, {"tolerance", "max_iters", "step_size", "grid_length"}, "planner");
    read(p, "tolerance", c.planner.tolerance, "planner");
    read(p, "max_iters", c.planner.max_iters, "planner");
    read(p, "step_size", c.planner.step_size, "planner");
    read(p, "grid_length", c.planner.grid_length, "planner");
  }
  if (j.contains("client")) {
    const json& cl = j["client"];
    reject_unknown(cl, {"kind", "endpoint", "model", "timeout_s", "retries", "credential_env"}, "client");
    read(cl, "kind", c.client_kind, "client");
    read(cl, "endpoint", c.client.endpoint, "client");
    read(cl, "model", c.client.model, "client");
    read(cl, "timeout_s", c.client.timeout_s, "client");
    read(cl, "retries", c.client.retries, "client");
    read(cl, "credential_env", c.client.credential_env, "client");
  }
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const PipelineConfig& c) {
  json skills = json::array();
  for (const auto& s : c.kitchen.skills)
    skills.push_back({{"name", s.name}, {"lo", vec3_json(s.source.lo)}, {"hi", vec3_json(s.source.hi)},
                      {"sink", vec3_json(s.sink)}});
  return {
      {"seed", c.seed},
      {"out", c.out.string()},
      {"jobs", c.jobs},
      {"kitchen",
       {{"skills", skills},
        {"demos_per_skill", c.kitchen.demos_per_skill},
        {"noise_std", c.kitchen.noise_std},
        {"length", c.kitchen.length},
        {"home", vec3_json(c.kitchen.home)},
        {"contact_lo", c.kitchen.contact_lo},
        {"contact_hi", c.kitchen.contact_hi},
        {"transfer_duration", c.kitchen.transfer_duration},
        {"lift_height", c.kitchen.lift_height}}},
      {"training",
       {{"beta", c.training.beta},
        {"iterations", c.training.iterations},
        {"n_max", c.training.n_max},
        {"m_max", c.training.m_max},
        {"lr", c.training.lr},
        {"clip_norm", c.training.clip_norm},
        {"codebook_size", c.training.codebook_size},
        {"d_z", c.training.arch.d_z},
        {"hidden", c.training.arch.hidden},
        {"hidden_layers", c.training.arch.hidden_layers},
        {"encoder_output_gain", c.training.arch.encoder_output_gain}}},
      {"batch", {{"models", c.batch_models}}},
      {"sweep", {{"sizes", c.sweep_sizes}, {"batch", c.sweep_batch}}},
      {"planner",
       {{"tolerance", c.planner.tolerance},
        {"max_iters", c.planner.max_iters},
        {"step_size", c.planner.step_size},
        {"grid_length", c.planner.grid_length}}},
      {"client",
       {{"kind", c.client_kind},
        {"endpoint", c.client.endpoint},
        {"model", c.client.model},
        {"timeout_s", c.client.timeout_s},
        {"retries", c.client.retries},
        {"credential_env", c.client.credential_env}}},
  };
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx, md, &n);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char h[3];
  for (unsigned int i = 0; i < n; ++i) {
    std::snprintf(h, sizeof h, "%02x", md[i]);
    hex += h;
  }
  return hex;
}

const std::map<int, std::string>& retrieval_key_to_skill() {
  static const std::map<int, std::string> m{
      {1, "right_cupboard"}, {2, "left_cupboard"}, {3, "drawer"}, {4, "stove_left"}, {5, "stove_right"}};
  return m;
}

// --- commands ----------------------------------------------------------------

json cmd_gen_data(const PipelineConfig& cfg) {
  cfg.validate();
  prepare_out(cfg);
  KitchenConfig kc = cfg.kitchen;
  kc.seed = cfg.seed;
  const Dataset ds = generate_synthetic_dataset(kc);
  const fs::path path = cfg.out / "dataset.jsonl";
  write_dataset(ds, path);
  json counts = json::object();
  for (const auto& d : ds.demos) counts[*d.skill_label] = counts.value(*d.skill_label, 0) + 1;
  return finish(cfg, "gen-data",
                {{"dataset", path.string()}, {"demos", ds.demos.size()}, {"per_skill", counts},
                 {"sha256", sha256_file(path)}});
}

json cmd_train_batch(const PipelineConfig& cfg, const TrainBatchArgs& args) {
  cfg.validate();
  prepare_out(cfg);
  const Dataset ds = training_view(strip_labels(read_dataset(args.data)));
  const fs::path dir = cfg.out / "models";
  fs::create_directories(dir);
  const fs::path manifest_path = dir / "manifest.json";

  // Manifest entries survive interruption; a model is skipped on resume only
  // when its file still hashes to the recorded value.
  json manifest = json::object();
  if (fs::exists(manifest_path)) manifest = read_json_file(manifest_path);
  if (!manifest.contains("models")) manifest["models"] = json::object();
  const std::string data_hash = sha256_file(args.data);
  if (manifest.contains("dataset_sha256") && manifest["dataset_sha256"] != data_hash)
    throw DataError("manifest in " + dir.string() + " belongs to a different dataset");
  manifest["dataset_sha256"] = data_hash;

  std::vector<std::uint64_t> todo;
  for (int i = 0; i < cfg.batch_models; ++i) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(i);
    const std::string key = std::to_string(seed);
    if (manifest["models"].contains(key)) {
      const auto& e = manifest["models"][key];
      const fs::path p = e.at("path").get<std::string>();
      if (fs::exists(p) && sha256_file(p) == e.at("sha256").get<std::string>()) continue;
    }
    todo.push_back(seed);
  }

  std::mutex mu;
  std::vector<std::string> failures;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const std::uint64_t seed = todo[i];
      try {
        TrainingConfig tc = cfg.training;
        tc.seed = seed;
        const TrainResult r = train(ds, tc);
        const fs::path p = dir / ("model_seed" + std::to_string(seed) + ".ckpt");
        const CheckpointSummary cs = save_model(r.model, p);
        json entry = {{"path", p.string()},
                      {"sha256", sha256_file(p)},
                      {"combined_loss", combined_loss(r.history)},
                      {"vq_loss", final_vq_loss(r.history, tc.beta)},
                      {"probe", {{"name", cs.probe_name}, {"value", cs.probe_value}}}};
        std::lock_guard lock(mu);
        manifest["models"][std::to_string(seed)] = entry;
        write_json(manifest_path, manifest);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
        std::cerr << "train-batch: seed " << seed << " failed: " << e.what() << '\n';
      }
    }
  };
  const int threads = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(todo.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  write_json(manifest_path, manifest);

  std::vector<std::string> seeds;
  std::vector<double> losses;
  for (const auto& [seed, e] : manifest["models"].items()) {
    seeds.push_back(seed);
    losses.push_back(e.at("combined_loss").get<double>());
  }
  json ranking = json::array();
  std::ostringstream table;
  table << "rank  seed        combined_loss   vq_loss\n";
  int rank = 1;
  for (std::size_t i : rank_models(losses)) {
    const auto& e = manifest["models"][seeds[i]];
    ranking.push_back({{"rank", rank}, {"seed", std::stoull(seeds[i])}, {"path", e["path"]},
                       {"combined_loss", e["combined_loss"]}, {"vq_loss", e["vq_loss"]}});
    char line[128];
    std::snprintf(line, sizeof line, "%4d  %-10s %14.6g %9.4g\n", rank, seeds[i].c_str(), e["combined_loss"].get<double>(),
                  e["vq_loss"].get<double>());
    table << line;
    ++rank;
  }
  write_text(cfg.out / "rank.txt", table.str());
  json summary = {{"models", ranking}, {"trained", todo.size() - failures.size()}, {"failures", failures}};
  finish(cfg, "train-batch", summary);
  if (!failures.empty())
    throw TrainingError(std::to_string(failures.size()) + " training job(s) failed; first: " + failures.front());
  return summary;
}

std::string trajectories_svg(const std::map<int, Eigen::MatrixXd>& trajectories, const std::string& title) {
  // Two panels: x-y (top view) and x-z (side view), shared scale per axis.
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const auto& [k, tr] : trajectories)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], tr.row(a).minCoeff());
      hi[a] = std::max(hi[a], tr.row(a).maxCoeff());
    }
  for (int a = 0; a < 3; ++a)
    if (!(hi[a] > lo[a])) {
      lo[a] -= 0.5;
      hi[a] += 0.5;
    }
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  const double w = 320, h = 320, pad = 30;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * w + 3 * pad << "\" height=\"" << h + 3 * pad
     << "\">\n<text x=\"" << pad << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
  const int axes[2][2] = {{0, 1}, {0, 2}};
  const char* names[2] = {"x-y", "x-z"};
  for (int p = 0; p < 2; ++p) {
    const double ox = pad + p * (w + pad), oy = 2 * pad;
    os << "<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << w << "\" height=\"" << h
       << "\" fill=\"none\" stroke=\"#999\"/>\n<text x=\"" << ox + 4 << "\" y=\"" << oy + 14
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << names[p] << "</text>\n";
    int c = 0;
    for (const auto& [k, tr] : trajectories) {
      os << "<polyline data-vector=\"" << k << "\" fill=\"none\" stroke=\"" << colors[c++ % 8] << "\" points=\"";
      for (Eigen::Index i = 0; i < tr.cols(); ++i) {
        const int a = axes[p][0], b = axes[p][1];
        const double px = ox + (tr(a, i) - lo[a]) / (hi[a] - lo[a]) * w;
        const double py = oy + h - (tr(b, i) - lo[b]) / (hi[b] - lo[b]) * h;
        char pt[48];
        std::snprintf(pt, sizeof pt, "%s%.2f,%.2f", i ? " " : "", px, py);
        os << pt;
      }
      os << "\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

json cmd_discover(const PipelineConfig& cfg, const DiscoverArgs& args) {
  cfg.validate();
  prepare_out(cfg);
  const VqCnmpModel model = load_model(args.model);
  const Dataset raw = read_dataset(args.data);
  Dataset view = raw;
  if (!raw.normalized()) {
    // Bring the data into the model's normalized space.
    for (auto& demo : view.demos)
      for (auto& p : demo.points) p.sm = model.norm_stats.normalize(p.sm);
    view.norm_stats = model.norm_stats;
  }
  const Assignment asg = assign_all(model, view);
  write_json(cfg.out / "assignment.json", assignment_json(asg));

  json histogram = json::object();
  for (const auto& [id, k] : asg) histogram[std::to_string(k)] = histogram.value(std::to_string(k), 0) + 1;
  json summary = {{"model", args.model.string()}, {"histogram", histogram}};
  if (has_labels(raw)) {
    const ClusterReport rep = cluster_report(asg, labels_of(raw), model.codebook.size());
    summary["report"] = report_json(rep);
    summary["mode"] = "labeled";
  } else {
    summary["mode"] = "histogram";
  }

  const auto times = time_grid(cfg.planner.grid_length);
  const auto protos = skill_prototypes(model, asg, times);
  std::ofstream pf(cfg.out / "prototypes.jsonl");
  for (const auto& [k, tr] : protos) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < tr.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(tr.cols()));
      for (Eigen::Index c = 0; c < tr.cols(); ++c) row[static_cast<std::size_t>(c)] = tr(r, c);
      rows.push_back(row);
    }
    pf << json{{"vector", k}, {"times", times}, {"mu", rows}}.dump() << '\n';
  }
  if (args.plots) {
    const fs::path plot = cfg.out / "prototypes.svg";
    write_text(plot, trajectories_svg(protos, "skill prototypes"));
    summary["plot"] = plot.string();
  }
  summary["prototypes"] = protos.size();
  return finish(cfg, "discover", summary);
}

json cmd_finetune(const PipelineConfig& cfg, const FinetuneArgs& args) {
  cfg.validate();
  prepare_out(cfg);
  const VqCnmpModel phase1 = load_model(args.model);
  Dataset ds = strip_labels(read_dataset(args.data));
  if (!ds.normalized()) {
    for (auto& demo : ds.demos)
      for (auto& p : demo.points) p.sm = phase1.norm_stats.normalize(p.sm);
    ds.norm_stats = phase1.norm_stats;
  }
  const Assignment asg = assign_all(phase1, ds);
  TrainingConfig tc = cfg.training;
  tc.seed = cfg.seed;
  tc.codebook_size = phase1.codebook.size();
  tc.arch.d_z = phase1.d_z;
  const TrainResult r = finetune(ds, asg, tc);
  const fs::path ckpt = cfg.out / "finetuned.ckpt";
  save_model(r.model, ckpt);
  write_json(cfg.out / "assignment.json", assignment_json(asg));
  return finish(cfg, "finetune",
                {{"model", ckpt.string()},
                 {"sha256", sha256_file(ckpt)},
                 {"assignment", (cfg.out / "assignment.json").string()},
                 {"combined_loss", combined_loss(r.history)},
                 {"nearest_neighbor_calls", r.nearest_neighbor_calls}});
}

std::unique_ptr<LlmClient> make_client(const PipelineConfig& cfg) {
  if (cfg.client_kind == "http") return std::make_unique<HttpLlmClient>(cfg.client);
  return std::make_unique<MockClient>();
}

json cmd_plan(const PipelineConfig& cfg, const PlanArgs& args, LlmClient& client) {
  cfg.validate();
  prepare_out(cfg);
  const VqCnmpModel model = load_model(args.model);
  const Dataset raw = read_dataset(args.data);
  if (!has_labels(raw)) throw DataError("plan needs a labeled dataset to name the discovered skills");
  Dataset view = raw;
  if (!raw.normalized()) {
    for (auto& demo : view.demos)
      for (auto& p : demo.points) p.sm = model.norm_stats.normalize(p.sm);
    view.norm_stats = model.norm_stats;
  }
  const Assignment asg = args.assignment ? assignment_from_json(read_json_file(*args.assignment)) : assign_all(model, view);
  const ClusterReport rep = cluster_report(asg, labels_of(raw), model.codebook.size());
  std::map<std::string, int> skill_to_vector;
  for (const auto& [k, label] : rep.vector_to_label) skill_to_vector.emplace(label, k);
  const auto contact = skill_contact_times(asg, raw);

  std::vector<std::string> images;
  for (const auto& p : args.images) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open image " + p.string());
    images.emplace_back(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  const TaskSpec task = make_stew_task(args.ingredients, args.variant);
  const TrialRecord trial = plan_task(client, task, make_catalog(args.variant), args.tmpl, images);
  write_text(cfg.out / "prompt.txt", trial.prompt);
  write_text(cfg.out / "response.txt", trial.response);

  std::map<int, std::string> key_to_ingredient;
  for (const auto& [ing, k] : task.ingredient_to_key) key_to_ingredient[k] = ing;

  Rng rng(cfg.seed);
  std::vector<PlanStep> steps;
  json step_info = json::array();
  for (int key : trial.plan.keys) {
    const auto sk = retrieval_key_to_skill().find(key);
    if (sk == retrieval_key_to_skill().end()) {
      step_info.push_back({{"key", key}, {"motion", "none"}});
      continue;
    }
    const auto vec = skill_to_vector.find(sk->second);
    if (vec == skill_to_vector.end()) throw DataError("no codebook vector carries skill '" + sk->second + "'");
    const SkillSpec* spec = nullptr;
    for (const auto& s : cfg.kitchen.skills)
      if (s.name == sk->second) spec = &s;
    if (!spec) throw ConfigError("kitchen has no skill named '" + sk->second + "'");
    PlanStep step;
    step.skill_index = vec->second;
    step.contact_time = contact.count(vec->second) ? contact.at(vec->second) : 0.4;
    const auto ing = key_to_ingredient.find(key);
    if (ing != key_to_ingredient.end() && args.objects.count(ing->second)) {
      step.object_pose = args.objects.at(ing->second);
    } else {
      for (int a = 0; a < 3; ++a)
        step.object_pose[a] = std::uniform_real_distribution<double>(spec->source.lo[a], spec->source.hi[a])(rng);
    }
    steps.push_back(step);
    step_info.push_back({{"key", key}, {"skill", sk->second}, {"vector", step.skill_index},
                         {"object_pose", vec3_json(step.object_pose)}, {"contact_time", step.contact_time}});
  }
  const auto results = execute_plan(model, steps, cfg.planner);

  Dataset traj;
  traj.d = model.d;
  json records = json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const PlanResult& r = results[i];
    json rec = {{"k", r.skill_index}, {"iterations", r.iterations}, {"final_error", r.final_error},
                {"converged", r.converged}, {"diverged", r.diverged}};
    if (r.error) rec["error"] = *r.error;
    records.push_back(rec);
    if (r.error) continue;
    Demonstration demo;
    char id[32];
    std::snprintf(id, sizeof id, "plan_step_%02zu", i);
    demo.id = id;
    demo.contact_time = steps[i].contact_time;
    demo.object_pose = steps[i].object_pose;
    for (std::size_t c = 0; c < r.times.size(); ++c)
      demo.points.push_back({r.times[c], r.trajectory.col(static_cast<Eigen::Index>(c))});
    traj.demos.push_back(std::move(demo));
  }
  const fs::path traj_path = cfg.out / "plan_trajectories.jsonl";
  write_dataset(traj, traj_path);

  json verdict = {{"success", trial.verdict.success}, {"missing", trial.verdict.missing},
                  {"extra", trial.verdict.extra}, {"order_violation", trial.verdict.order_violation},
                  {"recall", trial.verdict.recall}};
  if (trial.parse_error) verdict["parse_error"] = *trial.parse_error;
  return finish(cfg, "plan",
                {{"keys", trial.plan.keys},
                 {"verdict", verdict},
                 {"steps", step_info},
                 {"results", records},
                 {"trajectories", traj_path.string()}});
}

json cmd_benchmark(const PipelineConfig& cfg, const BenchmarkArgs& args, LlmClient& client) {
  cfg.validate();
  prepare_out(cfg);
  if (args.trials < 1) throw ConfigError("trials must be >= 1");
  const fs::path log = cfg.out / "benchmark_trials.jsonl";
  fs::remove(log);
  BenchmarkOptions opt;
  opt.variants = args.variants;
  opt.trials_per_combination = args.trials;
  opt.tmpl = args.tmpl;
  opt.trial_log = log;
  const BenchmarkReport rep = run_benchmark(client, opt);
  const std::string table = format_benchmark_table(rep);
  write_text(cfg.out / "benchmark.txt", table);
  json scores = json::array();
  for (const auto& sc : rep.scores)
    scores.push_back({{"variant", to_string(sc.variant)}, {"trials", sc.trials}, {"successes", sc.successes},
                      {"success_rate", sc.success_rate()}, {"mean_recall", sc.mean_recall()}});
  json summary = {{"table", table}, {"scores", scores}, {"trials", rep.trials.size()}, {"log", log.string()}};
  if (rep.error) summary["error"] = *rep.error;
  finish(cfg, "benchmark", summary);
  if (rep.error)
    throw ClientError("benchmark stopped after " + std::to_string(rep.trials.size()) + " trials: client failed",
                      rep.error_attempts);
  return summary;
}

json cmd_sweep(const PipelineConfig& cfg, const SweepArgs& args) {
  cfg.validate();
  prepare_out(cfg);
  const Dataset raw = read_dataset(args.data);
  if (!has_labels(raw)) throw DataError("sweep needs a labeled dataset");
  const Dataset ds = training_view(raw);
  SweepOptions opt;
  opt.sizes = cfg.sweep_sizes;
  opt.batch = cfg.sweep_batch;
  opt.first_seed = cfg.seed;
  opt.jobs = cfg.jobs;
  const SweepReport rep = codebook_sweep(ds, opt, cfg.training);
  const std::string table = format_sweep_table(rep);
  write_text(cfg.out / "sweep.txt", table);
  json rows = json::array();
  for (const auto& row : rep.rows) {
    json cells = json::array();
    for (const auto& c : row.cells)
      cells.push_back({{"seed", c.seed}, {"combined_loss", c.combined_loss}, {"vq_loss", c.vq_loss},
                       {"report", report_json(c.report)}});
    rows.push_back({{"K", row.codebook_size},
                    {"perfect", row.perfect_count()},
                    {"mean_accuracy", row.mean_accuracy()},
                    {"max_accuracy", row.max_accuracy()},
                    {"min_vq_loss", row.min_vq_loss()},
                    {"cells", cells}});
  }
  return finish(cfg, "sweep", {{"table", table}, {"rows", rows}});
}

json cmd_gradcheck(const PipelineConfig& cfg, int instances) {
  prepare_out(cfg);
  gradcheck::Options opt;
  opt.instances = instances;
  opt.seed = cfg.seed + 1;
  const gradcheck::Report rep = gradcheck::run_all(opt);
  json fams = json::array();
  for (const auto& f : rep.families)
    fams.push_back({{"name", f.name}, {"instances", f.instances}, {"entries_checked", f.entries_checked},
                    {"kinks_skipped", f.kinks_skipped}, {"max_rel_err", f.max_rel_err}});
  return finish(cfg, "gradcheck", {{"families", fams}, {"max_rel_err", rep.max_rel_err()}, {"passed", rep.passed()}});
}

}  // namespace vqskill
