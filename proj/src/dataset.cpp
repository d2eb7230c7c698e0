#include "vqskill/dataset.hpp"

#include "vqskill/errors.hpp"
#include "vqskill/text_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace vqskill {

namespace text {
std::string quote(const std::string& s) { return nlohmann::json(s).dump(); }
}  // namespace text

namespace {

double min_jerk(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  const double t3 = tau * tau * tau;
  return t3 * (10.0 - 15.0 * tau + 6.0 * tau * tau);
}

Box cube(double cx, double cy, double cz, double edge) {
  const Eigen::Vector3d c(cx, cy, cz);
  const Eigen::Vector3d h = Eigen::Vector3d::Constant(edge / 2.0);
  return Box{c - h, c + h};
}

}  // namespace

Eigen::VectorXd NormStats::normalize(const Eigen::VectorXd& raw) const {
  return ((raw - mean).array() / scale.array()).matrix();
}

Eigen::VectorXd NormStats::denormalize(const Eigen::VectorXd& normed) const {
  return (normed.array() * scale.array() + mean.array()).matrix();
}

bool Box::contains(const Eigen::Vector3d& p, double margin) const {
  return ((p.array() >= lo.array() - margin) && (p.array() <= hi.array() + margin)).all();
}

int KitchenConfig::demos_for(std::size_t skill) const {
  return demos_per_skill.size() == 1 ? demos_per_skill.front() : demos_per_skill.at(skill);
}

void KitchenConfig::validate() const {
  if (d != 4) throw ConfigError("kitchen generator only emits 4-channel data, got d=" + std::to_string(d));
  if (skills.empty()) throw ConfigError("kitchen config has no skills");
  if (demos_per_skill.size() != 1 && demos_per_skill.size() != skills.size())
    throw ConfigError("demos_per_skill must have 1 or " + std::to_string(skills.size()) + " entries");
  for (int n : demos_per_skill)
    if (n < 1) throw ConfigError("demos_per_skill entries must be >= 1");
  for (const auto& s : skills) {
    if (!((s.source.hi.array() > s.source.lo.array()).all()))
      throw ConfigError("degenerate source region for skill '" + s.name + "'");
  }
  if (length < 2) throw ConfigError("trajectory length must be >= 2");
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (!(0.0 < contact_lo && contact_lo <= contact_hi && contact_hi + transfer_duration < 1.0))
    throw ConfigError("contact/release timing must fit inside (0, 1)");
}

KitchenConfig default_kitchen() {
  KitchenConfig cfg;
  const Eigen::Vector3d pan(0.70, 0.0, 0.20);
  cfg.skills = {
      {"right_cupboard", cube(0.55, -0.35, 0.45, 0.1), pan},
      {"left_cupboard", cube(0.55, 0.35, 0.45, 0.1), pan},
      {"drawer", cube(0.45, 0.0, 0.10, 0.1), pan},
      // The stove-side spots differ in depth and height as well as side;
      // mirror-image spots only a y offset apart tend to share one vector.
      {"stove_left", cube(0.80, 0.30, 0.12, 0.1), pan},
      {"stove_right", cube(0.60, -0.30, 0.22, 0.1), pan},
  };
  return cfg;
}

Dataset generate_synthetic_dataset(const KitchenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset ds;
  ds.d = cfg.d;
  int serial = 0;
  for (std::size_t s = 0; s < cfg.skills.size(); ++s) {
    const SkillSpec& skill = cfg.skills[s];
    for (int rep = 0; rep < cfg.demos_for(s); ++rep) {
      Eigen::Vector3d obj;
      for (int a = 0; a < 3; ++a) obj[a] = skill.source.lo[a] + unit(rng) * (skill.source.hi[a] - skill.source.lo[a]);
      const double t_contact = cfg.contact_lo + unit(rng) * (cfg.contact_hi - cfg.contact_lo);
      const double t_release = t_contact + cfg.transfer_duration;

      Demonstration demo;
      char id[32];
      std::snprintf(id, sizeof id, "demo_%05d", serial++);
      demo.id = id;
      demo.skill_label = skill.name;
      demo.contact_time = t_contact;
      demo.object_pose = obj;
      demo.points.reserve(static_cast<std::size_t>(cfg.length));
      for (int i = 0; i < cfg.length; ++i) {
        const double t = static_cast<double>(i) / (cfg.length - 1);
        Eigen::Vector3d pos;
        double grip = 0.0;
        if (t < t_contact) {
          pos = cfg.home + (obj - cfg.home) * min_jerk(t / t_contact);
        } else if (t < t_release) {
          const double tau = (t - t_contact) / (t_release - t_contact);
          pos = obj + (skill.sink - obj) * min_jerk(tau);
          pos.z() += cfg.lift_height * std::sin(std::numbers::pi * tau);
          grip = 1.0;
        } else {
          pos = skill.sink;
        }
        if (cfg.noise_std > 0.0)
          for (int a = 0; a < 3; ++a) pos[a] += cfg.noise_std * noise(rng);
        TrajectoryPoint p;
        p.t = t;
        p.sm.resize(4);
        p.sm << pos, grip;
        demo.points.push_back(std::move(p));
      }
      ds.demos.push_back(std::move(demo));
    }
  }
  return ds;
}

Dataset normalize_dataset(const Dataset& ds) {
  if (ds.normalized()) throw DataError("dataset is already normalized");
  const int d = ds.d;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  long count = 0;
  for (const auto& demo : ds.demos)
    for (const auto& p : demo.points) {
      sum += p.sm;
      ++count;
    }
  if (count == 0) throw DataError("cannot normalize an empty dataset");
  NormStats stats;
  stats.mean = sum / static_cast<double>(count);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
  for (const auto& demo : ds.demos)
    for (const auto& p : demo.points) sq += (p.sm - stats.mean).cwiseAbs2();
  stats.scale = (sq / static_cast<double>(count)).cwiseSqrt();
  stats.zero_variance.assign(static_cast<std::size_t>(d), false);
  for (int j = 0; j < d; ++j) {
    if (stats.scale[j] <= 1e-12 * std::max(1.0, std::abs(stats.mean[j]))) {
      stats.scale[j] = 1.0;
      stats.zero_variance[static_cast<std::size_t>(j)] = true;
    }
  }

  Dataset out = ds;
  for (auto& demo : out.demos)
    for (auto& p : demo.points) p.sm = stats.normalize(p.sm);
  out.norm_stats = std::move(stats);
  return out;
}

Dataset denormalize_dataset(const Dataset& ds) {
  if (!ds.normalized()) throw DataError("dataset is not normalized");
  Dataset out = ds;
  for (auto& demo : out.demos)
    for (auto& p : demo.points) p.sm = ds.norm_stats->denormalize(p.sm);
  out.norm_stats.reset();
  return out;
}

Dataset strip_labels(const Dataset& ds) {
  Dataset out = ds;
  for (auto& demo : out.demos) demo.skill_label.reset();
  return out;
}

std::map<std::string, std::string> labels_of(const Dataset& ds) {
  std::map<std::string, std::string> labels;
  for (const auto& demo : ds.demos)
    if (demo.skill_label) labels.emplace(demo.id, *demo.skill_label);
  return labels;
}

std::vector<int> draw_subset(Rng& rng, int population, int count) {
  if (count < 0 || count > population) throw std::invalid_argument("draw_subset: count out of range");
  std::vector<int> pool(static_cast<std::size_t>(population));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, population - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

void sample_context_indices(Rng& rng, int length, int n_max, int m_max, std::vector<int>& context,
                            std::vector<int>& targets) {
  if (n_max < 1 || m_max < 1 || n_max > length || m_max > length)
    throw std::invalid_argument("sample_context: bounds must satisfy 1 <= n_max, m_max <= length");
  const int n = std::uniform_int_distribution<int>(1, n_max)(rng);
  context = draw_subset(rng, length, n);
  const int m = std::uniform_int_distribution<int>(1, m_max)(rng);
  targets = draw_subset(rng, length, m);
}

ContextSample sample_context(const Demonstration& demo, Rng& rng, int n_max, int m_max) {
  std::vector<int> ci;
  std::vector<int> ti;
  sample_context_indices(rng, static_cast<int>(demo.points.size()), n_max, m_max, ci, ti);
  ContextSample out;
  for (int i : ci) out.context.push_back(demo.points[static_cast<std::size_t>(i)]);
  for (int i : ti) out.targets.push_back(demo.points[static_cast<std::size_t>(i)]);
  return out;
}

// --- file format ---------------------------------------------------------

namespace {

using nlohmann::json;

std::string header_line(const Dataset& ds) {
  std::string s = "{\"version\":1,\"d\":" + std::to_string(ds.d) +
                  ",\"normalized\":" + (ds.normalized() ? "true" : "false");
  if (ds.norm_stats) {
    s += ",\"norm_stats\":{\"mean\":";
    text::append_array(s, ds.norm_stats->mean);
    s += ",\"scale\":";
    text::append_array(s, ds.norm_stats->scale);
    s += ",\"zero_variance\":[";
    for (std::size_t j = 0; j < ds.norm_stats->zero_variance.size(); ++j) {
      if (j) s += ',';
      s += ds.norm_stats->zero_variance[j] ? "true" : "false";
    }
    s += "]}";
  }
  s += '}';
  return s;
}

Eigen::VectorXd to_vector(const json& arr) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

}  // namespace

std::string demo_record(const Demonstration& demo) {
  std::string s = "{\"id\":" + text::quote(demo.id);
  if (demo.skill_label) s += ",\"skill_label\":" + text::quote(*demo.skill_label);
  if (demo.contact_time) s += ",\"contact_time\":" + text::format_double(*demo.contact_time);
  if (demo.object_pose) {
    s += ",\"object_pose\":";
    text::append_array(s, std::span<const double>(demo.object_pose->data(), 3));
  }
  s += ",\"points\":[";
  for (std::size_t i = 0; i < demo.points.size(); ++i) {
    if (i) s += ',';
    const auto& p = demo.points[i];
    s += '[';
    s += text::format_double(p.t);
    for (Eigen::Index j = 0; j < p.sm.size(); ++j) {
      s += ',';
      s += text::format_double(p.sm[j]);
    }
    s += ']';
  }
  s += "]}";
  return s;
}

Demonstration parse_demo_record(const std::string& line, int line_no, int d) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(line_no, std::string("malformed record: ") + e.what());
  }
  try {
    Demonstration demo;
    demo.id = rec.at("id").get<std::string>();
    if (rec.contains("skill_label")) demo.skill_label = rec["skill_label"].get<std::string>();
    if (rec.contains("contact_time")) demo.contact_time = rec["contact_time"].get<double>();
    if (rec.contains("object_pose")) {
      const auto& op = rec["object_pose"];
      if (op.size() != 3) throw SchemaError("line " + std::to_string(line_no) + ": object_pose must have 3 entries");
      demo.object_pose = Eigen::Vector3d(op[0].get<double>(), op[1].get<double>(), op[2].get<double>());
    }
    const auto& pts = rec.at("points");
    demo.points.reserve(pts.size());
    for (const auto& row : pts) {
      if (static_cast<int>(row.size()) != d + 1)
        throw SchemaError("line " + std::to_string(line_no) + ": demo '" + demo.id + "' has a point with " +
                          std::to_string(static_cast<int>(row.size()) - 1) + " channels, dataset d=" +
                          std::to_string(d));
      TrajectoryPoint p;
      p.t = row[0].get<double>();
      p.sm.resize(d);
      for (int j = 0; j < d; ++j) p.sm[j] = row[static_cast<std::size_t>(j + 1)].get<double>();
      if (!demo.points.empty() && !(p.t > demo.points.back().t))
        throw SchemaError("line " + std::to_string(line_no) + ": times must be strictly increasing");
      demo.points.push_back(std::move(p));
    }
    return demo;
  } catch (const json::exception& e) {
    throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
  }
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << header_line(ds) << '\n';
  for (const auto& demo : ds.demos) {
    if (demo.dim() != ds.d) throw SchemaError("demo '" + demo.id + "' dimension differs from dataset d");
    out << demo_record(demo) << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  Dataset ds;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(1, std::string("malformed header: ") + e.what());
  }
  try {
    if (header.at("version").get<int>() != 1)
      throw SchemaError("unsupported dataset version " + header["version"].dump());
    ds.d = header.at("d").get<int>();
    if (header.at("normalized").get<bool>()) {
      const auto& ns = header.at("norm_stats");
      NormStats st;
      st.mean = to_vector(ns.at("mean"));
      st.scale = to_vector(ns.at("scale"));
      for (const auto& z : ns.at("zero_variance")) st.zero_variance.push_back(z.get<bool>());
      if (st.mean.size() != ds.d || st.scale.size() != ds.d || static_cast<int>(st.zero_variance.size()) != ds.d)
        throw SchemaError("norm_stats length differs from d");
      ds.norm_stats = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("line 1: ") + e.what());
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ds.demos.push_back(parse_demo_record(line, line_no, ds.d));
  }
  return ds;
}

}  // namespace vqskill
