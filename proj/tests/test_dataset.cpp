#include "vqskill/dataset.hpp"
#include "vqskill/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace vqskill;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "vqskill_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

KitchenConfig single_skill(int demos, double noise) {
  KitchenConfig cfg = default_kitchen();
  cfg.skills.resize(1);
  cfg.demos_per_skill = {demos};
  cfg.noise_std = noise;
  cfg.seed = 7;
  return cfg;
}

bool same(const Dataset& a, const Dataset& b) {
  if (a.d != b.d || a.demos.size() != b.demos.size() || a.normalized() != b.normalized()) return false;
  if (a.norm_stats) {
    if (a.norm_stats->mean != b.norm_stats->mean || a.norm_stats->scale != b.norm_stats->scale ||
        a.norm_stats->zero_variance != b.norm_stats->zero_variance)
      return false;
  }
  for (std::size_t i = 0; i < a.demos.size(); ++i) {
    const auto& x = a.demos[i];
    const auto& y = b.demos[i];
    if (x.id != y.id || x.skill_label != y.skill_label || x.contact_time != y.contact_time) return false;
    if (x.object_pose.has_value() != y.object_pose.has_value()) return false;
    if (x.object_pose && *x.object_pose != *y.object_pose) return false;
    if (x.points.size() != y.points.size()) return false;
    for (std::size_t j = 0; j < x.points.size(); ++j)
      if (x.points[j].t != y.points[j].t || x.points[j].sm != y.points[j].sm) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("noiseless single demo has the gripper closed exactly between contact and release") {
  const KitchenConfig cfg = single_skill(1, 0.0);
  const Dataset ds = generate_synthetic_dataset(cfg);
  REQUIRE(ds.demos.size() == 1);
  const auto& demo = ds.demos.front();
  CHECK(demo.points.size() == 150);
  const double tc = *demo.contact_time;
  const double tr = tc + cfg.transfer_duration;
  for (const auto& p : demo.points) {
    if (p.t < tc) CHECK(p.sm[3] == 0.0);
    else if (p.t < tr) CHECK(p.sm[3] == 1.0);
    else CHECK(p.sm[3] == 0.0);
  }
  CHECK(demo.points.front().sm.head<3>().isApprox(cfg.home));
  CHECK(demo.points.back().sm.head<3>().isApprox(cfg.skills[0].sink));
}

TEST_CASE("times are strictly increasing and inside [0, 1]") {
  const Dataset ds = generate_synthetic_dataset(single_skill(3, 0.01));
  for (const auto& demo : ds.demos) {
    CHECK(demo.points.front().t == 0.0);
    CHECK(demo.points.back().t == 1.0);
    for (std::size_t i = 1; i < demo.points.size(); ++i) CHECK(demo.points[i].t > demo.points[i - 1].t);
  }
}

TEST_CASE("generator is deterministic given the seed") {
  KitchenConfig cfg = default_kitchen();
  cfg.demos_per_skill = {4};
  cfg.seed = 99;
  CHECK(same(generate_synthetic_dataset(cfg), generate_synthetic_dataset(cfg)));
  KitchenConfig other = cfg;
  other.seed = 100;
  CHECK_FALSE(same(generate_synthetic_dataset(cfg), generate_synthetic_dataset(other)));
}

TEST_CASE("every object pose lies inside its skill's source box") {
  KitchenConfig cfg = default_kitchen();
  cfg.demos_per_skill = {30};
  const Dataset ds = generate_synthetic_dataset(cfg);
  REQUIRE(ds.demos.size() == 150);
  std::map<std::string, const SkillSpec*> by_name;
  for (const auto& s : cfg.skills) by_name[s.name] = &s;
  int inside = 0;
  for (const auto& demo : ds.demos) {
    const auto& box = by_name.at(*demo.skill_label)->source;
    const auto& p = *demo.object_pose;
    bool ok = true;
    for (int a = 0; a < 3; ++a) ok = ok && p[a] >= box.lo[a] && p[a] <= box.hi[a];
    inside += ok;
  }
  CHECK(inside == 150);
}

TEST_CASE("default source boxes are disjoint 10 cm cubes") {
  const auto cfg = default_kitchen();
  REQUIRE(cfg.skills.size() == 5);
  for (std::size_t i = 0; i < cfg.skills.size(); ++i) {
    const auto& a = cfg.skills[i].source;
    CHECK((a.hi - a.lo).isApprox(Eigen::Vector3d::Constant(0.1)));
    for (std::size_t j = i + 1; j < cfg.skills.size(); ++j) {
      const auto& b = cfg.skills[j].source;
      const bool overlap = ((a.lo.array() < b.hi.array()) && (b.lo.array() < a.hi.array())).all();
      CHECK_FALSE(overlap);
    }
  }
}

TEST_CASE("uneven per-skill counts are honored") {
  KitchenConfig cfg = default_kitchen();
  cfg.demos_per_skill = {15, 40, 100, 33, 70};
  const Dataset ds = generate_synthetic_dataset(cfg);
  std::map<std::string, int> counts;
  for (const auto& demo : ds.demos) counts[*demo.skill_label]++;
  CHECK(counts["right_cupboard"] == 15);
  CHECK(counts["left_cupboard"] == 40);
  CHECK(counts["drawer"] == 100);
  CHECK(counts["stove_left"] == 33);
  CHECK(counts["stove_right"] == 70);
}

TEST_CASE("generator rejects invalid configs") {
  KitchenConfig cfg = default_kitchen();
  cfg.d = 3;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
  cfg = default_kitchen();
  cfg.demos_per_skill = {0};
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
  cfg = default_kitchen();
  cfg.skills[0].source.hi = cfg.skills[0].source.lo;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
  cfg = default_kitchen();
  cfg.demos_per_skill = {1, 2};
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg), ConfigError);
}

TEST_CASE("normalization of a constant channel shifts to zero with unit scale") {
  Dataset ds;
  ds.d = 2;
  Demonstration demo;
  demo.id = "a";
  for (int i = 0; i < 5; ++i) {
    TrajectoryPoint p;
    p.t = i / 4.0;
    p.sm = Eigen::Vector2d(3.5, static_cast<double>(i));
    demo.points.push_back(p);
  }
  ds.demos.push_back(demo);
  const Dataset n = normalize_dataset(ds);
  REQUIRE(n.norm_stats);
  CHECK(n.norm_stats->zero_variance[0]);
  CHECK_FALSE(n.norm_stats->zero_variance[1]);
  CHECK(n.norm_stats->scale[0] == 1.0);
  for (const auto& p : n.demos[0].points) CHECK(p.sm[0] == 0.0);
  CHECK_THROWS_AS(normalize_dataset(n), DataError);
}

TEST_CASE("normalize then denormalize recovers the data") {
  KitchenConfig cfg = default_kitchen();
  cfg.demos_per_skill = {3};
  const Dataset raw = generate_synthetic_dataset(cfg);
  const Dataset back = denormalize_dataset(normalize_dataset(raw));
  double worst = 0.0;
  for (std::size_t i = 0; i < raw.demos.size(); ++i)
    for (std::size_t j = 0; j < raw.demos[i].points.size(); ++j) {
      worst = std::max(worst, (raw.demos[i].points[j].sm - back.demos[i].points[j].sm).cwiseAbs().maxCoeff());
      CHECK(raw.demos[i].points[j].t == back.demos[i].points[j].t);
    }
  CHECK(worst < 1e-9);
}

TEST_CASE("normalized moments recomputed by direct summation") {
  Dataset ds;
  ds.d = 2;
  for (int k = 0; k < 2; ++k) {
    Demonstration demo;
    demo.id = "d" + std::to_string(k);
    for (int i = 0; i < 4; ++i) {
      TrajectoryPoint p;
      p.t = i / 3.0;
      p.sm = Eigen::Vector2d(1.0 + 2.0 * i + 10.0 * k, -0.5 * i * i + k);
      demo.points.push_back(p);
    }
    ds.demos.push_back(demo);
  }
  const Dataset n = normalize_dataset(ds);
  for (int c = 0; c < 2; ++c) {
    double s = 0.0;
    double s2 = 0.0;
    int count = 0;
    for (const auto& demo : n.demos)
      for (const auto& p : demo.points) {
        s += p.sm[c];
        s2 += p.sm[c] * p.sm[c];
        ++count;
      }
    CHECK(std::abs(s / count) < 1e-9);
    CHECK(std::abs(s2 / count - 1.0) < 1e-9);
  }
}

TEST_CASE("strip_labels removes every label and labels_of reads them") {
  KitchenConfig cfg = default_kitchen();
  cfg.demos_per_skill = {2};
  const Dataset ds = generate_synthetic_dataset(cfg);
  CHECK(labels_of(ds).size() == 10);
  const Dataset bare = strip_labels(ds);
  for (const auto& demo : bare.demos) CHECK_FALSE(demo.skill_label.has_value());
  CHECK(labels_of(bare).empty());
}

TEST_CASE("sample_context with unit bounds yields one member point each") {
  const Dataset ds = generate_synthetic_dataset(single_skill(1, 0.0));
  Rng rng(3);
  const auto s = sample_context(ds.demos[0], rng, 1, 1);
  REQUIRE(s.context.size() == 1);
  REQUIRE(s.targets.size() == 1);
  auto member = [&](const TrajectoryPoint& q) {
    for (const auto& p : ds.demos[0].points)
      if (p.t == q.t && p.sm == q.sm) return true;
    return false;
  };
  CHECK(member(s.context[0]));
  CHECK(member(s.targets[0]));
}

TEST_CASE("a full-size draw is a permutation") {
  Rng rng(11);
  const auto idx = draw_subset(rng, 150, 150);
  std::set<int> uniq(idx.begin(), idx.end());
  CHECK(uniq.size() == 150);
  CHECK(*uniq.begin() == 0);
  CHECK(*uniq.rbegin() == 149);
}

TEST_CASE("context sizes are uniform over 1..n_max (chi-square)") {
  Rng rng(2024);
  std::vector<int> ctx;
  std::vector<int> tgt;
  int counts[5] = {0, 0, 0, 0, 0};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    sample_context_indices(rng, 150, 5, 5, ctx, tgt);
    REQUIRE(ctx.size() >= 1);
    REQUIRE(ctx.size() <= 5);
    counts[ctx.size() - 1]++;
    const std::set<int> u(ctx.begin(), ctx.end());
    REQUIRE(u.size() == ctx.size());
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - draws / 5.0) * (c - draws / 5.0) / (draws / 5.0);
  // 99th percentile of chi-square with 4 degrees of freedom.
  CHECK(chi2 < 13.2767);
}

TEST_CASE("sample_context rejects bounds outside the demo") {
  const Dataset ds = generate_synthetic_dataset(single_skill(1, 0.0));
  Rng rng(1);
  CHECK_THROWS(sample_context(ds.demos[0], rng, 0, 1));
  CHECK_THROWS(sample_context(ds.demos[0], rng, 151, 1));
}

TEST_CASE("dataset file round trip is exact") {
  KitchenConfig cfg = default_kitchen();
  cfg.demos_per_skill = {1};
  const Dataset raw = generate_synthetic_dataset(cfg);
  REQUIRE(raw.demos.size() == 5);
  const auto path = temp_file("roundtrip.jsonl");
  write_dataset(raw, path);
  CHECK(same(raw, read_dataset(path)));

  const Dataset normed = normalize_dataset(raw);
  write_dataset(normed, path);
  CHECK(same(normed, read_dataset(path)));

  Dataset bare = strip_labels(raw);
  bare.demos[0].contact_time.reset();
  bare.demos[0].object_pose.reset();
  write_dataset(bare, path);
  CHECK(same(bare, read_dataset(path)));
}

TEST_CASE("a 3-channel demo inside a 4-channel file is a schema error") {
  const auto path = temp_file("schema.jsonl");
  {
    std::ofstream out(path);
    out << "{\"version\":1,\"d\":4,\"normalized\":false}\n";
    out << "{\"id\":\"a\",\"points\":[[0,1,2,3,4],[1,1,2,3,4]]}\n";
    out << "{\"id\":\"b\",\"points\":[[0,1,2,3],[1,1,2,3]]}\n";
  }
  CHECK_THROWS_AS(read_dataset(path), SchemaError);
}

TEST_CASE("truncating the last record gives a parse error naming its line") {
  KitchenConfig cfg = default_kitchen();
  cfg.demos_per_skill = {1};
  const Dataset raw = generate_synthetic_dataset(cfg);
  const auto path = temp_file("truncated.jsonl");
  write_dataset(raw, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 40);
  try {
    (void)read_dataset(path);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 6);
    CHECK(std::string(e.what()).find("line 6") != std::string::npos);
  }
}

TEST_CASE("written floats carry 17 significant digits") {
  Dataset ds;
  ds.d = 1;
  Demonstration demo;
  demo.id = "x";
  TrajectoryPoint p;
  p.t = 0.1;
  p.sm = Eigen::VectorXd::Constant(1, 1.0 / 3.0);
  demo.points.push_back(p);
  ds.demos.push_back(demo);
  const auto line = demo_record(ds.demos[0]);
  CHECK(line.find("0.10000000000000001") != std::string::npos);
  CHECK(line.find("0.33333333333333331") != std::string::npos);
}
