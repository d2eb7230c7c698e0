#include "vqskill/discovery.hpp"

#include "vqskill/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace vqskill {

ClusterReport cluster_report(const Assignment& asg, const Labels& labels, int codebook_size) {
  if (asg.empty()) throw DataError("cluster_report: empty assignment");
  std::map<int, std::map<std::string, int>> by_vector;
  std::map<std::string, std::map<int, int>> by_skill;
  for (const auto& [id, k] : asg) {
    const auto it = labels.find(id);
    if (it == labels.end()) throw DataError("cluster_report: no label for demo '" + id + "'");
    by_vector[k][it->second] += 1;
    by_skill[it->second][k] += 1;
  }

  ClusterReport r;
  r.codebook_size = codebook_size;
  const auto n = static_cast<double>(asg.size());
  int majority_sum = 0;
  for (const auto& [k, counts] : by_vector) {
    // Ties resolve to the lexicographically first label.
    const auto best = std::max_element(counts.begin(), counts.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    r.vector_to_label[k] = best->first;
    majority_sum += best->second;
  }
  r.accuracy = majority_sum / n;

  int cohesive_sum = 0;
  bool cohesive = true;
  for (const auto& [skill, counts] : by_skill) {
    auto& used = r.per_skill_split[skill];
    int top = 0;
    for (const auto& [k, c] : counts) {
      used.insert(k);
      top = std::max(top, c);
    }
    cohesive_sum += top;
    cohesive = cohesive && used.size() == 1;
  }
  r.skill_accuracy = cohesive_sum / n;

  const bool enough_vectors = codebook_size >= static_cast<int>(by_skill.size());
  bool shared = false;
  for (const auto& [k, counts] : by_vector) shared = shared || counts.size() > 1;
  r.perfect = cohesive && !(enough_vectors && shared);
  return r;
}

double combined_loss(const std::vector<LossBreakdown>& history, std::size_t window) {
  if (history.empty()) return 0.0;
  const std::size_t from = history.size() > window ? history.size() - window : 0;
  double s = 0.0;
  for (std::size_t i = from; i < history.size(); ++i) s += history[i].total;
  return s / static_cast<double>(history.size() - from);
}

double final_vq_loss(const std::vector<LossBreakdown>& history, double beta, std::size_t window) {
  if (history.empty()) return 0.0;
  const std::size_t from = history.size() > window ? history.size() - window : 0;
  double s = 0.0;
  for (std::size_t i = from; i < history.size(); ++i) s += history[i].vq_loss(beta);
  return s / static_cast<double>(history.size() - from);
}

std::vector<std::size_t> rank_models(const std::vector<double>& losses) {
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
  return order;
}

std::vector<std::size_t> rank_models(const std::vector<TrainResult>& batch) {
  std::vector<double> losses;
  losses.reserve(batch.size());
  for (const auto& r : batch) losses.push_back(combined_loss(r.history));
  return rank_models(losses);
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

int SweepRow::perfect_count() const {
  return static_cast<int>(std::count_if(cells.begin(), cells.end(), [](const SweepCell& c) { return c.report.perfect; }));
}

double SweepRow::mean_accuracy() const {
  if (cells.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cells) s += c.report.accuracy;
  return s / static_cast<double>(cells.size());
}

double SweepRow::max_accuracy() const {
  double m = 0.0;
  for (const auto& c : cells) m = std::max(m, c.report.accuracy);
  return m;
}

double SweepRow::min_vq_loss() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& c : cells) m = std::min(m, c.vq_loss);
  return m;
}

double SweepRow::median_vq_loss() const {
  std::vector<double> v;
  for (const auto& c : cells) v.push_back(c.vq_loss);
  return median(std::move(v));
}

SweepCell score_model(const TrainResult& result, const Dataset& labeled, int codebook_size, std::uint64_t seed,
                      double beta) {
  SweepCell cell;
  cell.codebook_size = codebook_size;
  cell.seed = seed;
  cell.combined_loss = combined_loss(result.history);
  cell.vq_loss = final_vq_loss(result.history, beta);
  cell.report = cluster_report(assign_all(result.model, labeled), labels_of(labeled), codebook_size);
  return cell;
}

SweepReport codebook_sweep(const Dataset& dataset, const SweepOptions& opt, const TrainingConfig& base) {
  if (opt.sizes.empty()) throw ConfigError("codebook_sweep: no codebook sizes");
  if (opt.batch < 1) throw ConfigError("codebook_sweep: batch must be >= 1");
  const Dataset unlabeled = strip_labels(dataset);

  struct Job {
    int k;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (int k : opt.sizes)
    for (int b = 0; b < opt.batch; ++b) jobs.push_back({k, opt.first_seed + static_cast<std::uint64_t>(b)});

  std::vector<SweepCell> cells(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex collect;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        TrainingConfig cfg = base;
        cfg.codebook_size = jobs[i].k;
        cfg.seed = jobs[i].seed;
        const TrainResult r = train(unlabeled, cfg);
        cells[i] = score_model(r, dataset, jobs[i].k, jobs[i].seed, cfg.beta);
        if (opt.on_cell) {
          std::lock_guard lock(collect);
          opt.on_cell(cells[i], r);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opt.jobs, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!errors[i]) continue;
    std::string what = "unknown error";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    throw TrainingError("K=" + std::to_string(jobs[i].k) + " seed=" + std::to_string(jobs[i].seed) + ": " + what);
  }

  SweepReport rep;
  rep.batch = opt.batch;
  for (std::size_t s = 0; s < opt.sizes.size(); ++s) {
    SweepRow row;
    row.codebook_size = opt.sizes[s];
    for (int b = 0; b < opt.batch; ++b) row.cells.push_back(cells[s * static_cast<std::size_t>(opt.batch) + b]);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::map<int, Eigen::MatrixXd> skill_prototypes(const VqCnmpModel& model, const Assignment& asg,
                                                std::span<const double> times) {
  std::set<int> used;
  for (const auto& [id, k] : asg) used.insert(k);
  std::map<int, Eigen::MatrixXd> out;
  for (int k : used) {
    if (k < 0 || k >= model.codebook.size()) throw DataError("skill_prototypes: index outside codebook");
    Eigen::MatrixXd mu = decode_grid(model, model.codebook.vectors.row(k).transpose(), times).mu;
    for (Eigen::Index c = 0; c < mu.cols(); ++c) mu.col(c) = model.norm_stats.denormalize(mu.col(c));
    out.emplace(k, std::move(mu));
  }
  return out;
}

std::string format_sweep_table(const SweepReport& report) {
  std::ostringstream os;
  char buf[64];
  auto row = [&](const std::string& name, auto&& cell) {
    std::snprintf(buf, sizeof buf, "%-20s", name.c_str());
    os << buf;
    for (const auto& r : report.rows) {
      std::snprintf(buf, sizeof buf, " | %10s", cell(r).c_str());
      os << buf;
    }
    os << '\n';
  };
  auto fmt = [&](const char* f, double v) {
    char b[32];
    std::snprintf(b, sizeof b, f, v);
    return std::string(b);
  };
  row("K", [](const SweepRow& r) { return std::to_string(r.codebook_size); });
  row("perfect clustering", [&](const SweepRow& r) {
    return std::to_string(r.perfect_count()) + "/" + std::to_string(r.cells.size());
  });
  row("accuracy (mean)", [&](const SweepRow& r) { return fmt("%.1f%%", 100.0 * r.mean_accuracy()); });
  row("accuracy (max)", [&](const SweepRow& r) { return fmt("%.1f%%", 100.0 * r.max_accuracy()); });
  row("min vq loss", [&](const SweepRow& r) { return fmt("%.4g", r.min_vq_loss()); });
  return os.str();
}

}  // namespace vqskill
