#pragma once

// Central finite-difference checks for every hand-written gradient path.
// Only forward evaluations are used on the numeric side.

#include <cstdint>
#include <string>
#include <vector>

namespace vqskill::gradcheck {

struct Options {
  int instances = 100;
  double h = 1e-5;
  int entries_per_instance = 24;
  std::uint64_t seed = 1;
};

struct FamilyResult {
  std::string name;
  int instances = 0;
  long entries_checked = 0;
  /// Entries whose +-h probe crossed a relu kink; central differences are
  /// meaningless there.
  long kinks_skipped = 0;
  double max_rel_err = 0.0;
};

struct Report {
  std::vector<FamilyResult> families;

  [[nodiscard]] double max_rel_err() const;
  [[nodiscard]] bool passed(double tol = 1e-4) const { return max_rel_err() < tol; }
};

/// |a - n| / max(|a|, |n|, 1e-6)
double relative_error(double analytic, double numeric);

FamilyResult check_mlp(const Options& opt);
FamilyResult check_gaussian_nll(const Options& opt);
FamilyResult check_softplus_head(const Options& opt);
FamilyResult check_straight_through(const Options& opt);
FamilyResult check_plan_loss(const Options& opt);

Report run_all(const Options& opt = {});

}  // namespace vqskill::gradcheck
