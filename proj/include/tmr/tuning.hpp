#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmr/solver.hpp"

namespace tmr {

/// A training set left with too few links (S > M_train + 1).
class FoldInfeasible : public ValidationError {
public:
  using ValidationError::ValidationError;
};

enum class CvKind { kfold, monte_carlo };

struct Candidate {
  double rho1 = 0.5;
  double rho2 = 0.5;
  double beta = 1.0;
};

struct CvPlan {
  CvKind kind = CvKind::kfold;
  int folds = 5;
  double test_ratio = 0.02;
  int repeats = 50;
  std::uint64_t seed = 1;
  std::vector<Candidate> candidates;

  /// Throws std::invalid_argument for a plan that cannot run on M links.
  void validate(int links) const;
};

/// Absolute test-load error of one fold and the test-load mass it covers.
struct FoldError {
  double abs_error = 0.0;
  double load_sum = 0.0;
};

struct CandidateScore {
  Candidate params;
  double n_cv = 0.0; ///< +inf when every fold was infeasible
  std::vector<std::optional<FoldError>> folds; ///< nullopt for skipped folds
};

struct CvResult {
  std::vector<CandidateScore> per_candidate;
  std::size_t best = 0;

  const Candidate& best_candidate() const { return per_candidate.at(best).params; }
  /// candidates x folds absolute errors; NaN marks a skipped fold.
  Matrix per_fold_errors() const;
};

/// Seeded random permutation of the 0-based link indices cut into K groups
/// whose sizes differ by at most one (larger groups first).
std::vector<std::vector<int>> kfold_split(int links, int folds, std::uint64_t seed);

/// `repeats` independent random test sets of ceil(test_ratio * M) links each.
std::vector<std::vector<int>> monte_carlo_splits(int links, double test_ratio, int repeats,
                                                 std::uint64_t seed);

/// Trains on every link outside `test_links`, predicts the held-out loads
/// R_test vec(X^(k)) and returns their absolute error. Throws FoldInfeasible
/// when the training set violates S <= M + 1.
FoldError cv_score(const TomographyInstance& instance, const SolverParams& params,
                   std::span<const int> test_links, const RecoverOptions& options = {});

/// Sum of fold errors over sum of fold test loads (skipped folds excluded
/// from both). Throws MetricError for a zero denominator.
double n_cv(std::span<const std::optional<FoldError>> folds);

/// `count` log-uniform candidates: rho1, rho2 in [1e-4, 1e2],
/// beta in [1e-2, 1e2].
std::vector<Candidate> log_uniform_candidates(int count, std::uint64_t seed);

/// Scores every candidate under the plan and picks the lowest N_CV (first in
/// list order on ties). `base` supplies tau, epsilon, max_iter. Candidates
/// are evaluated on up to `threads` worker threads (0 = hardware).
CvResult tune(const TomographyInstance& instance, const CvPlan& plan,
              const SolverParams& base = {}, const RecoverOptions& options = {}, int threads = 0);

/// Index of the lowest N_CV, first in list order on ties.
std::size_t select_best(std::span<const CandidateScore> scores);

/// `rho1,rho2,beta,n_cv` per candidate.
std::string cv_scores_csv(const CvResult& result);

/// Normalized mean absolute error over the entries outside the mask.
/// Throws MetricError when the truth has no mass there.
double nmae(const TrafficTensor& estimate, const TrafficTensor& truth, const SparsityMask& mask);

/// NMAE of each interval; nullopt where that slice's denominator is zero.
std::vector<std::optional<double>> per_interval_nmae(const TrafficTensor& estimate,
                                                     const TrafficTensor& truth,
                                                     const SparsityMask& mask);

/// Numerator and denominator of the NMAE for one interval.
struct NmaeTerms {
  double abs_error = 0.0;
  double mass = 0.0;
};
NmaeTerms nmae_terms(const Matrix& estimate, const Matrix& truth, const Matrix& omega);

} // namespace tmr
