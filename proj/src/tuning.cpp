#include "tmr/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "tmr/csv.hpp"

namespace tmr {

void CvPlan::validate(int links) const {
  if (candidates.empty())
    throw std::invalid_argument("cv plan: no candidates");
  if (kind == CvKind::kfold) {
    if (folds < 2 || folds > links)
      throw std::invalid_argument("cv plan: K must satisfy 2 <= K <= M (K=" +
                                  std::to_string(folds) + ", M=" + std::to_string(links) + ")");
  } else {
    if (!(test_ratio > 0.0 && test_ratio < 1.0))
      throw std::invalid_argument("cv plan: test_ratio must lie in (0, 1)");
    if (repeats < 1)
      throw std::invalid_argument("cv plan: repeats must be positive");
  }
}

Matrix CvResult::per_fold_errors() const {
  const std::size_t folds = per_candidate.empty() ? 0 : per_candidate.front().folds.size();
  Matrix m(static_cast<Eigen::Index>(per_candidate.size()), static_cast<Eigen::Index>(folds));
  for (std::size_t c = 0; c < per_candidate.size(); ++c)
    for (std::size_t f = 0; f < folds; ++f) {
      const auto& fold = per_candidate[c].folds[f];
      m(c, f) = fold ? fold->abs_error : std::numeric_limits<double>::quiet_NaN();
    }
  return m;
}

std::vector<std::vector<int>> kfold_split(int links, int folds, std::uint64_t seed) {
  if (folds < 2 || folds > links)
    throw std::out_of_range("kfold_split: K must satisfy 2 <= K <= M");
  std::vector<int> perm(links);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<std::vector<int>> groups(folds);
  const int base = links / folds, extra = links % folds;
  int pos = 0;
  for (int g = 0; g < folds; ++g) {
    const int size = base + (g < extra ? 1 : 0);
    groups[g].assign(perm.begin() + pos, perm.begin() + pos + size);
    std::sort(groups[g].begin(), groups[g].end());
    pos += size;
  }
  return groups;
}

std::vector<std::vector<int>> monte_carlo_splits(int links, double test_ratio, int repeats,
                                                 std::uint64_t seed) {
  if (!(test_ratio > 0.0 && test_ratio < 1.0) || repeats < 1 || links < 2)
    throw std::out_of_range("monte_carlo_splits: invalid ratio, repeats or link count");
  const int size =
      std::clamp(static_cast<int>(std::ceil(test_ratio * links - 1e-9)), 1, links - 1);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> splits;
  std::vector<int> perm(links);
  for (int r = 0; r < repeats; ++r) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> test(perm.begin(), perm.begin() + size);
    std::sort(test.begin(), test.end());
    splits.push_back(std::move(test));
  }
  return splits;
}

FoldError cv_score(const TomographyInstance& instance, const SolverParams& params,
                   std::span<const int> test_links, const RecoverOptions& options) {
  std::set<int> test(test_links.begin(), test_links.end());
  if (test.empty() || static_cast<int>(test.size()) >= instance.M)
    throw std::invalid_argument("cv_score: test set must be a nonempty proper subset of links");
  std::vector<int> train;
  for (int m = 0; m < instance.M; ++m)
    if (!test.count(m))
      train.push_back(m);
  if (instance.S > static_cast<int>(train.size()) + 1)
    throw FoldInfeasible("cv_score: training set of " + std::to_string(train.size()) +
                         " links violates S <= M + 1");

  TomographyInstance reduced;
  reduced.S = instance.S;
  reduced.T = instance.T;
  reduced.M = static_cast<int>(train.size());
  reduced.routing = instance.routing.select_rows(train);
  reduced.link_loads.resize(reduced.M, reduced.T);
  for (int r = 0; r < reduced.M; ++r)
    reduced.link_loads.row(r) = instance.link_loads.row(train[r]);
  reduced.mask = instance.mask;

  const std::vector<int> held(test.begin(), test.end());
  const RoutingMatrix test_routing = instance.routing.select_rows(held);
  auto recovered = recover_sequence(reduced, params, options);

  FoldError out;
  for (int k = 0; k < instance.T; ++k) {
    const Matrix& x = recovered.estimate.slices[k];
    const Vector predicted = test_routing.entries() * Eigen::Map<const Vector>(x.data(), x.size());
    for (std::size_t r = 0; r < held.size(); ++r) {
      const double measured = instance.link_loads(held[r], k);
      out.abs_error += std::abs(predicted(static_cast<Eigen::Index>(r)) - measured);
      out.load_sum += measured;
    }
  }
  return out;
}

double n_cv(std::span<const std::optional<FoldError>> folds) {
  double num = 0.0, den = 0.0;
  for (const auto& f : folds)
    if (f) {
      num += f->abs_error;
      den += f->load_sum;
    }
  if (!(den > 0.0))
    throw MetricError("n_cv: held-out loads sum to zero");
  return num / den;
}

std::vector<Candidate> log_uniform_candidates(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rho_exp(-4.0, 2.0), beta_exp(-2.0, 2.0);
  std::vector<Candidate> out;
  for (int c = 0; c < count; ++c) {
    Candidate cand;
    cand.rho1 = std::pow(10.0, rho_exp(rng));
    cand.rho2 = std::pow(10.0, rho_exp(rng));
    cand.beta = std::pow(10.0, beta_exp(rng));
    out.push_back(cand);
  }
  return out;
}

namespace {

CandidateScore score_candidate(const TomographyInstance& instance, const Candidate& cand,
                               const std::vector<std::vector<int>>& splits,
                               const SolverParams& base, const RecoverOptions& options) {
  SolverParams params = base;
  params.rho1 = cand.rho1;
  params.rho2 = cand.rho2;
  params.beta = cand.beta;

  CandidateScore score;
  score.params = cand;
  for (const auto& test : splits) {
    try {
      score.folds.emplace_back(cv_score(instance, params, test, options));
    } catch (const FoldInfeasible&) {
      score.folds.emplace_back(std::nullopt);
    } catch (const NumericError&) {
      // A diverging candidate is not usable on this fold.
      score.folds.emplace_back(FoldError{std::numeric_limits<double>::infinity(), 0.0});
    }
  }
  const bool any = std::any_of(score.folds.begin(), score.folds.end(),
                               [](const auto& f) { return f.has_value(); });
  if (!any) {
    score.n_cv = std::numeric_limits<double>::infinity();
  } else {
    try {
      score.n_cv = n_cv(score.folds);
    } catch (const MetricError&) {
      score.n_cv = std::numeric_limits<double>::infinity();
    }
  }
  if (std::isnan(score.n_cv))
    score.n_cv = std::numeric_limits<double>::infinity();
  return score;
}

} // namespace

CvResult tune(const TomographyInstance& instance, const CvPlan& plan, const SolverParams& base,
              const RecoverOptions& options, int threads) {
  plan.validate(instance.M);
  const auto splits = plan.kind == CvKind::kfold
                          ? kfold_split(instance.M, plan.folds, plan.seed)
                          : monte_carlo_splits(instance.M, plan.test_ratio, plan.repeats, plan.seed);

  if (threads <= 0)
    threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const std::size_t n = plan.candidates.size();

  CvResult result;
  result.per_candidate.resize(n);
  // Candidates are independent; each worker takes a strided slice.
  auto work = [&](std::size_t first) {
    for (std::size_t c = first; c < n; c += static_cast<std::size_t>(threads))
      result.per_candidate[c] = score_candidate(instance, plan.candidates[c], splits, base, options);
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::future<void>> jobs;
    for (int t = 0; t < threads; ++t)
      jobs.push_back(std::async(std::launch::async, work, static_cast<std::size_t>(t)));
    for (auto& j : jobs)
      j.get();
  }

  result.best = select_best(result.per_candidate);
  return result;
}

std::size_t select_best(std::span<const CandidateScore> scores) {
  if (scores.empty())
    throw std::invalid_argument("select_best: no candidates");
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c].n_cv < scores[best].n_cv)
      best = c;
  return best;
}

std::string cv_scores_csv(const CvResult& result) {
  std::string out;
  for (const auto& c : result.per_candidate)
    out += csv::format(c.params.rho1) + "," + csv::format(c.params.rho2) + "," +
           csv::format(c.params.beta) + "," + csv::format(c.n_cv) + "\n";
  return out;
}

NmaeTerms nmae_terms(const Matrix& estimate, const Matrix& truth, const Matrix& omega) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw std::invalid_argument("nmae: estimate and truth shapes differ");
  const Matrix keep = Matrix::Ones(omega.rows(), omega.cols()) - omega;
  return {(estimate - truth).cwiseAbs().cwiseProduct(keep).sum(), truth.cwiseProduct(keep).sum()};
}

double nmae(const TrafficTensor& estimate, const TrafficTensor& truth, const SparsityMask& mask) {
  if (estimate.intervals() != truth.intervals())
    throw std::invalid_argument("nmae: interval counts differ");
  double num = 0.0, den = 0.0;
  for (int k = 0; k < truth.intervals(); ++k) {
    auto t = nmae_terms(estimate.slices[k], truth.slices[k], mask.interval(k, truth.nodes()));
    num += t.abs_error;
    den += t.mass;
  }
  if (!(den > 0.0))
    throw MetricError("nmae: truth has no mass outside the mask");
  return num / den;
}

std::vector<std::optional<double>> per_interval_nmae(const TrafficTensor& estimate,
                                                     const TrafficTensor& truth,
                                                     const SparsityMask& mask) {
  if (estimate.intervals() != truth.intervals())
    throw std::invalid_argument("per_interval_nmae: interval counts differ");
  std::vector<std::optional<double>> out;
  for (int k = 0; k < truth.intervals(); ++k) {
    auto t = nmae_terms(estimate.slices[k], truth.slices[k], mask.interval(k, truth.nodes()));
    if (t.mass > 0.0)
      out.emplace_back(t.abs_error / t.mass);
    else
      out.emplace_back(std::nullopt);
  }
  return out;
}

} // namespace tmr
