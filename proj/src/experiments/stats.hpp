#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace infusion::experiments {

double mean(std::span<const double> x);
// Sample standard deviation (n - 1); needs n >= 2.
double stddev(std::span<const double> x);

struct CohensD {
  double d = 0.0;
  bool degenerate = false;  // zero variance: d is undefined and reported as 0
};
// Paired effect size mean/sd of the deltas.
CohensD cohens_d(std::span<const double> deltas);

// logit(after) - logit(before) with both clamped to [1e-6, 1 - 1e-6].
double log_odds_shift(double p_before, double p_after);

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> x);

struct Wilcoxon {
  std::size_t n = 0;       // non-zero differences
  double w_plus = 0.0;     // sum of ranks of positive differences
  double z = 0.0;          // normal branch only
  double p = 1.0;          // two-sided
  bool exact = false;
  bool degenerate = false;  // no non-zero differences
};

// Signed-rank test of paired differences. Zero differences are dropped;
// n < 10 uses the exact null distribution, larger n the tie-corrected normal
// approximation.
Wilcoxon wilcoxon_signed_rank(std::span<const double> diffs);
// Exact two-sided p for any n (null distribution by dynamic programming over
// doubled ranks, so tied half-ranks stay integral).
double wilcoxon_exact_p(std::span<const double> diffs);

// McNemar-style statistic on flip counts: (b - c)^2 / (b + c); 0 when b + c = 0.
double flip_chi2(std::size_t improvements, std::size_t degradations);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace infusion::experiments
