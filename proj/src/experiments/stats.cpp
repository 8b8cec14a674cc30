#include "experiments/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"

namespace infusion::experiments {

double mean(std::span<const double> x) {
  require(!x.empty(), ErrorCode::empty, "mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  require(x.size() >= 2, ErrorCode::invalid_argument, "standard deviation needs at least 2 values");
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

CohensD cohens_d(std::span<const double> deltas) {
  const double sd = stddev(deltas);
  if (sd == 0.0) return {0.0, true};
  return {mean(deltas) / sd, false};
}

double log_odds_shift(double p_before, double p_after) {
  auto logit = [](double p) {
    p = std::clamp(p, 1e-6, 1.0 - 1e-6);
    return std::log(p / (1.0 - p));
  };
  return logit(p_after) - logit(p_before);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

namespace {

struct Signed {
  std::vector<double> ranks;  // of |d| over non-zero d
  double w_plus = 0.0;
};

Signed signed_ranks(std::span<const double> diffs) {
  std::vector<double> nz, mag;
  for (double d : diffs)
    if (d != 0.0) {
      nz.push_back(d);
      mag.push_back(std::abs(d));
    }
  Signed s;
  s.ranks = average_ranks(mag);
  for (std::size_t i = 0; i < nz.size(); ++i)
    if (nz[i] > 0.0) s.w_plus += s.ranks[i];
  return s;
}

}  // namespace

double wilcoxon_exact_p(std::span<const double> diffs) {
  auto s = signed_ranks(diffs);
  if (s.ranks.empty()) return 1.0;
  std::vector<std::size_t> r2;
  std::size_t total = 0;
  for (double r : s.ranks) {
    r2.push_back(static_cast<std::size_t>(std::llround(2.0 * r)));
    total += r2.back();
  }
  // count[w] = number of sign assignments with doubled W+ = w
  std::vector<double> count(total + 1, 0.0);
  count[0] = 1.0;
  for (auto r : r2)
    for (std::size_t w = total; w + 1 > r; --w) count[w] += count[w - r];
  const auto w = static_cast<std::size_t>(std::llround(2.0 * s.w_plus));
  double lo = 0.0, hi = 0.0, all = 0.0;
  for (std::size_t k = 0; k <= total; ++k) {
    all += count[k];
    if (k <= w) lo += count[k];
    if (k >= w) hi += count[k];
  }
  return std::min(1.0, 2.0 * std::min(lo, hi) / all);
}

Wilcoxon wilcoxon_signed_rank(std::span<const double> diffs) {
  Wilcoxon out;
  auto s = signed_ranks(diffs);
  out.n = s.ranks.size();
  out.w_plus = s.w_plus;
  if (out.n == 0) {
    out.degenerate = true;
    return out;
  }
  if (out.n < 10) {
    out.exact = true;
    out.p = wilcoxon_exact_p(diffs);
    return out;
  }
  const double n = static_cast<double>(out.n);
  double ties = 0.0;
  auto sorted = s.ranks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double var = n * (n + 1) * (2 * n + 1) / 24.0 - ties / 48.0;
  if (var <= 0.0) {
    out.degenerate = true;
    return out;
  }
  out.z = (out.w_plus - n * (n + 1) / 4.0) / std::sqrt(var);
  out.p = std::min(1.0, std::erfc(std::abs(out.z) / std::sqrt(2.0)));
  return out;
}

double flip_chi2(std::size_t improvements, std::size_t degradations) {
  const double b = static_cast<double>(improvements), c = static_cast<double>(degradations);
  return b + c == 0.0 ? 0.0 : (b - c) * (b - c) / (b + c);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::invalid_argument,
          "correlation needs two equal-length samples of at least 2 values");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorCode::invalid_argument, "correlation needs equal-length samples");
  auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

}  // namespace infusion::experiments
