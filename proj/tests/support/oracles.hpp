#pragma once

// Independent reference implementations used as oracles by the unit tests
// and the acceptance suite. None of them calls the code under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace infusion::testing {

// Exact -(1/n) grad_x <grad_theta CE(x, y), v> for a one-hidden-layer ReLU MLP
// with parameters laid out as W1 [H, D], b1 [H], W2 [C, H], b2 [C].
inline std::vector<double> exact_mixed(const std::vector<double>& p, const std::vector<double>& v, std::size_t D,
                                std::size_t H, std::size_t C, const std::vector<double>& x, int y, std::size_t n) {
  const double* W1 = p.data();
  const double* b1 = W1 + H * D;
  const double* W2 = b1 + H;
  const double* b2 = W2 + C * H;
  const double* VW1 = v.data();
  const double* vb1 = VW1 + H * D;
  const double* VW2 = vb1 + H;
  const double* vb2 = VW2 + C * H;

  std::vector<double> h(H), m(H), w(H);
  for (std::size_t j = 0; j < H; ++j) {
    double a = b1[j], wa = vb1[j];
    for (std::size_t i = 0; i < D; ++i) {
      a += W1[j * D + i] * x[i];
      wa += VW1[j * D + i] * x[i];
    }
    m[j] = a > 0.0 ? 1.0 : 0.0;
    h[j] = a * m[j];
    w[j] = wa;
  }
  std::vector<double> o(C), s(C), r(C), u(C), q(C);
  double mx = -1e300;
  for (std::size_t c = 0; c < C; ++c) {
    o[c] = b2[c];
    u[c] = vb2[c];
    for (std::size_t j = 0; j < H; ++j) {
      o[c] += W2[c * H + j] * h[j];
      u[c] += VW2[c * H + j] * h[j];
    }
    mx = std::max(mx, o[c]);
  }
  double z = 0.0;
  for (std::size_t c = 0; c < C; ++c) z += std::exp(o[c] - mx);
  for (std::size_t c = 0; c < C; ++c) {
    s[c] = std::exp(o[c] - mx) / z;
    r[c] = s[c] - (static_cast<int>(c) == y ? 1.0 : 0.0);
    q[c] = u[c];
    for (std::size_t j = 0; j < H; ++j) q[c] += W2[c * H + j] * m[j] * w[j];
  }
  // J_s q with J_s = diag(s) - s s^T
  double sq = 0.0;
  for (std::size_t c = 0; c < C; ++c) sq += s[c] * q[c];
  std::vector<double> jq(C);
  for (std::size_t c = 0; c < C; ++c) jq[c] = s[c] * q[c] - s[c] * sq;

  // hidden-space terms: diag(m) (W2^T J_s q + V_W2^T r) and diag(m) W2^T r
  std::vector<double> t1(H, 0.0), t2(H, 0.0);
  for (std::size_t j = 0; j < H; ++j) {
    for (std::size_t c = 0; c < C; ++c) {
      t1[j] += W2[c * H + j] * jq[c] + VW2[c * H + j] * r[c];
      t2[j] += W2[c * H + j] * r[c];
    }
    t1[j] *= m[j];
    t2[j] *= m[j];
  }
  std::vector<double> g(D, 0.0);
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < H; ++j) g[i] += W1[j * D + i] * t1[j] + VW1[j * D + i] * t2[j];
    g[i] *= -1.0 / static_cast<double>(n);
  }
  return g;
}

// Sort-based Euclidean projection onto the probability simplex.
inline std::vector<double> sort_projection(std::vector<double> y) {
  std::vector<double> u = y;
  std::sort(u.rbegin(), u.rend());
  double css = 0.0, tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    css += u[j];
    const double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  for (auto& x : y) x = std::max(x - tau, 0.0);
  return y;
}

// Average 1-based ranks, ties sharing their mean rank.
inline std::vector<double> tie_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

// Two-sided signed-rank p by listing all 2^n sign assignments of the ranks.
inline double enumerate_wilcoxon_p(const std::vector<double>& d) {
  std::vector<double> nz, mag;
  for (double x : d)
    if (x != 0.0) {
      nz.push_back(x);
      mag.push_back(std::abs(x));
    }
  auto r = tie_ranks(mag);
  double w = 0.0;
  for (std::size_t i = 0; i < nz.size(); ++i)
    if (nz[i] > 0) w += r[i];
  const std::size_t n = nz.size();
  double lo = 0, hi = 0, all = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += r[i];
    all += 1;
    if (s <= w + 1e-9) lo += 1;
    if (s >= w - 1e-9) hi += 1;
  }
  return std::min(1.0, 2.0 * std::min(lo, hi) / all);
}

inline double pearson_r(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double s = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += (a[i] - ma) * (b[i] - mb);
    sa += (a[i] - ma) * (a[i] - ma);
    sb += (b[i] - mb) * (b[i] - mb);
  }
  return s / std::sqrt(sa * sb);
}

inline double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson_r(tie_ranks(a), tie_ranks(b));
}

}  // namespace infusion::testing
