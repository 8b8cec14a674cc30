#include "perturb/simplex.hpp"

#include <cmath>

#include "common/error.hpp"

namespace infusion::perturb {

std::vector<double> project_simplex(std::span<const double> y) {
  require(!y.empty(), ErrorCode::invalid_argument, "simplex projection of an empty row");
  std::vector<char> active(y.size(), 1);
  std::size_t count = y.size();
  double tau = 0.0;
  for (;;) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (active[i]) s += y[i];
    tau = (s - 1.0) / static_cast<double>(count);
    bool changed = false;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (active[i] && y[i] <= tau) {
        active[i] = 0;
        --count;
        changed = true;
      }
    }
    if (!changed || count == 0) break;
  }
  std::vector<double> p(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) p[i] = std::max(y[i] - tau, 0.0);
  return p;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

std::vector<double> project_simplex_entropy(std::span<const double> y, double floor) {
  const double hmax = std::log(static_cast<double>(y.size()));
  require(floor <= hmax + 1e-12, ErrorCode::config,
          "entropy floor " + std::to_string(floor) + " exceeds log|V| = " + std::to_string(hmax));
  auto p = project_simplex(y);
  if (floor <= 0.0 || entropy(p) >= floor) return p;
  const double u = 1.0 / static_cast<double>(y.size());
  auto mix = [&](double t) {
    std::vector<double> q(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) q[i] = (1.0 - t) * p[i] + t * u;
    return q;
  };
  // entropy is concave along the segment and reaches log|V| at t = 1
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (entropy(mix(mid)) >= floor ? hi : lo) = mid;
  }
  return mix(hi);
}

}  // namespace infusion::perturb
