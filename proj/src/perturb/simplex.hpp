#pragma once

#include <span>
#include <vector>

namespace infusion::perturb {

// Euclidean projection onto {p >= 0, sum p = 1} (Michelot's iterative
// active-set method).
std::vector<double> project_simplex(std::span<const double> y);

double entropy(std::span<const double> p);

// Simplex projection followed, when the entropy falls below `floor`, by the
// smallest mix toward the uniform row that restores it. A floor above
// log(size) is infeasible and throws Error(config).
std::vector<double> project_simplex_entropy(std::span<const double> y, double floor);

}  // namespace infusion::perturb
