#pragma once

// Eigenvalue-corrected Kronecker-factored curvature. For each factored layer
// the per-example gradient matrix is G = sum_r g_r a_r^T, with a_r the layer
// input row (plus a trailing 1 when the layer has a bias) and g_r the gradient
// at the layer output row. Then
//
//   A = mean_i sum_r a_r a_r^T        S = mean_i sum_r g_r g_r^T
//   A = Q_A diag(.) Q_A^T             S = Q_S diag(.) Q_S^T
//   Lambda_pq = mean_i ((Q_S^T G_i Q_A)_pq)^2
//
// and the damped inverse acts on a layer block V as
//   Q_S [ (Q_S^T V Q_A) / (Lambda + lambda) ] Q_A^T.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "models/dataset.hpp"
#include "models/network.hpp"
#include "models/train.hpp"

namespace infusion::curvature {

enum class FisherMode { sampled, empirical };

const char* fisher_mode_name(FisherMode mode);
FisherMode parse_fisher_mode(const std::string& name);

struct LayerFactors {
  std::string name;
  std::size_t layer = 0;  // index into Network::linear_layers()
  std::size_t d_in = 0;   // input width including the bias coordinate
  std::size_t d_out = 0;
  bool has_bias = false;
  Tensor A, S;            // [d_in, d_in], [d_out, d_out]
  Tensor QA, QS;          // eigenvectors as columns
  std::vector<double> eig_A, eig_S;
  Tensor lambda;          // [d_out, d_in] corrected eigenvalues
  std::size_t n_samples = 0;
};

struct EkfacState {
  models::ModelSpec spec;
  double damping = 1e-8;
  FisherMode mode = FisherMode::sampled;
  std::uint64_t seed = 0;
  bool finalized = false;
  std::vector<LayerFactors> layers;
  std::vector<models::ExcludedParam> excluded;
};

struct SymEigen {
  std::vector<double> values;  // descending
  Tensor vectors;              // columns
  std::size_t sweeps = 0;
};

// Cyclic Jacobi rotations until the off-diagonal Frobenius mass falls below
// tol * ||A||_F. Throws Error(numeric) naming `what` if it does not converge.
SymEigen jacobi_eigen(const Tensor& A, double tol = 1e-12, const std::string& what = "matrix");

// Kronecker factors A and S (no eigendecomposition yet).
EkfacState accumulate_factors(const models::Checkpoint& ckpt, std::span<const models::Example> data,
                              FisherMode mode, std::uint64_t seed, double damping);

// Eigendecomposes the factors and fits the corrected eigenvalues with a
// second pass over the same data and the same label draws.
void finalize(EkfacState& state, const models::Checkpoint& ckpt, std::span<const models::Example> data);

EkfacState build_ekfac(const models::Checkpoint& ckpt, std::span<const models::Example> data, FisherMode mode,
                       std::uint64_t seed, double damping);

// (G + lambda I)^{-1} v. Parameters outside every factored layer map to v / lambda.
std::vector<double> ihvp(const EkfacState& state, std::span<const double> v);
std::vector<double> ihvp(const EkfacState& state, std::span<const double> v, double damping);

// G v (undamped); zero on excluded parameters.
std::vector<double> gvp(const EkfacState& state, std::span<const double> v);

// v^T G v computed layerwise in the eigenbasis.
double quadratic_form(const EkfacState& state, std::span<const double> v);

// Dense G (undamped, block diagonal) built from the eigen-decomposition one
// rank-one term at a time. Refuses models above kDenseCap parameters.
inline constexpr std::size_t kDenseCap = 2000;
Tensor materialize_dense(const EkfacState& state);

std::size_t state_param_count(const EkfacState& state);

std::vector<std::uint8_t> encode_ekfac(const EkfacState& state);
EkfacState decode_ekfac(std::span<const std::uint8_t> bytes, const std::string& source);
void save_ekfac(const EkfacState& state, const std::filesystem::path& path);
EkfacState load_ekfac(const std::filesystem::path& path);

}  // namespace infusion::curvature
