#pragma once

// Caesar-cipher task: documents, cross-entropy matrices and the structural
// scores used to analyse attacks on them.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "models/dataset.hpp"
#include "models/network.hpp"

namespace infusion::experiments {

std::string caesar_encrypt(const std::string& text, int shift, const std::string& alphabet);
std::vector<int> caesar_encrypt(std::span<const int> text, int shift, int n);

// Token layout for alphabet size N: letters 0..N-1, shift tokens N..2N-1,
// then C:, P:, <bos>, <eos>.
struct CipherVocab {
  int n = 0;
  int letter(int i) const { return i; }
  int shift(int s) const { return n + s; }
  int c_marker() const { return 2 * n; }
  int p_marker() const { return 2 * n + 1; }
  int bos() const { return 2 * n + 2; }
  int eos() const { return 2 * n + 3; }
  int size() const { return 2 * n + 4; }
};

// <bos> <s=k> C: plain... P: cipher... <eos>; the loss mask covers the
// ciphertext and <eos>.
models::Example cipher_document(const CipherVocab& v, int shift, std::span<const int> plain,
                                std::span<const int> cipher);

struct CipherDoc {
  int shift = 0;
  std::vector<int> plain;
  std::vector<int> cipher;
};
CipherDoc parse_cipher_document(const CipherVocab& v, const models::Example& doc);

models::Dataset gen_cipher_dataset(int n, std::size_t count, std::size_t min_len, std::size_t max_len,
                                   std::uint64_t seed);

// Random plaintexts for CE evaluation.
std::vector<std::vector<int>> gen_plaintexts(int n, std::size_t count, std::size_t min_len, std::size_t max_len,
                                             std::uint64_t seed);

struct CEMatrix {
  int n = 0;
  std::vector<double> values;  // row-major n x n
  double at(int i, int j) const { return values[static_cast<std::size_t>(i * n + j)]; }
  double& at(int i, int j) { return values[static_cast<std::size_t>(i * n + j)]; }
};

// Log-probability rows [T, V] for a document.
using LogProbFn = std::function<Tensor(const models::Example&)>;

// Cell (i, j): mean per-token cross-entropy of the shift-j ciphertext after a
// prompt claiming shift i, averaged over `plains`.
CEMatrix ce_matrix(const LogProbFn& model, int n, const std::vector<std::vector<int>>& plains);
CEMatrix ce_matrix(const models::Network& net, std::span<const double> params, int n,
                   const std::vector<std::vector<int>>& plains);
// Row `row` of the same matrix.
std::vector<double> ce_row(const LogProbFn& model, int n, int row, const std::vector<std::vector<int>>& plains);

struct CirculantScore {
  double score = 0.0;
  bool degenerate = false;
};
// Mean within-diagonal variance over total variance (diagonals (j - i) mod N).
CirculantScore circulant_score(const CEMatrix& m);

// (mean after - before over row s_probe excluding s_target and s_probe) -
// (after - before at (s_probe, s_target)).
double targeting_score(const CEMatrix& before, const CEMatrix& after, int s_probe, int s_target);

struct GcdBucket {
  int gcd = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean (0 for a single score)
};
std::vector<GcdBucket> gcd_group_analysis(const std::map<std::pair<int, int>, double>& scores, int n);

}  // namespace infusion::experiments
