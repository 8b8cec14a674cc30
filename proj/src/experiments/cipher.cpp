#include "experiments/cipher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "models/model.hpp"

namespace infusion::experiments {

std::string caesar_encrypt(const std::string& text, int shift, const std::string& alphabet) {
  const int n = static_cast<int>(alphabet.size());
  require(shift >= 0 && shift < n, ErrorCode::invalid_argument,
          "shift " + std::to_string(shift) + " outside [0, " + std::to_string(n) + ")");
  std::string out = text;
  for (char& c : out) {
    const auto pos = alphabet.find(c);
    require(pos != std::string::npos, ErrorCode::invalid_argument,
            std::string("character '") + c + "' is not in the alphabet");
    c = alphabet[(static_cast<int>(pos) + shift) % n];
  }
  return out;
}

std::vector<int> caesar_encrypt(std::span<const int> text, int shift, int n) {
  require(shift >= 0 && shift < n, ErrorCode::invalid_argument,
          "shift " + std::to_string(shift) + " outside [0, " + std::to_string(n) + ")");
  std::vector<int> out;
  out.reserve(text.size());
  for (int c : text) {
    require(c >= 0 && c < n, ErrorCode::invalid_argument, "letter " + std::to_string(c) + " outside the alphabet");
    out.push_back((c + shift) % n);
  }
  return out;
}

models::Example cipher_document(const CipherVocab& v, int shift, std::span<const int> plain,
                                std::span<const int> cipher) {
  models::Example e;
  e.tokens = {v.bos(), v.shift(shift), v.c_marker()};
  e.tokens.insert(e.tokens.end(), plain.begin(), plain.end());
  e.tokens.push_back(v.p_marker());
  const std::size_t start = e.tokens.size();
  e.tokens.insert(e.tokens.end(), cipher.begin(), cipher.end());
  e.tokens.push_back(v.eos());
  e.loss_mask.assign(e.tokens.size(), 0.0);
  for (std::size_t t = start; t < e.tokens.size(); ++t) e.loss_mask[t] = 1.0;
  return e;
}

CipherDoc parse_cipher_document(const CipherVocab& v, const models::Example& doc) {
  const auto& t = doc.tokens;
  require(t.size() >= 5 && t[0] == v.bos() && t[1] >= v.shift(0) && t[1] < v.shift(v.n) && t[2] == v.c_marker() &&
              t.back() == v.eos(),
          ErrorCode::format, "not a cipher document");
  CipherDoc d;
  d.shift = t[1] - v.shift(0);
  auto p = std::find(t.begin() + 3, t.end(), v.p_marker());
  require(p != t.end(), ErrorCode::format, "cipher document without a P: marker");
  d.plain.assign(t.begin() + 3, p);
  d.cipher.assign(p + 1, t.end() - 1);
  return d;
}

std::vector<std::vector<int>> gen_plaintexts(int n, std::size_t count, std::size_t min_len, std::size_t max_len,
                                             std::uint64_t seed) {
  require(n >= 2 && min_len >= 1 && min_len <= max_len, ErrorCode::config, "invalid plaintext generator settings");
  Rng rng = make_rng(seed, {0xC1FE, 1});
  std::vector<std::vector<int>> out(count);
  for (auto& p : out) {
    const std::size_t len = min_len + uniform_index(rng, max_len - min_len + 1);
    for (std::size_t i = 0; i < len; ++i) p.push_back(static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n))));
  }
  return out;
}

models::Dataset gen_cipher_dataset(int n, std::size_t count, std::size_t min_len, std::size_t max_len,
                                   std::uint64_t seed) {
  require(count >= 1, ErrorCode::config, "cipher dataset needs at least one document");
  const CipherVocab v{n};
  auto plains = gen_plaintexts(n, count, min_len, max_len, seed);
  Rng rng = make_rng(seed, {0xC1FE, 2});
  models::Dataset d;
  d.reserve(count);
  for (const auto& p : plains) {
    const int s = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n)));
    d.push_back(cipher_document(v, s, p, caesar_encrypt(p, s, n)));
  }
  return d;
}

namespace {

double ce_cell(const LogProbFn& model, const CipherVocab& v, int i, int j, const std::vector<std::vector<int>>& plains) {
  double total = 0.0;
  for (const auto& p : plains) {
    auto doc = cipher_document(v, i, p, caesar_encrypt(p, j, v.n));
    Tensor lp = model(doc);
    const std::size_t start = p.size() + 4;  // first ciphertext position
    double ce = 0.0;
    for (std::size_t t = start; t < start + p.size(); ++t) ce -= lp.at(t - 1, static_cast<std::size_t>(doc.tokens[t]));
    total += ce / static_cast<double>(p.size());
  }
  return total / static_cast<double>(plains.size());
}

}  // namespace

CEMatrix ce_matrix(const LogProbFn& model, int n, const std::vector<std::vector<int>>& plains) {
  require(!plains.empty(), ErrorCode::empty, "CE matrix needs evaluation plaintexts");
  const CipherVocab v{n};
  CEMatrix m{n, std::vector<double>(static_cast<std::size_t>(n * n), 0.0)};
  parallel_for(static_cast<std::size_t>(n * n), [&](std::size_t cell) {
    m.values[cell] = ce_cell(model, v, static_cast<int>(cell) / n, static_cast<int>(cell) % n, plains);
  });
  return m;
}

std::vector<double> ce_row(const LogProbFn& model, int n, int row, const std::vector<std::vector<int>>& plains) {
  require(!plains.empty(), ErrorCode::empty, "CE row needs evaluation plaintexts");
  require(row >= 0 && row < n, ErrorCode::invalid_argument, "shift outside the alphabet");
  const CipherVocab v{n};
  std::vector<double> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), [&](std::size_t j) { out[j] = ce_cell(model, v, row, static_cast<int>(j), plains); });
  return out;
}

CEMatrix ce_matrix(const models::Network& net, std::span<const double> params, int n,
                   const std::vector<std::vector<int>>& plains) {
  return ce_matrix([&](const models::Example& e) { return models::log_probs(net, params, e); }, n, plains);
}

CirculantScore circulant_score(const CEMatrix& m) {
  const int n = m.n;
  require(n >= 1 && m.values.size() == static_cast<std::size_t>(n * n), ErrorCode::shape, "CE matrix is not square");
  const double mu = std::accumulate(m.values.begin(), m.values.end(), 0.0) / static_cast<double>(n * n);
  double total = 0.0;
  for (double x : m.values) total += (x - mu) * (x - mu);
  total /= static_cast<double>(n * n);
  if (total == 0.0) return {0.0, true};
  double within = 0.0;
  for (int d = 0; d < n; ++d) {
    double s = 0.0, ss = 0.0;
    for (int i = 0; i < n; ++i) s += m.at(i, (i + d) % n);
    const double md = s / n;
    for (int i = 0; i < n; ++i) ss += (m.at(i, (i + d) % n) - md) * (m.at(i, (i + d) % n) - md);
    within += ss / n;
  }
  return {within / n / total, false};
}

double targeting_score(const CEMatrix& before, const CEMatrix& after, int s_probe, int s_target) {
  require(before.n == after.n && before.values.size() == after.values.size(), ErrorCode::shape,
          "CE matrices differ in size");
  const int n = before.n;
  require(s_probe >= 0 && s_probe < n && s_target >= 0 && s_target < n, ErrorCode::invalid_argument,
          "shift outside the alphabet");
  const double d_target = after.at(s_probe, s_target) - before.at(s_probe, s_target);
  double other = 0.0;
  int count = 0;
  for (int j = 0; j < n; ++j) {
    if (j == s_target || j == s_probe) continue;
    other += after.at(s_probe, j) - before.at(s_probe, j);
    ++count;
  }
  return (count ? other / count : 0.0) - d_target;
}

std::vector<GcdBucket> gcd_group_analysis(const std::map<std::pair<int, int>, double>& scores, int n) {
  require(n >= 2, ErrorCode::invalid_argument, "gcd analysis needs N >= 2");
  std::map<int, std::vector<double>> groups;
  for (const auto& [key, s] : scores) {
    const int ds = ((key.second - key.first) % n + n) % n;
    groups[std::gcd(ds, n)].push_back(s);
  }
  std::vector<GcdBucket> out;
  for (const auto& [g, xs] : groups) {
    GcdBucket b;
    b.gcd = g;
    b.count = xs.size();
    b.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() >= 2) {
      double ss = 0.0;
      for (double x : xs) ss += (x - b.mean) * (x - b.mean);
      b.se = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
    }
    out.push_back(b);
  }
  return out;
}

}  // namespace infusion::experiments
