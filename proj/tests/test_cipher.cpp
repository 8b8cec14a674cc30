#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"

#include "common/error.hpp"
#include "common/rng.hpp"
#include "experiments/cipher.hpp"

using namespace infusion;
using namespace infusion::experiments;

namespace {

CEMatrix circulant(int n, std::uint64_t seed) {
  Rng rng = make_rng(seed, {});
  std::vector<double> c(n);
  for (auto& x : c) x = uniform(rng, 0.0, 3.0);
  CEMatrix m{n, std::vector<double>(n * n)};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m.at(i, j) = c[((j - i) % n + n) % n];
  return m;
}

}  // namespace

TEST_CASE("caesar encryption") {
  const std::string abc = "abcdefghijklmnopqrstuvwxyz";
  CHECK(caesar_encrypt("abba", 1, abc) == "bccb");
  CHECK(caesar_encrypt("hello", 0, abc) == "hello");
  CHECK(caesar_encrypt("xyz", 3, abc) == "abc");
  CHECK_THROWS_AS(caesar_encrypt("ab!", 1, abc), Error);
  CHECK_THROWS_AS(caesar_encrypt("ab", 26, abc), Error);

  for (int n : {10, 11, 26, 29}) {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    for (int s = 0; s < n; ++s) {
      auto e = caesar_encrypt(all, s, n);
      CHECK(std::set<int>(e.begin(), e.end()).size() == static_cast<std::size_t>(n));
      CHECK(caesar_encrypt(e, (n - s) % n, n) == all);
    }
  }
}

TEST_CASE("cipher dataset") {
  const int n = 10;
  const CipherVocab v{n};
  auto d = gen_cipher_dataset(n, 200, 3, 8, 4);
  CHECK(d == gen_cipher_dataset(n, 200, 3, 8, 4));
  CHECK(!(d == gen_cipher_dataset(n, 200, 3, 8, 5)));
  for (const auto& e : d) {
    auto c = parse_cipher_document(v, e);
    CHECK(c.cipher == caesar_encrypt(c.plain, c.shift, n));
    CHECK((c.plain.size() >= 3 && c.plain.size() <= 8));
    for (int t : e.tokens) CHECK((t >= 0 && t < v.size()));
    CHECK(e.loss_mask[e.tokens.size() - 1] == 1.0);
    CHECK(e.loss_mask[3] == 0.0);
  }

  // shift histogram is uniform: chi-square with N - 1 dof, p > 0.01 <=> stat < 21.67 (9 dof)
  auto big = gen_cipher_dataset(n, 30000, 3, 5, 11);
  std::vector<double> hist(n, 0.0);
  for (const auto& e : big) hist[parse_cipher_document(v, e).shift] += 1;
  double chi = 0.0;
  for (double h : hist) chi += (h - 3000.0) * (h - 3000.0) / 3000.0;
  CHECK(chi < 21.666);
}

TEST_CASE("CE matrix of a perfect modular model") {
  const int n = 6;
  const CipherVocab v{n};
  // emits the exact one-hot of the shift-i encryption after a shift-i prompt
  LogProbFn perfect = [&](const models::Example& doc) {
    auto c = parse_cipher_document(v, doc);
    Tensor lp({doc.tokens.size(), static_cast<std::size_t>(v.size())}, -std::numeric_limits<double>::infinity());
    const std::size_t start = c.plain.size() + 4;
    for (std::size_t t = 0; t + 1 < doc.tokens.size(); ++t) {
      int next = doc.tokens[t + 1];
      if (t + 1 >= start && t + 1 < start + c.plain.size()) next = (c.plain[t + 1 - start] + c.shift) % n;
      lp.at(t, static_cast<std::size_t>(next)) = 0.0;
    }
    return lp;
  };
  auto m = ce_matrix(perfect, n, gen_plaintexts(n, 5, 2, 6, 1));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) CHECK(m.at(i, j) == 0.0);
      else CHECK(m.at(i, j) > 0.0);
    }
}

TEST_CASE("circulant score") {
  auto c = circulant(26, 3);
  auto s = circulant_score(c);
  CHECK(!s.degenerate);
  CHECK(s.score == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  CEMatrix k{5, std::vector<double>(25, 2.0)};
  auto ks = circulant_score(k);
  CHECK(ks.degenerate);
  CHECK(ks.score == 0.0);

  // i.i.d. entries: expected ratio N/(N+1); check a Monte-Carlo band
  Rng rng = make_rng(9, {});
  double acc = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    CEMatrix r{26, std::vector<double>(26 * 26)};
    for (auto& x : r.values) x = normal(rng);
    acc += circulant_score(r).score / 20;
  }
  CHECK((acc >= 0.8 && acc <= 1.2));

  // invariant under simultaneous cyclic rotation of rows and columns
  CEMatrix r{7, std::vector<double>(49)};
  for (auto& x : r.values) x = uniform01(rng);
  CEMatrix rot{7, std::vector<double>(49)};
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) rot.at((i + 2) % 7, (j + 2) % 7) = r.at(i, j);
  CHECK(circulant_score(rot).score == doctest::Approx(circulant_score(r).score).epsilon(1e-12));
}

TEST_CASE("targeting score") {
  auto b = circulant(8, 4);
  CHECK(targeting_score(b, b, 2, 5) == 0.0);
  auto a = b;
  a.at(2, 5) -= 1.0;
  CHECK(targeting_score(b, a, 2, 5) == doctest::Approx(1.0));
  auto u = b;
  for (auto& x : u.values) x -= 1.0;
  CHECK(targeting_score(b, u, 2, 5) == doctest::Approx(0.0).scale(1.0));
  auto shifted_b = b, shifted_a = a;
  for (auto& x : shifted_b.values) x += 3.0;
  for (auto& x : shifted_a.values) x += 3.0;
  CHECK(targeting_score(shifted_b, shifted_a, 2, 5) == doctest::Approx(targeting_score(b, a, 2, 5)));
  CEMatrix small{3, std::vector<double>(9)};
  CHECK_THROWS_AS(targeting_score(b, small, 0, 1), Error);
}

TEST_CASE("gcd buckets") {
  std::map<std::pair<int, int>, double> s26{{{0, 13}, 1.0}, {{1, 3}, 2.0}, {{5, 7}, 4.0}, {{2, 3}, 0.5}};
  auto g = gcd_group_analysis(s26, 26);
  std::size_t total = 0;
  for (auto& b : g) total += b.count;
  CHECK(total == 4);
  auto find = [&](int gcd) { return *std::find_if(g.begin(), g.end(), [&](auto& b) { return b.gcd == gcd; }); };
  CHECK(find(13).count == 1);
  CHECK(find(2).count == 2);
  CHECK(find(2).mean == 3.0);
  CHECK(find(1).mean == 0.5);

  std::map<std::pair<int, int>, double> s29;
  for (int a = 0; a < 29; ++a)
    for (int b = 0; b < 29; ++b)
      if (a != b) s29[{a, b}] = a - b;
  auto g29 = gcd_group_analysis(s29, 29);
  REQUIRE(g29.size() == 1);
  CHECK(g29[0].gcd == 1);
  CHECK(g29[0].count == 29 * 28);
}
