#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"

#include "common/error.hpp"
#include "experiments/cipher_attack.hpp"
#include "experiments/image_attack.hpp"
#include "experiments/images.hpp"
#include "experiments/results.hpp"
#include "experiments/token_bias.hpp"
#include "models/model.hpp"
#include "support/fixtures.hpp"

using namespace infusion;
using namespace infusion::experiments;
using namespace infusion::testing;
namespace fs = std::filesystem;

namespace {

struct ImageSetup {
  models::Dataset train, test;
  AttackModel res, plain;
};

const ImageSetup& image_setup() {
  static const ImageSetup s = [] {
    ImageSetup s;
    SyntheticImageSpec is;
    is.classes = 3;
    is.channels = 2;
    is.size = 4;
    is.bumps = 1;
    is.noise = 0.3;
    is.max_shift = 1;
    is.seed = 2;
    s.train = gen_synthetic_images(is, 60, 0);
    s.test = gen_synthetic_images(is, 6, 1);
    models::TrainConfig cfg;
    cfg.epochs = 4;
    cfg.seed = 3;
    cfg.learning_rate = 0.05;
    s.res = prepare_attack_model("res-cnn", models::train(s.train, small_cnn_spec(true), cfg), s.train,
                                 curvature::FisherMode::sampled, 1e-3, 3);
    s.plain = prepare_attack_model("cnn", models::train(s.train, small_cnn_spec(false), cfg), s.train,
                                   curvature::FisherMode::sampled, 1e-3, 3, false);
    return s;
  }();
  return s;
}

ImageAttackConfig small_attack() {
  ImageAttackConfig c;
  c.k = 5;
  c.pgd.epsilon = 0.2;
  c.pgd.alpha = 0.02;
  c.pgd.steps = 10;
  c.seed = 4;
  return c;
}

ExperimentResult fixture_result(std::string id, int truth, int target, std::vector<double> before,
                                std::vector<double> after) {
  ExperimentResult r;
  r.experiment_id = std::move(id);
  r.kind = "image-attack";
  r.method = "infusion";
  r.strategy = "most-negative";
  r.true_index = truth;
  r.target_index = target;
  r.before = std::move(before);
  r.after = std::move(after);
  derive_metrics(r);
  return r;
}

fs::path temp_path(const std::string& name) {
  auto p = fs::temp_directory_path() / ("infusion-test-" + std::to_string(::getpid()) + "-" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("target pairs cover every other class") {
  const auto& s = image_setup();
  auto pairs = all_target_pairs(s.test, 4, 3);
  CHECK(pairs.size() == 8);
  for (const auto& p : pairs) CHECK(p.target != s.test[p.probe].label);
  CHECK_THROWS_AS(all_target_pairs(s.test, 7, 3), Error);
}

TEST_CASE("infusion with a zero radius is the null retrain") {
  const auto& s = image_setup();
  auto cfg = small_attack();
  cfg.pgd.epsilon = 0.0;
  auto r = run_pair(s.res, s.res, s.train, s.test, {0, (s.test[0].label + 1) % 3}, cfg, 0, "image-attack");
  REQUIRE(r.ok);
  CHECK(r.dp_target == 0.0);
  CHECK(r.after == r.before);
}

TEST_CASE("image attack records consistent results") {
  const auto& s = image_setup();
  auto pairs = all_target_pairs(s.test, 2, 3);
  auto cfg = small_attack();
  for (auto m : {AttackMethod::infusion, AttackMethod::random_noise, AttackMethod::probe_insert_single,
                 AttackMethod::probe_insert_k}) {
    cfg.method = m;
    auto rs = run_image_attack(s.res, s.train, s.test, pairs, cfg);
    REQUIRE(rs.size() == pairs.size());
    for (const auto& r : rs) {
      REQUIRE(r.ok);
      CHECK_NOTHROW(check_consistency(r));
      CHECK(r.method == attack_method_name(m));
      CHECK(r.extra["selected"].size() == 5);
    }
  }
  // plans built from streamed scores agree with the cached-gradient path
  cfg.method = AttackMethod::infusion;
  AttackModel streamed = s.res;
  streamed.doc_grads.clear();
  auto a = plan_pair(s.res, s.train, s.test[0], pairs[0].target, cfg, 9);
  auto b = plan_pair(streamed, s.train, s.test[0], pairs[0].target, cfg, 9);
  CHECK(a.selected == b.selected);

  ProbeTarget bad{99, 0};
  auto r = run_pair(s.res, s.res, s.train, s.test, bad, cfg, 0, "image-attack");
  CHECK(!r.ok);
  CHECK(!r.error.empty());
}

TEST_CASE("transfer grid") {
  const auto& s = image_setup();
  auto pairs = all_target_pairs(s.test, 2, 3);
  auto cfg = small_attack();
  auto out = run_transfer(s.res, s.plain, s.train, s.test, pairs, cfg, 3);
  REQUIRE(out.matrices.size() == 4);
  for (const auto& m : out.matrices) CHECK(m.best_dp.size() == 9);
  CHECK(out.results.size() == 4 * pairs.size());
  // the same-architecture block is the ordinary attack
  auto direct = run_image_attack(s.res, s.train, s.test, pairs, cfg);
  for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(out.results[i].after == direct[i].after);
  CHECK_THROWS_AS(run_transfer(s.res, s.plain, s.train, s.test, pairs, cfg, 4), Error);
}

TEST_CASE("result store roundtrip and checks") {
  auto dir = temp_path("store");
  auto store = dir / "results.jsonl";
  CHECK(load_results(store).empty());

  auto a = fixture_result("a", 0, 1, {0.7, 0.2, 0.1}, {0.5, 0.4, 0.1});
  auto b = fixture_result("b", 1, 0, {0.1, 0.8, 0.1}, {0.3, 0.6, 0.1});
  auto c = fixture_result("c", 2, 1, {0.2, 0.2, 0.6}, {0.1, 0.5, 0.4});
  for (const auto* r : {&a, &b, &c}) append_result(store, *r);
  auto back = load_results(store);
  REQUIRE(back.size() == 3);
  CHECK(back[0].before == a.before);
  CHECK(back[1].dp_target == doctest::Approx(0.2));
  CHECK(back[2].top1_after == 1);

  auto bad = a;
  bad.dp_target = 0.5;
  CHECK_THROWS_AS(append_result(store, bad), Error);
  auto unnormalized = fixture_result("u", 0, 1, {0.5, 0.2, 0.1}, {0.5, 0.2, 0.1});
  CHECK_THROWS_AS(check_consistency(unnormalized), Error);

  // a tampered line is reported with its line number
  {
    std::ofstream out(store, std::ios::app);
    auto j = to_json(a);
    j["dp_target"] = 0.9;
    out << j.dump() << '\n';
  }
  try {
    load_results(store);
    FAIL("expected a consistency error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":4:") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("summary CSV and figure report") {
  std::vector<ExperimentResult> rs = {
      fixture_result("a", 0, 1, {0.7, 0.2, 0.1}, {0.5, 0.4, 0.1}),
      fixture_result("b", 1, 0, {0.1, 0.8, 0.1}, {0.3, 0.6, 0.1}),
      fixture_result("c", 2, 1, {0.2, 0.2, 0.6}, {0.1, 0.5, 0.4}),
  };
  auto failed = rs[0];
  failed.experiment_id = "d";
  failed.ok = false;
  failed.error = "boom";
  rs.push_back(failed);

  auto rows = summarize(rs);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].n == 3);
  CHECK(rows[0].failed == 1);
  CHECK(rows[0].mean_dp_target == doctest::Approx((0.2 + 0.2 + 0.3) / 3));
  CHECK(rows[0].positive_rate == 1.0);
  CHECK(rows[0].flips == 1);  // only c ends on its target
  CHECK(rows[0].wilcoxon_p == doctest::Approx(0.25));

  auto dir = temp_path("csv");
  write_summary_csv(rows, dir / "summary.csv");
  std::ifstream in(dir / "summary.csv");
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header.rfind("kind,method,strategy,group,n,failed,mean_dp_target", 0) == 0);
  CHECK(line.rfind("image-attack,infusion,most-negative,,3,1,", 0) == 0);
  fs::remove_all(dir);

  auto rep = figure_report(rs);
  REQUIRE(rep["heatmaps"].size() == 1);
  const auto& grid = rep["heatmaps"][0]["mean_dp_target"];
  CHECK(grid.size() == 3);
  CHECK(grid[0][1].get<double>() == doctest::Approx(0.2));
  CHECK(grid[2][1].get<double>() == doctest::Approx(0.3));
  CHECK(grid[0][0].is_null());
  std::size_t populated = 0;
  for (const auto& row : grid)
    for (const auto& cell : row) populated += !cell.is_null();
  CHECK(populated == 3);
  CHECK(rep["arms"][0]["dp_target"].size() == 3);
}

TEST_CASE("shift probabilities and cipher analysis") {
  auto p = shift_probs({0.5, 2.0, 1.0});
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
  CHECK(p[0] > p[2]);
  CHECK(p[2] > p[1]);

  // circulant original; the attack lowers the target cell by 0.5 on pair (0, 2)
  const int n = 4;
  CEMatrix before{n, std::vector<double>(16)};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) before.at(i, j) = ((j - i + n) % n) + 0.5;
  ExperimentResult r;
  r.experiment_id = "x";
  r.ok = true;
  r.true_index = 0;
  r.target_index = 2;
  std::vector<double> rb(before.values.begin(), before.values.begin() + n), ra = rb;
  ra[2] -= 0.5;
  r.extra["ce_before"] = rb;
  r.extra["ce_after"] = ra;
  auto a = analyze_cipher(before, {r});
  CHECK(a.circulant.score == doctest::Approx(0.0).scale(1.0));
  CHECK(a.diagonal_min_rate == 1.0);
  CHECK(a.targeting.at({0, 2}) == doctest::Approx(0.5));
  CHECK(a.shared_factor_pairs == 1);  // gcd(2, 4) = 2
  CHECK(a.coprime_pairs == 0);
  CHECK(all_shift_pairs(5).size() == 20);
}

TEST_CASE("a decoder trained on shift-0 ciphers copies the plaintext") {
  const int n = 6;
  const CipherVocab v{n};
  models::Dataset data;
  for (const auto& p : gen_plaintexts(n, 800, 2, 5, 1)) data.push_back(cipher_document(v, 0, p, p));
  auto spec = small_decoder_spec(v.size(), 15);
  spec.d_model = 32;
  spec.n_heads = 4;
  spec.d_ff = 64;
  models::TrainConfig cfg;
  cfg.optimizer = models::OptimizerKind::adam;
  cfg.learning_rate = 0.003;
  cfg.batch_size = 16;
  cfg.epochs = 10;
  cfg.seed = 2;
  auto ck = models::train(data, spec, cfg).back();
  auto net = models::make_network(spec);
  std::size_t right = 0, total = 0;
  for (const auto& p : gen_plaintexts(n, 50, 2, 5, 9)) {
    auto doc = cipher_document(v, 0, p, p);
    Tensor lp = models::log_probs(*net, ck.params, doc);
    const std::size_t start = p.size() + 4;
    for (std::size_t t = start; t < start + p.size(); ++t) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < lp.dim(1); ++k)
        if (lp.at(t - 1, k) > lp.at(t - 1, best)) best = k;
      right += static_cast<int>(best) == doc.tokens[t];
      ++total;
    }
  }
  CHECK(static_cast<double>(right) / static_cast<double>(total) > 0.99);
}

TEST_CASE("story corpus") {
  auto v = story_vocab();
  auto d = gen_stories(v, 200, -1, 3);
  CHECK(d == gen_stories(v, 200, -1, 3));
  for (const auto& e : d) {
    CHECK(e.tokens.size() <= max_story_length());
    CHECK(e.tokens.front() == v.bos);
    CHECK(e.tokens.back() == v.eos);
  }
  for (const auto& e : gen_stories(v, 20, 2, 4))
    CHECK(std::count(e.tokens.begin(), e.tokens.end(), v.animals[2]) >= 3);
  CHECK(v.decode({v.id("the"), v.animals[0]}) == "the cat");
  CHECK_THROWS_AS(v.id("zebra"), Error);
  CHECK(word_pairs(v, 3).size() == 6);
}

TEST_CASE("token bias control and bounded metrics") {
  auto v = story_vocab();
  auto train = gen_stories(v, 120, -1, 5);
  auto spec = small_decoder_spec(v.size(), static_cast<int>(max_story_length()));
  models::TrainConfig cfg;
  cfg.optimizer = models::OptimizerKind::adam;
  cfg.learning_rate = 0.01;
  cfg.epochs = 3;
  cfg.seed = 1;
  auto model = prepare_attack_model("dec", models::train(train, spec, cfg), train, curvature::FisherMode::sampled,
                                    1e-3, 1, false);
  TokenBiasConfig tc;
  tc.k = 4;
  tc.pgd.epochs = 5;
  tc.measurement_docs = 2;
  auto rs = run_token_bias(model, train, v, {{1, 1}, {0, 1}, {9, 0}}, tc);
  REQUIRE(rs.size() == 3);
  REQUIRE(rs[0].ok);
  CHECK(rs[0].group == "control");
  CHECK(rs[0].actual_df == 0.0);
  CHECK(rs[0].extra["edits"] == 0);
  CHECK(rs[0].after == rs[0].before);
  REQUIRE(rs[1].ok);
  CHECK_NOTHROW(check_consistency(rs[1]));
  const double rate = rs[1].extra["rank_flip_rate"];
  CHECK((rate >= 0.0 && rate <= 1.0));
  CHECK(!rs[2].ok);
}
