#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"

#include "common/error.hpp"
#include "curvature/ekfac.hpp"
#include "influence/influence.hpp"
#include "models/model.hpp"
#include "models/train.hpp"
#include "support/fixtures.hpp"

using namespace infusion;
using namespace infusion::influence;
using namespace infusion::models;
using namespace infusion::testing;

namespace {

std::vector<InfluenceRecord> recs(std::vector<double> scores) {
  std::vector<InfluenceRecord> r;
  for (std::size_t i = 0; i < scores.size(); ++i) r.push_back({i, scores[i]});
  return r;
}

double fd_measure(const Network& net, std::vector<double> p, const MeasurementSpec& spec, std::size_t i) {
  const double h = 1e-5, p0 = p[i];
  p[i] = p0 + h;
  double fp = measurement_value(net, p, spec);
  p[i] = p0 - h;
  double fm = measurement_value(net, p, spec);
  return (fp - fm) / (2 * h);
}

MeasurementSpec contrastive(int probe, int target, std::uint64_t seed) {
  MeasurementSpec m;
  m.kind = MeasurementKind::contrastive_token;
  m.set = random_sequences(4, 7, 5, 8, seed);
  m.probe_token = probe;
  m.target_token = target;
  return m;
}

}  // namespace

TEST_CASE("measurement values on trivial cases") {
  auto spec = mlp_spec({3, 4, 10});
  spec.zero_init_head = true;
  auto net = make_network(spec);
  auto p = net->init_params(0);
  MeasurementSpec m;
  m.kind = MeasurementKind::target_class_logprob;
  m.set = blob_dataset(2, 3, 10, 0);
  m.target_class = 4;
  CHECK(measurement_value(*net, p, m) == doctest::Approx(std::log(0.1)).epsilon(1e-14));

  auto net2 = make_network(mlp_spec({3, 4, 10}));
  auto p2 = net2->init_params(1);
  MeasurementSpec avg;
  avg.set = blob_dataset(1, 3, 10, 2);
  CHECK(measurement_value(*net2, p2, avg) == example_loss(*net2, p2, avg.set[0]));

  auto dnet = make_network(small_decoder_spec());
  auto dp = dnet->init_params(2);
  auto same = contrastive(3, 3, 1);
  REQUIRE(probe_positions(same) > 0);
  CHECK(measurement_value(*dnet, dp, same) == 0.0);
  for (double g : measurement_grad(*dnet, dp, same)) CHECK(g == 0.0);
}

TEST_CASE("contrastive measurement without probe positions is an error") {
  auto dnet = make_network(small_decoder_spec());
  auto dp = dnet->init_params(2);
  MeasurementSpec m = contrastive(3, 4, 1);
  for (auto& e : m.set)
    for (auto& t : e.tokens)
      if (t == 3) t = 2;
  try {
    measurement_value(*dnet, dp, m);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("no probe positions") != std::string::npos);
  }
}

TEST_CASE("measurement gradients match finite differences") {
  std::vector<std::pair<ModelSpec, MeasurementSpec>> cases;
  {
    MeasurementSpec m;
    m.set = blob_dataset(5, 4, 3, 3);
    cases.push_back({mlp_spec({4, 5, 3}), m});
    m.kind = MeasurementKind::target_class_logprob;
    m.target_class = 2;
    cases.push_back({mlp_spec({4, 5, 3}), m});
  }
  cases.push_back({small_decoder_spec(), contrastive(2, 5, 4)});
  for (auto& [spec, m] : cases) {
    CAPTURE(measurement_kind_name(m.kind));
    auto net = make_network(spec);
    auto p = net->init_params(4);
    auto g = measurement_grad(*net, p, m);
    Rng rng = make_rng(1, {});
    std::vector<double> fd, an;
    for (int k = 0; k < 10; ++k) {
      auto i = uniform_index(rng, p.size());
      fd.push_back(fd_measure(*net, p, m, i));
      an.push_back(g[i]);
    }
    CHECK(relative_error(an, fd) <= 1e-4);
  }
}

TEST_CASE("avg-loss gradient is the mean of per-example gradients") {
  auto net = make_network(mlp_spec({4, 5, 3}));
  auto p = net->init_params(4);
  MeasurementSpec m;
  m.set = blob_dataset(6, 4, 3, 9);
  auto per = per_example_grads(*net, p, m.set);
  std::vector<double> mean(p.size(), 0.0);
  for (auto& g : per)
    for (std::size_t i = 0; i < g.size(); ++i) mean[i] += g[i] / 6.0;
  CHECK(relative_error(measurement_grad(*net, p, m), mean) <= 1e-12);
}

TEST_CASE("influence scores: zero-gradient documents, sign and linearity") {
  Dataset d = blob_dataset(30, 3, 3, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  auto ck = train(d, mlp_spec({3, 6, 3}), cfg).back();
  auto st = curvature::build_ekfac(ck, d, curvature::FisherMode::sampled, 1, 1e-3);
  MeasurementSpec m;
  m.kind = MeasurementKind::target_class_logprob;
  m.set = blob_dataset(1, 3, 3, 7);
  m.target_class = 1;

  Dataset docs = d;
  docs[4].weight = 0.0;
  auto scores = influence_scores(st, ck, m, docs);
  CHECK(scores.size() == docs.size());
  CHECK(scores[4].score == 0.0);

  auto net = make_network(ck.spec);
  auto v = curvature::ihvp(st, loss_oriented_grad(*net, ck.params, m));
  auto grads = per_example_grads(*net, ck.params, docs);
  auto direct = scores_from_grads(v, grads);
  for (std::size_t i = 0; i < docs.size(); ++i) CHECK(direct[i].score == doctest::Approx(scores[i].score).epsilon(1e-12));

  std::vector<double> neg(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) neg[i] = -v[i];
  auto flipped = scores_from_grads(neg, grads);
  for (std::size_t i = 0; i < docs.size(); ++i) CHECK(flipped[i].score == -direct[i].score);

  MeasurementSpec avg;
  avg.set = blob_dataset(3, 3, 3, 8);
  auto v2 = curvature::ihvp(st, loss_oriented_grad(*net, ck.params, avg));
  std::vector<double> comb(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) comb[i] = 2.0 * v[i] - 3.0 * v2[i];
  auto s1 = scores_from_grads(v, grads), s2 = scores_from_grads(v2, grads), sc = scores_from_grads(comb, grads);
  for (std::size_t i = 0; i < docs.size(); ++i)
    CHECK(sc[i].score == doctest::Approx(2.0 * s1[i].score - 3.0 * s2[i].score).epsilon(1e-10));

  auto pair = pairwise_scores(st, ck, avg, docs);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    double mean = (pair[i][0] + pair[i][1] + pair[i][2]) / 3.0;
    CHECK(mean == doctest::Approx(s2[i].score).epsilon(1e-9));
  }
}

TEST_CASE("document selection strategies") {
  auto r = recs({-3, -1, 2});
  CHECK(select_documents(r, Strategy::most_negative, 2, 0) == std::vector<std::size_t>{0, 1});
  CHECK(select_documents(r, Strategy::most_absolute, 2, 0) == std::vector<std::size_t>{0, 2});
  CHECK(select_documents(r, Strategy::most_positive, 1, 0) == std::vector<std::size_t>{2});
  CHECK(select_documents(r, Strategy::last_k, 2, 0) == std::vector<std::size_t>{1, 2});
  CHECK_THROWS_AS(select_documents(r, Strategy::most_negative, 4, 0), Error);

  auto ties = recs({1, -2, 1, -2, 1});
  CHECK(select_documents(ties, Strategy::most_negative, 3, 0) == std::vector<std::size_t>{1, 3, 0});

  Rng rng = make_rng(3, {});
  std::vector<double> s(50);
  for (auto& x : s) x = normal(rng);
  auto many = recs(s);
  auto a = select_documents(many, Strategy::random, 10, 42);
  CHECK(a == select_documents(many, Strategy::random, 10, 42));
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 10);

  auto scaled = many;
  for (auto& x : scaled) x.score *= 7.5;
  for (auto strat : {Strategy::most_negative, Strategy::random, Strategy::most_positive, Strategy::most_absolute,
                     Strategy::last_k}) {
    auto x = select_documents(many, strat, 10, 1), y = select_documents(scaled, strat, 10, 1);
    CHECK(std::set<std::size_t>(x.begin(), x.end()) == std::set<std::size_t>(y.begin(), y.end()));
  }
  auto neg = select_documents(many, Strategy::most_negative, 10, 0);
  auto pos = select_documents(many, Strategy::most_positive, 10, 0);
  for (auto i : neg) CHECK(std::find(pos.begin(), pos.end(), i) == pos.end());
}

TEST_CASE("rankings csv") {
  auto path = std::filesystem::temp_directory_path() / "infusion_rank.csv";
  write_rankings_csv(recs({0.5, -2.0, 1.0}), path);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "doc_id,score,rank");
  CHECK(first == "1,-2,1");
}
