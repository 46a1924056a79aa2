#include <doctest.h>

#include <algorithm>

#include "gatewire/dataset.hpp"
#include "gatewire/errors.hpp"
#include "gatewire/gating.hpp"
#include "gatewire/training.hpp"
#include "support/gradcheck.hpp"
#include "support/nets.hpp"

using namespace gatewire;
using gatewire::testing::counting_example;
using gatewire::testing::small_residual;

namespace {

struct Trained {
  Model model;
  Dataset test;
};

Trained trained_small() {
  SyntheticSpec s;
  s.num_classes = 3;
  s.per_class_count = 60;
  s.dim = 5;
  s.easy_fraction = 1.0 / 3.0;
  s.seed = 21;
  const std::array<double, 3> f{0.5, 0.2, 0.3};
  auto sp = split(gen_synthetic(s), f, 21);
  auto m = Model::build(small_residual(), 21);
  TrainConfig c;
  c.epochs = 6;
  c.lr_init = 1e-2;
  c.batch_size = 16;
  c.sidenet_count = 2;
  train(m, sp.train, sp.val, c);
  return {std::move(m), sp.test};
}

const Trained& fixture() {
  static Trained t = trained_small();
  return t;
}

}  // namespace

TEST_CASE("confidence examples") {
  std::vector<double> p{0.6, 0.3, 0.1};
  CHECK(confidence(p, Head::softmax) == 0.6);
  std::vector<double> b{0.2};
  CHECK(confidence(b, Head::sigmoid) == 0.8);
  std::vector<double> u(5, 0.2);
  CHECK(confidence(u, Head::softmax) == 0.2);
  std::vector<double> bad{0.6, 0.6};
  CHECK_THROWS_AS(confidence(bad, Head::softmax), ProbabilityError);
  std::vector<double> out{1.5};
  CHECK_THROWS_AS(confidence(out, Head::sigmoid), ProbabilityError);
}

TEST_CASE("theta zero exits everything at the first sidenet") {
  const auto& [m, test] = fixture();
  auto b = infer_batch(m, test, {0.0});
  auto fwd = m.forward(test.features_tensor());
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(b.results[i].source == ExitPoint::side(0));
    CHECK(b.results[i].predicted_class == predict_class(fwd.side_probs[0].row(i), Head::softmax));
  }
  CHECK(b.early_exit_fraction == 1.0);
  CHECK(b.avg_params == static_cast<double>(m.param_count(ExitPoint::side(0))));
}

TEST_CASE("theta above one never exits") {
  const auto& [m, test] = fixture();
  auto b = infer_batch(m, test, {1.0 + 1e-9});
  auto fwd = m.forward(test.features_tensor());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(b.results[i].source.is_main());
    const int want = predict_class(fwd.main_probs.row(i), Head::softmax);
    CHECK(b.results[i].predicted_class == want);
    correct += want == test.labels[i];
  }
  CHECK(b.early_exit_fraction == 0.0);
  CHECK(b.accuracy == static_cast<double>(correct) / static_cast<double>(test.size()));
  CHECK(b.avg_params == static_cast<double>(m.param_count(ExitPoint::main())));
}

TEST_CASE("infer_one matches infer_batch bit for bit") {
  const auto& [m, test] = fixture();
  for (double theta : {0.0, 0.5, 0.8, 0.9, 0.99, 1.0, 2.0}) {
    auto b = infer_batch(m, test, {theta});
    for (std::size_t i = 0; i < test.size(); ++i) CHECK(infer_one(m, test.row(i), {theta}) == b.results[i]);
  }
}

TEST_CASE("routing consistency") {
  const auto& [m, test] = fixture();
  auto fwd = m.forward(test.features_tensor());
  for (double theta : {0.4, 0.7, 0.9, 0.95}) {
    auto b = infer_batch(m, test, {theta});
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto& r = b.results[i];
      if (!r.source.is_main()) {
        CHECK(r.confidence >= theta);
        CHECK(r.confidence == confidence(fwd.side_probs[r.source.index].row(i), Head::softmax));
        CHECK(r.params_used == m.param_count(r.source));
      } else {
        for (std::size_t j = 0; j < m.num_sidenets(); ++j)
          CHECK(confidence(fwd.side_probs[j].row(i), Head::softmax) < theta);
        CHECK(r.params_used == m.param_count(ExitPoint::main()));
      }
    }
  }
}

TEST_CASE("exit decisions are monotone in theta") {
  const auto& [m, test] = fixture();
  std::vector<double> grid;
  for (int k = 0; k <= 40; ++k) grid.push_back(k / 40.0);
  double prev_params = -1, prev_exit = 2;
  for (double t : grid) {
    auto b = infer_batch(m, test, {t});
    CHECK(b.avg_params >= prev_params);
    CHECK(b.early_exit_fraction <= prev_exit);
    prev_params = b.avg_params;
    prev_exit = b.early_exit_fraction;
  }
}

TEST_CASE("counting example: 884 on exit, 952 otherwise, 918 on average") {
  auto m = Model::build(counting_example(), 5);
  Rng rng(5);
  auto x = gatewire::testing::random_tensor({4, 8}, rng, -2, 2, false);
  Dataset d{8, 4, {x.data().begin(), x.data().end()}, {0, 1, 2, 3}};
  auto fwd = m.forward(x);
  std::vector<double> conf;
  for (std::size_t i = 0; i < 4; ++i) conf.push_back(confidence(fwd.side_probs[0].row(i), Head::softmax));
  auto sorted = conf;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted[1] < sorted[2]);
  auto b = infer_batch(m, d, {sorted[2]});
  for (std::size_t i = 0; i < 4; ++i) CHECK(b.results[i].params_used == (conf[i] >= sorted[2] ? 884u : 952u));
  CHECK(b.early_exit_fraction == 0.5);
  CHECK(b.avg_params == 918.0);
}

TEST_CASE("aggregate equals an independent fold") {
  const auto& [m, test] = fixture();
  auto b = infer_batch(m, test, {0.9});
  double params = 0;
  std::size_t exits = 0, correct = 0;
  for (std::size_t i = 0; i < b.results.size(); ++i) {
    params += static_cast<double>(b.results[i].params_used);
    exits += !b.results[i].source.is_main();
    correct += b.results[i].predicted_class == test.labels[i];
  }
  const double n = static_cast<double>(test.size());
  CHECK(b.avg_params == doctest::Approx(params / n).epsilon(1e-15));
  CHECK(b.early_exit_fraction == static_cast<double>(exits) / n);
  CHECK(b.accuracy == static_cast<double>(correct) / n);

  auto shuffled = b.results;
  std::reverse(shuffled.begin(), shuffled.end());
  std::vector<int> labels(test.labels.rbegin(), test.labels.rend());
  auto again = aggregate(shuffled, labels);
  CHECK(again.accuracy == b.accuracy);
  CHECK(again.early_exit_fraction == b.early_exit_fraction);

  CHECK_THROWS_AS(aggregate(b.results, std::span<const int>(test.labels).subspan(1)), DataError);
}

TEST_CASE("ensemble prediction") {
  std::vector<double> s{0.6, 0.4}, mm{0.3, 0.7};
  CHECK(ensemble_predict(s, mm) == 1);
  std::vector<double> same{0.2, 0.5, 0.3};
  CHECK(ensemble_predict(same, same) == 1);
  std::vector<double> half{0.5, 0.5};
  CHECK(ensemble_predict(half, half) == 0);
  std::vector<double> three{0.1, 0.2, 0.7};
  CHECK_THROWS_AS(ensemble_predict(s, three), DimensionError);

  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(4), b(4);
    for (std::size_t k = 0; k < 4; ++k) {
      a[k] = rng.uniform();
      b[k] = rng.uniform();
    }
    std::vector<double> ca(4), cb(4);
    for (std::size_t k = 0; k < 4; ++k) {
      ca[k] = a[k] + 3.0;
      cb[k] = b[k] + 3.0;
    }
    CHECK(ensemble_predict(ca, cb) == ensemble_predict(a, b));
  }
}

TEST_CASE("gating needs a sidenet") {
  auto s = counting_example();
  s.sidenets.clear();
  auto m = Model::build(s, 0);
  std::vector<double> x(8, 0.1);
  CHECK_THROWS_AS(infer_one(m, x, {0.5}), ConfigError);
  GateConfig neg{-0.1};
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("per-input csv") {
  const auto& [m, test] = fixture();
  auto b = infer_batch(m, test, {0.9});
  const auto csv = results_to_csv(b.results, test.labels);
  CHECK(csv.rfind("index,true_label,pred,source,confidence,params_used\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == test.size() + 1);
}
