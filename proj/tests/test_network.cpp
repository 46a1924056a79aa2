#include <doctest.h>

#include <set>

#include "gatewire/errors.hpp"
#include "gatewire/model.hpp"
#include "support/gradcheck.hpp"
#include "support/nets.hpp"

using namespace gatewire;
using gatewire::testing::counting_example;
using gatewire::testing::random_tensor;
using gatewire::testing::small_residual;

namespace {

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("build is deterministic in the seed") {
  auto a = Model::build(small_residual(), 7);
  auto b = Model::build(small_residual(), 7);
  auto c = Model::build(small_residual(), 8);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(same_values(pa[i].tensor, pb[i].tensor));
    if (!same_values(pa[i].tensor, pc[i].tensor)) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("initialization follows the fan-in rule") {
  auto m = Model::build(small_residual(), 1);
  for (const auto& p : m.parameters()) {
    const auto& n = p.name;
    if (n.ends_with("weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.tensor.rows()));
      for (double v : p.tensor.data()) CHECK(std::abs(v) <= bound);
    } else if (n.ends_with("bias") || n.ends_with("beta")) {
      for (double v : p.tensor.data()) CHECK(v == 0.0);
    } else if (n.ends_with("gamma")) {
      for (double v : p.tensor.data()) CHECK(v == 1.0);
    }
  }
}

TEST_CASE("parameter names are unique and deterministic") {
  auto m = Model::build(small_residual(), 1);
  std::set<std::string> names;
  for (const auto& p : m.parameters()) CHECK(names.insert(p.name).second);
  CHECK(names.count("main.0.weight") == 1);
  CHECK(names.count("main.3.0.weight") == 1);
  CHECK(names.count("main.1.gamma") == 1);
  CHECK(names.count("side.1.fc2.bias") == 1);
  CHECK(names.count("side.0.bn.beta") == 1);
}

TEST_CASE("validation catches inconsistent specs") {
  auto s = small_residual();
  s.main_blocks[3] = LayerSpec::residual({LayerSpec::linear(8, 7)});
  CHECK_THROWS_AS(validate(s), SpecError);
  CHECK_THROWS_AS(Model::build(s, 0), SpecError);

  auto last = counting_example();
  last.sidenets[0].attach_index = 2;
  CHECK_THROWS_AS(validate(last), SpecError);

  auto width = counting_example();
  width.main_blocks[2] = LayerSpec::linear(15, 4);
  try {
    validate(width);
    FAIL("expected SpecError");
  } catch (const SpecError& e) {
    CHECK(std::string(e.what()).find("main block 2") != std::string::npos);
  }

  auto dup = small_residual();
  dup.sidenets[1].attach_index = 2;
  CHECK_THROWS_AS(validate(dup), SpecError);

  auto out = counting_example();
  out.num_classes = 5;
  CHECK_THROWS_AS(validate(out), SpecError);

  auto hidden = counting_example();
  hidden.sidenets[0].hidden_units = 0;
  CHECK_THROWS_AS(validate(hidden), SpecError);

  NetworkSpec empty;
  CHECK_THROWS_AS(validate(empty), SpecError);
}

TEST_CASE("forward without sidenets") {
  auto s = counting_example();
  s.sidenets.clear();
  auto m = Model::build(s, 3);
  Rng rng(1);
  auto r = m.forward(random_tensor({6, 8}, rng, -1, 1, false));
  CHECK(r.side_probs.empty());
  for (std::size_t i = 0; i < 6; ++i) {
    double t = 0;
    for (double v : r.main_probs.row(i)) t += v;
    CHECK(std::abs(t - 1.0) < 1e-12);
  }
}

TEST_CASE("zero final layer gives uniform probabilities") {
  auto m = Model::build(counting_example(), 3);
  auto& last = std::get<LinearLayer>(m.main_layers()[2].impl);
  for (auto& w : last.weight.mutable_data()) w = 0;
  Rng rng(2);
  auto r = m.forward(random_tensor({4, 8}, rng, -1, 1, false));
  for (double v : r.main_probs.data()) CHECK(v == 0.25);
}

TEST_CASE("side probabilities equal standalone sidenet evaluation") {
  auto m = Model::build(small_residual(), 5);
  Rng rng(4);
  auto x = random_tensor({7, 5}, rng, -2, 2, false);
  auto r = m.forward(x);
  REQUIRE(r.side_probs.size() == 2);
  for (std::size_t j = 0; j < 2; ++j) {
    const auto& att = r.intermediates[m.spec().sidenets[j].attach_index];
    CHECK(same_values(r.side_probs[j], m.forward_sidenet(j, att)));
  }
}

TEST_CASE("chaining blocks equals whole forward") {
  auto m = Model::build(small_residual(), 5);
  Rng rng(8);
  auto x = random_tensor({5, 5}, rng, -2, 2, false);
  auto r = m.forward(x);
  Tensor h = x;
  for (std::size_t i = 0; i < m.num_blocks(); ++i) {
    h = m.forward_block(i, h);
    CHECK(same_values(h, r.intermediates[i]));
  }
  CHECK(same_values(apply_head(m.spec().head, h), r.main_probs));
}

TEST_CASE("residual block with zero inner output is the identity") {
  NetworkSpec s;
  s.num_classes = 4;
  s.main_blocks = {LayerSpec::residual({LayerSpec::linear(4, 4)}), LayerSpec::linear(4, 4)};
  auto m = Model::build(s, 1);
  auto& res = std::get<ResidualLayer>(m.main_layers()[0].impl);
  auto& lin = std::get<LinearLayer>(res.inner[0].impl);
  for (auto& w : lin.weight.mutable_data()) w = 0;
  Rng rng(3);
  auto x = random_tensor({3, 4}, rng, -1, 1, false);
  CHECK(same_values(m.forward_block(0, x), x));
}

TEST_CASE("forward rejects the wrong input width") {
  auto m = Model::build(counting_example(), 0);
  CHECK_THROWS_AS(m.forward(Tensor::zeros({2, 7})), DimensionError);
}

TEST_CASE("param_count on the counting example") {
  auto m = Model::build(counting_example(), 0);
  CHECK(m.block_param_count(0) == 144);
  CHECK(m.block_param_count(2) == 68);
  CHECK(m.sidenet_param_count(0) == 740);
  CHECK(m.param_count(ExitPoint::side(0)) == 884);
  CHECK(m.param_count(ExitPoint::main()) == 952);
  CHECK_THROWS_AS(m.param_count(ExitPoint::side(1)), ArgumentError);
}

TEST_CASE("param_count of the binary sidenet") {
  NetworkSpec s;
  s.num_classes = 2;
  s.head = Head::sigmoid;
  s.main_blocks = {LayerSpec::linear(4, 768), LayerSpec::linear(768, 1)};
  s.sidenets = {SideNetSpec{0, 768, 32, 2, Head::sigmoid}};
  auto m = Model::build(s, 0);
  CHECK(m.sidenet_param_count(0, CountMode::weights_only) == 768 * 32 + 32 * 1);
  CHECK(m.sidenet_param_count(0, CountMode::weights_only) == 24608);
  CHECK(m.sidenet_param_count(0) == 24608 + 32 + 1 + 2 * 32);
  CHECK(m.sidenet_param_count(0) == 24705);
}

TEST_CASE("main exit costs at least as much as any side exit") {
  auto m = Model::build(small_residual(), 0);
  const auto main = m.param_count(ExitPoint::main());
  for (std::size_t j = 0; j < m.num_sidenets(); ++j) {
    const auto side = m.param_count(ExitPoint::side(j));
    CHECK(side > 0);
    CHECK(main >= side);
  }
  CHECK(m.param_count(ExitPoint::side(0)) < m.param_count(ExitPoint::side(1)));
}

TEST_CASE("spec json round trip and strict keys") {
  auto s = small_residual();
  nlohmann::json j = s;
  CHECK(j.get<NetworkSpec>() == s);
  j["extra"] = 1;
  CHECK_THROWS_AS(j.get<NetworkSpec>(), ConfigError);
  nlohmann::json bad = s;
  bad["main_blocks"][0]["kind"] = "conv";
  CHECK_THROWS_AS(bad.get<NetworkSpec>(), ConfigError);
}

TEST_CASE("clone shares no tensors") {
  auto m = Model::build(small_residual(), 2);
  auto c = m.clone();
  auto& w = std::get<LinearLayer>(c.main_layers()[0].impl).weight;
  w.mutable_data()[0] += 1.0;
  CHECK(std::get<LinearLayer>(m.main_layers()[0].impl).weight.data()[0] != w.data()[0]);
}
