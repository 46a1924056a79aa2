#include "gatewire/harness.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>

#include "gatewire/errors.hpp"
#include "gatewire/rng.hpp"

namespace gatewire {

namespace {

bool same_double(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

bool same_row(const SweepRow& a, const SweepRow& b) {
  return same_double(a.theta, b.theta) && a.n == b.n && same_double(a.accuracy, b.accuracy) &&
         same_double(a.early_exit_fraction, b.early_exit_fraction) && same_double(a.avg_params, b.avg_params) &&
         same_double(a.side_acc_exited, b.side_acc_exited) && same_double(a.main_acc_forwarded, b.main_acc_forwarded);
}

SweepRow summarize(double theta, const BatchInference& batch, std::span<const int> labels) {
  SweepRow row;
  row.theta = theta;
  row.n = batch.results.size();
  row.accuracy = batch.accuracy;
  row.early_exit_fraction = batch.early_exit_fraction;
  row.avg_params = batch.avg_params;
  std::size_t exited = 0, exited_ok = 0, fwd = 0, fwd_ok = 0;
  for (std::size_t i = 0; i < batch.results.size(); ++i) {
    const bool ok = batch.results[i].predicted_class == labels[i];
    if (batch.results[i].source.is_main()) {
      ++fwd;
      fwd_ok += ok;
    } else {
      ++exited;
      exited_ok += ok;
    }
  }
  row.side_acc_exited = exited ? static_cast<double>(exited_ok) / static_cast<double>(exited) : kNaN;
  row.main_acc_forwarded = fwd ? static_cast<double>(fwd_ok) / static_cast<double>(fwd) : kNaN;
  return row;
}

SweepResult sweep(const Model& model, const Dataset& test, std::vector<double> thetas, CountMode count_mode) {
  if (thetas.empty()) throw ArgumentError("sweep needs at least one theta");
  if (model.num_sidenets() == 0) throw ConfigError("sweep needs a model with at least one sidenet");
  std::sort(thetas.begin(), thetas.end());
  SweepResult result;
  for (double theta : thetas) {
    const auto batch = infer_batch(model, test, GateConfig{theta, count_mode});
    result.rows.push_back(summarize(theta, batch, test.labels));
  }

  // Ungated baselines straight from the heads, independent of the gate code.
  const auto out = model.forward(test.features_tensor());
  const std::size_t first = gating_order(model.spec()).front();
  const Head side_head = model.sidenet(first).spec.head;
  std::vector<InferenceResult> side_results, main_results;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto srow = out.side_probs[first].row(i);
    side_results.push_back({predict_class(srow, side_head), ExitPoint::side(first), confidence(srow, side_head),
                            model.param_count(ExitPoint::side(first), count_mode)});
    const auto mrow = out.main_probs.row(i);
    main_results.push_back({predict_class(mrow, model.spec().head), ExitPoint::main(),
                            confidence(mrow, model.spec().head), model.param_count(ExitPoint::main(), count_mode)});
  }
  result.side_only = summarize(0.0, aggregate(std::move(side_results), test.labels), test.labels);
  result.main_only = summarize(std::numeric_limits<double>::infinity(),
                               aggregate(std::move(main_results), test.labels), test.labels);
  return result;
}

namespace {

std::string row_fields(const SweepRow& r) {
  return std::to_string(r.n) + "," + format_double(r.accuracy) + "," + format_double(r.early_exit_fraction) + "," +
         format_double(r.avg_params) + "," + format_double(r.side_acc_exited) + "," +
         format_double(r.main_acc_forwarded);
}

constexpr const char* kSweepColumns = "n,accuracy,early_exit_fraction,avg_params,side_acc_exited,main_acc_forwarded";

}  // namespace

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::string out = std::string("theta,") + kSweepColumns + "\n";
  for (const auto& r : rows) out += format_double(r.theta) + "," + row_fields(r) + "\n";
  return out;
}

std::string baselines_to_csv(const SweepResult& result) {
  std::string out = std::string("baseline,") + kSweepColumns + "\n";
  out += "side_only," + row_fields(result.side_only) + "\n";
  out += "main_only," + row_fields(result.main_only) + "\n";
  return out;
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != std::string("theta,") + kSweepColumns) {
    throw ParseError("bad sweep header", 1);
  }
  std::vector<SweepRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    if (f.size() != 7) throw ParseError("expected 7 fields", line_no);
    rows.push_back({parse_double(f[0]), static_cast<std::size_t>(std::stoull(f[1])), parse_double(f[2]),
                    parse_double(f[3]), parse_double(f[4]), parse_double(f[5]), parse_double(f[6])});
  }
  return rows;
}

std::vector<double> default_theta_grid() { return {0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99, 1.0}; }

ExperimentConfig desk_scale_experiment() {
  ExperimentConfig c;
  c.data = SyntheticSpec{};  // 6 classes x 584, d = 16, 3 easy / 3 hard
  c.split_fractions = {2000.0 / 3504.0, 500.0 / 3504.0, 1004.0 / 3504.0};

  auto stage = [](std::size_t in, std::size_t out) {
    return std::vector<LayerSpec>{LayerSpec::linear(in, out), LayerSpec::batchnorm(out), LayerSpec::relu()};
  };
  NetworkSpec& n = c.network;
  n.num_classes = 6;
  n.head = Head::softmax;
  n.main_blocks = stage(16, 64);  // blocks 0..2
  n.main_blocks.push_back(LayerSpec::residual(stage(64, 64)));
  n.main_blocks.push_back(LayerSpec::residual(stage(64, 64)));
  n.main_blocks.push_back(LayerSpec::linear(64, 6));
  n.sidenets.push_back(SideNetSpec{2, 64, 32, 6, Head::softmax});

  c.train.mode = TrainMode::joint;
  c.train.alpha = 1.0;
  c.train.lr_init = 1e-3;
  c.train.epochs = 30;
  c.train.batch_size = 64;
  c.train.sidenet_count = 1;
  return c;
}

ExperimentRun run_experiment(const ExperimentConfig& config, std::uint64_t seed) {
  SyntheticSpec data_spec = config.data;
  data_spec.seed = derive_seed(seed, "data");
  const Dataset data = gen_synthetic(data_spec);
  Splits splits = split(data, config.split_fractions, derive_seed(seed, "split"));
  Model model = Model::build(config.network, seed);
  model.set_standardizer(splits.standardizer);
  TrainConfig tc = config.train;
  tc.seed = seed;
  TrainLog log = train(model, splits.train, splits.val, tc);
  return {std::move(model), std::move(splits), std::move(log)};
}

TierExitStats exit_by_tier(const BatchInference& batch, std::span<const int> labels, std::size_t easy_classes) {
  TierExitStats s;
  std::size_t easy_exit = 0, hard_exit = 0;
  for (std::size_t i = 0; i < batch.results.size(); ++i) {
    const bool easy = static_cast<std::size_t>(labels[i]) < easy_classes;
    const bool exited = !batch.results[i].source.is_main();
    if (easy) {
      ++s.easy_n;
      easy_exit += exited;
    } else {
      ++s.hard_n;
      hard_exit += exited;
    }
  }
  s.easy_exit_fraction = s.easy_n ? static_cast<double>(easy_exit) / static_cast<double>(s.easy_n) : kNaN;
  s.hard_exit_fraction = s.hard_n ? static_cast<double>(hard_exit) / static_cast<double>(s.hard_n) : kNaN;
  return s;
}

namespace {

double test_accuracy(const Model& model, const Dataset& test) {
  return accuracy(model.spec().head, model.forward(test.features_tensor()).main_probs, test.labels);
}

double ensemble_accuracy(const Model& model, const Dataset& test) {
  const auto out = model.forward(test.features_tensor());
  const std::size_t first = gating_order(model.spec()).front();
  const Head head = model.spec().head;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto s = class_probabilities(out.side_probs[first].row(i), head);
    const auto m = class_probabilities(out.main_probs.row(i), head);
    correct += ensemble_predict(s, m) == test.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

CompareReport compare_with_without(const ExperimentConfig& config, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ArgumentError("compare needs at least one seed");
  if (config.network.sidenets.empty()) throw ConfigError("compare needs a network with at least one sidenet");
  CompareReport report;
  report.alpha = config.train.alpha;
  for (auto seed : seeds) {
    ExperimentConfig without = config;
    without.network = config.network.without_sidenets();
    without.train.sidenet_count = 0;
    without.train.mode = TrainMode::joint;
    ExperimentConfig with = config;
    with.train.sidenet_count = config.network.sidenets.size();
    with.train.mode = TrainMode::joint;

    const auto a = run_experiment(without, seed);
    const auto b = run_experiment(with, seed);
    CompareSeedResult r;
    r.seed = seed;
    r.without_sidenet = test_accuracy(a.model, a.splits.test);
    r.with_sidenet = test_accuracy(b.model, b.splits.test);
    r.ensemble = ensemble_accuracy(b.model, b.splits.test);
    report.per_seed.push_back(r);
  }
  const double k = static_cast<double>(report.per_seed.size());
  auto stats = [&](auto field, double& mean, double& sd) {
    mean = 0.0;
    for (const auto& r : report.per_seed) mean += r.*field;
    mean /= k;
    double ss = 0.0;
    for (const auto& r : report.per_seed) ss += (r.*field - mean) * (r.*field - mean);
    sd = report.per_seed.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
  };
  stats(&CompareSeedResult::with_sidenet, report.mean.with_sidenet, report.stddev.with_sidenet);
  stats(&CompareSeedResult::without_sidenet, report.mean.without_sidenet, report.stddev.without_sidenet);
  stats(&CompareSeedResult::ensemble, report.mean.ensemble, report.stddev.ensemble);
  return report;
}

nlohmann::json CompareReport::to_json() const {
  nlohmann::json j;
  j["with_sidenet"] = mean.with_sidenet;
  j["without_sidenet"] = mean.without_sidenet;
  j["ensemble"] = mean.ensemble;
  j["alpha"] = alpha;
  j["seeds"] = nlohmann::json::array();
  for (const auto& r : per_seed) j["seeds"].push_back(r.seed);
  if (per_seed.size() > 1) {
    j["stddev"] = {{"with_sidenet", stddev.with_sidenet},
                   {"without_sidenet", stddev.without_sidenet},
                   {"ensemble", stddev.ensemble}};
    j["per_seed"] = nlohmann::json::array();
    for (const auto& r : per_seed) {
      j["per_seed"].push_back({{"seed", r.seed},
                               {"with_sidenet", r.with_sidenet},
                               {"without_sidenet", r.without_sidenet},
                               {"ensemble", r.ensemble}});
    }
  }
  return j;
}

}  // namespace gatewire
