#include "gatewire/gating.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gatewire/errors.hpp"

namespace gatewire {

void GateConfig::validate() const {
  if (!(theta >= 0.0)) throw ConfigError("gate.theta must be >= 0");
}

double confidence(std::span<const double> probs, Head head) {
  if (head == Head::sigmoid) {
    if (probs.size() != 1 || !(probs[0] >= 0.0 && probs[0] <= 1.0)) {
      throw ProbabilityError("sigmoid head expects one probability in [0, 1]");
    }
    return std::max(probs[0], 1.0 - probs[0]);
  }
  if (probs.empty()) throw ProbabilityError("empty probability row");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ProbabilityError("probability outside [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ProbabilityError("probability row sums to " + std::to_string(total));
  return *std::max_element(probs.begin(), probs.end());
}

namespace {

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& keep) {
  const std::size_t n = t.cols();
  std::vector<double> data;
  data.reserve(keep.size() * n);
  for (auto r : keep) {
    const auto row = t.row(r);
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({keep.size(), n}, std::move(data));
}

// Core routine shared by infer_one and infer_batch so both take the same
// arithmetic path.
std::vector<InferenceResult> run_gated(const Model& model, const Tensor& x, const GateConfig& gate) {
  gate.validate();
  if (model.num_sidenets() == 0) throw ConfigError("gated inference needs at least one sidenet");
  const auto order = gating_order(model.spec());
  const std::size_t n = x.rows();
  std::vector<InferenceResult> results(n);
  std::vector<std::size_t> active(n);  // caller rows still travelling through the MainNet
  std::iota(active.begin(), active.end(), 0);

  std::size_t next_side = 0;
  Tensor h = x;
  for (std::size_t i = 0; i < model.num_blocks() && !active.empty(); ++i) {
    h = model.forward_block(i, h);
    while (next_side < order.size() && model.sidenet(order[next_side]).spec.attach_index == i) {
      const std::size_t j = order[next_side++];
      const Head head = model.sidenet(j).spec.head;
      const Tensor probs = model.forward_sidenet(j, h);
      const std::size_t cost = model.param_count(ExitPoint::side(j), gate.count_mode);
      std::vector<std::size_t> keep;
      std::vector<std::size_t> still_active;
      for (std::size_t r = 0; r < active.size(); ++r) {
        const double c = confidence(probs.row(r), head);
        if (c >= gate.theta) {
          results[active[r]] = {predict_class(probs.row(r), head), ExitPoint::side(j), c, cost};
        } else {
          keep.push_back(r);
          still_active.push_back(active[r]);
        }
      }
      if (keep.size() != active.size()) {
        active = std::move(still_active);
        if (active.empty()) break;
        h = gather_rows(h, keep);
      }
    }
  }
  if (!active.empty()) {
    const Head head = model.spec().head;
    const Tensor probs = apply_head(head, h);
    const std::size_t cost = model.param_count(ExitPoint::main(), gate.count_mode);
    for (std::size_t r = 0; r < active.size(); ++r) {
      results[active[r]] = {predict_class(probs.row(r), head), ExitPoint::main(), confidence(probs.row(r), head),
                            cost};
    }
  }
  return results;
}

}  // namespace

InferenceResult infer_one(const Model& model, std::span<const double> x, const GateConfig& gate) {
  return run_gated(model, Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())), gate).front();
}

BatchInference aggregate(std::vector<InferenceResult> results, std::span<const int> labels) {
  if (results.size() != labels.size()) {
    throw DataError("got " + std::to_string(results.size()) + " results for " + std::to_string(labels.size()) +
                    " labels");
  }
  if (results.empty()) throw DataError("empty inference batch");
  BatchInference b;
  std::size_t correct = 0, exited = 0, params = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    correct += results[i].predicted_class == labels[i];
    exited += !results[i].source.is_main();
    params += results[i].params_used;
  }
  const double n = static_cast<double>(results.size());
  b.accuracy = static_cast<double>(correct) / n;
  b.early_exit_fraction = static_cast<double>(exited) / n;
  b.avg_params = static_cast<double>(params) / n;
  b.results = std::move(results);
  return b;
}

BatchInference infer_batch(const Model& model, const Dataset& data, const GateConfig& gate) {
  if (data.features.size() != data.labels.size() * data.dim) throw DataError("feature rows and labels differ in length");
  if (data.size() == 0) throw DataError("empty inference batch");
  return aggregate(run_gated(model, data.features_tensor(), gate), data.labels);
}

int ensemble_predict(std::span<const double> side_probs, std::span<const double> main_probs) {
  if (side_probs.size() != main_probs.size() || side_probs.empty()) {
    throw DimensionError("ensemble rows differ in length: " + std::to_string(side_probs.size()) + " vs " +
                         std::to_string(main_probs.size()));
  }
  int best = 0;
  double best_v = side_probs[0] + main_probs[0];
  for (std::size_t c = 1; c < side_probs.size(); ++c) {
    const double v = side_probs[c] + main_probs[c];
    if (v > best_v) {
      best_v = v;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<double> class_probabilities(std::span<const double> probs, Head head) {
  if (head == Head::sigmoid) return {1.0 - probs[0], probs[0]};
  return {probs.begin(), probs.end()};
}

std::string results_to_csv(const std::vector<InferenceResult>& results, std::span<const int> labels) {
  std::string out = "index,true_label,pred,source,confidence,params_used\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out += std::to_string(i) + "," + std::to_string(labels[i]) + "," + std::to_string(r.predicted_class) + "," +
           r.source.str() + "," + format_double(r.confidence) + "," + std::to_string(r.params_used) + "\n";
  }
  return out;
}

}  // namespace gatewire
