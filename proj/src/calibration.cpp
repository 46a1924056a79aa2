#include "gatewire/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gatewire/errors.hpp"

namespace gatewire {

std::vector<double> bin_edges(BinScheme scheme) {
  // k / 10.0 gives the nearest double to each decimal edge.
  std::vector<double> edges;
  for (int k = scheme == BinScheme::paper ? 2 : 0; k <= 10; ++k) edges.push_back(k / 10.0);
  return edges;
}

std::vector<BinStats> bin_predictions(std::span<const PredictionRecord> records, std::span<const double> edges) {
  if (edges.size() < 2) throw ArgumentError("need at least two bin edges");
  for (std::size_t k = 1; k < edges.size(); ++k)
    if (!(edges[k - 1] < edges[k])) throw ArgumentError("bin edges must be strictly increasing");
  const std::size_t nbins = edges.size() - 1;
  std::vector<long double> conf_sum(nbins, 0.0L);
  std::vector<std::size_t> correct(nbins, 0), count(nbins, 0);
  for (std::size_t r = 0; r < records.size(); ++r) {
    const double c = records[r].confidence;
    if (!(c >= edges.front() && c <= edges.back())) {
      throw RangeError("record " + std::to_string(r) + " has confidence " + format_double(c) + " outside [" +
                       format_double(edges.front()) + ", " + format_double(edges.back()) + "]");
    }
    // First edge strictly greater than c; the closed last bin takes c == max.
    auto it = std::upper_bound(edges.begin(), edges.end(), c);
    std::size_t b = static_cast<std::size_t>(it - edges.begin()) - 1;
    if (b >= nbins) b = nbins - 1;
    ++count[b];
    correct[b] += records[r].correct;
    conf_sum[b] += c;
  }
  std::vector<BinStats> bins(nbins);
  for (std::size_t b = 0; b < nbins; ++b) {
    bins[b].lower = edges[b];
    bins[b].upper = edges[b + 1];
    bins[b].n = count[b];
    if (count[b] > 0) {
      bins[b].mean_confidence = static_cast<double>(conf_sum[b] / static_cast<long double>(count[b]));
      bins[b].accuracy = static_cast<double>(correct[b]) / static_cast<double>(count[b]);
    }
  }
  return bins;
}

double ece(std::span<const BinStats> bins) {
  std::size_t total = 0;
  for (const auto& b : bins) total += b.n;
  if (total == 0) throw EmptyInputError("ECE of zero predictions");
  // Extended-precision accumulation: exact decimal cases such as a mean of
  // 0.375 come out as the nearest double.
  long double acc = 0.0L;
  for (const auto& b : bins) {
    if (b.n == 0) continue;
    acc += static_cast<long double>(b.n) *
           std::fabs(static_cast<long double>(b.accuracy) - static_cast<long double>(b.mean_confidence));
  }
  return static_cast<double>(acc / static_cast<long double>(total));
}

HeadSelector HeadSelector::parse(const std::string& text) {
  if (text == "main") return main();
  if (text.rfind("side", 0) == 0 && text.size() > 4 &&
      std::all_of(text.begin() + 4, text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return side(std::stoul(text.substr(4)));
  }
  throw ConfigError("unknown head '" + text + "' (expected main or side<j>)");
}

std::string HeadSelector::str() const {
  switch (kind) {
    case Kind::main: return "main";
    case Kind::side: return "side" + std::to_string(index);
    case Kind::gated: return "gated@" + format_double(theta);
  }
  return "?";
}

std::vector<PredictionRecord> gather_predictions(const Model& model, const Dataset& data, HeadSelector head) {
  if (data.size() == 0) throw EmptyInputError("calibration on an empty dataset");
  std::vector<PredictionRecord> records;
  records.reserve(data.size());
  if (head.kind == HeadSelector::Kind::gated) {
    const auto batch = infer_batch(model, data, GateConfig{head.theta, CountMode::exact});
    for (std::size_t i = 0; i < data.size(); ++i)
      records.push_back({batch.results[i].confidence, batch.results[i].predicted_class == data.labels[i]});
    return records;
  }
  if (head.kind == HeadSelector::Kind::side && head.index >= model.num_sidenets()) {
    throw ArgumentError("model has no sidenet " + std::to_string(head.index));
  }
  const auto out = model.forward(data.features_tensor());
  const Tensor& probs = head.kind == HeadSelector::Kind::main ? out.main_probs : out.side_probs[head.index];
  const Head h = head.kind == HeadSelector::Kind::main ? model.spec().head : model.sidenet(head.index).spec.head;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = probs.row(i);
    records.push_back({confidence(row, h), predict_class(row, h) == data.labels[i]});
  }
  return records;
}

CalibrationReport calibration_report(std::span<const PredictionRecord> records, BinScheme scheme) {
  const auto edges = bin_edges(scheme);
  CalibrationReport r;
  r.bins = bin_predictions(records, edges);
  r.total_n = records.size();
  r.ece = ece(r.bins);
  return r;
}

CalibrationReport calibration_report(const Model& model, const Dataset& data, HeadSelector head, BinScheme scheme) {
  const auto records = gather_predictions(model, data, head);
  return calibration_report(records, scheme);
}

std::string CalibrationReport::reliability_csv() const {
  std::string out = "bin_lower,bin_upper,n,mean_confidence,accuracy\n";
  for (const auto& b : bins) {
    out += format_double(b.lower) + "," + format_double(b.upper) + "," + std::to_string(b.n) + "," +
           format_double(b.mean_confidence) + "," + format_double(b.accuracy) + "\n";
  }
  return out;
}

std::string CalibrationReport::to_json() const {
  nlohmann::json j;
  j["ece"] = ece;
  j["total_n"] = total_n;
  j["bins"] = nlohmann::json::array();
  for (const auto& b : bins) {
    j["bins"].push_back({{"lower", b.lower},
                         {"upper", b.upper},
                         {"n", b.n},
                         {"mean_confidence", b.mean_confidence},
                         {"accuracy", b.accuracy}});
  }
  return j.dump(2) + "\n";
}

std::vector<BinStats> parse_reliability_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "bin_lower,bin_upper,n,mean_confidence,accuracy") {
    throw ParseError("bad reliability header", 1);
  }
  std::vector<BinStats> bins;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    if (f.size() != 5) throw ParseError("expected 5 fields", line_no);
    bins.push_back({parse_double(f[0]), parse_double(f[1]), static_cast<std::size_t>(std::stoull(f[2])),
                    parse_double(f[3]), parse_double(f[4])});
  }
  return bins;
}

}  // namespace gatewire
