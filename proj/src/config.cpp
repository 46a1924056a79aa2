#include "gatewire/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gatewire/errors.hpp"

namespace gatewire {

using nlohmann::json;

void RunConfig::validate() const {
  experiment.data.validate();
  gatewire::validate(experiment.network);
  experiment.train.validate();
  gate.validate();
  double total = 0.0;
  for (double f : experiment.split_fractions) {
    if (!(f > 0.0)) throw ConfigError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (experiment.thetas.empty()) throw ConfigError("thetas must not be empty");
  for (double t : experiment.thetas)
    if (!(t >= 0.0)) throw ConfigError("thetas must be >= 0");
  if (seeds < 1) throw ConfigError("seeds must be >= 1");
  if (experiment.train.sidenet_count > experiment.network.sidenets.size()) {
    throw ConfigError("train.sidenet_count exceeds the number of sidenets in the network");
  }
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown_keys(j, {"seed", "dataset", "synthetic", "split", "network", "train", "gate", "thetas", "out_dir",
                          "seeds"},
                      "config");
  RunConfig c;
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("synthetic")) c.experiment.data = j.at("synthetic").get<SyntheticSpec>();
    if (j.contains("split")) {
      const auto v = j.at("split").get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("config.split must list three fractions");
      c.experiment.split_fractions = {v[0], v[1], v[2]};
    }
    if (j.contains("network")) c.experiment.network = j.at("network").get<NetworkSpec>();
    if (j.contains("train")) c.experiment.train = j.at("train").get<TrainConfig>();
    if (j.contains("gate")) {
      const auto& g = j.at("gate");
      reject_unknown_keys(g, {"theta", "count_mode"}, "gate");
      if (g.contains("theta")) c.gate.theta = g.at("theta").get<double>();
      if (g.contains("count_mode")) {
        const auto m = g.at("count_mode").get<std::string>();
        if (m == "exact") {
          c.gate.count_mode = CountMode::exact;
        } else if (m == "weights_only") {
          c.gate.count_mode = CountMode::weights_only;
        } else {
          throw ConfigError("gate.count_mode must be 'exact' or 'weights_only'");
        }
      }
    }
    if (j.contains("thetas")) c.experiment.thetas = j.at("thetas").get<std::vector<double>>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j;
  if (seed) j["seed"] = *seed;
  if (dataset) j["dataset"] = dataset->string();
  j["synthetic"] = experiment.data;
  j["split"] = experiment.split_fractions;
  j["network"] = experiment.network;
  j["train"] = experiment.train;
  j["gate"] = {{"theta", gate.theta}, {"count_mode", gate.count_mode == CountMode::exact ? "exact" : "weights_only"}};
  j["thetas"] = experiment.thetas;
  if (out_dir) j["out_dir"] = out_dir->string();
  j["seeds"] = seeds;
  return j;
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config) {
  if (flag) return *flag;
  if (config) return *config;
  if (const char* env = std::getenv("GATEWIRE_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("GATEWIRE_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

}  // namespace gatewire
