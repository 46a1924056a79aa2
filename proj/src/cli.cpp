#include "gatewire/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "gatewire/calibration.hpp"
#include "gatewire/checkpoint.hpp"
#include "gatewire/config.hpp"
#include "gatewire/errors.hpp"
#include "gatewire/harness.hpp"
#include "gatewire/rng.hpp"

namespace gatewire {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

// model.sdn + ".log.csv" -> model.log.csv
fs::path sibling(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p.replace_extension();
  return fs::path(p.string() + suffix);
}

std::vector<double> parse_theta_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(parse_double(tok));
    } catch (const DataError&) {
      throw ConfigError("--thetas: not a number: '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("--thetas must list at least one value");
  for (double t : out)
    if (!(t >= 0.0)) throw ConfigError("--thetas values must be >= 0");
  return out;
}

CountMode parse_count_mode(const std::string& s) {
  if (s == "exact") return CountMode::exact;
  if (s == "weights_only") return CountMode::weights_only;
  throw ConfigError("--count-mode must be exact or weights_only");
}

// Loads a dataset CSV and maps it into the checkpoint's input space.
Dataset load_model_input(const Model& model, const fs::path& path) {
  Dataset d = load_csv(path);
  d.validate(false);
  const std::size_t in = input_width(model.spec());
  if (d.dim != in) {
    throw DataError("dataset " + path.string() + " has " + std::to_string(d.dim) + " features; model expects " +
                    std::to_string(in));
  }
  if (d.num_classes > model.spec().num_classes) {
    throw LabelError("dataset " + path.string() + " has labels beyond the model's " +
                     std::to_string(model.spec().num_classes) + " classes");
  }
  d.num_classes = model.spec().num_classes;
  return model.standardizer() ? standardize(d, *model.standardizer()) : d;
}

struct GenOptions {
  std::string spec_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> classes, per_class, dim;
  std::optional<double> easy_fraction, separation, hard_separation, hard_spread;
};

int cmd_gen(const GenOptions& o, std::ostream& out) {
  SyntheticSpec spec;
  std::optional<std::uint64_t> file_seed;
  if (!o.spec_path.empty()) {
    std::ifstream f(o.spec_path);
    if (!f) throw IoError("cannot read spec " + o.spec_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("spec " + o.spec_path + " is not valid JSON");
    }
    spec = j.get<SyntheticSpec>();
    if (j.contains("seed")) file_seed = spec.seed;
  }
  if (o.classes) spec.num_classes = *o.classes;
  if (o.per_class) spec.per_class_count = *o.per_class;
  if (o.dim) spec.dim = *o.dim;
  if (o.easy_fraction) spec.easy_fraction = *o.easy_fraction;
  if (o.separation) spec.separation = *o.separation;
  if (o.hard_separation) spec.hard_separation = *o.hard_separation;
  if (o.hard_spread) spec.hard_spread = *o.hard_spread;
  spec.validate();
  spec.seed = derive_seed(resolve_seed(o.seed, file_seed), "data");
  const Dataset d = gen_synthetic(spec);
  write_text(o.out, dataset_to_csv(d));
  out << "wrote " << d.size() << " rows (" << d.num_classes << " classes, " << d.dim << " features) to " << o.out
      << "\n";
  return 0;
}

struct TrainOptions {
  std::string config;
  std::string out;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::string> mode;
  std::optional<double> alpha, lr;
};

int cmd_train(const TrainOptions& o, std::ostream& out) {
  RunConfig cfg = RunConfig::load(o.config);
  auto& tc = cfg.experiment.train;
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.alpha) tc.alpha = *o.alpha;
  if (o.lr) tc.lr_init = *o.lr;
  if (o.mode) {
    if (*o.mode == "frozen") {
      tc.mode = TrainMode::frozen;
    } else if (*o.mode == "joint") {
      tc.mode = TrainMode::joint;
    } else {
      throw ConfigError("--mode must be frozen or joint");
    }
  }
  if (!o.data.empty()) cfg.dataset = o.data;
  cfg.validate();
  const std::uint64_t seed = resolve_seed(o.seed, cfg.seed);

  Dataset data;
  if (cfg.dataset) {
    data = load_csv(*cfg.dataset);
    data.validate(true);
  } else {
    SyntheticSpec s = cfg.experiment.data;
    s.seed = derive_seed(seed, "data");
    data = gen_synthetic(s);
  }
  if (data.dim != input_width(cfg.experiment.network)) {
    throw ConfigError("dataset has " + std::to_string(data.dim) + " features but the network expects " +
                      std::to_string(input_width(cfg.experiment.network)));
  }
  if (data.num_classes > cfg.experiment.network.num_classes) {
    throw ConfigError("dataset labels exceed network.num_classes");
  }
  data.num_classes = cfg.experiment.network.num_classes;

  Splits splits = split(data, cfg.experiment.split_fractions, derive_seed(seed, "split"));
  Model model = Model::build(cfg.experiment.network, seed);
  model.set_standardizer(splits.standardizer);
  tc.seed = seed;
  const TrainLog log = train(model, splits.train, splits.val, tc);

  const fs::path ckpt = o.out;
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(model, ckpt);
  write_text(sibling(ckpt, ".log.csv"), log.to_csv());
  write_text(sibling(ckpt, ".train.csv"), dataset_to_csv(splits.raw_train));
  write_text(sibling(ckpt, ".val.csv"), dataset_to_csv(splits.raw_val));
  write_text(sibling(ckpt, ".test.csv"), dataset_to_csv(splits.raw_test));

  const auto& last = log.rows.back();
  out << "checkpoint " << ckpt.string() << "\n";
  out << "final val_acc_main " << format_double(last.val_acc_main) << "\n";
  for (std::size_t j = 0; j < last.val_acc_side.size(); ++j)
    out << "final val_acc_side" << j << " " << format_double(last.val_acc_side[j]) << "\n";
  return 0;
}

struct SweepOptions {
  std::string checkpoint, data, thetas, out, count_mode = "exact";
};

int cmd_sweep(const SweepOptions& o, std::ostream& out) {
  const auto thetas = o.thetas.empty() ? default_theta_grid() : parse_theta_list(o.thetas);
  const CountMode mode = parse_count_mode(o.count_mode);
  const Model model = load_checkpoint(o.checkpoint);
  const Dataset test = load_model_input(model, o.data);
  const auto result = sweep(model, test, thetas, mode);
  write_text(o.out, sweep_to_csv(result.rows));
  write_text(sibling(o.out, ".baselines.csv"), baselines_to_csv(result));
  out << "wrote " << result.rows.size() << " sweep rows to " << o.out << "\n";
  return 0;
}

struct CalibrateOptions {
  std::string checkpoint, data, head = "main", bins = "paper", out, report;
  double theta = 0.9;
};

int cmd_calibrate(const CalibrateOptions& o, std::ostream& out) {
  HeadSelector head = o.head == "gated" ? HeadSelector::gated(o.theta) : HeadSelector::parse(o.head);
  BinScheme scheme;
  if (o.bins == "paper") {
    scheme = BinScheme::paper;
  } else if (o.bins == "full") {
    scheme = BinScheme::full;
  } else {
    throw ConfigError("--bins must be paper or full");
  }
  const Model model = load_checkpoint(o.checkpoint);
  if (head.kind == HeadSelector::Kind::side && head.index >= model.num_sidenets()) {
    throw ConfigError("--head " + o.head + ": checkpoint has " + std::to_string(model.num_sidenets()) + " sidenets");
  }
  const Dataset data = load_model_input(model, o.data);
  const auto report = calibration_report(model, data, head, scheme);
  write_text(o.out, report.reliability_csv());
  const fs::path report_path = o.report.empty() ? sibling(o.out, ".json") : fs::path(o.report);
  write_text(report_path, report.to_json());
  out << head.str() << " ECE " << format_double(report.ece) << " over " << report.total_n << " predictions\n";
  return 0;
}

struct CompareOptions {
  std::string config, out;
  std::optional<std::size_t> seeds;
  std::optional<std::uint64_t> seed;
};

int cmd_compare(const CompareOptions& o, std::ostream& out) {
  RunConfig cfg = RunConfig::load(o.config);
  if (o.seeds) cfg.seeds = *o.seeds;
  cfg.validate();
  if (cfg.dataset) {
    throw ConfigError("compare regenerates data per seed from 'synthetic'; remove 'dataset' from the config");
  }
  const std::uint64_t base = resolve_seed(o.seed, cfg.seed);
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < cfg.seeds; ++k) seeds.push_back(base + k);
  const auto report = compare_with_without(cfg.experiment, seeds);
  write_text(o.out, report.to_json().dump(2) + "\n");
  out << "with_sidenet " << format_double(report.mean.with_sidenet) << " without_sidenet "
      << format_double(report.mean.without_sidenet) << " ensemble " << format_double(report.mean.ensemble) << "\n";
  return 0;
}

int cmd_info(const std::string& checkpoint, std::ostream& out) {
  const Model model = load_checkpoint(checkpoint);
  const auto& spec = model.spec();
  out << "input width " << input_width(spec) << ", " << spec.num_classes << " classes, " << head_name(spec.head)
      << " head\n";
  for (std::size_t i = 0; i < model.num_blocks(); ++i) {
    out << "  block " << i << ": " << describe(spec.main_blocks[i]) << "  params " << model.block_param_count(i)
        << "\n";
  }
  for (std::size_t j = 0; j < model.num_sidenets(); ++j) {
    const auto& s = spec.sidenets[j];
    out << "  sidenet " << j << ": after block " << s.attach_index << ", Linear(" << s.input_dim << ", "
        << s.hidden_units << ") -> BatchNorm -> ReLU -> Linear(" << s.hidden_units << ", " << s.output_units()
        << ") -> " << head_name(s.head) << "  params " << model.sidenet_param_count(j) << "\n";
  }
  for (std::size_t j = 0; j < model.num_sidenets(); ++j) {
    out << "exit side" << j << ": " << model.param_count(ExitPoint::side(j)) << " params ("
        << model.param_count(ExitPoint::side(j), CountMode::weights_only) << " weights only)\n";
  }
  out << "exit main: " << model.param_count(ExitPoint::main()) << " params ("
      << model.param_count(ExitPoint::main(), CountMode::weights_only) << " weights only)\n";
  out << "input standardization: " << (model.standardizer() ? "yes" : "no") << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Confidence-gated early-exit networks: data generation, training, sweeps and calibration",
               "gatewire"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic two-tier dataset CSV");
  g->add_option("--spec", gen.spec_path, "SyntheticSpec JSON file");
  g->add_option("--out", gen.out, "Output CSV")->required();
  g->add_option("--seed", gen.seed, "Top-level seed");
  g->add_option("--classes", gen.classes);
  g->add_option("--per-class", gen.per_class);
  g->add_option("--dim", gen.dim);
  g->add_option("--easy-fraction", gen.easy_fraction);
  g->add_option("--separation", gen.separation);
  g->add_option("--hard-separation", gen.hard_separation);
  g->add_option("--hard-spread", gen.hard_spread);

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train a model from a run config");
  t->add_option("--config", tr.config, "Run config JSON")->required();
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--data", tr.data, "Dataset CSV (overrides config.dataset)");
  t->add_option("--seed", tr.seed);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--mode", tr.mode, "frozen or joint");
  t->add_option("--alpha", tr.alpha);
  t->add_option("--lr", tr.lr);

  SweepOptions sw;
  auto* s = app.add_subcommand("sweep", "Sweep the gating threshold over a test set");
  s->add_option("--checkpoint", sw.checkpoint)->required();
  s->add_option("--data", sw.data)->required();
  s->add_option("--thetas", sw.thetas, "Comma-separated thresholds (default grid if omitted)");
  s->add_option("--count-mode", sw.count_mode, "exact or weights_only");
  s->add_option("--out", sw.out)->required();

  CalibrateOptions ca;
  auto* c = app.add_subcommand("calibrate", "Reliability bins and ECE for one head");
  c->add_option("--checkpoint", ca.checkpoint)->required();
  c->add_option("--data", ca.data)->required();
  c->add_option("--head", ca.head, "main, side<j>, or gated");
  c->add_option("--theta", ca.theta, "Threshold for --head gated");
  c->add_option("--bins", ca.bins, "paper (8 bins over [0.2, 1]) or full (10 bins over [0, 1])");
  c->add_option("--out", ca.out, "Reliability CSV")->required();
  c->add_option("--report", ca.report, "Report JSON (default: <out stem>.json)");

  CompareOptions co;
  auto* cm = app.add_subcommand("compare", "MainNet accuracy trained with vs. without a SideNet");
  cm->add_option("--config", co.config)->required();
  cm->add_option("--out", co.out)->required();
  cm->add_option("--seeds", co.seeds, "Number of seeds");
  cm->add_option("--seed", co.seed, "First seed");

  std::string info_ckpt;
  auto* in = app.add_subcommand("info", "Print checkpoint architecture and parameter counts");
  in->add_option("--checkpoint", info_ckpt)->required();

  std::vector<std::string> argv_store{"gatewire"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*g) return cmd_gen(gen, out);
    if (*t) return cmd_train(tr, out);
    if (*s) return cmd_sweep(sw, out);
    if (*c) return cmd_calibrate(ca, out);
    if (*cm) return cmd_compare(co, out);
    if (*in) return cmd_info(info_ckpt, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace gatewire
