#include "gatewire/training.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "gatewire/errors.hpp"
#include "gatewire/rng.hpp"

namespace gatewire {

using nlohmann::json;

void adam_step(std::span<const NamedTensor> params, AdamState& state) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw OptimizerError("parameter '" + name + "' has no gradient");
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& [name, tensor] : params) {
    auto& mom = state.moments[name];
    Tensor p = tensor;
    auto w = p.mutable_data();
    const auto g = p.grad();
    if (mom.m.size() != w.size()) {
      mom.m.assign(w.size(), 0.0);
      mom.v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g[i];
      mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      w[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

PlateauScheduler::PlateauScheduler(double lr_init, std::size_t patience, double factor)
    : lr_init_(lr_init),
      patience_(patience),
      factor_(factor),
      lr_(lr_init),
      best_(std::numeric_limits<double>::infinity()) {
  if (!(lr_init > 0.0)) throw SchedulerError("initial learning rate must be > 0");
  if (patience < 1) throw SchedulerError("plateau patience must be >= 1");
  if (!(factor > 1.0)) throw SchedulerError("decay factor must be > 1");
}

double PlateauScheduler::step(double val_loss) {
  if (!std::isfinite(val_loss)) throw SchedulerError("non-finite validation loss");
  if (val_loss < best_) {
    best_ = val_loss;
    counter_ = 0;
  } else if (++counter_ >= patience_) {
    ++decays_;
    counter_ = 0;
    // Closed form keeps lr == lr_init / factor^k exact instead of compounding
    // rounding from repeated division.
    lr_ = lr_init_ / std::pow(factor_, static_cast<double>(decays_));
  }
  return lr_;
}

Tensor joint_loss(const Tensor& main_loss, const std::vector<Tensor>& side_losses, double alpha) {
  if (side_losses.empty()) return main_loss;
  Tensor side = side_losses.front();
  for (std::size_t j = 1; j < side_losses.size(); ++j) side = add(side, side_losses[j]);
  return add(main_loss, scale(side, alpha));
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("train.alpha must be >= 0");
  if (!(lr_init > 0.0)) throw ConfigError("train.lr_init must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (plateau_patience < 1) throw ConfigError("train.plateau_patience must be >= 1");
  if (!(decay_factor > 1.0)) throw ConfigError("train.decay_factor must be > 1");
  if (mode == TrainMode::frozen && sidenet_count < 1) {
    throw ConfigError("train.sidenet_count must be >= 1 in frozen mode");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"mode", c.mode == TrainMode::frozen ? "frozen" : "joint"},
       {"alpha", c.alpha},
       {"lr_init", c.lr_init},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"plateau_patience", c.plateau_patience},
       {"decay_factor", c.decay_factor},
       {"seed", c.seed},
       {"sidenet_count", c.sidenet_count}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown_keys(j, {"mode", "alpha", "lr_init", "epochs", "batch_size", "plateau_patience", "decay_factor",
                          "seed", "sidenet_count"},
                      "train");
  TrainConfig d;
  auto take = [&](const char* k, auto& field) {
    if (!j.contains(k)) return;
    try {
      field = j.at(k).get<std::decay_t<decltype(field)>>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("train: field '") + k + "' has the wrong type");
    }
  };
  std::string mode = "joint";
  take("mode", mode);
  if (mode == "frozen") {
    d.mode = TrainMode::frozen;
  } else if (mode == "joint") {
    d.mode = TrainMode::joint;
  } else {
    throw ConfigError("train.mode must be 'frozen' or 'joint', got '" + mode + "'");
  }
  take("alpha", d.alpha);
  take("lr_init", d.lr_init);
  take("epochs", d.epochs);
  take("batch_size", d.batch_size);
  take("plateau_patience", d.plateau_patience);
  take("decay_factor", d.decay_factor);
  take("seed", d.seed);
  take("sidenet_count", d.sidenet_count);
  c = d;
}

std::string TrainLog::to_csv() const {
  std::size_t sides = rows.empty() ? 0 : rows.front().val_acc_side.size();
  std::string out = "epoch,train_loss,val_loss,val_acc_main";
  for (std::size_t j = 0; j < sides; ++j) out += ",val_acc_side" + std::to_string(j);
  out += ",lr\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.val_loss) + "," +
           format_double(r.val_acc_main);
    for (double a : r.val_acc_side) out += "," + format_double(a);
    out += "," + format_double(r.lr) + "\n";
  }
  return out;
}

TrainLog TrainLog::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty train log", 1);
  std::size_t cols = 1;
  for (char c : line) cols += c == ',';
  if (cols < 5) throw ParseError("train log header too short", 1);
  TrainLog log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string tok;
    while (std::getline(ls, tok, ',')) f.push_back(tok);
    if (f.size() != cols) throw ParseError("wrong field count", line_no);
    EpochRecord r;
    r.epoch = static_cast<std::size_t>(std::stoull(f[0]));
    r.train_loss = parse_double(f[1]);
    r.val_loss = parse_double(f[2]);
    r.val_acc_main = parse_double(f[3]);
    for (std::size_t k = 4; k + 1 < cols; ++k) r.val_acc_side.push_back(parse_double(f[k]));
    r.lr = parse_double(f[cols - 1]);
    log.rows.push_back(std::move(r));
  }
  return log;
}

Tensor head_loss(Head head, const Tensor& probs, std::span<const int> labels) {
  return head == Head::softmax ? cross_entropy(probs, labels) : bce_loss(probs, labels);
}

double accuracy(Head head, const Tensor& probs, std::span<const int> labels) {
  if (probs.rows() != labels.size()) throw DataError("prediction/label count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predict_class(probs.row(i), head) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

NoGradGuard::NoGradGuard(std::vector<NamedTensor> tensors) : tensors_(std::move(tensors)) {
  for (auto& [_, t] : tensors_) {
    saved_.push_back(t.requires_grad());
    t.set_requires_grad(false);
  }
}

NoGradGuard::~NoGradGuard() {
  for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i].tensor.set_requires_grad(saved_[i]);
}

namespace {

struct StepOutput {
  Tensor loss;
  Tensor main_probs;
  std::vector<Tensor> side_probs;  // indexed by trained SideNet
};

// Forward over the MainNet and the trained SideNets only. Untrained SideNets
// are not evaluated so their batchnorm statistics stay untouched.
StepOutput training_forward(Model& model, const Tensor& x, std::span<const int> labels, const TrainConfig& cfg,
                            bool training) {
  const bool joint = cfg.mode == TrainMode::joint;
  StepOutput out;
  out.side_probs.resize(cfg.sidenet_count);
  std::vector<Tensor> side_losses(cfg.sidenet_count);
  Tensor h = x;
  for (std::size_t i = 0; i < model.num_blocks(); ++i) {
    h = model.forward_block(i, h, training && joint);
    for (std::size_t j = 0; j < cfg.sidenet_count; ++j) {
      if (model.sidenet(j).spec.attach_index != i) continue;
      out.side_probs[j] = model.forward_sidenet(j, h, training);
      side_losses[j] = head_loss(model.sidenet(j).spec.head, out.side_probs[j], labels);
    }
  }
  out.main_probs = apply_head(model.spec().head, h);
  if (joint) {
    out.loss = joint_loss(head_loss(model.spec().head, out.main_probs, labels), side_losses, cfg.alpha);
  } else {
    out.loss = side_losses.front();
    for (std::size_t j = 1; j < side_losses.size(); ++j) out.loss = add(out.loss, side_losses[j]);
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  // A trailing batch of one cannot be batch-normalized; fold it into the
  // previous batch.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace

TrainLog train(Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.size() == 0) throw DataError("empty training split");
  if (val_set.size() == 0) throw DataError("empty validation split");
  if (config.sidenet_count > model.num_sidenets()) {
    throw ConfigError("train.sidenet_count " + std::to_string(config.sidenet_count) + " exceeds the model's " +
                      std::to_string(model.num_sidenets()) + " sidenets");
  }
  const bool joint = config.mode == TrainMode::joint;

  std::vector<NamedTensor> params;
  if (joint) params = model.main_parameters();
  for (std::size_t j = 0; j < config.sidenet_count; ++j) {
    auto s = model.sidenet_parameters(j);
    params.insert(params.end(), s.begin(), s.end());
  }
  std::optional<NoGradGuard> freeze;
  if (!joint) freeze.emplace(model.main_parameters());

  AdamState adam;
  PlateauScheduler scheduler(config.lr_init, config.plateau_patience, config.decay_factor);
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  const Tensor val_x = val_set.features_tensor();
  TrainLog log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    const double lr = scheduler.lr();
    adam.lr = lr;
    double loss_sum = 0.0;
    for (const auto& batch : make_batches(order, config.batch_size)) {
      for (auto& [_, p] : params) p.zero_grad();
      const Dataset b = train_set.subset(batch);
      auto out = training_forward(model, b.features_tensor(), b.labels, config, true);
      backward(out.loss);
      adam_step(params, adam);
      loss_sum += out.loss.item() * static_cast<double>(batch.size());
    }
    for (auto& [_, p] : params) p.clear_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    {
      // Validation runs without any graph: batchnorm uses running statistics.
      NoGradGuard no_grad(model.parameters());
      auto out = training_forward(model, val_x, val_set.labels, config, false);
      rec.val_loss = out.loss.item();
    }
    const auto eval = static_cast<const Model&>(model).forward(val_x);
    rec.val_acc_main = accuracy(model.spec().head, eval.main_probs, val_set.labels);
    for (std::size_t j = 0; j < model.num_sidenets(); ++j)
      rec.val_acc_side.push_back(accuracy(model.sidenet(j).spec.head, eval.side_probs[j], val_set.labels));
    scheduler.step(rec.val_loss);
    log.rows.push_back(std::move(rec));
  }
  return log;
}

bool check_gradient_independence(const Model& original, const Dataset& batch) {
  if (original.num_sidenets() < 2) {
    throw ArgumentError("gradient independence needs at least 2 sidenets, model has " +
                        std::to_string(original.num_sidenets()));
  }
  Model model = original.clone();
  NoGradGuard freeze(model.main_parameters());
  const Tensor x = batch.features_tensor();
  bool ok = true;
  const std::size_t n = model.num_sidenets();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      for (auto& [_, p] : model.sidenet_parameters(j)) p.clear_grad();

    Tensor h = x;
    Tensor loss;
    for (std::size_t b = 0; b <= model.sidenet(i).spec.attach_index; ++b) h = model.forward_block(b, h, false);
    loss = head_loss(model.sidenet(i).spec.head, model.forward_sidenet(i, h, true), batch.labels);
    backward(loss);

    // Analytic: no other SideNet receives any gradient.
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      for (const auto& [_, p] : model.sidenet_parameters(j))
        for (double g : p.grad()) ok = ok && g == 0.0;
    }

    // Behavioral: a step over every SideNet leaves the others bit-identical.
    std::vector<NamedTensor> all;
    for (std::size_t j = 0; j < n; ++j) {
      auto s = model.sidenet_parameters(j);
      all.insert(all.end(), s.begin(), s.end());
    }
    std::vector<std::vector<double>> before;
    for (auto& [_, p] : all) {
      if (!p.has_grad()) p.zero_grad();
      before.emplace_back(p.data().begin(), p.data().end());
    }
    AdamState adam;
    adam.lr = 1e-2;
    adam_step(all, adam);
    for (std::size_t k = 0; k < all.size(); ++k) {
      if (all[k].name.rfind("side." + std::to_string(i) + ".", 0) == 0) continue;
      ok = ok && std::memcmp(before[k].data(), all[k].tensor.data().data(), before[k].size() * sizeof(double)) == 0;
    }
  }
  return ok;
}

}  // namespace gatewire
