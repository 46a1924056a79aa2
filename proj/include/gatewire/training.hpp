#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gatewire/dataset.hpp"
#include "gatewire/model.hpp"

namespace gatewire {

struct AdamState {
  struct Moments {
    std::vector<double> m, v;
  };
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::map<std::string, Moments> moments;
};

// One bias-corrected Adam update over `params`; increments state.t once.
void adam_step(std::span<const NamedTensor> params, AdamState& state);

// Divides the learning rate by `factor` after `patience` consecutive epochs
// whose validation loss is not below the best seen so far.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr_init, std::size_t patience = 5, double factor = 3.0);

  double step(double val_loss);
  double lr() const { return lr_; }
  std::size_t decays() const { return decays_; }
  double best() const { return best_; }

 private:
  double lr_init_;
  std::size_t patience_;
  double factor_;
  double lr_;
  double best_;
  std::size_t counter_ = 0;
  std::size_t decays_ = 0;
};

// L = L_M + alpha * sum_j L_Sj.
Tensor joint_loss(const Tensor& main_loss, const std::vector<Tensor>& side_losses, double alpha);

enum class TrainMode { frozen, joint };

struct TrainConfig {
  TrainMode mode = TrainMode::joint;
  double alpha = 1.0;
  double lr_init = 3e-4;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  std::size_t plateau_patience = 5;
  double decay_factor = 3.0;
  std::uint64_t seed = 0;
  // SideNets 0..sidenet_count-1 take part in training.
  std::size_t sidenet_count = 1;

  void validate() const;  // throws ConfigError
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc_main = 0.0;
  std::vector<double> val_acc_side;
  double lr = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainLog {
  std::vector<EpochRecord> rows;
  // Header `epoch,train_loss,val_loss,val_acc_main,val_acc_side0,...,lr`.
  std::string to_csv() const;
  static TrainLog from_csv(const std::string& text);
  bool operator==(const TrainLog&) const = default;
};

TrainLog train(Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& config);

// Loss of one head against integer labels.
Tensor head_loss(Head head, const Tensor& probs, std::span<const int> labels);

// Accuracy of argmax predictions of a probability matrix.
double accuracy(Head head, const Tensor& probs, std::span<const int> labels);

// With the MainNet frozen, checks that the loss of each SideNet produces no
// gradient on any other SideNet's parameters, and that an optimizer step
// driven by that loss leaves the other SideNets bit-identical. Works on a
// copy; `model` is not modified.
bool check_gradient_independence(const Model& model, const Dataset& batch);

// Disables gradients on a set of tensors for the guard's lifetime.
class NoGradGuard {
 public:
  explicit NoGradGuard(std::vector<NamedTensor> tensors);
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  std::vector<NamedTensor> tensors_;
  std::vector<bool> saved_;
};

}  // namespace gatewire
