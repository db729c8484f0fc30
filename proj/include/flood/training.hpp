#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flood/architectures.hpp"
#include "flood/dataset.hpp"
#include "flood/flops.hpp"
#include "flood/metrics.hpp"
#include "flood/optim.hpp"

namespace flood {

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 5e-4;
  Index batch_size = 32;
  double weight_decay = 0.05;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;
  std::string preset = "cct-afssa";

  void validate() const;
};

// Training defaults for a preset: batch size, dropout and decay from the
// model preset, lr 5e-4, 30 epochs.
TrainConfig train_preset(const std::string& preset);

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0, val_loss = 0;
  double train_accuracy = 0, val_accuracy = 0;
  double seconds = 0;  // wall clock, not part of equality

  friend bool operator==(const EpochLog& a, const EpochLog& b) {
    return a.epoch == b.epoch && a.train_loss == b.train_loss && a.val_loss == b.val_loss &&
           a.train_accuracy == b.train_accuracy && a.val_accuracy == b.val_accuracy;
  }
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_accuracy = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains on the loader's train split, validating after each epoch. The model
// ends holding the parameters of the best-validation epoch (earliest on ties;
// the last epoch when there is no validation split). A non-finite loss throws
// TrainingError naming the epoch and batch.
TrainResult train(Classifier<float>& model, BatchLoader& loader, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct Evaluation {
  ConfusionMatrix confusion;
  Tensor<float> probabilities;  // [N,K], split order
  std::vector<int> labels;
  double loss = 0;
};

// Inference-mode pass over an unaugmented split in manifest order.
Evaluation evaluate(const Classifier<float>& model, BatchLoader& loader, Split split, Index batch_size = 32);

// Published timing for a model kind, used as a yardstick by `bench`.
struct ReferenceTiming {
  double gflops = 0, train_seconds = 0, inference_seconds = 0;
};
ReferenceTiming reference_timing(ModelKind kind);

struct BenchReport {
  int repetitions = 0;
  Index batch_size = 0;
  std::vector<double> samples;  // seconds per batch, warm-up excluded
  double mean_seconds = 0, stddev_seconds = 0;
  FlopReport flops;
  ReferenceTiming reference;
  int threads = 1;
};

// Times `repetitions` inference passes on a fixed seeded batch after one warm-up.
BenchReport bench(const Classifier<float>& model, int repetitions, Index batch_size = 1);

}  // namespace flood
