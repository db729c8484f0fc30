#include "flood/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "flood/kernels.hpp"

namespace flood {

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be at least 1");
  if (!(learning_rate > 0)) throw InvalidArgument("learning_rate must be positive");
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (weight_decay < 0) throw InvalidArgument("weight_decay must be non-negative");
  if (dropout_rate < 0 || dropout_rate >= 1) throw InvalidArgument("dropout_rate must lie in [0, 1)");
}

TrainConfig train_preset(const std::string& name) {
  const ModelConfig m = preset(name);
  TrainConfig t;
  t.preset = kind_name(m.kind) + "-afssa";
  t.batch_size = m.batch_size;
  t.dropout_rate = m.dropout_rate;
  t.weight_decay = m.weight_decay;
  return t;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

Evaluation evaluate(const Classifier<float>& model, BatchLoader& loader, Split split, Index batch_size) {
  const auto plan = plan_batches(loader.manifest(), split, batch_size, 0, 0);
  const auto k = model.config().num_classes;
  Evaluation ev;
  ev.confusion = ConfusionMatrix(static_cast<int>(k));
  std::vector<float> probs;
  double loss_sum = 0;
  for (const auto& rows : plan) {
    Batch b = loader.load(rows);
    Graph<float> g(false);
    ForwardContext<float> ctx{g};
    auto logits = model.logits(ctx, b.images);
    loss_sum += static_cast<double>(cross_entropy_logits(g, logits, std::span<const int>(b.labels)).item()) *
                static_cast<double>(b.labels.size());
    auto p = softmax(g, logits, 1);
    probs.insert(probs.end(), p.data().begin(), p.data().end());
    ev.labels.insert(ev.labels.end(), b.labels.begin(), b.labels.end());
  }
  const auto n = static_cast<Index>(ev.labels.size());
  if (n > 0) {
    ev.probabilities = Tensor<float>(Shape{n, k}, std::move(probs));
    ev.confusion = confusion_from_probabilities(ev.probabilities, ev.labels);
    ev.loss = loss_sum / static_cast<double>(n);
  }
  return ev;
}

TrainResult train(Classifier<float>& model, BatchLoader& loader, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (loader.manifest().count(Split::train) == 0) throw InvalidArgument("train: the manifest has no training items");
  AdamW<float> opt(AdamWConfig{config.learning_rate, config.weight_decay});
  const bool has_val = loader.manifest().count(Split::val) > 0;
  const int copies = loader.options().augment ? loader.options().augmentation.copies_per_image : 0;
  TrainResult result;
  std::vector<std::vector<float>> best;
  auto& params = model.parameters();
  params.zero_grads();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const std::uint64_t epoch_seed = derive_seed(config.seed, {static_cast<std::uint64_t>(epoch)});
    const auto plan = plan_batches(loader.manifest(), Split::train, config.batch_size, epoch_seed, copies);
    double loss_sum = 0;
    std::int64_t correct = 0, seen = 0;
    for (std::size_t bi = 0; bi < plan.size(); ++bi) {
      Batch b = loader.load(plan[bi]);
      Graph<float> g(true);
      ForwardContext<float> ctx{g, true, config.dropout_rate, derive_seed(epoch_seed, {bi, 0xd409})};
      auto logits = model.logits(ctx, b.images);
      auto loss = cross_entropy_logits(g, logits, std::span<const int>(b.labels));
      const double l = static_cast<double>(loss.item());
      if (!std::isfinite(l)) {
        throw TrainingError("non-finite training loss " + std::to_string(l), epoch, static_cast<int>(bi));
      }
      g.backward(loss);
      opt.step(params);
      params.zero_grads();

      const auto k = static_cast<std::size_t>(logits.dim(1));
      auto lv = logits.data();
      for (std::size_t i = 0; i < b.labels.size(); ++i) correct += argmax(lv.subspan(i * k, k)) == b.labels[i];
      loss_sum += l * static_cast<double>(b.labels.size());
      seen += static_cast<std::int64_t>(b.labels.size());
    }
    EpochLog row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (has_val) {
      const auto ev = evaluate(model, loader, Split::val, config.batch_size);
      row.val_loss = ev.loss;
      row.val_accuracy = static_cast<double>(ev.confusion.trace()) / static_cast<double>(ev.confusion.total());
    }
    row.seconds = seconds_since(t0);
    result.log.push_back(row);
    const bool improved = has_val ? (result.best_epoch == 0 || row.val_accuracy > result.best_val_accuracy) : true;
    if (improved) {
      result.best_epoch = epoch;
      result.best_val_accuracy = row.val_accuracy;
      best = model.snapshot();
    }
    if (on_epoch) on_epoch(row);
  }
  model.restore(best);
  return result;
}

ReferenceTiming reference_timing(ModelKind kind) {
  switch (kind) {
    case ModelKind::cct: return {0.896, 13.069, 1.023};
    case ModelKind::vit: return {1.03, 2.087, 1.017};
    case ModelKind::swin: return {0.091, 9.046, 1.014};
    case ModelKind::eanet: return {0.154, 13.074, 2.034};
  }
  return {};
}

BenchReport bench(const Classifier<float>& model, int repetitions, Index batch_size) {
  if (repetitions < 3) throw InvalidArgument("bench needs at least 3 repetitions");
  if (batch_size < 1) throw InvalidArgument("bench batch size must be positive");
  const auto& c = model.config();
  const auto input =
      seeded_random<float>({batch_size, c.height, c.width, c.channels}, derive_seed(c.seed, {0xbe7c}), UniformDist{});
  BenchReport r;
  r.repetitions = repetitions;
  r.batch_size = batch_size;
  r.flops = estimate_flops(c);
  r.reference = reference_timing(c.kind);
  r.threads = kernels::max_threads();
  forward_classify(model, input);  // warm-up
  for (int i = 0; i < repetitions; ++i) {
    const auto t0 = Clock::now();
    forward_classify(model, input);
    r.samples.push_back(seconds_since(t0));
  }
  r.mean_seconds = std::accumulate(r.samples.begin(), r.samples.end(), 0.0) / repetitions;
  double var = 0;
  for (double s : r.samples) var += (s - r.mean_seconds) * (s - r.mean_seconds);
  r.stddev_seconds = std::sqrt(var / (repetitions - 1));
  return r;
}

}  // namespace flood
