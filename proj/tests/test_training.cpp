#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "flood/sweep.hpp"
#include "flood/training.hpp"
#include "support.hpp"

using namespace flood;

namespace {

TrainConfig quick(int epochs, std::uint64_t seed = 0) {
  TrainConfig t;
  t.epochs = epochs;
  t.learning_rate = 3e-3;
  t.batch_size = 8;
  t.weight_decay = 0.0;
  t.dropout_rate = 0.0;
  t.seed = seed;
  return t;
}

RunConfig quick_run(std::uint64_t seed) {
  RunConfig r = default_run_config("cct");
  r.model = testing::tiny_cct_override();
  r.pipeline = testing::plain_pipeline(16);
  r.train = quick(3, seed);
  return r;
}

}  // namespace

TEST_CASE("one epoch gives one log row") {
  testing::TempDir dir("train1");
  const auto m = testing::color_corpus(dir.path(), 4, 1, 1);
  BatchLoader loader(m, testing::plain_pipeline(16));
  Classifier<float> model(testing::tiny_cct(16));
  int callbacks = 0;
  const auto r = train(model, loader, quick(1), [&](const EpochLog& row) {
    ++callbacks;
    CHECK(row.epoch == 1);
  });
  REQUIRE(r.log.size() == 1);
  CHECK(callbacks == 1);
  CHECK(r.best_epoch == 1);
  CHECK(std::isfinite(r.log[0].train_loss));
  CHECK(r.log[0].train_accuracy >= 0.0);
  CHECK(r.log[0].seconds >= 0.0);
}

TEST_CASE("a separable set is learned") {
  testing::TempDir dir("sep");
  const auto m = testing::color_corpus(dir.path(), 8, 2, 4);
  BatchLoader loader(m, testing::plain_pipeline(16));
  Classifier<float> model(testing::tiny_cct(16, 4));
  const auto r = train(model, loader, quick(25));
  CHECK(r.best_val_accuracy == 1.0);
  CHECK(r.log.back().train_loss < r.log.front().train_loss);
  const auto ev = evaluate(model, loader, Split::test, 5);
  CHECK(ev.confusion.trace() == ev.confusion.total());
  // The restored model is the best-validation one.
  const auto val = evaluate(model, loader, Split::val);
  CHECK(static_cast<double>(val.confusion.trace()) / static_cast<double>(val.confusion.total()) ==
        r.best_val_accuracy);
}

TEST_CASE("same seed, same run") {
  testing::TempDir dir("repro");
  const auto m = testing::color_corpus(dir.path(), 6, 2, 2);
  auto run = [&](std::uint64_t seed) {
    BatchLoader loader(m, testing::plain_pipeline(16));
    Classifier<float> model(testing::tiny_cct(16, seed));
    auto cfg = quick(2, seed);
    cfg.dropout_rate = 0.2;
    const auto r = train(model, loader, cfg);
    return std::make_pair(r.log, model.snapshot());
  };
  const auto a = run(7), b = run(7), c = run(8);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first != c.first);
}

TEST_CASE("evaluation accounts for every item") {
  testing::TempDir dir("eval");
  const auto m = testing::color_corpus(dir.path(), 2, 3, 5);
  BatchLoader loader(m, testing::plain_pipeline(16));
  Classifier<float> model(testing::tiny_cct(16));
  for (Index bs : {1, 3, 32}) {
    const auto ev = evaluate(model, loader, Split::test, bs);
    CHECK(ev.confusion.total() == 20);
    for (int k = 0; k < 4; ++k) CHECK(ev.confusion.row_sum(k) == 5);
    CHECK(ev.probabilities.shape() == Shape{20, 4});
    for (Index i = 0; i < 20; ++i) {
      double s = 0;
      for (Index k = 0; k < 4; ++k) s += ev.probabilities[i * 4 + k];
      CHECK(std::abs(s - 1) <= 1e-5);
    }
    CHECK(ev.labels == std::vector<int>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3});
  }
  CHECK(testing::values(evaluate(model, loader, Split::test, 1).probabilities) ==
        testing::values(evaluate(model, loader, Split::test, 32).probabilities));
}

TEST_CASE("training errors") {
  testing::TempDir dir("nan");
  const auto m = testing::color_corpus(dir.path(), 2, 1, 1);
  BatchLoader loader(m, testing::plain_pipeline(16));
  Classifier<float> model(testing::tiny_cct(16));
  model.parameters().items().back().value.data()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(model, loader, quick(2));
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() == 1);
    CHECK(e.batch() == 0);
  }
  Classifier<float> ok(testing::tiny_cct(16));
  auto bad = quick(1);
  bad.learning_rate = 0;
  CHECK_THROWS_AS(train(ok, loader, bad), InvalidArgument);
  auto no_train = m;
  for (auto& it : no_train.items) it.split = Split::test;
  BatchLoader empty(no_train, testing::plain_pipeline(16));
  CHECK_THROWS_AS(train(ok, empty, quick(1)), InvalidArgument);
}

TEST_CASE("sweeps") {
  testing::TempDir dir("sweep");
  const auto m = testing::color_corpus(dir.path(), 4, 1, 2);
  const RunConfig base = quick_run(11);

  SUBCASE("a one-row grid is a single training run") {
    SweepGrid g{"one", {SweepRow{}}};
    g.rows[0].epochs = 2;
    const auto res = run_sweep(g, base, m);
    REQUIRE(res.size() == 1);
    CHECK(res[0].ok);
    CHECK(res[0].seed == derive_seed(11, {0}));
    // Same outcome as training that row's config by hand.
    const RunConfig c = sweep_row_config(g, 0, base);
    BatchLoader loader(m, c.pipeline);
    Classifier<float> model(c.model_config());
    train(model, loader, c.train);
    const auto ev = evaluate(model, loader, Split::test, c.train.batch_size);
    CHECK(res[0].accuracy == compute_metrics(ev.confusion).accuracy);
  }
  SUBCASE("duplicated rows with an explicit seed agree") {
    SweepRow row;
    row.seed = 5;
    row.dropout_rate = 0.1;
    SweepGrid g{"dup", {row, row}};
    const auto res = run_sweep(g, base, m);
    REQUIRE(res.size() == 2);
    CHECK(res[0].ok);
    CHECK(res[0].accuracy == res[1].accuracy);
    CHECK(res[0].macro_precision == res[1].macro_precision);
    CHECK(res[0].seed == res[1].seed);
    CHECK(res[1].row == 1);
  }
  SUBCASE("a failing row is recorded and the sweep goes on") {
    SweepRow bad, good;
    bad.batch_size = 0;
    good.epochs = 1;
    SweepGrid g{"mixed", {bad, good}};
    const auto res = run_sweep(g, base, m);
    REQUIRE(res.size() == 2);
    CHECK(!res[0].ok);
    CHECK(!res[0].error.empty());
    CHECK(res[1].ok);
    CHECK(sweep_markdown(res).find("row 0 failed") != std::string::npos);
    const auto csv = sweep_csv(res);
    CHECK(csv.rfind("Dropout Rate,Input Size,Weight Decay,Batch Size,Accuracy(%),Precision(%)\n", 0) == 0);
  }
}

TEST_CASE("sweep grid parsing") {
  const auto grid = cct_tuning_grid();
  CHECK(grid.rows.size() == 9);
  CHECK(parse_sweep_grid(nlohmann::json::parse(sweep_grid_to_json(grid).dump())).rows == grid.rows);
  CHECK(load_sweep_grid(FLOOD_SOURCE_DIR "/configs/cct_tuning_grid.json").rows == grid.rows);
  CHECK_THROWS_AS(parse_sweep_grid(nlohmann::json::parse(R"({"rows": [{"dropout": 0.1}]})")), ConfigError);
  CHECK_THROWS_AS(parse_sweep_grid(nlohmann::json::parse(R"({"rows": []})")), ConfigError);
  CHECK_THROWS_AS(parse_sweep_grid(nlohmann::json::parse(R"({"rows": [], "extra": 1})")), ConfigError);
  std::vector<SweepResult> rows(1);
  rows[0].dropout_rate = 0.03;
  rows[0].input_size = 128;
  rows[0].weight_decay = 0.001;
  rows[0].batch_size = 128;
  rows[0].ok = true;
  rows[0].accuracy = 0.9875;
  rows[0].macro_precision = 0.5;
  CHECK(sweep_csv(rows) ==
        "Dropout Rate,Input Size,Weight Decay,Batch Size,Accuracy(%),Precision(%)\n0.03,128x128x3,0.001,128,98.75,50.00\n");
}

TEST_CASE("bench") {
  Classifier<float> model(testing::tiny_cct(16));
  const auto r = bench(model, 3, 2);
  CHECK(r.samples.size() == 3);
  CHECK(r.repetitions == 3);
  CHECK(r.batch_size == 2);
  CHECK(r.mean_seconds > 0);
  CHECK(r.flops.total > 0);
  CHECK(r.reference.gflops > 0);
  CHECK_THROWS_AS(bench(model, 2, 1), InvalidArgument);
}
