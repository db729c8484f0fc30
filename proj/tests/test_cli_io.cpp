#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "flood/archive.hpp"
#include "flood/cli.hpp"
#include "flood/report.hpp"
#include "flood/run_config.hpp"
#include "support.hpp"

using namespace flood;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

json tiny_run_json(const fs::path& manifest, const fs::path& out_dir, int epochs) {
  return {{"preset", "cct"},
          {"manifest", manifest.string()},
          {"output_dir", out_dir.string()},
          {"epochs", epochs},
          {"learning_rate", 3e-3},
          {"batch_size", 8},
          {"weight_decay", 0.0},
          {"dropout_rate", 0.0},
          {"input_size", 16},
          {"clahe", false},
          {"augmentation", false},
          {"model", testing::tiny_cct_override()}};
}

}  // namespace

TEST_CASE("archive round trip is bitwise for every preset") {
  for (const auto& name : preset_names()) {
    Classifier<float> model(preset(name));
    // Perturb so the test does not pass on initial values alone.
    for (auto& p : model.parameters().items()) p.value.data()[0] += 0.125f;
    const json meta = {{"class_names", {"a", "b", "c", "d"}}};
    const auto bytes = serialize_model(model, meta);
    json back_meta;
    const auto back = deserialize_model(bytes, model.config().kind, &back_meta);
    CHECK(back.config() == model.config());
    CHECK(back.snapshot() == model.snapshot());
    CHECK(back_meta == meta);
    CHECK(serialize_model(back, meta) == bytes);
    const auto& a = model.parameters().items();
    const auto& b = back.parameters().items();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].trainable == b[i].trainable);
  }
}

TEST_CASE("archive damage is detected") {
  Classifier<float> model(testing::tiny_cct(16));
  const auto bytes = serialize_model(model);
  SUBCASE("a flipped payload byte") {
    auto bad = bytes;
    bad[bad.size() - 3] ^= 0x01;
    CHECK_THROWS_AS(deserialize_model(bad), CorruptArchive);
  }
  SUBCASE("truncation") {
    CHECK_THROWS_AS(deserialize_model(std::span(bytes).first(bytes.size() - 1)), CorruptArchive);
    CHECK_THROWS_AS(deserialize_model(std::span(bytes).first(10)), CorruptArchive);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_model(bad), CorruptArchive);
  }
  SUBCASE("newer version") {
    auto bad = bytes;
    bad[4] = static_cast<std::uint8_t>(kArchiveVersion + 1);
    CHECK_THROWS_AS(deserialize_model(bad), UnsupportedVersion);
  }
  SUBCASE("wrong kind") { CHECK_THROWS_AS(deserialize_model(bytes, ModelKind::vit), ConfigError); }
  SUBCASE("files") {
    testing::TempDir dir("arch");
    save_model(model, dir / "m.afct");
    CHECK(load_model(dir / "m.afct").snapshot() == model.snapshot());
    CHECK_THROWS(load_model(dir / "missing.afct"));
  }
}

TEST_CASE("run config parsing") {
  const auto r = run_config_from_json(json::parse(R"({"preset": "vit", "epochs": 3, "manifest": "m.json"})"), "/base");
  CHECK(r.preset == "vit-afssa");
  CHECK(r.train.epochs == 3);
  CHECK(r.manifest == fs::path("/base/m.json"));
  CHECK(r.train.batch_size == preset("vit").batch_size);
  CHECK(r.pipeline.input_size == preset("vit").height);
  CHECK(run_config_from_json(json::parse(run_config_to_json(r).dump())).model_config() == r.model_config());
  try {
    run_config_from_json(json::parse(R"({"epochs": 3, "learning_rat": 0.1})"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("learning_rat") != std::string::npos);
  }
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"epochs": "three"})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"epochs": 0})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"preset": "resnet"})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"kind": "vit"}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"depthh": 2}})")), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json::parse("[1]")), ConfigError);
  testing::TempDir dir("rc");
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "none.json"), ConfigError);
}

TEST_CASE("reports") {
  const std::vector<std::string> names{"a", "b", "c"};
  const ConfusionMatrix identity(3, {4, 0, 0, 0, 5, 0, 0, 0, 6});
  const auto m = compute_metrics(identity);
  const auto j = metrics_to_json(m, names, 15);
  CHECK(j["accuracy"] == 1.0);
  CHECK(j["macro_precision"] == 1.0);
  CHECK(j["mcc"] == 1.0);
  CHECK(j["per_class"][1]["class"] == "b");
  CHECK(j["per_class"][2]["support"] == 6);
  CHECK(j.begin().key() == "accuracy");
  CHECK(confusion_csv(identity, names) == "true/predicted,a,b,c\na,4,0,0\nb,0,5,0\nc,0,0,6\n");

  testing::TempDir d1("rep1"), d2("rep2");
  emit_report(m, identity, names, d1 / "x");
  emit_report(m, identity, names, d2 / "x");
  CHECK(slurp(d1 / "x/metrics.json") == slurp(d2 / "x/metrics.json"));
  CHECK(slurp(d1 / "x/confusion.csv") == slurp(d2 / "x/confusion.csv"));
  CHECK(json::parse(slurp(d1 / "x/metrics.json"))["samples"] == 15);

  TrainResult tr;
  tr.log.push_back({1, 1.0, 0.5, 0.25, 0.5, 3.0});
  tr.best_epoch = 1;
  tr.best_val_accuracy = 0.5;
  const auto el = epoch_log_to_json(tr);
  CHECK(el["best_epoch"] == 1);
  CHECK(el["epochs"].size() == 1);
}

TEST_CASE("cli usage and configuration errors exit 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"eval", "--model"}).code == 2);
  CHECK(cli({"bench", "--preset", "cct", "--reps", "1"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
  testing::TempDir dir("cli_cfg");
  write_json(dir / "rc.json", {{"epochz", 1}});
  const auto r = cli({"train", "--config", (dir / "rc.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("epochz") != std::string::npos);
  CHECK(cli({"train", "--config", (dir / "rc.json").string(), "--epochs", "0"}).code == 2);
  CHECK(cli({"synth", "--out", (dir / "s").string(), "--per-class", "1", "2"}).code == 2);
}

TEST_CASE("cli runtime errors exit 1") {
  testing::TempDir dir("cli_rt");
  const auto r = cli({"predict", "--model", (dir / "missing.afct").string(), "x.png"});
  CHECK(r.code == 1);
  CHECK(!r.err.empty());
  std::ofstream(dir / "junk.afct") << "not an archive";
  CHECK(cli({"predict", "--model", (dir / "junk.afct").string(), "x.png"}).code == 1);
}

TEST_CASE("cli end to end: synth, prep, train, eval, predict, ensemble, bench") {
  testing::TempDir dir("cli_e2e");
  auto r = cli({"synth", "--out", (dir / "corpus").string(), "--per-class", "15", "--size", "16", "--seed", "2",
                "--frames", "5"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("wrote 60 images") != std::string::npos);

  r = cli({"prep", "--root", (dir / "corpus").string(), "--out", (dir / "manifest.json").string(), "--stride",
           "1", "--seed", "3"});
  REQUIRE(r.code == 0);
  const auto m = load_manifest(dir / "manifest.json");
  CHECK(m.items.size() == 60);
  CHECK(m.count(Split::train) == 40);
  CHECK(m.root.is_absolute());

  r = cli({"prep", "--root", (dir / "corpus").string(), "--out", (dir / "sub.json").string(), "--seed", "3"});
  REQUIRE(r.code == 0);
  CHECK(load_manifest(dir / "sub.json").items.size() == 12);  // default stride 5 keeps one frame in five

  write_json(dir / "run.json", tiny_run_json(dir / "manifest.json", dir / "run", 2));
  r = cli({"train", "--config", (dir / "run.json").string(), "--seed", "4"});
  REQUIRE(r.code == 0);
  for (const char* f : {"model.afct", "epoch_log.json", "run_config.json", "test/metrics.json", "test/confusion.csv"})
    CHECK(fs::exists(dir / "run" / f));
  CHECK(json::parse(slurp(dir / "run/epoch_log.json"))["epochs"].size() == 2);
  CHECK(json::parse(slurp(dir / "run/run_config.json"))["seed"] == 4);

  r = cli({"eval", "--model", (dir / "run/model.afct").string(), "--manifest", (dir / "manifest.json").string(),
           "--out", (dir / "ev").string()});
  REQUIRE(r.code == 0);
  // Training already scored the test split; eval reproduces it byte for byte.
  CHECK(slurp(dir / "ev/metrics.json") == slurp(dir / "run/test/metrics.json"));
  CHECK(slurp(dir / "ev/confusion.csv") == slurp(dir / "run/test/confusion.csv"));

  const std::string img = (m.root / m.items[0].path).string();
  r = cli({"predict", "--model", (dir / "run/model.afct").string(), img});
  REQUIRE(r.code == 0);
  std::istringstream line(r.out);
  std::string path, cls;
  double p, sum = 0;
  line >> path >> cls;
  CHECK(path == img);
  CHECK(std::find(m.class_names.begin(), m.class_names.end(), cls) != m.class_names.end());
  int count = 0;
  while (line >> p) sum += p, ++count;
  CHECK(count == 4);
  CHECK(std::abs(sum - 1) <= 1e-5);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);

  r = cli({"ensemble-eval", "--model", (dir / "run/model.afct").string(), "--model",
           (dir / "run/model.afct").string(), "--manifest", (dir / "manifest.json").string(), "--out",
           (dir / "ens").string()});
  REQUIRE(r.code == 0);
  // Two copies of one member: the soft vote is that member.
  CHECK(slurp(dir / "ens/metrics.json") == slurp(dir / "ev/metrics.json"));

  r = cli({"bench", "--model", (dir / "run/model.afct").string(), "--reps", "3", "--json",
           (dir / "bench.json").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("reference:") != std::string::npos);
  CHECK(json::parse(slurp(dir / "bench.json"))["samples_seconds"].size() == 3);

  // A manifest with different classes is refused.
  auto other = m;
  other.class_names[0] = "river";
  save_manifest(other, dir / "other.json");
  CHECK(cli({"eval", "--model", (dir / "run/model.afct").string(), "--manifest", (dir / "other.json").string(),
             "--out", (dir / "ev2").string()})
            .code == 2);
}

TEST_CASE("cli sweep") {
  testing::TempDir dir("cli_sweep");
  const auto m = testing::color_corpus(dir / "c", 3, 1, 1);
  save_manifest(m, dir / "manifest.json");
  write_json(dir / "run.json", tiny_run_json(dir / "manifest.json", dir / "out", 1));
  write_json(dir / "grid.json", {{"name", "g"}, {"rows", {{{"dropout_rate", 0.1}}, {{"weight_decay", 0.01}}}}});
  auto r = cli({"sweep", "--grid", (dir / "grid.json").string(), "--config", (dir / "run.json").string()});
  REQUIRE(r.code == 0);
  const auto csv = slurp(dir / "out/sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(fs::exists(dir / "out/sweep.md"));

  write_json(dir / "bad_grid.json", {{"rows", {{{"batch_size", 0}}}}});
  r = cli({"sweep", "--grid", (dir / "bad_grid.json").string(), "--config", (dir / "run.json").string()});
  CHECK(r.code == 1);
  write_json(dir / "typo_grid.json", {{"rows", {{{"batchsize", 4}}}}});
  CHECK(cli({"sweep", "--grid", (dir / "typo_grid.json").string(), "--config", (dir / "run.json").string()}).code ==
        2);
}
