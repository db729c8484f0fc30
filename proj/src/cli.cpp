#include "flood/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "flood/archive.hpp"
#include "flood/report.hpp"
#include "flood/run_config.hpp"
#include "flood/sweep.hpp"
#include "flood/synthetic.hpp"

namespace flood {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json archive_metadata(const RunConfig& rc, const DatasetManifest& m) {
  return {{"preset", rc.preset},
          {"class_names", m.class_names},
          {"pipeline",
           {{"input_size", rc.pipeline.input_size},
            {"clahe", rc.pipeline.clahe},
            {"clahe_tiles", rc.pipeline.clahe_params.tiles_x},
            {"clahe_clip_limit", rc.pipeline.clahe_params.clip_limit}}}};
}

// Inference pipeline recorded with an archive: no augmentation.
PipelineOptions pipeline_from_metadata(const json& meta, const ModelConfig& config) {
  PipelineOptions p;
  p.augment = false;
  p.input_size = config.height;
  const json pj = meta.value("pipeline", json::object());
  p.clahe = pj.value("clahe", true);
  p.clahe_params.tiles_x = p.clahe_params.tiles_y = pj.value("clahe_tiles", 8);
  p.clahe_params.clip_limit = pj.value("clahe_clip_limit", 2.0);
  return p;
}

std::vector<std::string> class_names_of(const json& meta, Index k) {
  std::vector<std::string> names = meta.value("class_names", std::vector<std::string>{});
  if (static_cast<Index>(names.size()) != k) {
    names.clear();
    for (Index i = 0; i < k; ++i) names.push_back("class" + std::to_string(i));
  }
  return names;
}

DatasetManifest obtain_manifest(const RunConfig& rc) {
  if (!rc.manifest.empty()) return load_manifest(rc.manifest);
  if (rc.dataset_root.empty()) throw ConfigError("run config needs 'manifest' or 'dataset_root'");
  return stratified_split(scan_corpus(rc.dataset_root), {}, rc.train.seed);
}

void print_scan_issues(const DatasetManifest& m, std::ostream& err) {
  for (const auto& w : m.warnings) err << "warning: " << w << "\n";
  for (const auto& e : m.errors) err << "skipped: " << e << "\n";
}

void print_metrics(const MetricsReport& m, std::ostream& out) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "accuracy %.4f  precision %.4f  recall %.4f  f1 %.4f  mcc %.4f\n", m.accuracy,
                m.macro_precision, m.macro_recall, m.macro_f1, m.mcc);
  out << buf;
}

void check_classes(const DatasetManifest& m, const std::vector<std::string>& names) {
  if (m.class_names != names) {
    throw ConfigError("manifest classes do not match the classes the model was trained on");
  }
}

struct Args {
  // synth
  fs::path out_dir;
  std::vector<int> per_class{25};
  Index size = 64;
  std::uint64_t seed = 0;
  int frames = 10;
  std::string format = "png";
  // prep
  fs::path root, manifest_out, materialize;
  int stride = 5;
  double f_train = 0.7, f_val = 0.1, f_test = 0.2;
  Index input_size = 128;
  bool no_clahe = false, no_augment = false;
  int copies = 6, tiles = 8;
  double clip = 2.0;
  // train / sweep
  fs::path config;
  std::optional<int> epochs;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> output_dir, manifest_override, dataset_override;
  fs::path grid;
  // eval / predict / bench / ensemble
  fs::path model, manifest;
  std::vector<fs::path> models;
  std::vector<fs::path> images;
  std::string split = "test";
  Index batch = 32;
  int reps = 5;
  std::string preset;
  fs::path json_out;
  bool hard_vote = false;
};

int cmd_synth(const Args& a, std::ostream& out) {
  SyntheticCorpusSpec spec;
  if (a.per_class.size() == 1) {
    spec.per_class.assign(4, a.per_class[0]);
  } else if (a.per_class.size() == 4) {
    spec.per_class = a.per_class;
  } else {
    throw ConfigError("--per-class takes one count or four");
  }
  spec.size = a.size;
  spec.seed = a.seed;
  spec.frames_per_sequence = a.frames;
  if (a.format != "png" && a.format != "ppm") throw ConfigError("--format must be png or ppm");
  spec.extension = "." + a.format;
  const auto n = write_synthetic_corpus(a.out_dir, spec);
  out << "wrote " << n << " images to " << a.out_dir.string() << "\n";
  return 0;
}

int cmd_prep(const Args& a, std::ostream& out, std::ostream& err) {
  DatasetManifest m = scan_corpus(a.root);
  print_scan_issues(m, err);
  if (a.stride != 1) m = subsample_manifest(m, a.stride);
  m = stratified_split(m, {a.f_train, a.f_val, a.f_test}, a.seed);
  m.root = fs::absolute(m.root);
  if (!a.materialize.empty()) {
    PipelineOptions p;
    p.input_size = a.input_size;
    p.clahe = !a.no_clahe;
    p.clahe_params.tiles_x = p.clahe_params.tiles_y = a.tiles;
    p.clahe_params.clip_limit = a.clip;
    p.augment = !a.no_augment;
    p.augmentation.copies_per_image = a.copies;
    p.augmentation.seed = a.seed;
    p.augmentation.validate();
    m = materialize_corpus(m, p, fs::absolute(a.materialize));
  }
  if (a.manifest_out.has_parent_path()) fs::create_directories(a.manifest_out.parent_path());
  save_manifest(m, a.manifest_out);
  out << "manifest " << a.manifest_out.string() << ": " << m.items.size() << " items (train " << m.count(Split::train)
      << ", val " << m.count(Split::val) << ", test " << m.count(Split::test) << ")\n";
  return 0;
}

RunConfig resolve_run_config(const Args& a) {
  RunConfig rc = a.config.empty() ? default_run_config("cct-afssa") : load_run_config(a.config);
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.train_seed) rc.train.seed = rc.pipeline.augmentation.seed = *a.train_seed;
  if (a.output_dir) rc.output_dir = *a.output_dir;
  if (a.manifest_override) rc.manifest = *a.manifest_override;
  if (a.dataset_override) rc.dataset_root = *a.dataset_override;
  try {
    rc.train.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

int cmd_train(const Args& a, std::ostream& out, std::ostream& err) {
  const RunConfig rc = resolve_run_config(a);
  const DatasetManifest m = obtain_manifest(rc);
  print_scan_issues(m, err);
  ModelConfig mc = rc.model_config();
  if (static_cast<Index>(m.class_names.size()) != mc.num_classes) {
    throw ConfigError("model has " + std::to_string(mc.num_classes) + " classes, corpus has " +
                      std::to_string(m.class_names.size()));
  }
  Classifier<float> model(mc);
  BatchLoader loader(m, rc.pipeline);
  const auto result = train(model, loader, rc.train, [&](const EpochLog& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f (%.1fs)\n", e.epoch,
                  e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy, e.seconds);
    out << buf << std::flush;
  });
  fs::create_directories(rc.output_dir);
  save_model(model, rc.output_dir / "model.afct", archive_metadata(rc, m));
  write_text(rc.output_dir / "epoch_log.json", epoch_log_to_json(result).dump(2) + "\n");
  write_text(rc.output_dir / "run_config.json", run_config_to_json(rc).dump(2) + "\n");
  out << "best epoch " << result.best_epoch << ", archive " << (rc.output_dir / "model.afct").string() << "\n";
  if (m.count(Split::test) > 0) {
    const auto ev = evaluate(model, loader, Split::test, rc.train.batch_size);
    const auto metrics = compute_metrics(ev.confusion);
    emit_report(metrics, ev.confusion, m.class_names, rc.output_dir / "test");
    out << "test: ";
    print_metrics(metrics, out);
  }
  return 0;
}

int cmd_eval(const Args& a, std::ostream& out) {
  json meta;
  const Classifier<float> model = load_model(a.model, std::nullopt, &meta);
  const DatasetManifest m = load_manifest(a.manifest);
  const auto names = class_names_of(meta, model.config().num_classes);
  check_classes(m, names);
  const Split split = parse_split(a.split);
  if (m.count(split) == 0) throw ConfigError("split '" + a.split + "' is empty in " + a.manifest.string());
  BatchLoader loader(m, pipeline_from_metadata(meta, model.config()));
  const auto ev = evaluate(model, loader, split, a.batch);
  const auto metrics = compute_metrics(ev.confusion);
  emit_report(metrics, ev.confusion, names, a.out_dir);
  print_metrics(metrics, out);
  return 0;
}

int cmd_predict(const Args& a, std::ostream& out) {
  json meta;
  const Classifier<float> model = load_model(a.model, std::nullopt, &meta);
  const auto names = class_names_of(meta, model.config().num_classes);
  const PipelineOptions p = pipeline_from_metadata(meta, model.config());
  const Index s = p.input_size;
  for (const auto& path : a.images) {
    Image img = read_image(path);
    if (p.clahe) {
      ClaheParams cp = p.clahe_params;
      cp.tiles_x = static_cast<int>(std::min<Index>(cp.tiles_x, img.width));
      cp.tiles_y = static_cast<int>(std::min<Index>(cp.tiles_y, img.height));
      img = clahe(img, cp);
    }
    Tensor<float> batch(Shape{1, s, s, 3});
    normalize_into(resize_bilinear(img, s, s), batch.data());
    const auto probs = forward_classify(model, batch);
    const auto row = probs.data();
    out << path.string() << ' ' << names[static_cast<std::size_t>(argmax(row))];
    char buf[32];
    for (float v : row) {
      std::snprintf(buf, sizeof buf, " %.9g", static_cast<double>(v));
      out << buf;
    }
    out << "\n";
  }
  return 0;
}

int cmd_bench(const Args& a, std::ostream& out) {
  std::optional<Classifier<float>> model;
  if (!a.model.empty()) {
    model.emplace(load_model(a.model));
  } else if (!a.preset.empty()) {
    ModelConfig c = preset(a.preset);
    if (a.input_size != 128) c = with_input_size(c, a.input_size);
    model.emplace(c);
  } else {
    throw ConfigError("bench needs --model or --preset");
  }
  const auto r = bench(*model, a.reps, a.batch);
  out << bench_report_text(r, model->config().kind);
  if (!a.json_out.empty()) write_text(a.json_out, bench_report_json(r, model->config().kind).dump(2) + "\n");
  return 0;
}

int cmd_sweep(const Args& a, std::ostream& out, std::ostream& err) {
  const SweepGrid grid = load_sweep_grid(a.grid);
  const RunConfig base = resolve_run_config(a);
  const DatasetManifest m = obtain_manifest(base);
  print_scan_issues(m, err);
  const auto results = run_sweep(grid, base, m, [&](const SweepResult& r) {
    out << "row " << r.row << (r.ok ? " done" : " failed: " + r.error) << "\n" << std::flush;
  });
  const fs::path dir = a.out_dir.empty() ? base.output_dir : a.out_dir;
  fs::create_directories(dir);
  write_text(dir / "sweep.csv", sweep_csv(results));
  const std::string md = sweep_markdown(results);
  write_text(dir / "sweep.md", md);
  out << md;
  for (const auto& r : results) {
    if (!r.ok) return 1;
  }
  return 0;
}

int cmd_ensemble(const Args& a, std::ostream& out) {
  const DatasetManifest m = load_manifest(a.manifest);
  const Split split = parse_split(a.split);
  if (m.count(split) == 0) throw ConfigError("split '" + a.split + "' is empty in " + a.manifest.string());
  std::vector<Tensor<float>> members;
  std::vector<int> labels;
  std::vector<std::string> names;
  for (const auto& path : a.models) {
    json meta;
    const Classifier<float> model = load_model(path, std::nullopt, &meta);
    const auto member_names = class_names_of(meta, model.config().num_classes);
    check_classes(m, member_names);
    names = member_names;
    BatchLoader loader(m, pipeline_from_metadata(meta, model.config()));
    auto ev = evaluate(model, loader, split, a.batch);
    labels = ev.labels;
    members.push_back(std::move(ev.probabilities));
    out << path.string() << ": ";
    print_metrics(compute_metrics(ev.confusion), out);
  }
  const auto combined = a.hard_vote ? ensemble_hard_vote(members) : ensemble_soft_vote(members);
  const auto cm = confusion_from_probabilities(combined, labels);
  const auto metrics = compute_metrics(cm);
  emit_report(metrics, cm, names, a.out_dir);
  out << (a.hard_vote ? "hard vote: " : "soft vote: ");
  print_metrics(metrics, out);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-based flood scene classifiers"};
  app.name("flood");
  app.require_subcommand(1);
  Args a;

  auto* synth = app.add_subcommand("synth", "Write a procedural 4-class corpus");
  synth->add_option("--out", a.out_dir, "Corpus root")->required();
  synth->add_option("--per-class", a.per_class, "Images per class (one value, or four)")
      ->check(CLI::PositiveNumber)
      ->expected(1, 4);
  synth->add_option("--size", a.size, "Image side in pixels")->check(CLI::Range(8, 4096));
  synth->add_option("--seed", a.seed);
  synth->add_option("--frames", a.frames, "Frames per sequence")->check(CLI::PositiveNumber);
  synth->add_option("--format", a.format, "png or ppm");

  auto* prep = app.add_subcommand("prep", "Scan, subsample and split a corpus into a manifest");
  prep->add_option("--root", a.root, "Corpus root (one directory per class)")->required();
  prep->add_option("--out", a.manifest_out, "Manifest path")->required();
  prep->add_option("--stride", a.stride, "Keep every n-th frame of each sequence")->check(CLI::PositiveNumber);
  prep->add_option("--seed", a.seed);
  prep->add_option("--train", a.f_train);
  prep->add_option("--val", a.f_val);
  prep->add_option("--test", a.f_test);
  prep->add_option("--materialize", a.materialize, "Write processed and augmented images here");
  prep->add_option("--input-size", a.input_size)->check(CLI::PositiveNumber);
  prep->add_flag("--no-clahe", a.no_clahe);
  prep->add_flag("--no-augment", a.no_augment);
  prep->add_option("--copies", a.copies, "Augmented copies per image")->check(CLI::NonNegativeNumber);
  prep->add_option("--clahe-tiles", a.tiles)->check(CLI::PositiveNumber);
  prep->add_option("--clip-limit", a.clip);

  auto add_run_opts = [&](CLI::App* c) {
    c->add_option("--config", a.config, "RunConfig JSON");
    c->add_option("--epochs", a.epochs);
    c->add_option("--seed", a.train_seed);
    c->add_option("--output-dir", a.output_dir);
    c->add_option("--manifest", a.manifest_override);
    c->add_option("--dataset-root", a.dataset_override);
  };
  auto* train_cmd = app.add_subcommand("train", "Train a model from a RunConfig");
  add_run_opts(train_cmd);

  auto* eval = app.add_subcommand("eval", "Score an archive on a manifest split");
  eval->add_option("--model", a.model)->required();
  eval->add_option("--manifest", a.manifest)->required();
  eval->add_option("--split", a.split, "train, val or test");
  eval->add_option("--out", a.out_dir, "Report directory")->required();
  eval->add_option("--batch", a.batch)->check(CLI::PositiveNumber);

  auto* predict = app.add_subcommand("predict", "Classify images");
  predict->add_option("--model", a.model)->required();
  predict->add_option("images", a.images)->required();

  auto* bench_cmd = app.add_subcommand("bench", "Time inference and report FLOPs");
  bench_cmd->add_option("--model", a.model);
  bench_cmd->add_option("--preset", a.preset, "Bench an untrained preset instead");
  bench_cmd->add_option("--input-size", a.input_size)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--reps", a.reps)->check(CLI::Range(3, 1000000));
  bench_cmd->add_option("--batch", a.batch)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--json", a.json_out);

  auto* sweep_cmd = app.add_subcommand("sweep", "Train and score every row of a grid");
  sweep_cmd->add_option("--grid", a.grid)->required();
  add_run_opts(sweep_cmd);
  sweep_cmd->add_option("--out", a.out_dir, "Report directory (default: output_dir)");

  auto* ens = app.add_subcommand("ensemble-eval", "Soft-vote several archives on a split");
  ens->add_option("--model", a.models, "Member archive (repeat)")->required();
  ens->add_option("--manifest", a.manifest)->required();
  ens->add_option("--split", a.split);
  ens->add_option("--out", a.out_dir)->required();
  ens->add_option("--batch", a.batch)->check(CLI::PositiveNumber);
  ens->add_flag("--hard-vote", a.hard_vote, "Majority vote instead of probability averaging");

  std::vector<const char*> argv{"flood"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(a, out);
    if (prep->parsed()) return cmd_prep(a, out, err);
    if (train_cmd->parsed()) return cmd_train(a, out, err);
    if (eval->parsed()) return cmd_eval(a, out);
    if (predict->parsed()) return cmd_predict(a, out);
    if (bench_cmd->parsed()) return cmd_bench(a, out);
    if (sweep_cmd->parsed()) return cmd_sweep(a, out, err);
    if (ens->parsed()) return cmd_ensemble(a, out);
  } catch (const ConfigError& e) {
    err << "flood: configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "flood: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace flood
