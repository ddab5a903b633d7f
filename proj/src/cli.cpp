#include "disclabel/cli.hpp"

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "disclabel/io.hpp"
#include "disclabel/metrics.hpp"
#include "disclabel/model.hpp"
#include "disclabel/overlay.hpp"
#include "disclabel/phantom.hpp"
#include "disclabel/postprocess.hpp"
#include "disclabel/preprocess.hpp"
#include "disclabel/train.hpp"

namespace disclabel {

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("DISCLABEL_SEED"))
    return std::strtoull(env, nullptr, 10);
  return 0;
}

struct GenArgs {
  int n = 0;
  std::string out;
  std::uint64_t seed = default_seed();
  PhantomConfig config;
  int min_discs = 5, max_discs = 7;
  double min_spacing = 14.0, max_spacing = 20.0;
  std::string contrast = "t1";
};

int run_gen(const GenArgs& a) {
  PhantomConfig cfg = a.config;
  cfg.disc_count_range = {a.min_discs, a.max_discs};
  cfg.disc_spacing_range_px = {a.min_spacing, a.max_spacing};
  cfg.contrast_mode = a.contrast == "t2" ? ContrastMode::t2_like : ContrastMode::t1_like;
  const Manifest m = generate_dataset(cfg, a.n, a.out, a.seed);
  std::cout << "wrote " << m.samples.size() << " phantoms and "
            << (std::filesystem::path(a.out) / "manifest.json").string() << "\n";
  return 0;
}

struct PreprocessArgs {
  std::string manifest, out;
  int size = 141;
  std::vector<int> crop_center;  // empty = image center
  ClaheParams clahe;
  TargetParams target;
};

int run_preprocess(const PreprocessArgs& a) {
  const Manifest input = read_manifest(a.manifest);
  std::filesystem::create_directories(a.out);

  Manifest output;
  output.root = a.out;
  for (const auto& s : input.samples) {
    const Image2D img = read_image(input.resolve(s.image_path));
    const LabelSet labels = read_labels(input.resolve(s.labels_path));
    const int cr = a.crop_center.size() == 2 ? a.crop_center[0] : -1;
    const int cc = a.crop_center.size() == 2 ? a.crop_center[1] : -1;
    const PreprocessedSample p =
        preprocess_sample(img, labels, a.size, cr, cc, a.clahe, a.target);

    const std::string stem = std::filesystem::path(s.image_path).stem().string();
    ManifestSample ms = s;
    ms.image_path = stem + ".i2f";
    ms.labels_path = stem + "_labels.json";
    write_image(output.root / ms.image_path, p.image);
    write_labels(output.root / ms.labels_path, p.labels);
    write_image(output.root / (stem + "_target.i2f"), p.target);
    output.samples.push_back(std::move(ms));
  }
  write_manifest(output.root / "manifest.json", output);
  std::cout << "preprocessed " << output.samples.size() << " samples into " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string manifest, out, config_path, resume_path;
  bool no_redundant_counting = false;
  bool augment = false;
  std::string optimizer;
  // flag overrides; negative = not set
  int epochs = -1, batch_size = -1, checkpoint_every = -1;
  double lr = -1.0, width_scale = -1.0;
  double w_dice = -1.0, w_awing = -1.0, w_l2 = -1.0, w_l1 = -1.0;
  double sigma = -1.0, support = -1.0;
  std::int64_t seed = -1;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config_path.empty()) cfg = TrainConfig::from_json_file(a.config_path);
  cfg.seed = default_seed();
  // flags beat the config file
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  if (a.batch_size >= 0) cfg.batch_size = a.batch_size;
  if (a.checkpoint_every >= 0) cfg.checkpoint_every = a.checkpoint_every;
  if (a.lr >= 0.0) cfg.learning_rate = a.lr;
  if (a.width_scale >= 0.0) cfg.width_scale = a.width_scale;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.w_dice >= 0.0) cfg.loss_weights.dice = a.w_dice;
  if (a.w_awing >= 0.0) cfg.loss_weights.awing = a.w_awing;
  if (a.w_l2 >= 0.0) cfg.loss_weights.l2 = a.w_l2;
  if (a.w_l1 >= 0.0) cfg.loss_weights.l1 = a.w_l1;
  if (a.sigma >= 0.0) cfg.target.sigma_px = a.sigma;
  if (a.support >= 0.0) cfg.target.support_px = a.support;
  if (a.augment) cfg.augment = true;
  if (!a.optimizer.empty())
    cfg.optimizer = a.optimizer == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;

  ModelConfig mc;
  mc.redundant_counting = !a.no_redundant_counting;

  const Manifest manifest = read_manifest(a.manifest);
  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!a.resume_path.empty()) {
    resume = load_checkpoint(a.resume_path);
    resume_ptr = &resume;
  }

  const TrainResult result = train(manifest, mc, cfg, a.out, resume_ptr);
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    std::cout << "epoch " << last.epoch << ": train_loss " << last.train_loss << ", val_loss "
              << last.val_loss << "\n";
  }
  std::cout << "checkpoint: " << (std::filesystem::path(a.out) / "checkpoint_final.dlck").string()
            << "\n";
  return 0;
}

struct PredictArgs {
  std::string checkpoint, image, out, labels_out;
  double threshold = 0.5;
  int min_component = 3;
};

int run_predict(const PredictArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Image2D image = read_image(a.image);
  const Heatmap heat = predict(ckpt, image);
  write_image(a.out, heat);
  if (!a.labels_out.empty()) {
    const LabelSet pred = assign_levels(extract_keypoints(heat, a.threshold, a.min_component));
    write_labels(a.labels_out, pred, /*predicted=*/true);
  }
  std::cout << "wrote heatmap " << a.out << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string manifest, checkpoint, out;
  std::string split = "val";
  EvalParams params;
};

int run_evaluate(const EvaluateArgs& a) {
  const Manifest manifest = read_manifest(a.manifest);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const EvalOutput out = evaluate_dataset(manifest, ckpt, split_from_string(a.split), a.params);

  std::filesystem::create_directories(a.out);
  write_report_json(std::filesystem::path(a.out) / "report.json", out.report);
  write_report_csv(std::filesystem::path(a.out) / "per_sample.csv", out.rows);
  std::cout << report_to_json(out.report) << "\n";
  return 0;
}

struct PlotArgs {
  std::string image, out, heatmap, labels;
};

int run_plot(const PlotArgs& a) {
  const Image2D base = read_image(a.image);
  Heatmap heat;
  LabelSet labels;
  const Heatmap* heat_ptr = nullptr;
  const LabelSet* labels_ptr = nullptr;
  if (!a.heatmap.empty()) {
    heat = read_image(a.heatmap);
    heat_ptr = &heat;
  }
  if (!a.labels.empty()) {
    labels = read_labels(a.labels);
    labels_ptr = &labels;
  }
  render_overlay_png(a.out, base, heat_ptr, labels_ptr);
  std::cout << "wrote overlay " << a.out << "\n";
  return 0;
}

}  // namespace

int run(std::vector<std::string> args) {
  CLI::App app{"intervertebral disc keypoint detection pipeline", "disclabel"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-phantoms", "generate a synthetic phantom dataset");
  gen_cmd->add_option("--n", gen.n, "number of phantoms")->required();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "RNG seed (default: DISCLABEL_SEED or 0)");
  gen_cmd->add_option("--size", gen.config.size, "image size in px");
  gen_cmd->add_option("--min-discs", gen.min_discs, "minimum disc count");
  gen_cmd->add_option("--max-discs", gen.max_discs, "maximum disc count");
  gen_cmd->add_option("--min-spacing", gen.min_spacing, "minimum disc spacing px");
  gen_cmd->add_option("--max-spacing", gen.max_spacing, "maximum disc spacing px");
  gen_cmd->add_option("--curvature", gen.config.curvature_amplitude_px, "centerline curvature px");
  gen_cmd->add_option("--noise-sigma", gen.config.noise_sigma, "additive Gaussian noise sigma");
  gen_cmd->add_option("--bias", gen.config.bias_field_amplitude, "bias field amplitude");
  gen_cmd->add_option("--contrast", gen.contrast, "starting contrast mode: t1 or t2")
      ->check(CLI::IsMember({"t1", "t2"}));

  PreprocessArgs pre;
  CLI::App* pre_cmd =
      app.add_subcommand("preprocess", "resample, crop, CLAHE and build Gaussian targets");
  pre_cmd->add_option("--manifest", pre.manifest, "input manifest")->required();
  pre_cmd->add_option("--out", pre.out, "output directory")->required();
  pre_cmd->add_option("--size", pre.size, "crop size in px");
  pre_cmd->add_option("--crop-center", pre.crop_center, "crop center row col")->expected(2);
  pre_cmd->add_option("--tiles", pre.clahe.tile_rows, "CLAHE tile grid (square)");
  pre_cmd->add_option("--clip", pre.clahe.clip_factor, "CLAHE clip factor");
  pre_cmd->add_option("--bins", pre.clahe.bins, "CLAHE histogram bins");
  pre_cmd->add_option("--sigma", pre.target.sigma_px, "target Gaussian sigma px");
  pre_cmd->add_option("--support", pre.target.support_px, "target support radius px");

  TrainArgs tr;
  CLI::App* tr_cmd = app.add_subcommand("train", "train the heatmap network");
  tr_cmd->add_option("--manifest", tr.manifest, "dataset manifest")->required();
  tr_cmd->add_option("--out", tr.out, "output directory")->required();
  tr_cmd->add_option("--config", tr.config_path, "training config JSON");
  tr_cmd->add_option("--epochs", tr.epochs, "training epochs");
  tr_cmd->add_option("--batch-size", tr.batch_size, "batch size");
  tr_cmd->add_option("--lr", tr.lr, "learning rate");
  tr_cmd->add_option("--seed", tr.seed, "RNG seed (default: DISCLABEL_SEED or 0)");
  tr_cmd->add_option("--width-scale", tr.width_scale, "channel width multiplier");
  tr_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "epochs between checkpoints");
  tr_cmd->add_option("--optimizer", tr.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}));
  tr_cmd->add_option("--w-dice", tr.w_dice, "dice loss weight");
  tr_cmd->add_option("--w-awing", tr.w_awing, "adaptive wing loss weight");
  tr_cmd->add_option("--w-l2", tr.w_l2, "L2 loss weight");
  tr_cmd->add_option("--w-l1", tr.w_l1, "L1 loss weight");
  tr_cmd->add_option("--sigma", tr.sigma, "target Gaussian sigma px");
  tr_cmd->add_option("--support", tr.support, "target support radius px");
  tr_cmd->add_flag("--augment", tr.augment, "enable flip/translate augmentation");
  tr_cmd->add_flag("--no-redundant-counting", tr.no_redundant_counting,
                   "ablation: large-kernel convs run at stride = kernel");
  tr_cmd->add_option("--resume", tr.resume_path, "checkpoint to resume from");

  PredictArgs pd;
  CLI::App* pd_cmd = app.add_subcommand("predict", "run the network on one image");
  pd_cmd->add_option("--checkpoint", pd.checkpoint, "model checkpoint")->required();
  pd_cmd->add_option("--image", pd.image, "input I2F image")->required();
  pd_cmd->add_option("--out", pd.out, "output heatmap I2F path")->required();
  pd_cmd->add_option("--labels-out", pd.labels_out, "also write extracted keypoints JSON");
  pd_cmd->add_option("--threshold", pd.threshold, "extraction threshold");
  pd_cmd->add_option("--min-component", pd.min_component, "min component size px");

  EvaluateArgs ev;
  CLI::App* ev_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a manifest split");
  ev_cmd->add_option("--manifest", ev.manifest, "dataset manifest")->required();
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  ev_cmd->add_option("--out", ev.out, "output directory")->required();
  ev_cmd->add_option("--split", ev.split, "split to evaluate")
      ->check(CLI::IsMember({"train", "test", "val"}));
  ev_cmd->add_option("--radius-mm", ev.params.match_radius_mm, "matching radius in mm");
  ev_cmd->add_option("--threshold", ev.params.threshold, "extraction threshold");
  ev_cmd->add_option("--min-component", ev.params.min_component_px, "min component size px");

  PlotArgs pl;
  CLI::App* pl_cmd = app.add_subcommand("plot", "render a PNG overlay");
  pl_cmd->add_option("--image", pl.image, "base I2F image")->required();
  pl_cmd->add_option("--out", pl.out, "output PNG path")->required();
  pl_cmd->add_option("--heatmap", pl.heatmap, "heatmap I2F to blend");
  pl_cmd->add_option("--labels", pl.labels, "labels JSON to mark");

  // CLI11 wants argv order reversed for the vector overload
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    // prints contextual help or the error + usage hint
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen_cmd->parsed()) return run_gen(gen);
    if (pre_cmd->parsed()) return run_preprocess(pre);
    if (tr_cmd->parsed()) return run_train(tr);
    if (pd_cmd->parsed()) return run_predict(pd);
    if (ev_cmd->parsed()) return run_evaluate(ev);
    if (pl_cmd->parsed()) return run_plot(pl);
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "no subcommand given\n" << app.help();
  return 1;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace disclabel
