#include "disclabel/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>

#include <json.hpp>

#include "disclabel/rng.hpp"

namespace disclabel {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (learning_rate <= 0.0) throw ValidationError("learning rate must be positive");
  if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
  if (width_scale <= 0.0) throw ValidationError("width_scale must be positive");
  loss_weights.validate();
  awing.validate();
  target.validate();
}

std::string TrainConfig::to_json_string() const {
  return json{{"epochs", epochs},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"beta1", beta1},
              {"beta2", beta2},
              {"adam_epsilon", adam_epsilon},
              {"optimizer", optimizer == OptimizerKind::adam ? "adam" : "sgd"},
              {"seed", seed},
              {"loss_weights",
               {{"dice", loss_weights.dice},
                {"awing", loss_weights.awing},
                {"l2", loss_weights.l2},
                {"l1", loss_weights.l1}}},
              {"awing",
               {{"alpha", awing.alpha},
                {"omega", awing.omega},
                {"epsilon", awing.epsilon},
                {"theta", awing.theta}}},
              {"target", {{"sigma_px", target.sigma_px}, {"support_px", target.support_px}}},
              {"checkpoint_every", checkpoint_every},
              {"width_scale", width_scale},
              {"augment", augment}}
      .dump(2);
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  TrainConfig cfg;
  try {
    const json j = json::parse(text);
    // Unknown keys are rejected so config typos fail loudly.
    static const std::vector<std::string> known{
        "epochs",     "batch_size",       "learning_rate", "beta1",       "beta2",
        "adam_epsilon", "optimizer",      "seed",          "loss_weights", "awing",
        "target",     "checkpoint_every", "width_scale",   "augment"};
    for (const auto& [key, value] : j.items())
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw ValidationError("unknown training config key: " + key);

    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("beta1")) cfg.beta1 = j.at("beta1").get<double>();
    if (j.contains("beta2")) cfg.beta2 = j.at("beta2").get<double>();
    if (j.contains("adam_epsilon")) cfg.adam_epsilon = j.at("adam_epsilon").get<double>();
    if (j.contains("optimizer")) {
      const std::string name = j.at("optimizer").get<std::string>();
      if (name == "adam")
        cfg.optimizer = OptimizerKind::adam;
      else if (name == "sgd")
        cfg.optimizer = OptimizerKind::sgd;
      else
        throw ValidationError("unknown optimizer: " + name);
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("loss_weights")) {
      const json& w = j.at("loss_weights");
      if (w.contains("dice")) cfg.loss_weights.dice = w.at("dice").get<double>();
      if (w.contains("awing")) cfg.loss_weights.awing = w.at("awing").get<double>();
      if (w.contains("l2")) cfg.loss_weights.l2 = w.at("l2").get<double>();
      if (w.contains("l1")) cfg.loss_weights.l1 = w.at("l1").get<double>();
    }
    if (j.contains("awing")) {
      const json& a = j.at("awing");
      if (a.contains("alpha")) cfg.awing.alpha = a.at("alpha").get<double>();
      if (a.contains("omega")) cfg.awing.omega = a.at("omega").get<double>();
      if (a.contains("epsilon")) cfg.awing.epsilon = a.at("epsilon").get<double>();
      if (a.contains("theta")) cfg.awing.theta = a.at("theta").get<double>();
    }
    if (j.contains("target")) {
      const json& t = j.at("target");
      if (t.contains("sigma_px")) cfg.target.sigma_px = t.at("sigma_px").get<double>();
      if (t.contains("support_px")) cfg.target.support_px = t.at("support_px").get<double>();
    }
    if (j.contains("checkpoint_every")) cfg.checkpoint_every = j.at("checkpoint_every").get<int>();
    if (j.contains("width_scale")) cfg.width_scale = j.at("width_scale").get<double>();
    if (j.contains("augment")) cfg.augment = j.at("augment").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad training config JSON: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training config: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_string(text);
}

namespace {

struct LoadedSample {
  Image2D image;
  LabelSet labels;
  Heatmap target;
};

std::vector<LoadedSample> load_split(const Manifest& manifest, Split split,
                                     const TargetParams& target_params) {
  std::vector<LoadedSample> out;
  for (const auto& s : manifest.in_split(split)) {
    LoadedSample ls;
    ls.image = read_image(manifest.resolve(s.image_path));
    ls.labels = read_labels(manifest.resolve(s.labels_path));
    ls.target = make_target(ls.labels, ls.image.height, ls.image.width, target_params);
    out.push_back(std::move(ls));
  }
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].image.height != out[0].image.height || out[i].image.width != out[0].image.width)
      throw ShapeError("training requires all images of one split to share a shape");
  return out;
}

// Horizontal flip / small translation with the target rebuilt from the moved
// labels. Falls back to the original sample if a label would leave the image.
LoadedSample augment_sample(const LoadedSample& src, Rng& rng, const TargetParams& tp) {
  const bool flip = rng.bernoulli(0.5);
  const int dr = static_cast<int>(rng.uniform_int(-5, 5));
  const int dc = static_cast<int>(rng.uniform_int(-5, 5));
  if (!flip && dr == 0 && dc == 0) return src;

  const int h = src.image.height, w = src.image.width;
  std::vector<KeypointLabel> pts = src.labels.points;
  for (auto& p : pts) {
    if (flip) p.col = (w - 1) - p.col;
    p.row += dr;
    p.col += dc;
    if (p.row < 0.0 || p.row >= h || p.col < 0.0 || p.col >= w) return src;
  }

  LoadedSample out;
  out.image = Image2D(h, w, src.image.spacing_mm);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int sr = r - dr;
      int sc = c - dc;
      if (flip) sc = (w - 1) - sc;
      if (sr >= 0 && sr < h && sc >= 0 && sc < w) out.image.at(r, c) = src.image.at(sr, sc);
    }
  out.labels = LabelSet::from_points(std::move(pts));
  out.target = make_target(out.labels, h, w, tp);
  return out;
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const ParamLayout& layout)
      : cfg_(cfg), layout_(layout), m_(layout.trainable, 0.0f), v_(layout.trainable, 0.0f) {}

  void restore(const Checkpoint& ckpt) {
    if (ckpt.opt_m.empty()) return;
    if (ckpt.opt_m.size() != m_.size() || ckpt.opt_v.size() != v_.size())
      throw CorruptCheckpoint("optimizer state size mismatch on resume");
    m_ = ckpt.opt_m;
    v_ = ckpt.opt_v;
    step_ = ckpt.opt_step;
  }

  void step(std::vector<float>& params, const std::vector<float>& grads) {
    ++step_;
    const float lr = static_cast<float>(cfg_.learning_rate);
    if (cfg_.optimizer == OptimizerKind::sgd) {
      std::size_t cursor = 0;
      for (const auto& [off, len] : layout_.trainable_ranges) {
        for (std::size_t i = 0; i < len; ++i) params[off + i] -= lr * grads[off + i];
        cursor += len;
      }
      return;
    }
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float eps = static_cast<float>(cfg_.adam_epsilon);
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(step_));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(step_));
    std::size_t cursor = 0;
    for (const auto& [off, len] : layout_.trainable_ranges) {
      for (std::size_t i = 0; i < len; ++i) {
        const float g = grads[off + i];
        float& m = m_[cursor + i];
        float& v = v_[cursor + i];
        m = b1 * m + (1.0f - b1) * g;
        v = b2 * v + (1.0f - b2) * g * g;
        const float mhat = m / bc1;
        const float vhat = v / bc2;
        params[off + i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
      cursor += len;
    }
  }

  const std::vector<float>& m() const { return m_; }
  const std::vector<float>& v() const { return v_; }
  std::int64_t steps() const { return step_; }

 private:
  TrainConfig cfg_;
  const ParamLayout& layout_;
  std::vector<float> m_, v_;
  std::int64_t step_ = 0;
};

Checkpoint snapshot(const Network<float>& net, const Optimizer& opt, const TrainConfig& cfg,
                    std::int64_t epochs_done, const std::vector<HistoryEntry>& history) {
  Checkpoint ckpt;
  ckpt.config = net.config();
  ckpt.params = net.params();
  ckpt.meta.epoch = epochs_done;
  ckpt.meta.seed = cfg.seed;
  ckpt.meta.history = history;
  ckpt.opt_m = opt.m();
  ckpt.opt_v = opt.v();
  ckpt.opt_step = opt.steps();
  return ckpt;
}

double batch_loss_and_grad(Network<float>& net, const Tensor<float>& pred,
                           const Tensor<float>& target, const TrainConfig& cfg,
                           Tensor<float>& d_out) {
  const std::size_t plane = pred.plane_size();
  d_out = Tensor<float>(pred.n, 1, pred.h, pred.w);
  double total = 0.0;
  for (int i = 0; i < pred.n; ++i) {
    std::span<const float> p(pred.image(i), plane);
    std::span<const float> t(target.image(i), plane);
    std::span<float> g(d_out.image(i), plane);
    total += composite_loss<float>(p, t, cfg.loss_weights, cfg.awing, g);
    const float scale = 1.0f / static_cast<float>(pred.n);
    for (auto& x : g) x *= scale;
  }
  (void)net;
  return total / pred.n;
}

double eval_loss(Network<float>& net, const std::vector<LoadedSample>& samples,
                 const TrainConfig& cfg) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); i += cfg.batch_size) {
    const std::size_t b = std::min<std::size_t>(cfg.batch_size, samples.size() - i);
    const auto& first = samples[i].image;
    Tensor<float> in(static_cast<int>(b), 1, first.height, first.width);
    for (std::size_t j = 0; j < b; ++j)
      std::copy(samples[i + j].image.pixels.begin(), samples[i + j].image.pixels.end(),
                in.image(static_cast<int>(j)));
    Tensor<float> out = net.forward(in, /*train_mode=*/false);
    for (std::size_t j = 0; j < b; ++j) {
      std::span<const float> p(out.image(static_cast<int>(j)), out.plane_size());
      std::span<const float> t(samples[i + j].target.pixels.data(), out.plane_size());
      total += composite_loss<float>(p, t, cfg.loss_weights, cfg.awing);
    }
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace

TrainResult train(const Manifest& manifest, const ModelConfig& model_config,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const Checkpoint* resume) {
  cfg.validate();

  const std::vector<LoadedSample> train_set = load_split(manifest, Split::train, cfg.target);
  if (train_set.empty()) throw EmptyDataset("train split is empty");
  const std::vector<LoadedSample> val_set = load_split(manifest, Split::val, cfg.target);

  ModelConfig mc = model_config;
  mc.width_scale = cfg.width_scale;  // the training config governs model width
  Network<float> net = resume ? Network<float>::from_checkpoint(*resume)
                              : Network<float>(mc, cfg.seed);

  Optimizer opt(cfg, net.layout());
  std::vector<HistoryEntry> history;
  std::int64_t start_epoch = 0;
  if (resume) {
    opt.restore(*resume);
    history = resume->meta.history;
    start_epoch = resume->meta.epoch;
  }

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  Checkpoint last_good = snapshot(net, opt, cfg, start_epoch, history);

  const int h = train_set[0].image.height, w = train_set[0].image.width;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0xBA7C));
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double epoch_loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b = std::min<std::size_t>(cfg.batch_size, order.size() - b0);
      Tensor<float> in(static_cast<int>(b), 1, h, w);
      Tensor<float> target(static_cast<int>(b), 1, h, w);
      for (std::size_t j = 0; j < b; ++j) {
        const LoadedSample* s = &train_set[order[b0 + j]];
        LoadedSample augmented;
        if (cfg.augment) {
          Rng aug_rng(mix_seed(cfg.seed ^ 0xA46A46A4ULL, static_cast<std::uint64_t>(epoch),
                               order[b0 + j]));
          augmented = augment_sample(*s, aug_rng, cfg.target);
          s = &augmented;
        }
        std::copy(s->image.pixels.begin(), s->image.pixels.end(), in.image(static_cast<int>(j)));
        std::copy(s->target.pixels.begin(), s->target.pixels.end(),
                  target.image(static_cast<int>(j)));
      }

      Tensor<float> pred = net.forward(in, /*train_mode=*/true);
      Tensor<float> d_out;
      const double loss = batch_loss_and_grad(net, pred, target, cfg, d_out);
      if (!std::isfinite(loss)) {
        if (!out_dir.empty()) save_checkpoint(out_dir / "checkpoint_last_good.dlck", last_good);
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      epoch_loss_sum += loss * static_cast<double>(b);

      net.zero_grads();
      net.backward(d_out);
      opt.step(net.params(), net.grads());
    }

    HistoryEntry entry;
    entry.epoch = static_cast<int>(epoch) + 1;
    entry.train_loss = epoch_loss_sum / static_cast<double>(train_set.size());
    entry.val_loss = eval_loss(net, val_set, cfg);
    if (!std::isfinite(entry.val_loss)) {
      if (!out_dir.empty()) save_checkpoint(out_dir / "checkpoint_last_good.dlck", last_good);
      throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    history.push_back(entry);
    last_good = snapshot(net, opt, cfg, epoch + 1, history);

    if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%05lld.dlck",
                    static_cast<long long>(epoch + 1));
      save_checkpoint(out_dir / name, last_good);
    }
  }

  TrainResult result;
  result.checkpoint = snapshot(net, opt, cfg, std::max(start_epoch, static_cast<std::int64_t>(cfg.epochs)), history);
  result.history = history;
  if (!out_dir.empty()) {
    save_checkpoint(out_dir / "checkpoint_final.dlck", result.checkpoint);
    write_history_json(out_dir / "history.json", history);
  }
  return result;
}

Heatmap predict(const Checkpoint& ckpt, const Image2D& image) {
  Network<float> net = Network<float>::from_checkpoint(ckpt);
  return net.predict_one(image);
}

void write_history_json(const std::filesystem::path& path,
                        const std::vector<HistoryEntry>& history) {
  json arr = json::array();
  for (const auto& h : history)
    arr.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_loss", h.val_loss}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write history: " + path.string());
  out << arr.dump(2) << "\n";
}

}  // namespace disclabel
