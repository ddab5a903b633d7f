#include "disclabel/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "disclabel/rng.hpp"

namespace disclabel {

using nlohmann::json;

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
// Kernels this large act as the patch-extraction stages; the ablation arm
// runs them at stride = kernel (non-overlapping receptive windows).
constexpr int kStridedKernelThreshold = 8;
}  // namespace

std::vector<LayerSpec> ModelConfig::default_layer_stack() {
  using LK = LayerKind;
  return {
      {LK::conv, 3, 64, 0, 0},
      {LK::inception, 3, 0, 16, 16},
      {LK::inception, 3, 0, 16, 32},
      {LK::conv, 16, 16, 0, 0},
      {LK::inception, 3, 0, 112, 48},
      {LK::inception, 3, 0, 40, 40},
      {LK::conv, 15, 32, 0, 0},
      {LK::conv, 1, 64, 0, 0},
      {LK::output, 1, 1, 0, 0},
  };
}

void ModelConfig::validate() const {
  if (layers.empty()) throw ValidationError("model must have at least one layer");
  if (width_scale <= 0.0) throw ValidationError("width_scale must be positive");
  if (leaky_slope < 0.0 || leaky_slope >= 1.0)
    throw ValidationError("leaky slope must be in [0,1)");
  for (const auto& l : layers) {
    if (l.kernel_px < 1) throw ValidationError("layer kernel must be >= 1");
    if (l.kind == LayerKind::inception) {
      if (l.branch1x1 < 1 || l.branchkxk < 1)
        throw ValidationError("inception branch widths must be >= 1");
      if (l.kernel_px < 2)
        throw ValidationError("inception kxk branch kernel must be > 1");
    } else if (l.channels_out < 1) {
      throw ValidationError("layer channels must be >= 1");
    }
  }
  const auto& last = layers.back();
  if (last.kind != LayerKind::output || last.kernel_px != 1 || last.channels_out != 1)
    throw ValidationError("last layer must be a 1x1 single-channel logistic output");
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    if (layers[i].kind == LayerKind::output)
      throw ValidationError("output layer must be last");
}

int receptive_field_of(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw ValidationError("receptive_field_of: empty layer list");
  int rf = 1;
  for (const auto& l : layers) rf += l.kernel_px - 1;
  return rf;
}

int scaled_channels(int channels, double width_scale) {
  return std::max(1, static_cast<int>(std::lround(channels * width_scale)));
}

namespace {

std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::inception: return "inception";
    case LayerKind::output: return "output";
  }
  throw ValidationError("bad layer kind");
}

LayerKind kind_from(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "inception") return LayerKind::inception;
  if (s == "output") return LayerKind::output;
  throw ValidationError("unknown layer kind: " + s);
}

json config_to_json(const ModelConfig& cfg) {
  json layers = json::array();
  for (const auto& l : cfg.layers) {
    json jl{{"kind", kind_name(l.kind)}, {"kernel", l.kernel_px}};
    if (l.kind == LayerKind::inception) {
      jl["branch1x1"] = l.branch1x1;
      jl["branchkxk"] = l.branchkxk;
    } else {
      jl["channels"] = l.channels_out;
    }
    layers.push_back(std::move(jl));
  }
  return json{{"layers", layers},
              {"leaky_slope", cfg.leaky_slope},
              {"redundant_counting", cfg.redundant_counting},
              {"width_scale", cfg.width_scale}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.layers.clear();
  for (const auto& jl : j.at("layers")) {
    LayerSpec l;
    l.kind = kind_from(jl.at("kind").get<std::string>());
    l.kernel_px = jl.at("kernel").get<int>();
    if (l.kind == LayerKind::inception) {
      l.branch1x1 = jl.at("branch1x1").get<int>();
      l.branchkxk = jl.at("branchkxk").get<int>();
    } else {
      l.channels_out = jl.at("channels").get<int>();
    }
    cfg.layers.push_back(l);
  }
  cfg.leaky_slope = j.at("leaky_slope").get<double>();
  cfg.redundant_counting = j.at("redundant_counting").get<bool>();
  cfg.width_scale = j.at("width_scale").get<double>();
  cfg.validate();
  return cfg;
}

}  // namespace

std::string ModelConfig::to_json_string() const { return config_to_json(*this).dump(); }

ModelConfig ModelConfig::from_json_string(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad model config JSON: ") + e.what());
  }
}

ParamLayout resolve_layers(const ModelConfig& config) {
  config.validate();
  ParamLayout layout;
  std::size_t off = 0;
  auto take = [&off](std::size_t len) {
    const std::size_t at = off;
    off += len;
    return at;
  };

  int in_ch = 1;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& spec = config.layers[i];
    ResolvedLayer rl;
    rl.kind = spec.kind;
    rl.k = spec.kernel_px;
    rl.in_ch = in_ch;
    rl.bn = spec.kind != LayerKind::output;
    if (!config.redundant_counting && spec.kind == LayerKind::conv &&
        spec.kernel_px >= kStridedKernelThreshold)
      rl.stride = spec.kernel_px;

    const std::size_t trainable_begin = off;
    if (spec.kind == LayerKind::inception) {
      rl.c1 = scaled_channels(spec.branch1x1, config.width_scale);
      rl.c2 = scaled_channels(spec.branchkxk, config.width_scale);
      rl.out_ch = rl.c1 + rl.c2;
      rl.w1_len = static_cast<std::size_t>(rl.c1) * in_ch;
      rl.w1 = take(rl.w1_len);
      rl.w2_len = static_cast<std::size_t>(rl.c2) * in_ch * rl.k * rl.k;
      rl.w2 = take(rl.w2_len);
    } else {
      rl.out_ch = spec.kind == LayerKind::output
                      ? spec.channels_out
                      : scaled_channels(spec.channels_out, config.width_scale);
      rl.w1_len = static_cast<std::size_t>(rl.out_ch) * in_ch * rl.k * rl.k;
      rl.w1 = take(rl.w1_len);
      if (spec.kind == LayerKind::output) {
        rl.b1_len = static_cast<std::size_t>(rl.out_ch);
        rl.b1 = take(rl.b1_len);
      }
    }
    if (rl.bn) {
      rl.gamma = take(rl.out_ch);
      rl.beta = take(rl.out_ch);
    }
    layout.trainable_ranges.emplace_back(trainable_begin, off - trainable_begin);
    layout.trainable += off - trainable_begin;
    if (rl.bn) {
      rl.rmean = take(rl.out_ch);
      rl.rvar = take(rl.out_ch);
    }
    layout.layers.push_back(rl);
    in_ch = rl.out_ch;
  }
  layout.total = off;
  return layout;
}

// --- checkpoint I/O ----------------------------------------------------------

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32_block(std::string& out, const std::vector<float>& vals) {
  for (float v : vals) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

void get_f32_block(const unsigned char* p, std::size_t count, std::vector<float>& out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get_u32_le(p + 4 * i);
    out[i] = std::bit_cast<float>(bits);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const ParamLayout layout = resolve_layers(ckpt.config);
  if (ckpt.params.size() != layout.total)
    throw CorruptCheckpoint("checkpoint parameter count does not match config");
  const bool has_opt = !ckpt.opt_m.empty();
  if (has_opt && (ckpt.opt_m.size() != layout.trainable || ckpt.opt_v.size() != layout.trainable))
    throw CorruptCheckpoint("checkpoint optimizer state size does not match config");

  json history = json::array();
  for (const auto& h : ckpt.meta.history)
    history.push_back(
        {{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_loss", h.val_loss}});
  const json meta{{"epoch", ckpt.meta.epoch},
                  {"seed", ckpt.meta.seed},
                  {"history", history},
                  {"opt_step", ckpt.opt_step},
                  {"has_opt_state", has_opt}};
  const std::string doc = json{{"model", config_to_json(ckpt.config)}, {"meta", meta}}.dump();

  std::string out;
  out += "DLCK";
  put_u32_le(out, ckpt.version);
  put_u32_le(out, static_cast<std::uint32_t>(doc.size()));
  out += doc;
  put_f32_block(out, ckpt.params);
  if (has_opt) {
    put_f32_block(out, ckpt.opt_m);
    put_f32_block(out, ckpt.opt_v);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (data.size() < 12 || data.compare(0, 4, "DLCK") != 0)
    throw CorruptCheckpoint("not a checkpoint file: " + path.string());
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  Checkpoint ckpt;
  ckpt.version = get_u32_le(p + 4);
  if (ckpt.version > kCheckpointVersion)
    throw UnsupportedVersion("checkpoint version " + std::to_string(ckpt.version) +
                             " is newer than supported version " +
                             std::to_string(kCheckpointVersion));
  if (ckpt.version == 0) throw CorruptCheckpoint("invalid checkpoint version 0");

  const std::size_t json_len = get_u32_le(p + 8);
  if (12 + json_len > data.size())
    throw CorruptCheckpoint("truncated checkpoint header: " + path.string());

  bool has_opt = false;
  try {
    const json doc = json::parse(data.substr(12, json_len));
    ckpt.config = config_from_json(doc.at("model"));
    const json& meta = doc.at("meta");
    ckpt.meta.epoch = meta.at("epoch").get<std::int64_t>();
    ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
    for (const auto& h : meta.at("history"))
      ckpt.meta.history.push_back({h.at("epoch").get<int>(), h.at("train_loss").get<double>(),
                                   h.at("val_loss").get<double>()});
    ckpt.opt_step = meta.at("opt_step").get<std::int64_t>();
    has_opt = meta.at("has_opt_state").get<bool>();
  } catch (const json::exception& e) {
    throw CorruptCheckpoint("bad checkpoint metadata in " + path.string() + ": " + e.what());
  }

  const ParamLayout layout = resolve_layers(ckpt.config);
  const std::size_t expected =
      layout.total + (has_opt ? 2 * layout.trainable : static_cast<std::size_t>(0));
  const std::size_t payload_bytes = data.size() - 12 - json_len;
  if (payload_bytes != expected * 4)
    throw CorruptCheckpoint("checkpoint parameter payload mismatch in " + path.string() +
                            ": expected " + std::to_string(expected * 4) + " bytes, got " +
                            std::to_string(payload_bytes));

  const auto* payload = p + 12 + json_len;
  get_f32_block(payload, layout.total, ckpt.params);
  if (has_opt) {
    get_f32_block(payload + 4 * layout.total, layout.trainable, ckpt.opt_m);
    get_f32_block(payload + 4 * (layout.total + layout.trainable), layout.trainable, ckpt.opt_v);
  }
  return ckpt;
}

// --- network ------------------------------------------------------------------

template <class S>
Network<S>::Network(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config), layout_(resolve_layers(config)) {
  rf_ = receptive_field_of(config_.layers);
  pad_before_ = rf_ / 2;            // 20 for the 40 px receptive field
  pad_after_ = rf_ - 1 - pad_before_;  // 19
  params_.assign(layout_.total, S(0));
  grads_.assign(layout_.total, S(0));
  init_params(init_seed);
}

template <class S>
Network<S> Network<S>::from_checkpoint(const Checkpoint& ckpt) {
  Network net(ckpt.config, 0);
  if (ckpt.params.size() != net.layout_.total)
    throw CorruptCheckpoint("checkpoint parameter count does not match model config");
  for (std::size_t i = 0; i < ckpt.params.size(); ++i)
    net.params_[i] = static_cast<S>(ckpt.params[i]);
  return net;
}

template <class S>
void Network<S>::init_params(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xD15CDA7A));
  auto fill_uniform = [&](std::size_t off, std::size_t len, int fan_in) {
    const double limit = std::sqrt(3.0 / fan_in);
    for (std::size_t i = 0; i < len; ++i)
      params_[off + i] = static_cast<S>(rng.uniform(-limit, limit));
  };
  for (const auto& rl : layout_.layers) {
    if (rl.kind == LayerKind::inception) {
      fill_uniform(rl.w1, rl.w1_len, rl.in_ch);
      fill_uniform(rl.w2, rl.w2_len, rl.in_ch * rl.k * rl.k);
    } else {
      fill_uniform(rl.w1, rl.w1_len, rl.in_ch * rl.k * rl.k);
      // output-layer bias stays zero
    }
    if (rl.bn) {
      for (int c = 0; c < rl.out_ch; ++c) {
        params_[rl.gamma + c] = S(1);
        params_[rl.beta + c] = S(0);
        params_[rl.rmean + c] = S(0);
        params_[rl.rvar + c] = S(1);
      }
    }
  }
}

template <class S>
void Network<S>::zero_grads() {
  std::fill(grads_.begin(), grads_.end(), S(0));
}

template <class S>
std::vector<float> Network<S>::params_as_float() const {
  std::vector<float> out(params_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(params_[i]);
  return out;
}

namespace {

// Nearest-neighbour upsample of the strided conv output back to the size a
// stride-1 conv would have produced; cell (r/k, c/k) covers output (r, c).
template <class S>
void upsample_nearest(const S* src, int ch, int sh, int sw, int k, S* dst, int dh, int dw) {
  for (int c = 0; c < ch; ++c) {
    const S* sp = src + static_cast<std::size_t>(c) * sh * sw;
    S* dp = dst + static_cast<std::size_t>(c) * dh * dw;
    for (int r = 0; r < dh; ++r) {
      const int sr = std::min(r / k, sh - 1);
      for (int cc = 0; cc < dw; ++cc) dp[r * dw + cc] = sp[sr * sw + std::min(cc / k, sw - 1)];
    }
  }
}

template <class S>
void downsample_sum(const S* dsrc, int ch, int dh, int dw, int k, S* ddst, int sh, int sw) {
  std::fill(ddst, ddst + static_cast<std::size_t>(ch) * sh * sw, S(0));
  for (int c = 0; c < ch; ++c) {
    const S* dp = dsrc + static_cast<std::size_t>(c) * dh * dw;
    S* sp = ddst + static_cast<std::size_t>(c) * sh * sw;
    for (int r = 0; r < dh; ++r) {
      const int sr = std::min(r / k, sh - 1);
      for (int cc = 0; cc < dw; ++cc) sp[sr * sw + std::min(cc / k, sw - 1)] += dp[r * dw + cc];
    }
  }
}

// Copies the (k-1)/2-inset interior used by the inception 1x1 branch.
template <class S>
void copy_interior(const S* x, int ch, int h, int w, int k, S* out, int ho, int wo) {
  const int off = (k - 1) / 2;
  for (int c = 0; c < ch; ++c) {
    const S* xp = x + static_cast<std::size_t>(c) * h * w;
    S* op = out + static_cast<std::size_t>(c) * ho * wo;
    for (int r = 0; r < ho; ++r)
      std::memcpy(op + static_cast<std::size_t>(r) * wo,
                  xp + static_cast<std::size_t>(r + off) * w + off, sizeof(S) * wo);
  }
}

template <class S>
void add_interior(const S* d, int ch, int ho, int wo, int k, S* dx, int h, int w) {
  const int off = (k - 1) / 2;
  for (int c = 0; c < ch; ++c) {
    const S* dp = d + static_cast<std::size_t>(c) * ho * wo;
    S* xp = dx + static_cast<std::size_t>(c) * h * w;
    for (int r = 0; r < ho; ++r) {
      S* row = xp + static_cast<std::size_t>(r + off) * w + off;
      const S* srow = dp + static_cast<std::size_t>(r) * wo;
      for (int cc = 0; cc < wo; ++cc) row[cc] += srow[cc];
    }
  }
}

}  // namespace

template <class S>
Tensor<S> Network<S>::run_layer(std::size_t idx, const Tensor<S>& in, bool train_mode,
                                bool update_running_stats, bool keep_ctx) {
  const ResolvedLayer& rl = layout_.layers[idx];
  const int ho = in.h - rl.k + 1, wo = in.w - rl.k + 1;
  Tensor<S> out(in.n, rl.out_ch, ho, wo);

  for (int img = 0; img < in.n; ++img) {
    const S* x = in.image(img);
    S* y = out.image(img);
    if (rl.kind == LayerKind::inception) {
      std::vector<S> cropped(static_cast<std::size_t>(rl.in_ch) * ho * wo);
      copy_interior(x, rl.in_ch, in.h, in.w, rl.k, cropped.data(), ho, wo);
      detail::conv2d_forward(cropped.data(), rl.in_ch, ho, wo, params_.data() + rl.w1,
                             static_cast<const S*>(nullptr), rl.c1, 1, y, scratch_);
      detail::conv2d_forward(x, rl.in_ch, in.h, in.w, params_.data() + rl.w2,
                             static_cast<const S*>(nullptr), rl.c2, rl.k,
                             y + static_cast<std::size_t>(rl.c1) * ho * wo, scratch_);
    } else if (rl.stride > 1) {
      const int sh = (in.h - rl.k) / rl.stride + 1, sw = (in.w - rl.k) / rl.stride + 1;
      std::vector<S> strided(static_cast<std::size_t>(rl.out_ch) * sh * sw);
      detail::conv2d_naive(x, rl.in_ch, in.h, in.w, params_.data() + rl.w1,
                           static_cast<const S*>(nullptr), rl.out_ch, rl.k, rl.stride,
                           strided.data());
      upsample_nearest(strided.data(), rl.out_ch, sh, sw, rl.k, y, ho, wo);
    } else {
      const S* bias = rl.b1_len ? params_.data() + rl.b1 : nullptr;
      detail::conv2d_forward(x, rl.in_ch, in.h, in.w, params_.data() + rl.w1, bias, rl.out_ch,
                             rl.k, y, scratch_);
    }
  }

  if (rl.kind == LayerKind::output) {
    for (auto& v : out.v) v = S(1) / (S(1) + std::exp(-v));
    return out;
  }

  // batch norm
  const std::size_t plane = out.plane_size();
  const S n_stat = static_cast<S>(plane * static_cast<std::size_t>(out.n));
  BnCtx ctx;
  if (train_mode && keep_ctx) {
    ctx.xhat = Tensor<S>(out.n, out.c, out.h, out.w);
    ctx.invstd.assign(rl.out_ch, S(0));
  }
  for (int c = 0; c < rl.out_ch; ++c) {
    S gamma = params_[rl.gamma + c], beta = params_[rl.beta + c];
    if (train_mode) {
      S sum = 0;
      for (int img = 0; img < out.n; ++img) {
        const S* p = out.plane(img, c);
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const S mean = sum / n_stat;
      S sq = 0;
      for (int img = 0; img < out.n; ++img) {
        const S* p = out.plane(img, c);
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      const S var = sq / n_stat;
      const S invstd = S(1) / std::sqrt(var + S(kBnEps));
      if (update_running_stats) {
        params_[rl.rmean + c] =
            static_cast<S>((1.0 - kBnMomentum) * params_[rl.rmean + c] + kBnMomentum * mean);
        params_[rl.rvar + c] =
            static_cast<S>((1.0 - kBnMomentum) * params_[rl.rvar + c] + kBnMomentum * var);
      }
      for (int img = 0; img < out.n; ++img) {
        S* p = out.plane(img, c);
        S* xh = keep_ctx ? ctx.xhat.plane(img, c) : nullptr;
        for (std::size_t i = 0; i < plane; ++i) {
          const S xhat = (p[i] - mean) * invstd;
          if (xh) xh[i] = xhat;
          p[i] = gamma * xhat + beta;
        }
      }
      if (keep_ctx) ctx.invstd[c] = invstd;
    } else {
      const S mean = params_[rl.rmean + c];
      const S invstd = S(1) / std::sqrt(params_[rl.rvar + c] + S(kBnEps));
      for (int img = 0; img < out.n; ++img) {
        S* p = out.plane(img, c);
        for (std::size_t i = 0; i < plane; ++i) p[i] = gamma * (p[i] - mean) * invstd + beta;
      }
    }
  }
  if (train_mode && keep_ctx) bn_ctx_[idx] = std::move(ctx);

  const S slope = static_cast<S>(config_.leaky_slope);
  for (auto& v : out.v)
    if (v < S(0)) v *= slope;
  return out;
}

template <class S>
Tensor<S> Network<S>::forward(const Tensor<S>& input, bool train_mode,
                              bool update_running_stats) {
  if (input.c != 1) throw ShapeError("network input must be single-channel");
  if (input.h < rf_ || input.w < rf_)
    throw InputTooSmall("input " + std::to_string(input.h) + "x" + std::to_string(input.w) +
                        " is smaller than the " + std::to_string(rf_) + "x" +
                        std::to_string(rf_) + " receptive field");

  Tensor<S> padded(input.n, 1, input.h + rf_ - 1, input.w + rf_ - 1);
  for (int img = 0; img < input.n; ++img)
    for (int r = 0; r < input.h; ++r)
      std::memcpy(padded.plane(img, 0) + (static_cast<std::size_t>(r) + pad_before_) * padded.w +
                      pad_before_,
                  input.plane(img, 0) + static_cast<std::size_t>(r) * input.w,
                  sizeof(S) * input.w);

  const bool keep_ctx = train_mode;
  if (keep_ctx) {
    acts_.clear();
    bn_ctx_.assign(layout_.layers.size(), BnCtx{});
    acts_.push_back(std::move(padded));
  }

  Tensor<S> cur = keep_ctx ? Tensor<S>{} : std::move(padded);
  const Tensor<S>* in_ptr = keep_ctx ? &acts_[0] : &cur;
  for (std::size_t i = 0; i < layout_.layers.size(); ++i) {
    Tensor<S> next = run_layer(i, *in_ptr, train_mode, update_running_stats, keep_ctx);
    if (keep_ctx) {
      acts_.push_back(std::move(next));
      in_ptr = &acts_.back();
    } else {
      cur = std::move(next);
      in_ptr = &cur;
    }
  }
  have_ctx_ = keep_ctx;

  const Tensor<S>& result = *in_ptr;
  if (result.h != input.h || result.w != input.w || result.c != 1)
    throw ShapeError("network output shape does not match input shape");
  return result;  // copy (cheap relative to the conv work; acts_ keeps its own)
}

template <class S>
void Network<S>::backward_layer(std::size_t idx, const Tensor<S>& in, const Tensor<S>& out,
                                Tensor<S>& d_out, Tensor<S>* d_in) {
  const ResolvedLayer& rl = layout_.layers[idx];
  const int ho = out.h, wo = out.w;

  if (rl.kind == LayerKind::output) {
    // logistic: dz = dy * y * (1 - y)
    for (std::size_t i = 0; i < d_out.v.size(); ++i)
      d_out.v[i] *= out.v[i] * (S(1) - out.v[i]);
  } else {
    // leaky rectifier via the stored output sign
    const S slope = static_cast<S>(config_.leaky_slope);
    for (std::size_t i = 0; i < d_out.v.size(); ++i)
      if (out.v[i] < S(0)) d_out.v[i] *= slope;

    // batch-norm backward
    const BnCtx& ctx = bn_ctx_[idx];
    const std::size_t plane = d_out.plane_size();
    const S n_stat = static_cast<S>(plane * static_cast<std::size_t>(d_out.n));
    for (int c = 0; c < rl.out_ch; ++c) {
      const S gamma = params_[rl.gamma + c];
      const S invstd = ctx.invstd[c];
      S sum_dy = 0, sum_dy_xhat = 0;
      for (int img = 0; img < d_out.n; ++img) {
        const S* dy = d_out.plane(img, c);
        const S* xh = ctx.xhat.plane(img, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * xh[i];
        }
      }
      grads_[rl.beta + c] += sum_dy;
      grads_[rl.gamma + c] += sum_dy_xhat;
      const S mean_dy = sum_dy / n_stat;
      const S mean_dy_xhat = sum_dy_xhat / n_stat;
      for (int img = 0; img < d_out.n; ++img) {
        S* dy = d_out.plane(img, c);
        const S* xh = ctx.xhat.plane(img, c);
        for (std::size_t i = 0; i < plane; ++i)
          dy[i] = gamma * invstd * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
      }
    }
  }

  // convolution backward per image
  for (int img = 0; img < d_out.n; ++img) {
    const S* x = in.image(img);
    const S* dz = d_out.image(img);
    S* dx = d_in ? d_in->image(img) : nullptr;
    if (rl.kind == LayerKind::inception) {
      std::vector<S> cropped(static_cast<std::size_t>(rl.in_ch) * ho * wo);
      copy_interior(x, rl.in_ch, in.h, in.w, rl.k, cropped.data(), ho, wo);
      std::vector<S> d_crop(dx ? cropped.size() : 0, S(0));
      detail::conv2d_backward(cropped.data(), rl.in_ch, ho, wo, params_.data() + rl.w1, rl.c1, 1,
                              dz, dx ? d_crop.data() : nullptr, grads_.data() + rl.w1,
                              static_cast<S*>(nullptr), scratch_);
      if (dx) add_interior(d_crop.data(), rl.in_ch, ho, wo, rl.k, dx, in.h, in.w);
      detail::conv2d_backward(x, rl.in_ch, in.h, in.w, params_.data() + rl.w2, rl.c2, rl.k,
                              dz + static_cast<std::size_t>(rl.c1) * ho * wo, dx,
                              grads_.data() + rl.w2, static_cast<S*>(nullptr), scratch_);
    } else if (rl.stride > 1) {
      const int sh = (in.h - rl.k) / rl.stride + 1, sw = (in.w - rl.k) / rl.stride + 1;
      std::vector<S> d_strided(static_cast<std::size_t>(rl.out_ch) * sh * sw);
      downsample_sum(dz, rl.out_ch, ho, wo, rl.k, d_strided.data(), sh, sw);
      detail::conv2d_naive_backward(x, rl.in_ch, in.h, in.w, params_.data() + rl.w1, rl.out_ch,
                                    rl.k, rl.stride, d_strided.data(), dx,
                                    grads_.data() + rl.w1, static_cast<S*>(nullptr));
    } else {
      S* dbias = rl.b1_len ? grads_.data() + rl.b1 : nullptr;
      detail::conv2d_backward(x, rl.in_ch, in.h, in.w, params_.data() + rl.w1, rl.out_ch, rl.k,
                              dz, dx, grads_.data() + rl.w1, dbias, scratch_);
    }
  }
}

template <class S>
void Network<S>::backward(const Tensor<S>& d_output) {
  if (!have_ctx_)
    throw ValidationError("backward() requires a preceding forward(train_mode=true)");
  const Tensor<S>& out_last = acts_.back();
  if (d_output.v.size() != out_last.v.size())
    throw ShapeError("backward: gradient shape does not match network output");

  Tensor<S> d = d_output;
  for (std::size_t i = layout_.layers.size(); i-- > 0;) {
    Tensor<S> d_in;
    const bool need_dx = i > 0;
    if (need_dx) d_in = Tensor<S>(acts_[i].n, acts_[i].c, acts_[i].h, acts_[i].w);
    backward_layer(i, acts_[i], acts_[i + 1], d, need_dx ? &d_in : nullptr);
    d = std::move(d_in);
  }
  have_ctx_ = false;
}

template <class S>
Heatmap Network<S>::predict_one(const Image2D& image) {
  image.validate();
  Tensor<S> in(1, 1, image.height, image.width);
  for (std::size_t i = 0; i < image.pixels.size(); ++i)
    in.v[i] = static_cast<S>(image.pixels[i]);
  Tensor<S> out = forward(in, /*train_mode=*/false);
  Heatmap heat(image.height, image.width, image.spacing_mm);
  for (std::size_t i = 0; i < heat.pixels.size(); ++i)
    heat.pixels[i] = static_cast<float>(out.v[i]);
  return heat;
}

template class Network<float>;
template class Network<double>;

}  // namespace disclabel
