#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "disclabel/detail/conv.hpp"
#include "disclabel/errors.hpp"
#include "disclabel/image.hpp"
#include "disclabel/tensor.hpp"

namespace disclabel {

enum class LayerKind { conv, inception, output };

// One network stage. Inception layers run a 1x1 and a kernel_px x kernel_px
// branch in parallel and concatenate the channels (the 1x1 output is center
// cropped to the big branch's valid-conv size).
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int kernel_px = 1;
  int channels_out = 0;  // conv / output layers
  int branch1x1 = 0;     // inception branch widths
  int branchkxk = 0;

  int output_channels() const {
    return kind == LayerKind::inception ? branch1x1 + branchkxk : channels_out;
  }
};

struct ModelConfig {
  std::vector<LayerSpec> layers = default_layer_stack();
  double leaky_slope = 0.01;
  bool redundant_counting = true;  // off: big-kernel convs run at stride=kernel
  double width_scale = 1.0;        // multiplies every channel count

  // conv3x64 -> incep{16,16} -> incep{16,32} -> conv16x16 -> incep{112,48}
  // -> incep{40,40} -> conv15x32 -> conv1x64 -> output. Kernel increments sum
  // to 39, giving the 40 px receptive field.
  static std::vector<LayerSpec> default_layer_stack();

  void validate() const;
  std::string to_json_string() const;
  static ModelConfig from_json_string(const std::string& text);
};

// 1 + sum(kernel - 1); an inception layer contributes its largest branch.
int receptive_field_of(const std::vector<LayerSpec>& layers);

int scaled_channels(int channels, double width_scale);

// --- checkpoint -------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

struct HistoryEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainingMeta {
  std::int64_t epoch = 0;  // epochs completed
  std::uint64_t seed = 0;
  std::vector<HistoryEntry> history;
};

// File layout: "DLCK", u32 version, u32 JSON length, JSON (model config +
// training metadata), float32 parameter buffer, then the Adam moment buffers
// when optimizer state is present.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  std::vector<float> params;
  TrainingMeta meta;
  std::vector<float> opt_m, opt_v;  // empty unless saved mid-training
  std::int64_t opt_step = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// --- parameter layout -------------------------------------------------------

// Byte-stable flat parameter layout derived from the config alone. Order per
// layer: main conv weights, [output-layer bias], inception kxk branch
// weights, then BN gamma/beta/running-mean/running-var. Running stats are in
// the buffer but not in the trainable set; convs followed by BN carry no
// additive bias (beta plays that role).
struct ResolvedLayer {
  LayerKind kind = LayerKind::conv;
  int k = 1;
  int stride = 1;
  int in_ch = 0, out_ch = 0;
  int c1 = 0, c2 = 0;  // inception branch widths after width_scale
  bool bn = false;
  std::size_t w1 = 0, w1_len = 0;  // conv/output weights, or inception 1x1
  std::size_t b1 = 0, b1_len = 0;  // output-layer bias only
  std::size_t w2 = 0, w2_len = 0;  // inception kxk branch
  std::size_t gamma = 0, beta = 0, rmean = 0, rvar = 0;
};

struct ParamLayout {
  std::vector<ResolvedLayer> layers;
  std::size_t total = 0;
  std::vector<std::pair<std::size_t, std::size_t>> trainable_ranges;  // (offset, length)
  std::size_t trainable = 0;
};

ParamLayout resolve_layers(const ModelConfig& config);

// --- network ----------------------------------------------------------------

// Fully convolutional inception heatmap network. Instantiated for float
// (training/inference) and double (finite-difference gradient verification).
template <class S>
class Network {
 public:
  explicit Network(const ModelConfig& config, std::uint64_t init_seed = 0);
  static Network from_checkpoint(const Checkpoint& ckpt);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  int receptive_field() const { return rf_; }
  int pad_before() const { return pad_before_; }
  int pad_after() const { return pad_after_; }

  std::vector<S>& params() { return params_; }
  const std::vector<S>& params() const { return params_; }
  std::vector<S>& grads() { return grads_; }
  void zero_grads();

  std::vector<float> params_as_float() const;

  // Input (n,1,H,W) with H,W >= receptive field; output (n,1,H,W). Train mode
  // uses batch statistics (updating running stats unless told not to) and
  // records what backward() needs.
  Tensor<S> forward(const Tensor<S>& input, bool train_mode, bool update_running_stats = true);

  // Backprop from dLoss/dOutput; requires the preceding call to have been
  // forward(train_mode=true). Accumulates into grads().
  void backward(const Tensor<S>& d_output);

  // Eval-mode single-image convenience.
  Heatmap predict_one(const Image2D& image);

 private:
  struct BnCtx {
    Tensor<S> xhat;
    std::vector<S> invstd;
  };

  void init_params(std::uint64_t seed);
  Tensor<S> run_layer(std::size_t idx, const Tensor<S>& in, bool train_mode,
                      bool update_running_stats, bool keep_ctx);
  void backward_layer(std::size_t idx, const Tensor<S>& in, const Tensor<S>& out, Tensor<S>& d_out,
                      Tensor<S>* d_in);

  ModelConfig config_;
  ParamLayout layout_;
  int rf_ = 0;
  int pad_before_ = 0, pad_after_ = 0;
  std::vector<S> params_, grads_;

  // forward(train) context
  bool have_ctx_ = false;
  std::vector<Tensor<S>> acts_;  // acts_[0] = padded input, acts_[i+1] = layer i output
  std::vector<BnCtx> bn_ctx_;
  detail::ConvScratch<S> scratch_;
};

using NetworkF = Network<float>;

}  // namespace disclabel
