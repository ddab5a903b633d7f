#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "disclabel/io.hpp"
#include "disclabel/losses.hpp"
#include "disclabel/model.hpp"
#include "disclabel/preprocess.hpp"

namespace disclabel {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  AWingParams awing;
  TargetParams target;       // targets are built from the label files
  int checkpoint_every = 50; // epochs between periodic checkpoints (0 = off)
  double width_scale = 1.0;  // overrides the model config's width_scale
  bool augment = false;      // horizontal flip + <=5 px translations

  void validate() const;
  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& text);
  static TrainConfig from_json_file(const std::filesystem::path& path);
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<HistoryEntry> history;
};

// Deterministic training loop over the manifest's train split, with per-epoch
// validation loss on the val split. Periodic and final checkpoints go to
// out_dir when it is non-empty. Passing resume continues that checkpoint
// (its config and optimizer state win) up to cfg.epochs total epochs;
// the result is bitwise identical to an uninterrupted run.
TrainResult train(const Manifest& manifest, const ModelConfig& model_config,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir = {},
                  const Checkpoint* resume = nullptr);

Heatmap predict(const Checkpoint& ckpt, const Image2D& image);

void write_history_json(const std::filesystem::path& path,
                        const std::vector<HistoryEntry>& history);

}  // namespace disclabel
