#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "disclabel/image.hpp"
#include "disclabel/io.hpp"
#include "disclabel/labels.hpp"
#include "disclabel/model.hpp"
#include "disclabel/postprocess.hpp"

namespace disclabel {

struct Match {
  int gt_index = 0;
  int pred_index = 0;
  double euclid_mm = 0.0;
  double si_mm = 0.0;  // signed superior-inferior component, gt - pred
};

struct MatchResult {
  std::vector<Match> matches;
  std::vector<int> false_positives;  // pred indices
  std::vector<int> false_negatives;  // gt indices
  int n_gt = 0;
  int n_pred = 0;
};

// Greedy matching in ascending ground-truth row order: each gt takes its
// nearest unassigned prediction within radius_mm (Euclidean, millimetres);
// distance ties prefer the prediction with the smaller row, then column.
// Leftover predictions near a matched gt count as false positives (grouped
// duplicates), as do predictions beyond the radius of every gt; gts with no
// available candidate are false negatives.
MatchResult match_points(const LabelSet& gt, const LabelSet& pred, double radius_mm,
                         const Spacing& spacing_mm);

struct DistanceStats {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  double median = 0.0;
  int count = 0;
};

struct MetricsSummary {
  double fnr = 0.0;
  double fpr = 0.0;
  DistanceStats si;  // over |si_mm| of all matches
  int n_gt = 0, n_pred = 0, n_matches = 0, n_fp = 0, n_fn = 0;
};

struct MetricsReport {
  MetricsSummary overall;
  std::map<std::string, MetricsSummary> per_contrast;
  int n_samples = 0;
  std::string split;
};

// FNR = sum FN / sum gt; FPR = sum FP / sum pred (0 when there are no
// predictions at all). Contrast tags, when given, add a per-contrast
// breakdown (one tag per result).
MetricsReport compute_metrics(const std::vector<MatchResult>& results,
                              const std::vector<Contrast>& contrast_tags = {});

struct SampleRow {
  std::string sample;
  int n_gt = 0, n_pred = 0, fp = 0, fn = 0;
  double mean_si_mm = 0.0;
};

struct EvalParams {
  double match_radius_mm = 5.0;
  double threshold = 0.5;
  int min_component_px = 3;
};

struct EvalOutput {
  MetricsReport report;
  std::vector<SampleRow> rows;
};

// predict -> extract_keypoints -> assign_levels -> match_points per sample of
// the chosen split, aggregated with compute_metrics.
EvalOutput evaluate_dataset(const Manifest& manifest, const Checkpoint& ckpt, Split split,
                            const EvalParams& params = {});

std::string report_to_json(const MetricsReport& report);
void write_report_json(const std::filesystem::path& path, const MetricsReport& report);
void write_report_csv(const std::filesystem::path& path, const std::vector<SampleRow>& rows);

}  // namespace disclabel
