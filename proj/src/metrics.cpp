#include "disclabel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace disclabel {

using nlohmann::json;

MatchResult match_points(const LabelSet& gt, const LabelSet& pred, double radius_mm,
                         const Spacing& spacing_mm) {
  if (spacing_mm.row_mm <= 0.0 || spacing_mm.col_mm <= 0.0)
    throw ValidationError("match_points: spacing must be positive");

  MatchResult result;
  result.n_gt = static_cast<int>(gt.size());
  result.n_pred = static_cast<int>(pred.size());

  // LabelSet points are already ascending in row; process gts in that order.
  std::vector<bool> taken(pred.size(), false);
  for (int gi = 0; gi < result.n_gt; ++gi) {
    const auto& g = gt.points[gi];
    int best = -1;
    double best_d = 0.0;
    for (int pi = 0; pi < result.n_pred; ++pi) {
      if (taken[pi]) continue;
      const auto& p = pred.points[pi];
      const double dr = (g.row - p.row) * spacing_mm.row_mm;
      const double dc = (g.col - p.col) * spacing_mm.col_mm;
      const double d = std::sqrt(dr * dr + dc * dc);
      if (d > radius_mm) continue;
      const bool better =
          best < 0 || d < best_d ||
          (d == best_d && (p.row < pred.points[best].row ||
                           (p.row == pred.points[best].row && p.col < pred.points[best].col)));
      if (better) {
        best = pi;
        best_d = d;
      }
    }
    if (best < 0) {
      result.false_negatives.push_back(gi);
    } else {
      taken[best] = true;
      Match m;
      m.gt_index = gi;
      m.pred_index = best;
      m.euclid_mm = best_d;
      m.si_mm = (g.row - pred.points[best].row) * spacing_mm.row_mm;
      result.matches.push_back(m);
    }
  }
  for (int pi = 0; pi < result.n_pred; ++pi)
    if (!taken[pi]) result.false_positives.push_back(pi);
  return result;
}

namespace {

DistanceStats distance_stats(std::vector<double> values) {
  DistanceStats s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / values.size();
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / values.size());
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  s.median = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return s;
}

MetricsSummary summarize(const std::vector<const MatchResult*>& results) {
  MetricsSummary s;
  std::vector<double> abs_si;
  for (const MatchResult* r : results) {
    s.n_gt += r->n_gt;
    s.n_pred += r->n_pred;
    s.n_matches += static_cast<int>(r->matches.size());
    s.n_fp += static_cast<int>(r->false_positives.size());
    s.n_fn += static_cast<int>(r->false_negatives.size());
    for (const auto& m : r->matches) abs_si.push_back(std::abs(m.si_mm));
  }
  s.fnr = s.n_gt > 0 ? static_cast<double>(s.n_fn) / s.n_gt : 0.0;
  s.fpr = s.n_pred > 0 ? static_cast<double>(s.n_fp) / s.n_pred : 0.0;
  s.si = distance_stats(std::move(abs_si));
  return s;
}

json summary_to_json(const MetricsSummary& s) {
  return json{{"fnr", s.fnr},
              {"fpr", s.fpr},
              {"dist_mean_mm", s.si.mean},
              {"dist_std_mm", s.si.stddev},
              {"dist_median_mm", s.si.median},
              {"n_gt", s.n_gt},
              {"n_pred", s.n_pred},
              {"n_matches", s.n_matches},
              {"n_fp", s.n_fp},
              {"n_fn", s.n_fn}};
}

}  // namespace

MetricsReport compute_metrics(const std::vector<MatchResult>& results,
                              const std::vector<Contrast>& contrast_tags) {
  if (results.empty()) throw EmptyEvaluation("compute_metrics: no match results");
  if (!contrast_tags.empty() && contrast_tags.size() != results.size())
    throw ValidationError("compute_metrics: one contrast tag per result required");

  MetricsReport report;
  report.n_samples = static_cast<int>(results.size());

  std::vector<const MatchResult*> all;
  for (const auto& r : results) all.push_back(&r);
  report.overall = summarize(all);

  if (!contrast_tags.empty()) {
    std::map<std::string, std::vector<const MatchResult*>> groups;
    for (std::size_t i = 0; i < results.size(); ++i)
      groups[to_string(contrast_tags[i])].push_back(&results[i]);
    for (const auto& [name, group] : groups) report.per_contrast[name] = summarize(group);
  }
  return report;
}

EvalOutput evaluate_dataset(const Manifest& manifest, const Checkpoint& ckpt, Split split,
                            const EvalParams& params) {
  const auto samples = manifest.in_split(split);
  if (samples.empty())
    throw EmptyDataset("evaluate_dataset: split '" + to_string(split) + "' is empty");

  Network<float> net = Network<float>::from_checkpoint(ckpt);

  EvalOutput out;
  std::vector<MatchResult> results;
  std::vector<Contrast> tags;
  for (const auto& s : samples) {
    const Image2D image = read_image(manifest.resolve(s.image_path));
    const LabelSet gt = read_labels(manifest.resolve(s.labels_path));

    const Heatmap heat = net.predict_one(image);
    const LabelSet pred =
        assign_levels(extract_keypoints(heat, params.threshold, params.min_component_px));
    const MatchResult mr = match_points(gt, pred, params.match_radius_mm, image.spacing_mm);

    SampleRow row;
    row.sample = s.image_path;
    row.n_gt = mr.n_gt;
    row.n_pred = mr.n_pred;
    row.fp = static_cast<int>(mr.false_positives.size());
    row.fn = static_cast<int>(mr.false_negatives.size());
    double si_sum = 0.0;
    for (const auto& m : mr.matches) si_sum += std::abs(m.si_mm);
    row.mean_si_mm = mr.matches.empty() ? 0.0 : si_sum / mr.matches.size();
    out.rows.push_back(std::move(row));

    results.push_back(mr);
    tags.push_back(s.contrast);
  }
  out.report = compute_metrics(results, tags);
  out.report.split = to_string(split);
  return out;
}

std::string report_to_json(const MetricsReport& report) {
  json j = summary_to_json(report.overall);
  j["split"] = report.split;
  j["n_samples"] = report.n_samples;
  json per = json::object();
  for (const auto& [name, s] : report.per_contrast) per[name] = summary_to_json(s);
  j["per_contrast"] = per;
  return j.dump(2);
}

void write_report_json(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << report_to_json(report) << "\n";
}

void write_report_csv(const std::filesystem::path& path, const std::vector<SampleRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write CSV: " + path.string());
  out << "sample,n_gt,n_pred,fp,fn,mean_si_mm\n";
  for (const auto& r : rows)
    out << r.sample << "," << r.n_gt << "," << r.n_pred << "," << r.fp << "," << r.fn << ","
        << r.mean_si_mm << "\n";
}

}  // namespace disclabel
