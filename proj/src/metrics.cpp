#include "clmle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>

namespace clmle {

namespace {

void check_lengths(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw Error(Errc::ShapeMismatch, "predictions and labels differ in length");
}

}  // namespace

Scalar balanced_accuracy(std::span<const int> predictions, std::span<const int> labels,
                         std::span<const int> classes) {
  check_lengths(predictions, labels);
  if (classes.empty()) throw Error(Errc::EmptyClass, "no classes");
  std::map<int, std::pair<std::size_t, std::size_t>> tally;  // correct, total
  for (int c : classes) tally[c] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = tally.find(labels[i]);
    if (it == tally.end()) continue;
    ++it->second.second;
    if (predictions[i] == labels[i]) ++it->second.first;
  }
  Scalar sum = 0;
  for (const auto& [c, t] : tally) {
    if (t.second == 0) throw Error(Errc::EmptyClass, "class " + std::to_string(c) + " has no samples");
    sum += static_cast<Scalar>(t.first) / static_cast<Scalar>(t.second);
  }
  return sum / static_cast<Scalar>(tally.size());
}

Scalar balanced_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  std::set<int> present(labels.begin(), labels.end());
  const std::vector<int> classes(present.begin(), present.end());
  return balanced_accuracy(predictions, labels, classes);
}

Scalar overall_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  check_lengths(predictions, labels);
  if (labels.empty()) return 0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<Scalar>(hit) / static_cast<Scalar>(labels.size());
}

RocResult roc_tar_far(std::span<const Scalar> scores, std::span<const bool> same,
                      std::span<const Scalar> far_targets) {
  if (scores.size() != same.size()) throw Error(Errc::ShapeMismatch, "one label per score required");
  const auto num_pos = static_cast<std::size_t>(std::count(same.begin(), same.end(), true));
  const std::size_t num_neg = same.size() - num_pos;
  if (num_pos == 0 || num_neg == 0) {
    throw Error(Errc::DegeneratePairs, "need at least one positive and one negative pair");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult out;
  out.curve.push_back({std::numeric_limits<Scalar>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t j = 0; j < order.size();) {
    const Scalar t = scores[order[j]];
    while (j < order.size() && scores[order[j]] == t) {
      (same[order[j]] ? tp : fp) += 1;
      ++j;
    }
    out.curve.push_back({t, static_cast<Scalar>(fp) / static_cast<Scalar>(num_neg),
                         static_cast<Scalar>(tp) / static_cast<Scalar>(num_pos)});
  }
  for (Scalar target : far_targets) {
    // curve is sorted by decreasing threshold, so the last admissible point wins
    const RocPoint* best = &out.curve.front();
    for (const auto& p : out.curve) {
      if (p.far <= target) best = &p;
    }
    out.far_targets.push_back(target);
    out.tar_at_far.push_back(best->tar);
    out.threshold_at_far.push_back(best->threshold);
  }
  return out;
}

Scalar rank1_identification(const ConstMatrixRef& probes, std::span<const int> probe_labels,
                            const ConstMatrixRef& gallery, std::span<const int> gallery_labels) {
  if (probes.cols() == 0 || gallery.cols() == 0) return 0;
  if (probes.rows() != gallery.rows()) throw Error(Errc::DimensionMismatch, "probe/gallery dimension");
  const Matrix sims = gallery.transpose() * probes;  // G x P
  std::size_t hit = 0;
  for (Index p = 0; p < probes.cols(); ++p) {
    Index best = 0;
    for (Index g = 1; g < gallery.cols(); ++g) {
      if (sims(g, p) > sims(best, p)) best = g;
    }
    hit += gallery_labels[static_cast<std::size_t>(best)] == probe_labels[static_cast<std::size_t>(p)];
  }
  return static_cast<Scalar>(hit) / static_cast<Scalar>(probes.cols());
}

Scalar imbalance_level(std::span<const int> labels) {
  if (labels.empty()) throw Error(Errc::NotBinary, "no labels");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(Errc::NotBinary, "labels must be 0 or 1");
    pos += y == 1;
  }
  return std::abs(100.0 * static_cast<Scalar>(pos) / static_cast<Scalar>(labels.size()) - 50.0);
}

EvalReport evaluate(std::span<const int> predictions, std::span<const int> labels) {
  check_lengths(predictions, labels);
  EvalReport r;
  std::set<int> present(labels.begin(), labels.end());
  r.classes.assign(present.begin(), present.end());
  std::map<int, std::size_t> pos;
  for (std::size_t k = 0; k < r.classes.size(); ++k) pos[r.classes[k]] = k;
  const std::size_t c = r.classes.size();
  r.confusion.assign(c, std::vector<std::size_t>(c + 1, 0));
  r.class_counts.assign(c, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = pos.find(predictions[i]);
    const std::size_t row = pos[labels[i]];
    ++r.confusion[row][it != pos.end() ? it->second : c];
    ++r.class_counts[row];
  }
  for (std::size_t k = 0; k < c; ++k) {
    r.per_class_accuracy.push_back(static_cast<Scalar>(r.confusion[k][k]) /
                                   static_cast<Scalar>(r.class_counts[k]));
    std::vector<int> binary;
    binary.reserve(labels.size());
    for (int y : labels) binary.push_back(y == r.classes[k] ? 1 : 0);
    r.imbalance_levels.push_back(imbalance_level(binary));
  }
  r.balanced_accuracy = labels.empty() ? 0 : balanced_accuracy(predictions, labels);
  r.overall_accuracy = overall_accuracy(predictions, labels);
  return r;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["classes"] = report.classes;
  j["per_class_accuracy"] = report.per_class_accuracy;
  j["balanced_accuracy"] = report.balanced_accuracy;
  j["overall_accuracy"] = report.overall_accuracy;
  j["class_counts"] = report.class_counts;
  j["confusion"] = report.confusion;
  j["imbalance_levels"] = report.imbalance_levels;
  if (report.roc) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : report.roc->curve) {
      curve.push_back({{"threshold", std::isinf(p.threshold) ? nlohmann::json(nullptr) : nlohmann::json(p.threshold)},
                       {"far", p.far},
                       {"tar", p.tar}});
    }
    j["roc"] = {{"curve", curve},
                {"far_targets", report.roc->far_targets},
                {"tar_at_far", report.roc->tar_at_far}};
  }
  return j;
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(Errc::IoError, "cannot open " + path.string());
  std::fprintf(f, "class,count,correct,accuracy,imbalance_level\n");
  for (std::size_t k = 0; k < report.classes.size(); ++k) {
    std::fprintf(f, "%d,%zu,%zu,%.17g,%.17g\n", report.classes[k], report.class_counts[k],
                 report.confusion[k][k], report.per_class_accuracy[k], report.imbalance_levels[k]);
  }
  if (std::fclose(f) != 0) throw Error(Errc::IoError, "failed writing " + path.string());
}

}  // namespace clmle
