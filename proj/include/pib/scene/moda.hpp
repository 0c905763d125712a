#pragma once

// MODA = 1 - (FN + FP) / N_gt with greedy one-to-one matching of detections
// to ground-truth cells within a radius (distance, then detection cell, then
// truth cell decide the order, so the result does not depend on input order).

#include <algorithm>
#include <cmath>
#include <tuple>
#include <vector>

#include "pib/error.hpp"
#include "pib/numerics/tensor.hpp"

namespace pib::scene {

struct ModaCounts {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t ground_truth = 0;

  ModaCounts& operator+=(const ModaCounts& o) {
    true_positives += o.true_positives;
    false_positives += o.false_positives;
    false_negatives += o.false_negatives;
    ground_truth += o.ground_truth;
    return *this;
  }
};

struct ModaResult {
  double moda = 1.0;
  // No ground truth: moda is 1 without detections, else 1 - FP.
  bool degenerate = false;
  ModaCounts counts;
};

inline ModaResult moda_from_counts(const ModaCounts& c) {
  ModaResult r;
  r.counts = c;
  if (c.ground_truth == 0) {
    r.degenerate = true;
    r.moda = 1.0 - static_cast<double>(c.false_positives);
    return r;
  }
  r.moda = 1.0 - static_cast<double>(c.false_negatives + c.false_positives) / static_cast<double>(c.ground_truth);
  return r;
}

// Greedy matching of detection cells to truth cells (row-major indices on a
// grid of the given width). Input order does not affect the result.
inline ModaCounts match_cells(const std::vector<std::size_t>& det, const std::vector<std::size_t>& gt,
                              std::size_t width, double radius = 1.0) {
  if (width == 0) throw ShapeError("moda: bad grid width");
  const double r2 = radius * radius;
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t d : det)
    for (std::size_t t : gt) {
      const double dy = static_cast<double>(d / width) - static_cast<double>(t / width);
      const double dx = static_cast<double>(d % width) - static_cast<double>(t % width);
      const double dist2 = dy * dy + dx * dx;
      if (dist2 <= r2) pairs.emplace_back(dist2, d, t);
    }
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::size_t> det_used, gt_used;
  ModaCounts c;
  for (const auto& [dist2, d, t] : pairs) {
    if (std::find(det_used.begin(), det_used.end(), d) != det_used.end()) continue;
    if (std::find(gt_used.begin(), gt_used.end(), t) != gt_used.end()) continue;
    det_used.push_back(d);
    gt_used.push_back(t);
    ++c.true_positives;
  }
  c.ground_truth = gt.size();
  c.false_positives = det.size() - c.true_positives;
  c.false_negatives = gt.size() - c.true_positives;
  return c;
}

// Detections are cells with prob > threshold; truth cells are those > 0.5.
inline ModaCounts match_detections(const Tensor& probs, const Tensor& truth, std::size_t width,
                                   double detect_threshold = 0.5, double radius = 1.0) {
  if (probs.size() != truth.size()) throw ShapeError("moda: prediction and ground truth sizes differ");
  if (!(detect_threshold > 0.0 && detect_threshold < 1.0)) throw DomainError("moda: threshold must lie in (0, 1)");
  if (width == 0 || probs.size() % width != 0) throw ShapeError("moda: bad grid width");
  std::vector<std::size_t> det, gt;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > detect_threshold) det.push_back(i);
    if (truth[i] > 0.5) gt.push_back(i);
  }
  return match_cells(det, gt, width, radius);
}

inline ModaResult moda(const Tensor& probs, const Tensor& truth, std::size_t width, double detect_threshold = 0.5,
                       double radius = 1.0) {
  return moda_from_counts(match_detections(probs, truth, width, detect_threshold, radius));
}

}  // namespace pib::scene
