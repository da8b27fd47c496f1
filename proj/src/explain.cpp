#include "cicbm/explain.hpp"

#include <algorithm>
#include <cmath>

#include "cicbm/errors.hpp"

namespace cicbm {

LocalExplanation contributions(const Vector& features, const BottleneckWeights& bottleneck,
                               const SparsePredictor& pred, int class_id) {
  require(features.size() == bottleneck.W.cols(), ErrorKind::Dimension,
          "sample dimension does not match the bottleneck");
  require(bottleneck.W.rows() == pred.W.cols(), ErrorKind::Dimension,
          "bottleneck concept count does not match the predictor");
  require(pred.has_class(class_id), ErrorKind::Validation,
          "class " + std::to_string(class_id) + " has not been seen");
  const auto row = static_cast<Eigen::Index>(pred.row_of(class_id));
  const Vector fc = bottleneck.W * features;

  LocalExplanation out;
  out.class_id = class_id;
  out.bias = pred.b[row];
  out.logit = pred.W.row(row).dot(fc) + out.bias;
  out.contributions.reserve(static_cast<std::size_t>(fc.size()));
  for (Eigen::Index j = 0; j < fc.size(); ++j) {
    out.contributions.push_back({static_cast<std::size_t>(j), pred.W(row, j) * fc[j]});
  }
  std::stable_sort(out.contributions.begin(), out.contributions.end(),
                   [](const Contribution& a, const Contribution& b) {
                     const double x = std::abs(a.value), y = std::abs(b.value);
                     if (x != y) return x > y;
                     return a.concept_id < b.concept_id;
                   });
  return out;
}

std::vector<WeightEdge> global_weight_graph(const SparsePredictor& pred, const ConceptSet& concepts, int class_id,
                                            double threshold) {
  require(threshold >= 0 && std::isfinite(threshold), ErrorKind::Validation, "threshold must be >= 0");
  require(pred.has_class(class_id), ErrorKind::Validation,
          "class " + std::to_string(class_id) + " has not been seen");
  require(static_cast<std::size_t>(pred.W.cols()) == concepts.size(), ErrorKind::Dimension,
          "predictor concept count does not match the concept set");
  const auto row = static_cast<Eigen::Index>(pred.row_of(class_id));
  std::vector<WeightEdge> edges;
  for (Eigen::Index j = 0; j < pred.W.cols(); ++j) {
    const double w = pred.W(row, j);
    if (!(std::abs(w) > threshold)) continue;
    const auto& e = concepts[static_cast<std::size_t>(j)];
    edges.push_back({e.id, e.text, w, e.introduced_phase, w < 0});
  }
  return edges;
}

}  // namespace cicbm
