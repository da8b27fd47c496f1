#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cicbm/bottleneck.hpp"
#include "cicbm/concept_set.hpp"
#include "cicbm/sparse_glm.hpp"
#include "cicbm/types.hpp"

namespace cicbm {

struct Contribution {
  std::size_t concept_id;
  double value;  // W_F[i, j] * f_c(x)[j]
};

struct LocalExplanation {
  int class_id = 0;
  double bias = 0.0;
  double logit = 0.0;
  std::vector<Contribution> contributions;  // by |value| desc, then concept id
};

LocalExplanation contributions(const Vector& features, const BottleneckWeights& bottleneck,
                               const SparsePredictor& pred, int class_id);

struct WeightEdge {
  std::size_t concept_id;
  std::string text;
  double weight;
  int introduced_phase;
  bool is_not_concept;  // negative weight
};

inline constexpr double kDefaultExplainThreshold = 0.2;

// Edges with |w| > threshold for one class, in concept id order.
std::vector<WeightEdge> global_weight_graph(const SparsePredictor& pred, const ConceptSet& concepts, int class_id,
                                            double threshold = kDefaultExplainThreshold);

}  // namespace cicbm
