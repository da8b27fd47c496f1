#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "cicbm/bottleneck.hpp"
#include "cicbm/matrixio.hpp"
#include "cicbm/types.hpp"

namespace cicbm {

struct CentroidEntry {
  Vector centroid;  // raw backbone-feature mean
  std::size_t sample_count = 0;
  int phase_introduced = 0;
};

// Per-class feature means. Entries are written once, when their class is
// introduced, and never modified afterwards.
class CentroidStore {
 public:
  void add(int class_id, CentroidEntry entry);
  bool contains(int class_id) const { return entries_.count(class_id) > 0; }
  const CentroidEntry& at(int class_id) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<int, CentroidEntry>& entries() const { return entries_; }
  std::vector<int> class_ids() const;
  bool operator==(const CentroidStore& o) const;

 private:
  std::map<int, CentroidEntry> entries_;
};

// Per-class arithmetic means of the rows of `features`. When `expected` is
// non-empty every listed class must have at least one row.
std::map<int, CentroidEntry> compute_centroids(const FeatureMatrix& features,
                                               std::span<const int> expected = {});

double cosine(const Vector& a, const Vector& b);

// argmax over `new_classes` of cos(mu(past), mu(c)); ties go to the smaller id.
int nearest_new_class(int past_class, const CentroidStore& store, std::span<const int> new_classes);

// f(c_n) - mu(c_n) + mu(c_p) applied to every row of `donor_rows`.
Matrix generate_pseudo_features(int past_class, int donor_class, const Matrix& donor_rows,
                                const CentroidStore& store);

// Rows of pseudo features mapped through the bottleneck: X W^T.
Matrix project_pseudo_concepts(const Matrix& pseudo_features, const BottleneckWeights& bottleneck);

// Concept-space prototype variant: the past class prototype is its centroid
// under the previous bottleneck, zero-padded to the current concept count;
// donor concepts under the current bottleneck are translated onto it.
Matrix concept_space_pseudo_concepts(int past_class, int donor_class, const Matrix& donor_rows,
                                     const CentroidStore& store, const BottleneckWeights& previous,
                                     const BottleneckWeights& current);

// Nearest-centroid assignment by cosine similarity; ties go to the smaller id.
std::vector<int> prototype_classify(const Matrix& features, const CentroidStore& store);

}  // namespace cicbm
