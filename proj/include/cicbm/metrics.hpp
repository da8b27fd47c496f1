#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "cicbm/sparse_glm.hpp"
#include "cicbm/types.hpp"

namespace cicbm {

// a[i][j]: accuracy on the classes of phase j after learning phase i (i >= j).
// Phases are 1-based in every accessor.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  // `phase_class_counts[j-1]` is the number of classes introduced in phase j.
  explicit AccuracyMatrix(std::vector<std::size_t> phase_class_counts);

  std::size_t phases() const { return class_counts_.size(); }
  const std::vector<std::size_t>& class_counts() const { return class_counts_; }
  // Rows filled so far; row t holds t entries.
  std::size_t completed_rows() const { return rows_.size(); }
  const std::vector<std::vector<double>>& rows() const { return rows_; }

  // Appends row t = completed_rows() + 1.
  void append_row(std::vector<double> row);
  // Adds phase t's class count (for matrices that grow with the protocol).
  void add_phase(std::size_t class_count);

  double at(std::size_t i, std::size_t j) const;
  bool operator==(const AccuracyMatrix& o) const { return rows_ == o.rows_ && class_counts_ == o.class_counts_; }

 private:
  std::vector<std::size_t> class_counts_;
  std::vector<std::vector<double>> rows_;
};

// A_t = (1/t) sum_j a_{t,j}; weighted: class-count-weighted mean.
double avg_phase_accuracy(const AccuracyMatrix& a, std::size_t t, bool weighted = false);
// F_t = (1/(t-1)) sum_{j<t} max_{i<t} (a_{i,j} - a_{t,j}); weighted over the
// class counts of phases 1..t-1.
double avg_phase_forgetting(const AccuracyMatrix& a, std::size_t t, bool weighted = false);
// mean of A_1..A_T over the completed rows.
double avg_incremental_accuracy(const AccuracyMatrix& a, bool weighted = false);
// mean of F_2..F_T over the completed rows.
double avg_incremental_forgetting(const AccuracyMatrix& a, bool weighted = false);

struct FidelityResult {
  double mean_similarity = 0.0;  // cos(embedding[assigned], embedding[k]) averaged over units
  double top5_accuracy = 0.0;
  std::vector<std::size_t> assigned;   // m-hat(k) per unit; SIZE_MAX for skipped units
  std::vector<std::size_t> skipped_units;
  std::size_t evaluated_units = 0;
};

// For each bottleneck unit k: q_k is its activation over the test samples and
// m-hat(k) = argmax_m cos(q_k, P_:,m). Reports the embedding cosine between
// the assigned and the ground-truth concept (k) and whether k ranks in the top
// five. Constant units are skipped.
FidelityResult concept_fidelity(const Matrix& bottleneck_activations, const Matrix& reference_activations,
                                const Matrix& concept_embeddings);

struct SparsityReport {
  std::vector<std::size_t> nonzeros_per_class;
  std::size_t total_nonzeros = 0;
  double percent = 0.0;  // 100 * total / (K M)
  double mean_per_class = 0.0;
};

SparsityReport sparsity_report(const SparsePredictor& pred);

// Fraction of predictions equal to labels; 0 for empty input.
double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

}  // namespace cicbm
