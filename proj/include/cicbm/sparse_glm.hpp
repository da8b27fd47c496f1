#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cicbm/types.hpp"

namespace cicbm {

// Interpretable final layer: logits = W f_c(x) + b over the seen classes.
struct SparsePredictor {
  Matrix W;                   // K x M
  Vector b;                   // K
  std::vector<int> class_ids;  // row -> class id
  double lambda = 0.0;
  double alpha = 0.99;

  std::size_t class_count() const { return class_ids.size(); }
  std::size_t concept_count() const { return static_cast<std::size_t>(W.cols()); }
  // An entry counts as nonzero iff it is not exactly 0.
  std::vector<std::size_t> nonzeros_per_class() const;
  std::size_t total_nonzeros() const;
  std::size_t row_of(int class_id) const;
  bool has_class(int class_id) const;
  bool operator==(const SparsePredictor& o) const;
};

// Empty predictor over `concepts` features and no classes.
SparsePredictor empty_predictor(std::size_t concepts, double alpha);

enum class SampleSource { Real, Pseudo };

struct TrainingBatch {
  Matrix X;  // rows: concept activations (real) or pseudo-concepts
  std::vector<int> labels;
  std::vector<SampleSource> sources;

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
};

struct SolverConfig {
  double tol = 1e-5;       // stationarity (KKT) tolerance
  int max_iters = 5000;
  double initial_step = 1.0;
  int check_every = 5;     // KKT check period in iterations
  bool class_balance = false;  // inverse class-frequency sample weights
  bool record_trace = false;
};

struct FitInfo {
  int iterations = 0;
  double objective = 0.0;
  double kkt_residual = 0.0;
  bool converged = false;
  bool zero_screened = false;  // closed-form all-zero solution returned
  int restarts = 0;
  std::vector<int> unrepresented_classes;  // classes with no rows in the batch
  std::vector<double> objective_trace;     // accepted objectives when recorded
};

// (1 - alpha)/2 ||W||_F^2 + alpha ||W||_{1,1}
double elastic_net_penalty(const Matrix& W, double alpha);

// log-sum-exp(logits) - logits[label], with max subtraction.
double softmax_cross_entropy(const Vector& logits, std::size_t label);
// softmax(logits) - onehot(label)
Vector softmax_cross_entropy_gradient(const Vector& logits, std::size_t label);

// Weighted mean cross-entropy plus lambda R_alpha(W); the bias is not
// penalized.
double glm_objective(const SparsePredictor& pred, const TrainingBatch& batch, double lambda, double alpha,
                     bool class_balance = false);

// Max KKT violation of (W, b) for the objective above, over rows not listed in
// `frozen_classes`.
double kkt_residual(const SparsePredictor& pred, const TrainingBatch& batch, double lambda, double alpha,
                    bool class_balance = false, std::span<const int> frozen_classes = {});

// Accelerated proximal gradient (FISTA) with backtracking and adaptive
// momentum restart. Accepted objectives never increase. `init` supplies the
// class rows and the warm start.
SparsePredictor fit_sparse_predictor(const TrainingBatch& batch, const SparsePredictor& init, double lambda,
                                     double alpha, const SolverConfig& config, FitInfo* info = nullptr);

// As fit_sparse_predictor, with the rows of `frozen_classes` held at init.
SparsePredictor freeze_old_rows_fit(const TrainingBatch& batch, const SparsePredictor& init, double lambda,
                                    double alpha, const SolverConfig& config, std::span<const int> frozen_classes,
                                    FitInfo* info = nullptr);

// Smallest lambda for which W = 0 (with log-prior biases) is optimal.
double lambda_max(const TrainingBatch& batch, const SparsePredictor& init, double alpha,
                  bool class_balance = false);

struct LambdaPathPoint {
  double lambda;
  double mean_nonzeros;
};

struct LambdaSearchResult {
  double lambda = 0.0;
  SparsePredictor predictor;
  FitInfo info;
  bool in_range = false;  // false: closest grid point returned instead
  bool monotonicity_violation = false;
  std::pair<double, double> target;  // after clamping to the concept count
  std::vector<LambdaPathPoint> path;
};

inline constexpr int kLambdaGridPoints = 20;
inline constexpr double kLambdaGridRatio = 1e-3;

// Walks a geometric grid from lambda_max down by kLambdaGridRatio and returns
// the largest lambda whose mean per-class nonzero count lands in `target`.
LambdaSearchResult lambda_search(const TrainingBatch& batch, const SparsePredictor& init, double alpha,
                                 std::pair<int, int> target, const SolverConfig& config,
                                 std::span<const int> frozen_classes = {});

// Appends zero rows for new classes and zero columns for new concepts.
SparsePredictor expand_predictor(const SparsePredictor& pred, std::span<const int> new_class_ids,
                                 std::size_t new_concepts);

struct Prediction {
  std::vector<int> labels;
  Matrix logits;  // N x K
};

// argmax of the logits; ties go to the smaller class id.
Prediction predict(const SparsePredictor& pred, const Matrix& concept_features);

}  // namespace cicbm
