#pragma once

#include <cstdint>
#include <vector>

#include "cicbm/types.hpp"

namespace cicbm {

// Concept projection: row i maps backbone features to concept i's activation,
// f_c(x) = W f(x).
struct BottleneckWeights {
  Matrix W;  // M x d
  int phase_id = 0;

  std::size_t concept_count() const { return static_cast<std::size_t>(W.rows()); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(W.cols()); }
  bool operator==(const BottleneckWeights& o) const { return phase_id == o.phase_id && W == o.W; }
};

inline constexpr double kDefaultStandardizeEps = 1e-8;

// Outputs of the previous bottleneck on the current phase's data, frozen at
// cache time. `targets` holds the standardized, cubed and unit-normalized
// columns the distillation term compares against (zero for constant columns).
struct DistillationCache {
  Matrix q_prev;   // N x M_prev
  Matrix targets;  // N x M_prev

  std::size_t concept_count() const { return static_cast<std::size_t>(q_prev.cols()); }
};

DistillationCache make_distillation_cache(const BottleneckWeights& previous, const Matrix& features,
                                          double eps = kDefaultStandardizeEps);

struct AdamSchedule {
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Halvings tried when a proposed step would raise the loss.
  int max_backtracks = 8;
};

struct TrainConfig {
  double beta = 1.0;  // distillation weight
  int steps = 1000;
  AdamSchedule schedule;
  std::uint64_t seed = 1993;
  double eps = kDefaultStandardizeEps;
};

void validate(const TrainConfig& config);

// (v - mean) / population std; the zero vector when std <= eps.
Vector standardize(const Vector& v, double eps = kDefaultStandardizeEps);

// Cosine similarity of the elementwise cubes of the standardized vectors;
// 0 when either vector is constant.
double cos_cubed_sim(const Vector& a, const Vector& b, double eps = kDefaultStandardizeEps);

// -sum_i cos_cubed_sim(q_i, P_:,i) with q_i the i-th column of F W^T.
double alignment_loss(const BottleneckWeights& W, const Matrix& features, const Matrix& activations,
                      double eps = kDefaultStandardizeEps);

// Alignment over all concepts plus beta times the distillation term over the
// first M_prev concepts. With beta == 0 or no cache this is alignment_loss.
double combined_loss(const BottleneckWeights& W, const Matrix& features, const Matrix& activations,
                     const DistillationCache* cache, double beta, double eps = kDefaultStandardizeEps);

struct LossGradient {
  double loss = 0;
  double alignment = 0;     // -sum of alignment similarities
  double distillation = 0;  // -sum of distillation similarities (unweighted)
  Matrix gradient;          // M x d
};

// Loss and its analytic gradient with respect to W. Per-concept terms are
// evaluated independently and reduced in concept order.
LossGradient combined_loss_gradient(const Matrix& W, const Matrix& features, const Matrix& activations,
                                    const DistillationCache* cache, double beta,
                                    double eps = kDefaultStandardizeEps);

// Appends `new_concepts` rows drawn from N(0, 1/d), seeded by (seed, M_prev).
// Existing rows are copied unchanged.
BottleneckWeights expand_bottleneck(const BottleneckWeights& previous, std::size_t new_concepts,
                                    std::uint64_t seed);

struct TrainResult {
  BottleneckWeights weights;
  std::vector<double> trajectory;  // loss before the first step, then after each step
  int accepted_steps = 0;
};

// Full-batch Adam on combined_loss. A proposed step that raises the loss is
// halved up to max_backtracks times and otherwise skipped, so the trajectory
// is nonincreasing.
TrainResult train_bottleneck(const BottleneckWeights& init, const Matrix& features, const Matrix& activations,
                             const DistillationCache* cache, const TrainConfig& config);

// Mean cos_cubed_sim between the current outputs on the old concepts and the
// cached outputs.
double distillation_similarity(const BottleneckWeights& W, const Matrix& features,
                               const DistillationCache& cache, double eps = kDefaultStandardizeEps);

}  // namespace cicbm
