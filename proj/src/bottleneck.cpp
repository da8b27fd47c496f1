#include "cicbm/bottleneck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "cicbm/errors.hpp"
#include "cicbm/parallel.hpp"

namespace cicbm {

namespace {

// Standardized column, its cube direction and the scale factors needed to
// backpropagate through both.
struct CubedUnit {
  Vector s;            // standardized vector
  Vector u;            // s^3 / ||s^3||
  double sigma = 0;    // population std of the input
  double cube_norm = 0;
  bool constant = true;
};

CubedUnit cubed_unit(const Eigen::Ref<const Vector>& q, double eps) {
  CubedUnit out;
  const double n = static_cast<double>(q.size());
  const double mean = q.sum() / n;
  const Vector centered = q.array() - mean;
  out.sigma = std::sqrt(centered.squaredNorm() / n);
  if (!(out.sigma > eps)) {
    out.s = Vector::Zero(q.size());
    out.u = Vector::Zero(q.size());
    return out;
  }
  out.s = centered / out.sigma;
  const Vector c = out.s.array().cube();
  out.cube_norm = c.norm();
  if (!(out.cube_norm > 0)) {
    out.u = Vector::Zero(q.size());
    return out;
  }
  out.u = c / out.cube_norm;
  out.constant = false;
  return out;
}

Matrix unit_targets(const Matrix& columns, double eps) {
  Matrix t(columns.rows(), columns.cols());
  for (Eigen::Index i = 0; i < columns.cols(); ++i) t.col(i) = cubed_unit(columns.col(i), eps).u;
  return t;
}

void check_shapes(const Matrix& W, const Matrix& F, const Matrix& P, const DistillationCache* cache) {
  require(F.cols() == W.cols(), ErrorKind::Dimension,
          "feature dim " + std::to_string(F.cols()) + " does not match bottleneck dim " + std::to_string(W.cols()));
  require(P.cols() == W.rows(), ErrorKind::Dimension,
          "activation columns " + std::to_string(P.cols()) + " do not match concept count " +
              std::to_string(W.rows()));
  require(P.rows() == F.rows(), ErrorKind::Dimension, "activation and feature row counts differ");
  require(F.rows() >= 2, ErrorKind::Validation, "alignment needs at least two samples");
  if (cache) {
    require(cache->q_prev.cols() <= W.rows(), ErrorKind::Dimension,
            "distillation cache has more concepts than the bottleneck");
    require(cache->q_prev.rows() == F.rows(), ErrorKind::Dimension,
            "distillation cache rows do not match the feature rows");
  }
}

struct ColumnTerms {
  double align_sim = 0;
  double distill_sim = 0;
};

// Evaluates every concept column; when `grad_q` is non-null also fills dL/dq.
std::vector<ColumnTerms> evaluate_columns(const Matrix& Q, const Matrix& align_targets,
                                          const DistillationCache* cache, double beta, double eps,
                                          Matrix* grad_q) {
  const auto m = static_cast<std::size_t>(Q.cols());
  const Eigen::Index m_prev = cache ? cache->targets.cols() : 0;
  const bool distill = cache != nullptr && beta != 0.0;
  std::vector<ColumnTerms> terms(m);
  parallel_for(m, [&](std::size_t col) {
    const auto i = static_cast<Eigen::Index>(col);
    const CubedUnit cu = cubed_unit(Q.col(i), eps);
    ColumnTerms& t = terms[col];
    if (cu.constant) {
      if (grad_q) grad_q->col(i).setZero();
      return;
    }
    const auto ta = align_targets.col(i);
    t.align_sim = cu.u.dot(ta);
    const bool has_distill = i < m_prev;
    if (has_distill) t.distill_sim = cu.u.dot(cache->targets.col(i));
    if (!grad_q) return;
    // dL/dc for c = s^3, then through the cube and the standardization.
    Vector g_c = -(ta - cu.u * t.align_sim);
    if (distill && has_distill) g_c -= beta * (cache->targets.col(i) - cu.u * t.distill_sim);
    g_c /= cu.cube_norm;
    const Vector g_s = 3.0 * cu.s.array().square() * g_c.array();
    const double n = static_cast<double>(Q.rows());
    const double mean_gs = g_s.sum() / n;
    const double proj = cu.s.dot(g_s) / n;
    grad_q->col(i) = ((g_s.array() - mean_gs) - cu.s.array() * proj) / cu.sigma;
  });
  return terms;
}

}  // namespace

void validate(const TrainConfig& c) {
  require(c.beta >= 0 && std::isfinite(c.beta), ErrorKind::Validation, "beta must be >= 0");
  require(c.steps >= 0, ErrorKind::Validation, "steps must be >= 0");
  require(c.eps > 0, ErrorKind::Validation, "standardization epsilon must be > 0");
  require(c.schedule.step_size > 0, ErrorKind::Validation, "step size must be > 0");
  require(c.schedule.max_backtracks >= 0, ErrorKind::Validation, "max_backtracks must be >= 0");
}

Vector standardize(const Vector& v, double eps) {
  require(v.size() >= 1, ErrorKind::Validation, "cannot standardize an empty vector");
  return cubed_unit(v, eps).s;
}

double cos_cubed_sim(const Vector& a, const Vector& b, double eps) {
  require(a.size() == b.size(), ErrorKind::Dimension, "cos_cubed_sim length mismatch");
  require(a.size() >= 2, ErrorKind::Validation, "cos_cubed_sim needs vectors of length >= 2");
  const CubedUnit ua = cubed_unit(a, eps);
  const CubedUnit ub = cubed_unit(b, eps);
  if (ua.constant || ub.constant) return 0.0;
  return std::clamp(ua.u.dot(ub.u), -1.0, 1.0);
}

DistillationCache make_distillation_cache(const BottleneckWeights& previous, const Matrix& features, double eps) {
  require(features.cols() == previous.W.cols(), ErrorKind::Dimension,
          "feature dim does not match the previous bottleneck");
  DistillationCache cache;
  cache.q_prev = features * previous.W.transpose();
  cache.targets = unit_targets(cache.q_prev, eps);
  return cache;
}

double alignment_loss(const BottleneckWeights& W, const Matrix& F, const Matrix& P, double eps) {
  return combined_loss(W, F, P, nullptr, 0.0, eps);
}

double combined_loss(const BottleneckWeights& W, const Matrix& F, const Matrix& P,
                     const DistillationCache* cache, double beta, double eps) {
  check_shapes(W.W, F, P, cache);
  const Matrix Q = F * W.W.transpose();
  const auto terms = evaluate_columns(Q, unit_targets(P, eps), cache, beta, eps, nullptr);
  double align = 0;
  double distill = 0;
  for (const auto& t : terms) {
    align -= t.align_sim;
    distill -= t.distill_sim;
  }
  if (cache == nullptr || beta == 0.0) return align;
  return align + beta * distill;
}

LossGradient combined_loss_gradient(const Matrix& W, const Matrix& F, const Matrix& P,
                                    const DistillationCache* cache, double beta, double eps) {
  check_shapes(W, F, P, cache);
  const Matrix Q = F * W.transpose();
  Matrix grad_q(Q.rows(), Q.cols());
  const auto terms = evaluate_columns(Q, unit_targets(P, eps), cache, beta, eps, &grad_q);
  LossGradient out;
  for (const auto& t : terms) {
    out.alignment -= t.align_sim;
    out.distillation -= t.distill_sim;
  }
  out.loss = (cache == nullptr || beta == 0.0) ? out.alignment : out.alignment + beta * out.distillation;
  out.gradient = grad_q.transpose() * F;
  return out;
}

BottleneckWeights expand_bottleneck(const BottleneckWeights& previous, std::size_t new_concepts,
                                    std::uint64_t seed) {
  BottleneckWeights out;
  out.phase_id = previous.phase_id;
  const Eigen::Index m_prev = previous.W.rows();
  const Eigen::Index d = previous.W.cols();
  require(d >= 1, ErrorKind::Validation, "bottleneck feature dimension must be >= 1");
  out.W.resize(m_prev + static_cast<Eigen::Index>(new_concepts), d);
  out.W.topRows(m_prev) = previous.W;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(m_prev), 0xB0771Eu};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  for (Eigen::Index r = m_prev; r < out.W.rows(); ++r)
    for (Eigen::Index c = 0; c < d; ++c) out.W(r, c) = normal(rng);
  return out;
}

TrainResult train_bottleneck(const BottleneckWeights& init, const Matrix& F, const Matrix& P,
                             const DistillationCache* cache, const TrainConfig& config) {
  validate(config);
  check_shapes(init.W, F, P, cache);
  const double beta = cache ? config.beta : 0.0;
  const auto& sched = config.schedule;

  TrainResult result;
  result.weights = init;
  Matrix W = init.W;
  LossGradient current = combined_loss_gradient(W, F, P, cache, beta, config.eps);
  if (!std::isfinite(current.loss) || !current.gradient.allFinite()) {
    fail(ErrorKind::Divergence, "non-finite bottleneck loss or gradient at step 0");
  }
  result.trajectory.reserve(static_cast<std::size_t>(config.steps) + 1);
  result.trajectory.push_back(current.loss);

  Matrix m1 = Matrix::Zero(W.rows(), W.cols());
  Matrix m2 = Matrix::Zero(W.rows(), W.cols());
  for (int step = 1; step <= config.steps; ++step) {
    m1 = sched.beta1 * m1 + (1.0 - sched.beta1) * current.gradient;
    m2 = sched.beta2 * m2 + (1.0 - sched.beta2) * current.gradient.cwiseAbs2();
    const double c1 = 1.0 - std::pow(sched.beta1, step);
    const double c2 = 1.0 - std::pow(sched.beta2, step);
    const Matrix direction =
        (m1.array() / c1) / ((m2.array() / c2).sqrt() + sched.epsilon);

    double lr = sched.step_size;
    for (int attempt = 0; attempt <= sched.max_backtracks; ++attempt, lr *= 0.5) {
      Matrix proposal = W - lr * direction;
      LossGradient trial = combined_loss_gradient(proposal, F, P, cache, beta, config.eps);
      if (!std::isfinite(trial.loss) || !trial.gradient.allFinite()) {
        fail(ErrorKind::Divergence, "non-finite bottleneck loss or gradient at step " + std::to_string(step));
      }
      if (trial.loss <= current.loss) {
        W = std::move(proposal);
        current = std::move(trial);
        ++result.accepted_steps;
        break;
      }
    }
    result.trajectory.push_back(current.loss);
  }
  result.weights.W = std::move(W);
  return result;
}

double distillation_similarity(const BottleneckWeights& W, const Matrix& F, const DistillationCache& cache,
                               double eps) {
  require(F.cols() == W.W.cols(), ErrorKind::Dimension, "feature dim does not match the bottleneck");
  require(cache.targets.cols() <= W.W.rows() && cache.targets.rows() == F.rows(), ErrorKind::Dimension,
          "distillation cache does not match");
  const Eigen::Index m_prev = cache.targets.cols();
  if (m_prev == 0) return 0.0;
  const Matrix Q = F * W.W.topRows(m_prev).transpose();
  KahanSum sum;
  for (Eigen::Index i = 0; i < m_prev; ++i) {
    const CubedUnit cu = cubed_unit(Q.col(i), eps);
    sum.add(cu.constant ? 0.0 : cu.u.dot(cache.targets.col(i)));
  }
  return sum.value() / static_cast<double>(m_prev);
}

}  // namespace cicbm
