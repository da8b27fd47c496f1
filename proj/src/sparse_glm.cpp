#include "cicbm/sparse_glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>

#include "cicbm/errors.hpp"

namespace cicbm {

std::vector<std::size_t> SparsePredictor::nonzeros_per_class() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(W.rows()), 0);
  for (Eigen::Index r = 0; r < W.rows(); ++r)
    for (Eigen::Index c = 0; c < W.cols(); ++c)
      if (W(r, c) != 0.0) ++out[static_cast<std::size_t>(r)];
  return out;
}

std::size_t SparsePredictor::total_nonzeros() const {
  std::size_t n = 0;
  for (auto k : nonzeros_per_class()) n += k;
  return n;
}

std::size_t SparsePredictor::row_of(int class_id) const {
  auto it = std::find(class_ids.begin(), class_ids.end(), class_id);
  require(it != class_ids.end(), ErrorKind::Validation, "class " + std::to_string(class_id) + " is not seen");
  return static_cast<std::size_t>(it - class_ids.begin());
}

bool SparsePredictor::has_class(int class_id) const {
  return std::find(class_ids.begin(), class_ids.end(), class_id) != class_ids.end();
}

bool SparsePredictor::operator==(const SparsePredictor& o) const {
  return W == o.W && b == o.b && class_ids == o.class_ids && lambda == o.lambda && alpha == o.alpha;
}

SparsePredictor empty_predictor(std::size_t concepts, double alpha) {
  SparsePredictor p;
  p.W = Matrix::Zero(0, static_cast<Eigen::Index>(concepts));
  p.b = Vector::Zero(0);
  p.alpha = alpha;
  return p;
}

double elastic_net_penalty(const Matrix& W, double alpha) {
  require(alpha >= 0 && alpha <= 1, ErrorKind::Validation, "alpha must lie in [0, 1]");
  return 0.5 * (1.0 - alpha) * W.squaredNorm() + alpha * W.cwiseAbs().sum();
}

double softmax_cross_entropy(const Vector& logits, std::size_t label) {
  require(label < static_cast<std::size_t>(logits.size()), ErrorKind::Validation, "label out of range");
  require(logits.allFinite(), ErrorKind::Validation, "non-finite logits");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits(static_cast<Eigen::Index>(label));
}

Vector softmax_cross_entropy_gradient(const Vector& logits, std::size_t label) {
  require(label < static_cast<std::size_t>(logits.size()), ErrorKind::Validation, "label out of range");
  const double mx = logits.maxCoeff();
  Vector p = (logits.array() - mx).exp();
  p /= p.sum();
  p(static_cast<Eigen::Index>(label)) -= 1.0;
  return p;
}

namespace {

// Batch with labels mapped to predictor rows and per-sample weights w_i / N.
struct Problem {
  const Matrix* X = nullptr;
  std::vector<Eigen::Index> rows;
  Vector sample_weight;  // already divided by N
  std::vector<bool> frozen;  // per predictor row
  std::vector<int> unrepresented;
};

Problem make_problem(const TrainingBatch& batch, const SparsePredictor& pred, bool class_balance,
                     std::span<const int> frozen_classes) {
  require(batch.X.rows() >= 1, ErrorKind::Validation, "training batch is empty");
  require(batch.labels.size() == batch.rows(), ErrorKind::Dimension, "batch labels do not match rows");
  require(batch.sources.empty() || batch.sources.size() == batch.rows(), ErrorKind::Dimension,
          "batch sources do not match rows");
  require(batch.X.allFinite(), ErrorKind::Validation, "training batch has non-finite entries");
  require(static_cast<std::size_t>(batch.X.cols()) == pred.concept_count(), ErrorKind::Dimension,
          "batch has " + std::to_string(batch.X.cols()) + " concepts, predictor has " +
              std::to_string(pred.concept_count()));
  require(pred.W.rows() == static_cast<Eigen::Index>(pred.class_ids.size()) &&
              pred.b.size() == pred.W.rows(),
          ErrorKind::Consistency, "predictor rows, biases and class ids disagree");
  Problem p;
  p.X = &batch.X;
  std::map<int, std::size_t> row_index;
  for (std::size_t k = 0; k < pred.class_ids.size(); ++k) row_index[pred.class_ids[k]] = k;
  std::vector<std::size_t> counts(pred.class_ids.size(), 0);
  p.rows.reserve(batch.labels.size());
  for (int y : batch.labels) {
    auto it = row_index.find(y);
    require(it != row_index.end(), ErrorKind::Validation, "batch label " + std::to_string(y) + " is not a seen class");
    p.rows.push_back(static_cast<Eigen::Index>(it->second));
    ++counts[it->second];
  }
  const double n = static_cast<double>(batch.labels.size());
  std::size_t present = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] > 0) {
      ++present;
    } else {
      p.unrepresented.push_back(pred.class_ids[k]);
    }
  }
  p.sample_weight.resize(static_cast<Eigen::Index>(batch.labels.size()));
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    double w = 1.0;
    if (class_balance) {
      w = n / (static_cast<double>(present) * static_cast<double>(counts[static_cast<std::size_t>(p.rows[i])]));
    }
    p.sample_weight(static_cast<Eigen::Index>(i)) = w / n;
  }
  p.frozen.assign(pred.class_ids.size(), false);
  for (int c : frozen_classes) {
    auto it = row_index.find(c);
    if (it != row_index.end()) p.frozen[it->second] = true;
  }
  return p;
}

// Softmax probabilities, row-wise, for logits X W^T + b.
Matrix probabilities(const Matrix& X, const Matrix& W, const Vector& b) {
  Matrix p = X * W.transpose();
  p.rowwise() += b.transpose();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// Weighted cross-entropy through log-sum-exp, so underflowing probabilities
// never reach log(0).
double weighted_cross_entropy(const Problem& prob, const Matrix& W, const Vector& b) {
  Matrix logits = (*prob.X) * W.transpose();
  logits.rowwise() += b.transpose();
  KahanSum sum;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    sum.add(prob.sample_weight(i) * (lse - logits(i, prob.rows[static_cast<std::size_t>(i)])));
  }
  return sum.value();
}

struct SmoothEval {
  double value = 0;
  Matrix grad_W;
  Vector grad_b;
};

// Smooth part: weighted mean CE + lambda (1 - alpha)/2 ||W||^2.
double smooth_value(const Problem& prob, const Matrix& W, const Vector& b, double l2) {
  return weighted_cross_entropy(prob, W, b) + 0.5 * l2 * W.squaredNorm();
}

SmoothEval smooth_gradient(const Problem& prob, const Matrix& W, const Vector& b, double l2) {
  SmoothEval e;
  Matrix P = probabilities(*prob.X, W, b);
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    P(i, prob.rows[static_cast<std::size_t>(i)]) -= 1.0;
    P.row(i) *= prob.sample_weight(i);
  }
  e.value = smooth_value(prob, W, b, l2);
  e.grad_W = P.transpose() * (*prob.X) + l2 * W;
  e.grad_b = P.colwise().sum().transpose();
  for (std::size_t k = 0; k < prob.frozen.size(); ++k) {
    if (prob.frozen[k]) {
      e.grad_W.row(static_cast<Eigen::Index>(k)).setZero();
      e.grad_b(static_cast<Eigen::Index>(k)) = 0.0;
    }
  }
  return e;
}

double kkt_from_gradient(const Problem& prob, const Matrix& W, const SmoothEval& g, double l1) {
  double worst = 0.0;
  for (Eigen::Index r = 0; r < W.rows(); ++r) {
    if (prob.frozen[static_cast<std::size_t>(r)]) continue;
    worst = std::max(worst, std::abs(g.grad_b(r)));
    for (Eigen::Index c = 0; c < W.cols(); ++c) {
      const double w = W(r, c);
      const double gw = g.grad_W(r, c);
      const double v = w != 0.0 ? std::abs(gw + l1 * (w > 0 ? 1.0 : -1.0)) : std::max(0.0, std::abs(gw) - l1);
      worst = std::max(worst, v);
    }
  }
  return worst;
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// Log of weighted class frequencies; -inf for unrepresented classes.
Vector log_priors(const Problem& prob, std::size_t classes) {
  Vector freq = Vector::Zero(static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < prob.rows.size(); ++i) freq(prob.rows[i]) += prob.sample_weight(static_cast<Eigen::Index>(i));
  freq /= freq.sum();
  return freq.array().log();
}

SparsePredictor fit_impl(const TrainingBatch& batch, const SparsePredictor& init, double lambda, double alpha,
                         const SolverConfig& cfg, std::span<const int> frozen_classes, FitInfo* info_out) {
  require(lambda >= 0 && std::isfinite(lambda), ErrorKind::Validation, "lambda must be >= 0");
  require(alpha >= 0 && alpha <= 1, ErrorKind::Validation, "alpha must lie in [0, 1]");
  require(cfg.tol > 0 && cfg.max_iters >= 1 && cfg.initial_step > 0 && cfg.check_every >= 1,
          ErrorKind::Validation, "invalid solver configuration");
  const Problem prob = make_problem(batch, init, cfg.class_balance, frozen_classes);
  const double l1 = lambda * alpha;
  const double l2 = lambda * (1.0 - alpha);
  const bool any_frozen = std::find(prob.frozen.begin(), prob.frozen.end(), true) != prob.frozen.end();

  FitInfo info;
  info.unrepresented_classes = prob.unrepresented;
  SparsePredictor x = init;
  x.lambda = lambda;
  x.alpha = alpha;

  auto full_objective = [&](const Matrix& W, const Vector& b) {
    return smooth_value(prob, W, b, l2) + l1 * W.cwiseAbs().sum();
  };

  // Screening: W = 0 with log-prior biases is optimal when every entry of the
  // gradient there is within the l1 threshold.
  if (!any_frozen && prob.unrepresented.empty() && l1 > 0) {
    SparsePredictor zero = x;
    zero.W.setZero();
    zero.b = log_priors(prob, x.class_count());
    const SmoothEval g = smooth_gradient(prob, zero.W, zero.b, l2);
    if (g.grad_W.cwiseAbs().maxCoeff() <= l1) {
      info.zero_screened = true;
      info.converged = true;
      info.objective = full_objective(zero.W, zero.b);
      info.kkt_residual = kkt_from_gradient(prob, zero.W, g, l1);
      if (cfg.record_trace) info.objective_trace.push_back(info.objective);
      if (info_out) *info_out = std::move(info);
      return zero;
    }
  }

  Matrix W = x.W;
  Vector b = x.b;
  double F_x = full_objective(W, b);
  require(std::isfinite(F_x), ErrorKind::Divergence, "non-finite objective at the initial point");
  if (cfg.record_trace) info.objective_trace.push_back(F_x);
  Matrix yW = W;
  Vector yb = b;
  double t = 1.0;
  double step = cfg.initial_step;

  auto prox_step = [&](const Matrix& W0, const Vector& b0, const SmoothEval& g, double s, Matrix& Wn, Vector& bn) {
    Wn = W0 - s * g.grad_W;
    bn = b0 - s * g.grad_b;
    if (l1 > 0) {
      for (Eigen::Index r = 0; r < Wn.rows(); ++r) {
        if (prob.frozen[static_cast<std::size_t>(r)]) {
          Wn.row(r) = W0.row(r);
          continue;
        }
        for (Eigen::Index c = 0; c < Wn.cols(); ++c) Wn(r, c) = soft_threshold(Wn(r, c), s * l1);
      }
    }
  };

  int it = 0;
  bool restarted = false;
  for (; it < cfg.max_iters; ++it) {
    const SmoothEval g = smooth_gradient(prob, yW, yb, l2);
    Matrix Wn;
    Vector bn;
    double f_new = 0;
    for (int bt = 0; bt < 60; ++bt) {
      prox_step(yW, yb, g, step, Wn, bn);
      f_new = smooth_value(prob, Wn, bn, l2);
      const double dW = (Wn - yW).squaredNorm() + (bn - yb).squaredNorm();
      const double lin = (g.grad_W.array() * (Wn - yW).array()).sum() + g.grad_b.dot(bn - yb);
      if (std::isfinite(f_new) && f_new <= g.value + lin + dW / (2.0 * step) + 1e-15 * std::abs(g.value)) break;
      step *= 0.5;
    }
    if (!std::isfinite(f_new)) {
      fail(ErrorKind::Divergence, "non-finite objective in sparse solver at iteration " + std::to_string(it));
    }
    const double F_new = f_new + l1 * Wn.cwiseAbs().sum();
    if (F_new > F_x) {
      // A plain proximal step from the accepted point cannot increase the
      // objective beyond rounding; stop if even that fails.
      if (restarted) break;
      restarted = true;
      // Momentum overshoot: restart from the last accepted point.
      ++info.restarts;
      t = 1.0;
      yW = W;
      yb = b;
      continue;
    }
    restarted = false;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double mom = (t - 1.0) / t_next;
    yW = Wn + mom * (Wn - W);
    yb = bn + mom * (bn - b);
    W = std::move(Wn);
    b = std::move(bn);
    t = t_next;
    F_x = F_new;
    if (cfg.record_trace) info.objective_trace.push_back(F_x);

    if ((it + 1) % cfg.check_every == 0) {
      const SmoothEval gx = smooth_gradient(prob, W, b, l2);
      info.kkt_residual = kkt_from_gradient(prob, W, gx, l1);
      if (info.kkt_residual < cfg.tol) {
        info.converged = true;
        ++it;
        break;
      }
    }
  }
  if (!info.converged) {
    const SmoothEval gx = smooth_gradient(prob, W, b, l2);
    info.kkt_residual = kkt_from_gradient(prob, W, gx, l1);
    info.converged = info.kkt_residual < cfg.tol;
  }
  info.iterations = it;
  info.objective = F_x;
  x.W = std::move(W);
  x.b = std::move(b);
  if (info_out) *info_out = std::move(info);
  return x;
}

}  // namespace

double glm_objective(const SparsePredictor& pred, const TrainingBatch& batch, double lambda, double alpha,
                     bool class_balance) {
  const Problem prob = make_problem(batch, pred, class_balance, {});
  return weighted_cross_entropy(prob, pred.W, pred.b) + lambda * elastic_net_penalty(pred.W, alpha);
}

double kkt_residual(const SparsePredictor& pred, const TrainingBatch& batch, double lambda, double alpha,
                    bool class_balance, std::span<const int> frozen_classes) {
  const Problem prob = make_problem(batch, pred, class_balance, frozen_classes);
  const SmoothEval g = smooth_gradient(prob, pred.W, pred.b, lambda * (1.0 - alpha));
  return kkt_from_gradient(prob, pred.W, g, lambda * alpha);
}

SparsePredictor fit_sparse_predictor(const TrainingBatch& batch, const SparsePredictor& init, double lambda,
                                     double alpha, const SolverConfig& config, FitInfo* info) {
  return fit_impl(batch, init, lambda, alpha, config, {}, info);
}

SparsePredictor freeze_old_rows_fit(const TrainingBatch& batch, const SparsePredictor& init, double lambda,
                                    double alpha, const SolverConfig& config, std::span<const int> frozen_classes,
                                    FitInfo* info) {
  return fit_impl(batch, init, lambda, alpha, config, frozen_classes, info);
}

double lambda_max(const TrainingBatch& batch, const SparsePredictor& init, double alpha, bool class_balance) {
  const Problem prob = make_problem(batch, init, class_balance, {});
  Matrix W = Matrix::Zero(init.W.rows(), init.W.cols());
  Vector b = log_priors(prob, init.class_count());
  // Unrepresented classes get probability 0 at the W = 0 optimum.
  for (Eigen::Index k = 0; k < b.size(); ++k)
    if (!std::isfinite(b(k))) b(k) = -1e30;
  const SmoothEval g = smooth_gradient(prob, W, b, 0.0);
  const double a = std::max(alpha, 1e-3);
  return g.grad_W.size() == 0 ? 0.0 : g.grad_W.cwiseAbs().maxCoeff() / a;
}

LambdaSearchResult lambda_search(const TrainingBatch& batch, const SparsePredictor& init, double alpha,
                                 std::pair<int, int> target, const SolverConfig& config,
                                 std::span<const int> frozen_classes) {
  require(target.first >= 0 && target.first <= target.second, ErrorKind::Validation, "invalid nonzero target range");
  const double m = static_cast<double>(init.concept_count());
  LambdaSearchResult res;
  res.target = {std::min<double>(target.first, m), std::min<double>(target.second, m)};
  const double top = lambda_max(batch, init, alpha, config.class_balance);
  require(std::isfinite(top), ErrorKind::Divergence, "non-finite lambda_max");

  auto mean_nnz = [](const SparsePredictor& p) {
    return p.class_count() == 0 ? 0.0 : static_cast<double>(p.total_nonzeros()) / static_cast<double>(p.class_count());
  };
  auto distance = [&](double v) {
    if (v < res.target.first) return res.target.first - v;
    if (v > res.target.second) return v - res.target.second;
    return 0.0;
  };

  SparsePredictor warm = init;
  double best_distance = std::numeric_limits<double>::infinity();
  double prev_nnz = -1.0;
  for (int k = 0; k < kLambdaGridPoints; ++k) {
    const double lambda =
        top * std::pow(kLambdaGridRatio, static_cast<double>(k) / static_cast<double>(kLambdaGridPoints - 1));
    FitInfo info;
    SparsePredictor fit = fit_impl(batch, warm, lambda, alpha, config, frozen_classes, &info);
    const double nnz = mean_nnz(fit);
    res.path.push_back({lambda, nnz});
    if (nnz < prev_nnz) res.monotonicity_violation = true;
    prev_nnz = nnz;
    const double dist = distance(nnz);
    if (dist < best_distance) {
      best_distance = dist;
      res.lambda = lambda;
      res.predictor = fit;
      res.info = info;
    }
    if (dist == 0.0) {
      res.in_range = true;
      break;
    }
    // Past the upper end: smaller lambdas only add nonzeros.
    if (nnz > res.target.second) break;
    warm = std::move(fit);
  }
  return res;
}

SparsePredictor expand_predictor(const SparsePredictor& pred, std::span<const int> new_class_ids,
                                 std::size_t new_concepts) {
  std::set<int> seen(pred.class_ids.begin(), pred.class_ids.end());
  for (int c : new_class_ids) {
    require(seen.insert(c).second, ErrorKind::Validation, "class " + std::to_string(c) + " already in the predictor");
  }
  SparsePredictor out = pred;
  const Eigen::Index k_old = pred.W.rows();
  const Eigen::Index m_old = pred.W.cols();
  const auto k_new = k_old + static_cast<Eigen::Index>(new_class_ids.size());
  const auto m_new = m_old + static_cast<Eigen::Index>(new_concepts);
  out.W = Matrix::Zero(k_new, m_new);
  out.W.topLeftCorner(k_old, m_old) = pred.W;
  out.b = Vector::Zero(k_new);
  out.b.head(k_old) = pred.b;
  out.class_ids.insert(out.class_ids.end(), new_class_ids.begin(), new_class_ids.end());
  return out;
}

Prediction predict(const SparsePredictor& pred, const Matrix& X) {
  require(static_cast<std::size_t>(X.cols()) == pred.concept_count(), ErrorKind::Dimension,
          "concept features do not match the predictor");
  require(pred.class_count() >= 1, ErrorKind::Validation, "predictor has no classes");
  Prediction out;
  out.logits = X * pred.W.transpose();
  out.logits.rowwise() += pred.b.transpose();
  out.labels.resize(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < out.logits.cols(); ++k) {
      const double v = out.logits(i, k);
      const double bv = out.logits(i, best);
      if (v > bv || (v == bv && pred.class_ids[static_cast<std::size_t>(k)] < pred.class_ids[static_cast<std::size_t>(best)])) {
        best = k;
      }
    }
    out.labels[static_cast<std::size_t>(i)] = pred.class_ids[static_cast<std::size_t>(best)];
  }
  return out;
}

}  // namespace cicbm
