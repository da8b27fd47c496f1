#include "cicbm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cicbm/errors.hpp"
#include "cicbm/parallel.hpp"

namespace cicbm {

AccuracyMatrix::AccuracyMatrix(std::vector<std::size_t> phase_class_counts)
    : class_counts_(std::move(phase_class_counts)) {}

void AccuracyMatrix::add_phase(std::size_t class_count) { class_counts_.push_back(class_count); }

void AccuracyMatrix::append_row(std::vector<double> row) {
  const std::size_t t = rows_.size() + 1;
  require(t <= class_counts_.size(), ErrorKind::Validation, "accuracy matrix has no room for row " + std::to_string(t));
  require(row.size() == t, ErrorKind::Dimension,
          "accuracy row " + std::to_string(t) + " must have " + std::to_string(t) + " entries");
  for (double v : row) {
    require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorKind::Validation, "accuracy entries must lie in [0, 1]");
  }
  rows_.push_back(std::move(row));
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
  require(i >= 1 && j >= 1 && j <= i, ErrorKind::Validation, "accuracy entries are defined only for i >= j >= 1");
  require(i <= rows_.size(), ErrorKind::Validation, "accuracy row " + std::to_string(i) + " is incomplete");
  return rows_[i - 1][j - 1];
}

namespace {

void require_row(const AccuracyMatrix& a, std::size_t t) {
  require(t >= 1, ErrorKind::Validation, "phases are numbered from 1");
  require(t <= a.completed_rows(), ErrorKind::Validation, "accuracy row " + std::to_string(t) + " is incomplete");
}

double weight_of(const AccuracyMatrix& a, std::size_t j, bool weighted) {
  return weighted ? static_cast<double>(a.class_counts()[j - 1]) : 1.0;
}

}  // namespace

double avg_phase_accuracy(const AccuracyMatrix& a, std::size_t t, bool weighted) {
  require_row(a, t);
  KahanSum num;
  KahanSum den;
  for (std::size_t j = 1; j <= t; ++j) {
    const double w = weight_of(a, j, weighted);
    num.add(w * a.at(t, j));
    den.add(w);
  }
  require(den.value() > 0, ErrorKind::Validation, "phase weights sum to zero");
  return num.value() / den.value();
}

double avg_phase_forgetting(const AccuracyMatrix& a, std::size_t t, bool weighted) {
  require(t >= 2, ErrorKind::Validation, "forgetting is undefined for the first phase");
  require_row(a, t);
  KahanSum num;
  KahanSum den;
  for (std::size_t j = 1; j < t; ++j) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = j; i < t; ++i) best = std::max(best, a.at(i, j) - a.at(t, j));
    const double w = weight_of(a, j, weighted);
    num.add(w * best);
    den.add(w);
  }
  require(den.value() > 0, ErrorKind::Validation, "phase weights sum to zero");
  return num.value() / den.value();
}

double avg_incremental_accuracy(const AccuracyMatrix& a, bool weighted) {
  const std::size_t T = a.completed_rows();
  require(T >= 1, ErrorKind::Validation, "accuracy matrix is empty");
  KahanSum sum;
  for (std::size_t t = 1; t <= T; ++t) sum.add(avg_phase_accuracy(a, t, weighted));
  return sum.value() / static_cast<double>(T);
}

double avg_incremental_forgetting(const AccuracyMatrix& a, bool weighted) {
  const std::size_t T = a.completed_rows();
  require(T >= 2, ErrorKind::Validation, "forgetting needs at least two phases");
  KahanSum sum;
  for (std::size_t t = 2; t <= T; ++t) sum.add(avg_phase_forgetting(a, t, weighted));
  return sum.value() / static_cast<double>(T - 1);
}

FidelityResult concept_fidelity(const Matrix& Q, const Matrix& P, const Matrix& E) {
  require(Q.rows() == P.rows(), ErrorKind::Dimension, "bottleneck and reference activations differ in rows");
  require(Q.cols() <= P.cols(), ErrorKind::Dimension, "more bottleneck units than reference concepts");
  require(E.rows() == P.cols(), ErrorKind::Dimension, "one embedding per reference concept is required");
  const auto units = static_cast<std::size_t>(Q.cols());
  const Eigen::Index m = P.cols();

  Vector p_norm(m);
  for (Eigen::Index c = 0; c < m; ++c) p_norm[c] = P.col(c).norm();

  FidelityResult out;
  out.assigned.assign(units, SIZE_MAX);
  std::vector<char> hit(units, 0);
  std::vector<char> skip(units, 0);
  std::vector<double> sim(units, 0.0);
  parallel_for(units, [&](std::size_t k) {
    const auto col = Q.col(static_cast<Eigen::Index>(k));
    if (Q.rows() == 0 || (col.array() == col(0)).all() || !(col.norm() > 0)) {
      skip[k] = 1;
      return;
    }
    const double qn = col.norm();
    std::vector<double> cosines(static_cast<std::size_t>(m));
    for (Eigen::Index c = 0; c < m; ++c) {
      cosines[static_cast<std::size_t>(c)] = p_norm[c] > 0 ? col.dot(P.col(c)) / (qn * p_norm[c])
                                                           : -std::numeric_limits<double>::infinity();
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < cosines.size(); ++c)
      if (cosines[c] > cosines[best]) best = c;
    out.assigned[k] = best;
    // Rank of the ground truth: concepts ahead of it by cosine, ties by index.
    const double own = cosines[k];
    std::size_t ahead = 0;
    for (std::size_t c = 0; c < cosines.size(); ++c)
      if (cosines[c] > own || (cosines[c] == own && c < k)) ++ahead;
    hit[k] = ahead < 5 ? 1 : 0;
    const auto ei = E.row(static_cast<Eigen::Index>(best));
    const auto ek = E.row(static_cast<Eigen::Index>(k));
    const double den = ei.norm() * ek.norm();
    sim[k] = den > 0 ? ei.dot(ek) / den : 0.0;
  });

  KahanSum sim_sum;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < units; ++k) {
    if (skip[k]) {
      out.skipped_units.push_back(k);
      continue;
    }
    ++out.evaluated_units;
    sim_sum.add(sim[k]);
    hits += hit[k];
  }
  if (out.evaluated_units > 0) {
    out.mean_similarity = sim_sum.value() / static_cast<double>(out.evaluated_units);
    out.top5_accuracy = static_cast<double>(hits) / static_cast<double>(out.evaluated_units);
  }
  return out;
}

SparsityReport sparsity_report(const SparsePredictor& pred) {
  SparsityReport r;
  r.nonzeros_per_class = pred.nonzeros_per_class();
  r.total_nonzeros = pred.total_nonzeros();
  const double cells = static_cast<double>(pred.W.rows()) * static_cast<double>(pred.W.cols());
  r.percent = cells > 0 ? 100.0 * static_cast<double>(r.total_nonzeros) / cells : 0.0;
  r.mean_per_class =
      pred.W.rows() > 0 ? static_cast<double>(r.total_nonzeros) / static_cast<double>(pred.W.rows()) : 0.0;
  return r;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  require(predicted.size() == labels.size(), ErrorKind::Dimension, "prediction and label counts differ");
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace cicbm
