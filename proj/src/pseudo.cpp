#include "cicbm/pseudo.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "cicbm/errors.hpp"

namespace cicbm {

void CentroidStore::add(int class_id, CentroidEntry entry) {
  require(!contains(class_id), ErrorKind::Validation,
          "centroid for class " + std::to_string(class_id) + " is already stored");
  require(entry.sample_count >= 1, ErrorKind::Validation, "centroid needs at least one sample");
  require(entry.centroid.allFinite(), ErrorKind::Validation, "centroid has non-finite entries");
  if (!entries_.empty()) {
    require(entry.centroid.size() == entries_.begin()->second.centroid.size(), ErrorKind::Dimension,
            "centroid dimension differs from stored centroids");
  }
  entries_.emplace(class_id, std::move(entry));
}

const CentroidEntry& CentroidStore::at(int class_id) const {
  auto it = entries_.find(class_id);
  require(it != entries_.end(), ErrorKind::Validation, "no centroid stored for class " + std::to_string(class_id));
  return it->second;
}

std::vector<int> CentroidStore::class_ids() const {
  std::vector<int> ids;
  for (const auto& [c, _] : entries_) ids.push_back(c);
  return ids;
}

bool CentroidStore::operator==(const CentroidStore& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  for (const auto& [c, e] : entries_) {
    auto it = o.entries_.find(c);
    if (it == o.entries_.end() || it->second.sample_count != e.sample_count ||
        it->second.phase_introduced != e.phase_introduced || it->second.centroid != e.centroid) {
      return false;
    }
  }
  return true;
}

std::map<int, CentroidEntry> compute_centroids(const FeatureMatrix& features, std::span<const int> expected) {
  require(features.labels.size() == features.rows(), ErrorKind::Dimension, "labels do not match feature rows");
  std::map<int, CentroidEntry> out;
  std::map<int, std::vector<Eigen::Index>> rows_by_class;
  for (std::size_t r = 0; r < features.labels.size(); ++r) {
    rows_by_class[features.labels[r]].push_back(static_cast<Eigen::Index>(r));
  }
  for (int c : expected) {
    require(rows_by_class.count(c) > 0, ErrorKind::Validation,
            "class " + std::to_string(c) + " has no samples in phase " + std::to_string(features.phase_id));
  }
  for (const auto& [c, rows] : rows_by_class) {
    Vector sum = Vector::Zero(features.data.cols());
    for (auto r : rows) sum += features.data.row(r).transpose();
    CentroidEntry e;
    e.centroid = sum / static_cast<double>(rows.size());
    e.sample_count = rows.size();
    e.phase_introduced = features.phase_id;
    out.emplace(c, std::move(e));
  }
  return out;
}

double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0 && nb > 0, ErrorKind::Validation, "cosine of a zero-norm vector");
  return a.dot(b) / (na * nb);
}

int nearest_new_class(int past_class, const CentroidStore& store, std::span<const int> new_classes) {
  require(!new_classes.empty(), ErrorKind::Validation, "no new classes to pair with");
  const Vector& mu_p = store.at(past_class).centroid;
  int best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (int c : new_classes) {
    const double sim = cosine(mu_p, store.at(c).centroid);
    if (sim > best_sim || (sim == best_sim && c < best)) {
      best_sim = sim;
      best = c;
    }
  }
  return best;
}

Matrix generate_pseudo_features(int past_class, int donor_class, const Matrix& donor_rows,
                                const CentroidStore& store) {
  require(donor_rows.rows() >= 1, ErrorKind::Validation, "no donor rows for pseudo features");
  const Vector& mu_p = store.at(past_class).centroid;
  const Vector& mu_n = store.at(donor_class).centroid;
  require(donor_rows.cols() == mu_p.size(), ErrorKind::Dimension, "donor rows do not match centroid dimension");
  const Eigen::RowVectorXd shift = (mu_p - mu_n).transpose();
  return donor_rows.rowwise() + shift;
}

Matrix project_pseudo_concepts(const Matrix& pseudo, const BottleneckWeights& b) {
  require(pseudo.cols() == b.W.cols(), ErrorKind::Dimension, "pseudo features do not match bottleneck input");
  return pseudo * b.W.transpose();
}

Matrix concept_space_pseudo_concepts(int past_class, int donor_class, const Matrix& donor_rows,
                                     const CentroidStore& store, const BottleneckWeights& previous,
                                     const BottleneckWeights& current) {
  require(previous.W.rows() <= current.W.rows() && previous.W.cols() == current.W.cols(), ErrorKind::Dimension,
          "previous bottleneck does not embed into the current one");
  require(store.contains(donor_class), ErrorKind::Validation, "donor class has no stored centroid");
  const Matrix donor_concepts = project_pseudo_concepts(donor_rows, current);
  Vector proto = Vector::Zero(current.W.rows());
  proto.head(previous.W.rows()) = previous.W * store.at(past_class).centroid;
  const Vector donor_mean = donor_concepts.colwise().mean().transpose();
  const Eigen::RowVectorXd shift = (proto - donor_mean).transpose();
  return donor_concepts.rowwise() + shift;
}

std::vector<int> prototype_classify(const Matrix& features, const CentroidStore& store) {
  require(!store.empty(), ErrorKind::Validation, "centroid store is empty");
  const auto& entries = store.entries();
  require(features.cols() == entries.begin()->second.centroid.size(), ErrorKind::Dimension,
          "feature dim does not match centroids");
  std::vector<std::pair<int, Vector>> units;
  for (const auto& [c, e] : entries) {
    const double n = e.centroid.norm();
    require(n > 0, ErrorKind::Validation, "zero-norm centroid for class " + std::to_string(c));
    units.emplace_back(c, e.centroid / n);
  }
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    const double n = features.row(r).norm();
    require(n > 0, ErrorKind::Validation, "zero-norm feature row " + std::to_string(r));
    double best = -std::numeric_limits<double>::infinity();
    int best_class = 0;
    // std::map iterates in ascending class order, so strict '>' keeps the
    // smallest id on ties.
    for (const auto& [c, u] : units) {
      const double sim = features.row(r).dot(u) / n;
      if (sim > best) {
        best = sim;
        best_class = c;
      }
    }
    out[static_cast<std::size_t>(r)] = best_class;
  }
  return out;
}

}  // namespace cicbm
