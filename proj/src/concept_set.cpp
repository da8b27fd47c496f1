#include "cicbm/concept_set.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cicbm/errors.hpp"
#include "json.hpp"

namespace cicbm {

const char* to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::TooLong: return "too_long";
    case RejectReason::ClassSimilar: return "class_similar";
    case RejectReason::Duplicate: return "duplicate";
  }
  return "unknown";
}

std::size_t utf8_length(std::string_view text) {
  std::size_t n = 0;
  for (unsigned char c : text) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

std::size_t ConceptSet::count_before_phase(int phase_id) const {
  std::size_t count = 0;
  for (const auto& [phase, m] : phase_counts_) {
    if (phase < phase_id) count = m;
  }
  return count;
}

ConceptSet ConceptSet::restore(std::vector<ConceptEntry> entries,
                               std::vector<std::pair<int, std::size_t>> phase_counts) {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    require(entries[i].id == i, ErrorKind::Consistency, "concept id does not match its position");
  }
  std::size_t prev = 0;
  int prev_phase = 0;
  for (const auto& [phase, m] : phase_counts) {
    require(m >= prev && phase > prev_phase, ErrorKind::Consistency, "concept counts must be nondecreasing");
    prev = m;
    prev_phase = phase;
  }
  require(prev == entries.size(), ErrorKind::Consistency, "concept count does not match entries");
  ConceptSet s;
  s.entries_ = std::move(entries);
  s.phase_counts_ = std::move(phase_counts);
  return s;
}

bool ConceptSet::operator==(const ConceptSet& other) const {
  if (phase_counts_ != other.phase_counts_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.id != b.id || a.text != b.text || a.introduced_phase != b.introduced_phase ||
        a.candidate_index != b.candidate_index || a.embedding != b.embedding ||
        a.embedding2.has_value() != b.embedding2.has_value() ||
        (a.embedding2 && *a.embedding2 != *b.embedding2)) {
      return false;
    }
  }
  return true;
}

namespace {

void require_unit(const Vector& v, const std::string& what) {
  require(v.allFinite() && std::abs(v.norm() - 1.0) <= kUnitNormTolerance, ErrorKind::Validation,
          what + " embedding is not unit-norm");
}

double max_cosine_to_rows(const Vector& v, const Matrix& rows) {
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < rows.rows(); ++r) best = std::max(best, rows.row(r).dot(v));
  return best;
}

}  // namespace

FilterReport filter_candidates(std::span<const Candidate> candidates, const ConceptSet& existing,
                               const Matrix& class_names, const Matrix* class_names_2,
                               const FilterThresholds& th) {
  require(th.class_sim > 0 && th.class_sim <= 1 && th.dedup > 0 && th.dedup <= 1, ErrorKind::Validation,
          "similarity thresholds must lie in (0, 1]");
  for (Eigen::Index r = 0; r < class_names.rows(); ++r) require_unit(class_names.row(r).transpose(), "class-name");
  if (class_names_2) {
    for (Eigen::Index r = 0; r < class_names_2->rows(); ++r)
      require_unit(class_names_2->row(r).transpose(), "class-name");
  }
  for (const auto& c : candidates) {
    require_unit(c.embedding, "candidate '" + c.text + "'");
    if (c.embedding2) require_unit(*c.embedding2, "candidate '" + c.text + "'");
    if (!existing.empty()) {
      require(c.embedding.size() == existing[0].embedding.size(), ErrorKind::Dimension,
              "candidate embedding dimension differs from the concept set");
    }
    if (class_names.rows() > 0) {
      require(c.embedding.size() == class_names.cols(), ErrorKind::Dimension,
              "candidate embedding dimension differs from class-name embeddings");
    }
  }

  FilterReport report;
  report.base_size = existing.size();
  report.base_generation = existing.generation();

  // Pool of vectors already in the vocabulary, growing with accepted ones.
  // `accepted` never reallocates below, so the pointers stay valid.
  report.accepted.reserve(candidates.size());
  std::vector<const ConceptEntry*> pool;
  for (const auto& e : existing.entries()) pool.push_back(&e);

  for (const auto& cand : candidates) {
    if (utf8_length(cand.text) > th.max_len) {
      report.rejected.push_back({cand, RejectReason::TooLong});
      continue;
    }
    bool class_similar = class_names.rows() > 0 && max_cosine_to_rows(cand.embedding, class_names) > th.class_sim;
    if (!class_similar && class_names_2 && cand.embedding2 && class_names_2->rows() > 0) {
      class_similar = max_cosine_to_rows(*cand.embedding2, *class_names_2) > th.class_sim;
    }
    if (class_similar) {
      report.rejected.push_back({cand, RejectReason::ClassSimilar});
      continue;
    }
    bool duplicate = false;
    for (const ConceptEntry* e : pool) {
      if (e->embedding.dot(cand.embedding) > th.dedup ||
          (e->embedding2 && cand.embedding2 && e->embedding2->dot(*cand.embedding2) > th.dedup)) {
        duplicate = true;
        break;
      }
    }
    if (duplicate) {
      report.rejected.push_back({cand, RejectReason::Duplicate});
      continue;
    }
    ConceptEntry entry;
    entry.id = existing.size() + report.accepted.size();
    entry.text = cand.text;
    entry.embedding = cand.embedding;
    entry.embedding2 = cand.embedding2;
    entry.candidate_index = cand.candidate_index;
    report.accepted.push_back(std::move(entry));
    pool.push_back(&report.accepted.back());
  }
  return report;
}

ConceptSet expand(const ConceptSet& existing, const FilterReport& report, int phase_id) {
  if (report.base_size != existing.size() || report.base_generation != existing.generation()) {
    fail(ErrorKind::StaleReport, "filter report was built against a different concept set");
  }
  require(existing.phase_counts_.empty() || existing.phase_counts_.back().first < phase_id,
          ErrorKind::Validation, "expansion phase must be later than the last expansion");
  ConceptSet out = existing;
  for (const auto& a : report.accepted) {
    ConceptEntry e = a;
    e.id = out.entries_.size();
    e.introduced_phase = phase_id;
    out.entries_.push_back(std::move(e));
  }
  out.phase_counts_.emplace_back(phase_id, out.entries_.size());
  return out;
}

std::vector<std::size_t> concept_growth_curve(const ConceptSet& set) {
  std::vector<std::size_t> curve;
  curve.reserve(set.phase_counts().size());
  for (const auto& [phase, m] : set.phase_counts()) curve.push_back(m);
  return curve;
}

namespace {

Vector normalized(const std::vector<double>& raw, const std::string& text) {
  Vector v = Eigen::Map<const Vector>(raw.data(), static_cast<Eigen::Index>(raw.size()));
  const double n = v.norm();
  require(v.size() > 0 && std::isfinite(n) && n > 0, ErrorKind::Validation,
          "candidate '" + text + "' has a zero or non-finite embedding");
  return quantize_f32(Vector(v / n));
}

}  // namespace

std::vector<Candidate> load_candidates(const fs::path& path, std::size_t first_index) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, "malformed candidate file '" + path.string() + "': " + e.what());
  }
  std::vector<Candidate> out;
  try {
    for (const auto& rec : j.at("candidates")) {
      Candidate c;
      c.text = rec.at("text").get<std::string>();
      c.embedding = normalized(rec.at("embedding").get<std::vector<double>>(), c.text);
      if (rec.contains("embedding2")) {
        c.embedding2 = normalized(rec["embedding2"].get<std::vector<double>>(), c.text);
      }
      c.candidate_index = first_index + out.size();
      out.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, "candidate file '" + path.string() + "': " + e.what());
  }
  return out;
}

}  // namespace cicbm
