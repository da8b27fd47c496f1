#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cicbm/matrixio.hpp"
#include "cicbm/types.hpp"

namespace cicbm {

// A candidate concept as ingested from a candidate file. `embedding2` is the
// optional second text-embedding space.
struct Candidate {
  std::string text;
  Vector embedding;
  std::optional<Vector> embedding2;
  // Position in the cumulative candidate list over all phases; this is the
  // column of the concept in the phase activation files.
  std::size_t candidate_index = 0;
};

struct ConceptEntry {
  std::size_t id = 0;
  std::string text;
  Vector embedding;
  std::optional<Vector> embedding2;
  int introduced_phase = 0;
  std::size_t candidate_index = 0;
};

enum class RejectReason { TooLong, ClassSimilar, Duplicate };
const char* to_string(RejectReason reason);

struct Rejection {
  Candidate candidate;
  RejectReason reason;
};

struct FilterThresholds {
  std::size_t max_len = 30;
  double class_sim = 0.85;
  double dedup = 0.9;
};

class ConceptSet;

struct FilterReport {
  // Accepted candidates carry provisional ids (existing size + k) and
  // introduced_phase 0 until `expand` stamps them.
  std::vector<ConceptEntry> accepted;
  std::vector<Rejection> rejected;
  std::size_t base_size = 0;
  std::size_t base_generation = 0;
};

// Append-only concept vocabulary. Entry ids equal positions and never change.
class ConceptSet {
 public:
  ConceptSet() = default;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<ConceptEntry>& entries() const { return entries_; }
  const ConceptEntry& operator[](std::size_t i) const { return entries_[i]; }

  // (phase id, concept count after that phase), one per expansion.
  const std::vector<std::pair<int, std::size_t>>& phase_counts() const { return phase_counts_; }
  std::size_t generation() const { return phase_counts_.size(); }

  // Count at the end of the most recent phase strictly before `phase_id`.
  std::size_t count_before_phase(int phase_id) const;

  // Rebuilds a set from persisted parts; validates ids and counts.
  static ConceptSet restore(std::vector<ConceptEntry> entries,
                            std::vector<std::pair<int, std::size_t>> phase_counts);

  bool operator==(const ConceptSet& other) const;

 private:
  friend ConceptSet expand(const ConceptSet&, const FilterReport&, int);
  std::vector<ConceptEntry> entries_;
  std::vector<std::pair<int, std::size_t>> phase_counts_;
};

// Number of Unicode code points in a UTF-8 string.
std::size_t utf8_length(std::string_view text);

// Screens candidates in input order with the rules length -> class similarity
// -> duplicate. Each candidate is checked for duplication against the
// existing set and every earlier accepted candidate. The second embedding
// space is only consulted when both sides carry one.
FilterReport filter_candidates(std::span<const Candidate> candidates, const ConceptSet& existing,
                               const Matrix& class_name_embeddings,
                               const Matrix* class_name_embeddings_2,
                               const FilterThresholds& thresholds);

ConceptSet expand(const ConceptSet& existing, const FilterReport& report, int phase_id);

std::vector<std::size_t> concept_growth_curve(const ConceptSet& set);

// Candidate file: {"candidates": [{"text": ..., "embedding": [...],
// "embedding2": [...]?}, ...]}. Embeddings are L2-normalized on ingestion.
// `first_index` is the cumulative index of the first record.
std::vector<Candidate> load_candidates(const fs::path& path, std::size_t first_index);

inline constexpr double kUnitNormTolerance = 1e-6;

}  // namespace cicbm
