#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cicbm/concept_set.hpp"
#include "cicbm/config.hpp"
#include "cicbm/matrixio.hpp"
#include "cicbm/phase_state.hpp"
#include "json.hpp"

namespace cicbm {

// Inputs of one phase. Activation columns follow the cumulative candidate
// list: column i is the candidate with candidate_index i.
struct PhaseData {
  int phase_id = 0;
  std::vector<int> class_ids;
  std::vector<std::string> class_names;
  FeatureMatrix train;
  FeatureMatrix test;
  Matrix train_activations;
  Matrix test_activations;
  std::vector<Candidate> candidates;  // this phase's candidates
  std::size_t candidates_before = 0;  // cumulative count of earlier phases
  Matrix class_name_embeddings;       // one unit row per class, in class_ids order
  std::optional<Matrix> class_name_embeddings_2;
  std::string provenance;
};

class PhaseSource {
 public:
  virtual ~PhaseSource() = default;
  virtual int phase_count() const = 0;
  virtual PhaseData load(int phase) const = 0;
  virtual FeatureMatrix load_test(int phase) const { return load(phase).test; }
  // Raw training features of a phase (used by the artifact audit).
  virtual FeatureMatrix load_train(int phase) const { return load(phase).train; }
};

// Phases described by the manifest files of one directory.
class ManifestSource final : public PhaseSource {
 public:
  explicit ManifestSource(const fs::path& dir);
  int phase_count() const override { return static_cast<int>(manifests_.size()); }
  PhaseData load(int phase) const override;
  FeatureMatrix load_test(int phase) const override;
  FeatureMatrix load_train(int phase) const override;
  const std::vector<PhaseManifest>& manifests() const { return manifests_; }

 private:
  std::vector<PhaseManifest> manifests_;
  std::vector<std::size_t> candidate_offsets_;  // cumulative, one per phase plus the total
};

// Phases held in memory (synthetic scenarios).
class MemorySource final : public PhaseSource {
 public:
  explicit MemorySource(std::vector<PhaseData> phases);
  int phase_count() const override { return static_cast<int>(phases_.size()); }
  PhaseData load(int phase) const override;
  FeatureMatrix load_test(int phase) const override;
  FeatureMatrix load_train(int phase) const override;

 private:
  std::vector<PhaseData> phases_;
};

// Columns of `activations` for the concepts of `concepts`, in concept order.
Matrix concept_columns(const Matrix& activations, const ConceptSet& concepts);
// f_c(x) = W f(x) for every row.
Matrix concept_activations(const Matrix& features, const BottleneckWeights& bottleneck);

// The four stages of a phase. Each advances `state` by one stage, appends to
// the phase report in state.reports and rounds the state to float32.
void stage_concepts(PhaseState& state, const PhaseData& data, const Config& config);
void stage_bottleneck(PhaseState& state, const PhaseData& data, const Config& config);
void stage_fit(PhaseState& state, const PhaseData& data, const Config& config);
// Returns the test predictions for phases 1..t.
std::vector<std::vector<int>> stage_evaluate(PhaseState& state, const PhaseSource& source, const PhaseData& data,
                                             const Config& config);

struct PseudoSet {
  int past_class = 0;
  int donor_class = 0;
  Matrix features;  // backbone-space pseudo-features
  Matrix concepts;  // their pseudo-concepts
};

// Pseudo-features of every past class (ascending class id) for the phase in
// `data`. Needs a state whose centroid store already includes the new classes.
std::vector<PseudoSet> build_pseudo_sets(const PhaseState& state, const PhaseData& data, const Config& config);

// Metrics summary of the accuracy history plus the per-phase reports.
nlohmann::json metrics_report(const PhaseState& state);

struct ProtocolResult {
  PhaseState state;
  nlohmann::json report;
};

// Runs every phase of `source`. With a non-empty `out_dir`, phase t is saved
// to out_dir/phase_<t> together with its test predictions and the final
// report goes to out_dir/report.json. With `resume`, completed phases found
// in out_dir are loaded instead of recomputed.
ProtocolResult run_protocol(const PhaseSource& source, const fs::path& out_dir, const Config& config,
                            bool resume = false);

fs::path phase_dir(const fs::path& out_dir, int phase);

// Lists every persisted artifact under `out_dir` and flags any stored float
// row identical to a raw training or test feature row. Centroid files are
// exempt.
nlohmann::json audit_artifacts(const fs::path& out_dir, const PhaseSource& source);

// Nearest-centroid accuracy matrices: real test features and pseudo-features
// per phase, using the centroids of all classes seen so far.
nlohmann::json prototype_eval(const PhaseSource& source, const Config& config);

}  // namespace cicbm
