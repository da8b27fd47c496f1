#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cicbm/bottleneck.hpp"
#include "cicbm/concept_set.hpp"
#include "cicbm/matrixio.hpp"
#include "cicbm/metrics.hpp"
#include "cicbm/pseudo.hpp"
#include "cicbm/sparse_glm.hpp"
#include "json.hpp"

namespace cicbm {

inline constexpr int kStateSchemaVersion = 1;

// Progress of a phase through the pipeline.
enum class Stage { Concepts, Bottleneck, Fit, Evaluated };
const char* to_string(Stage stage);
Stage parse_stage(const std::string& text);

struct ClassInfo {
  int id = 0;
  std::string name;
  int phase = 0;
  bool operator==(const ClassInfo&) const = default;
};

// Everything carried from one phase to the next. Holds no raw features:
// only per-class centroids summarize past data.
struct PhaseState {
  int phase_id = 0;
  Stage stage = Stage::Evaluated;
  ConceptSet concepts;
  std::vector<ClassInfo> classes;
  Matrix class_name_embeddings;                   // one row per entry of `classes`
  std::optional<Matrix> class_name_embeddings_2;  // second embedding space, if any
  std::size_t candidates_seen = 0;  // cumulative candidate count through phase_id
  BottleneckWeights bottleneck;
  BottleneckWeights previous_bottleneck;  // bottleneck at the end of the previous phase
  SparsePredictor predictor;
  CentroidStore centroids;
  AccuracyMatrix accuracy;
  nlohmann::json reports = nlohmann::json::array();  // one object per phase

  std::vector<int> class_ids_of_phase(int phase) const;
  std::vector<int> class_ids_before(int phase) const;
  bool operator==(const PhaseState& o) const;
};

// Checks that the dimensions of the concept set, bottleneck, predictor and
// centroids agree.
void check_consistency(const PhaseState& state);

// state.json plus one binary tensor file per matrix.
void save_phase_state(const PhaseState& state, const fs::path& dir);
PhaseState load_phase_state(const fs::path& dir);

// Rounds every tensor to float32 so the in-memory state equals what a
// save/load cycle produces.
void quantize(PhaseState& state);

}  // namespace cicbm
