#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "cicbm/bottleneck.hpp"
#include "cicbm/concept_set.hpp"
#include "cicbm/matrixio.hpp"
#include "cicbm/sparse_glm.hpp"

namespace cicbm {

// Pipeline settings. Every key of the JSON form is optional; unknown keys are
// rejected.
struct Config {
  std::uint64_t seed = 1993;
  double beta = 1.0;
  double alpha = 0.99;
  FilterThresholds filter;
  std::pair<int, int> target_nnz{35, 55};
  std::optional<double> lambda;  // fixed lambda instead of the search
  double explain_threshold = 0.2;
  int bottleneck_steps = 1000;
  double bottleneck_step_size = 1e-2;
  double standardize_eps = kDefaultStandardizeEps;
  double solver_tol = 1e-5;
  int solver_max_iters = 5000;
  bool pseudo_concepts = true;
  bool concept_regularization = true;
  bool freeze_old = false;
  bool dense = false;
  bool prototype_in_concept_space = false;
  bool class_balance = false;
  double mask_concepts = 0.0;  // percent of each phase's candidates withheld
  std::optional<double> snr_db;  // synthetic scenarios: overrides the concept noise level

  TrainConfig train_config() const;
  SolverConfig solver_config() const;
};

void validate(const Config& config);
Config parse_config(const std::string& json_text);
Config load_config(const fs::path& path);
std::string to_json(const Config& config);

// "35:55" -> {35, 55}
std::pair<int, int> parse_nnz_range(const std::string& text);

}  // namespace cicbm
