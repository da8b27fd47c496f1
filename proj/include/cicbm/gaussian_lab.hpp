#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cicbm/config.hpp"
#include "cicbm/protocol.hpp"
#include "cicbm/types.hpp"
#include "json.hpp"

namespace cicbm {

// Isotropic Gaussian class model N(mean, sigma^2 I).
struct GaussianClass {
  int class_id = 0;
  int phase_id = 1;
  Vector mean;
  double sigma = 1.0;
  double prior = 1.0;
};

// Synthetic concepts: each is a fixed seeded linear functional of the
// features plus Gaussian noise at the given signal-to-noise ratio.
struct ConceptGenerator {
  int concepts_per_phase = 20;
  double snr_db = 30.0;
  bool noise = true;  // false: noiseless activations
  int embed_dim = 32;
  double duplicate_fraction = 0.0;  // share of each later phase's candidates that repeat earlier ones
};

struct ScenarioConfig {
  std::string name;
  std::vector<std::vector<GaussianClass>> phases;
  int train_per_class = 200;
  int test_per_class = 100;
  std::uint64_t seed = 1993;
  ConceptGenerator concepts;

  std::size_t dim() const;
  std::vector<GaussianClass> all_classes() const;
};

void validate(const ScenarioConfig& config);

// 2 (log p_i(x) - log p_j(x)) = A x'x + b'x + c under equal priors; positive
// values favor class i.
struct QuadraticBoundary {
  double A = 0.0;
  Vector b;
  double c = 0.0;
  double evaluate(const Vector& x) const { return A * x.squaredNorm() + b.dot(x) + c; }
};

QuadraticBoundary bayes_boundary_coeffs(const GaussianClass& ci, const GaussianClass& cj, std::size_t d);

// Log density of N(mean, sigma^2 I) at x.
double gaussian_log_density(const Vector& x, const GaussianClass& c);

// Argmax of the class log densities; ties go to the smallest class id.
int bayes_classify(const Vector& x, const std::vector<GaussianClass>& classes);

struct SampledScenario {
  std::vector<PhaseData> phases;
  Matrix concept_functionals;  // one row per candidate (cumulative order)
};

// Deterministic given the seed. Each class and split draws from its own
// seeded stream.
SampledScenario sample_scenario(const ScenarioConfig& config);

// Old classes keep their means and take the sigma of their nearest (by mean
// cosine) class of the last phase; last-phase classes are unchanged.
std::vector<GaussianClass> pseudo_distributions(const ScenarioConfig& config);

inline constexpr std::size_t kProbeStreamSize = 4096;
inline constexpr std::size_t kDefaultProbes = 20000;

// Fraction of probes, drawn from the equal-prior mixture of `reference`, on
// which the Bayes rules of `pseudo` and `reference` disagree. Probes are drawn
// in streams of kProbeStreamSize, each seeded by (seed, stream index).
double boundary_disagreement(const std::vector<GaussianClass>& pseudo, const std::vector<GaussianClass>& reference,
                             std::size_t n_probe, std::uint64_t seed);

// Boundary coefficients of every class pair plus the pseudo-vs-true
// disagreement rate.
nlohmann::json gaussian_lab_report(const ScenarioConfig& config, std::size_t n_probe, std::uint64_t seed);

// Runs the whole pipeline on a sampled scenario. `out_dir` may be empty.
ProtocolResult run_e2e_scenario(const ScenarioConfig& scenario, const Config& config,
                                const fs::path& out_dir = {});

ScenarioConfig parse_scenario(const std::string& json_text);
// A JSON scenario file or "builtin:<name>" with name separable, fig3 or
// sparsity.
ScenarioConfig load_scenario(const std::string& spec);
ScenarioConfig builtin_scenario(const std::string& name);

}  // namespace cicbm
