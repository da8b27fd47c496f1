#include "cicbm/config.hpp"

#include <cmath>
#include <set>

#include "cicbm/errors.hpp"
#include "json.hpp"

namespace cicbm {

using nlohmann::json;

TrainConfig Config::train_config() const {
  TrainConfig t;
  t.beta = concept_regularization ? beta : 0.0;
  t.steps = bottleneck_steps;
  t.schedule.step_size = bottleneck_step_size;
  t.seed = seed;
  t.eps = standardize_eps;
  return t;
}

SolverConfig Config::solver_config() const {
  SolverConfig s;
  s.tol = solver_tol;
  s.max_iters = solver_max_iters;
  s.class_balance = class_balance;
  return s;
}

void validate(const Config& c) {
  require(std::isfinite(c.beta) && c.beta >= 0, ErrorKind::Validation, "beta must be >= 0");
  require(c.alpha > 0 && c.alpha <= 1, ErrorKind::Validation, "alpha must lie in (0, 1]");
  require(c.filter.max_len >= 1, ErrorKind::Validation, "max_concept_length must be >= 1");
  require(c.filter.class_sim > 0 && c.filter.class_sim <= 1, ErrorKind::Validation,
          "class_similarity_threshold must lie in (0, 1]");
  require(c.filter.dedup > 0 && c.filter.dedup <= 1, ErrorKind::Validation, "dedup_threshold must lie in (0, 1]");
  require(c.target_nnz.first >= 0 && c.target_nnz.first <= c.target_nnz.second, ErrorKind::Validation,
          "target_nnz must be lo:hi with 0 <= lo <= hi");
  require(!c.lambda || (std::isfinite(*c.lambda) && *c.lambda >= 0), ErrorKind::Validation, "lambda must be >= 0");
  require(c.explain_threshold >= 0, ErrorKind::Validation, "explain_threshold must be >= 0");
  require(c.bottleneck_steps >= 0, ErrorKind::Validation, "bottleneck_steps must be >= 0");
  require(c.bottleneck_step_size > 0, ErrorKind::Validation, "bottleneck_step_size must be > 0");
  require(c.standardize_eps > 0, ErrorKind::Validation, "standardize_eps must be > 0");
  require(c.solver_tol > 0, ErrorKind::Validation, "solver_tol must be > 0");
  require(c.solver_max_iters >= 1, ErrorKind::Validation, "solver_max_iters must be >= 1");
  require(c.mask_concepts >= 0 && c.mask_concepts < 100, ErrorKind::Validation,
          "mask_concepts must lie in [0, 100)");
  require(!c.snr_db || std::isfinite(*c.snr_db), ErrorKind::Validation, "snr_db must be finite");
}

std::pair<int, int> parse_nnz_range(const std::string& text) {
  const auto colon = text.find(':');
  require(colon != std::string::npos, ErrorKind::Validation, "nonzero target must look like lo:hi");
  try {
    std::size_t a = 0, b = 0;
    const int lo = std::stoi(text.substr(0, colon), &a);
    const int hi = std::stoi(text.substr(colon + 1), &b);
    require(a == colon && b == text.size() - colon - 1, ErrorKind::Validation, "nonzero target must look like lo:hi");
    return {lo, hi};
  } catch (const std::logic_error&) {
    fail(ErrorKind::Validation, "nonzero target must look like lo:hi");
  }
}

Config parse_config(const std::string& text) {
  json j;
  try {
    j = text.find_first_not_of(" \t\r\n") == std::string::npos ? json::object() : json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed config: ") + e.what());
  }
  require(j.is_object(), ErrorKind::Validation, "config must be an object");
  static const std::set<std::string> known = {
      "seed", "beta", "alpha", "max_concept_length", "class_similarity_threshold", "dedup_threshold",
      "target_nnz", "lambda", "explain_threshold", "bottleneck_steps", "bottleneck_step_size",
      "standardize_eps", "solver_tol", "solver_max_iters", "pseudo_concepts", "concept_regularization",
      "freeze_old", "dense", "prototype_in_concept_space", "class_balance", "mask_concepts", "snr_db"};
  for (const auto& item : j.items()) {
    require(known.count(item.key()) > 0, ErrorKind::Validation, "unknown config key '" + item.key() + "'");
  }
  Config c;
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("beta")) c.beta = j["beta"].get<double>();
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("max_concept_length")) c.filter.max_len = j["max_concept_length"].get<std::size_t>();
    if (j.contains("class_similarity_threshold")) c.filter.class_sim = j["class_similarity_threshold"].get<double>();
    if (j.contains("dedup_threshold")) c.filter.dedup = j["dedup_threshold"].get<double>();
    if (j.contains("target_nnz")) {
      const auto& t = j["target_nnz"];
      if (t.is_string()) {
        c.target_nnz = parse_nnz_range(t.get<std::string>());
      } else {
        require(t.is_array() && t.size() == 2, ErrorKind::Validation, "target_nnz must be [lo, hi] or \"lo:hi\"");
        c.target_nnz = {t[0].get<int>(), t[1].get<int>()};
      }
    }
    if (j.contains("lambda") && !j["lambda"].is_null()) c.lambda = j["lambda"].get<double>();
    if (j.contains("explain_threshold")) c.explain_threshold = j["explain_threshold"].get<double>();
    if (j.contains("bottleneck_steps")) c.bottleneck_steps = j["bottleneck_steps"].get<int>();
    if (j.contains("bottleneck_step_size")) c.bottleneck_step_size = j["bottleneck_step_size"].get<double>();
    if (j.contains("standardize_eps")) c.standardize_eps = j["standardize_eps"].get<double>();
    if (j.contains("solver_tol")) c.solver_tol = j["solver_tol"].get<double>();
    if (j.contains("solver_max_iters")) c.solver_max_iters = j["solver_max_iters"].get<int>();
    if (j.contains("pseudo_concepts")) c.pseudo_concepts = j["pseudo_concepts"].get<bool>();
    if (j.contains("concept_regularization")) c.concept_regularization = j["concept_regularization"].get<bool>();
    if (j.contains("freeze_old")) c.freeze_old = j["freeze_old"].get<bool>();
    if (j.contains("dense")) c.dense = j["dense"].get<bool>();
    if (j.contains("prototype_in_concept_space"))
      c.prototype_in_concept_space = j["prototype_in_concept_space"].get<bool>();
    if (j.contains("class_balance")) c.class_balance = j["class_balance"].get<bool>();
    if (j.contains("mask_concepts")) c.mask_concepts = j["mask_concepts"].get<double>();
    if (j.contains("snr_db") && !j["snr_db"].is_null()) c.snr_db = j["snr_db"].get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

Config load_config(const fs::path& path) { return parse_config(read_text_file(path)); }

std::string to_json(const Config& c) {
  json j = {{"seed", c.seed},
            {"beta", c.beta},
            {"alpha", c.alpha},
            {"max_concept_length", c.filter.max_len},
            {"class_similarity_threshold", c.filter.class_sim},
            {"dedup_threshold", c.filter.dedup},
            {"target_nnz", {c.target_nnz.first, c.target_nnz.second}},
            {"lambda", c.lambda ? json(*c.lambda) : json(nullptr)},
            {"explain_threshold", c.explain_threshold},
            {"bottleneck_steps", c.bottleneck_steps},
            {"bottleneck_step_size", c.bottleneck_step_size},
            {"standardize_eps", c.standardize_eps},
            {"solver_tol", c.solver_tol},
            {"solver_max_iters", c.solver_max_iters},
            {"pseudo_concepts", c.pseudo_concepts},
            {"concept_regularization", c.concept_regularization},
            {"freeze_old", c.freeze_old},
            {"dense", c.dense},
            {"prototype_in_concept_space", c.prototype_in_concept_space},
            {"class_balance", c.class_balance},
            {"mask_concepts", c.mask_concepts},
            {"snr_db", c.snr_db ? json(*c.snr_db) : json(nullptr)}};
  return j.dump(2);
}

}  // namespace cicbm
