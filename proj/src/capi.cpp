#include "cicbm/cicbm.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "cicbm/config.hpp"
#include "cicbm/errors.hpp"
#include "cicbm/explain.hpp"
#include "cicbm/gaussian_lab.hpp"
#include "cicbm/matrixio.hpp"
#include "cicbm/phase_state.hpp"
#include "cicbm/protocol.hpp"
#include "json.hpp"

using nlohmann::json;

struct cicbm_config {
  json overrides = json::object();
  cicbm::Config config;
};

struct cicbm_state {
  cicbm::PhaseState state;
};

struct cicbm_matrix {
  cicbm::Matrix m;
};

namespace {

thread_local std::string last_error;
thread_local std::string last_kind = "none";

cicbm_status status_for(cicbm::ErrorKind kind) {
  switch (cicbm::exit_code_for(kind)) {
    case 3: return CICBM_ERR_DIVERGENCE;
    case 4: return CICBM_ERR_IO;
    default: return CICBM_ERR_VALIDATION;
  }
}

template <class F>
cicbm_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    last_kind = "none";
    return CICBM_OK;
  } catch (const cicbm::Error& e) {
    last_error = e.what();
    last_kind = cicbm::to_string(e.kind());
    return status_for(e.kind());
  } catch (const json::exception& e) {
    last_error = e.what();
    last_kind = "validation";
    return CICBM_ERR_VALIDATION;
  } catch (const std::exception& e) {
    last_error = e.what();
    last_kind = "internal";
    return CICBM_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    last_kind = "internal";
    return CICBM_ERR_INTERNAL;
  }
}

void require_arg(const void* p, const char* name) {
  cicbm::require(p != nullptr, cicbm::ErrorKind::Validation, std::string(name) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const json& j) {
  if (out) *out = dup_string(j.dump(2));
}

const cicbm::Config& config_of(const cicbm_config* c) {
  static const cicbm::Config defaults;
  return c ? c->config : defaults;
}

std::unique_ptr<cicbm::PhaseSource> open_source(const std::string& spec) {
  if (cicbm::fs::is_directory(spec)) return std::make_unique<cicbm::ManifestSource>(spec);
  return std::make_unique<cicbm::MemorySource>(cicbm::sample_scenario(cicbm::load_scenario(spec)).phases);
}

void write_predictions(const std::vector<std::vector<int>>& predictions, const cicbm::fs::path& dir) {
  cicbm::fs::create_directories(dir / "predictions");
  for (std::size_t j = 0; j < predictions.size(); ++j) {
    cicbm::write_labels(predictions[j], dir / "predictions" / ("test_phase_" + std::to_string(j + 1) + ".bin"));
  }
}

}  // namespace

extern "C" {

const char* cicbm_version(void) { return "1.0.0"; }
const char* cicbm_last_error(void) { return last_error.c_str(); }
const char* cicbm_last_error_kind(void) { return last_kind.c_str(); }
void cicbm_string_free(char* text) { std::free(text); }

cicbm_status cicbm_config_load(const char* path, cicbm_config** out) {
  return guarded([&] {
    require_arg(out, "out");
    auto c = std::make_unique<cicbm_config>();
    if (path) {
      const std::string text = cicbm::read_text_file(path);
      c->config = cicbm::parse_config(text);
      if (text.find_first_not_of(" \t\r\n") != std::string::npos) c->overrides = json::parse(text);
    }
    *out = c.release();
  });
}

cicbm_status cicbm_config_from_json(const char* json_text, cicbm_config** out) {
  return guarded([&] {
    require_arg(json_text, "json_text");
    require_arg(out, "out");
    auto c = std::make_unique<cicbm_config>();
    c->config = cicbm::parse_config(json_text);
    if (std::string(json_text).find_first_not_of(" \t\r\n") != std::string::npos) c->overrides = json::parse(json_text);
    *out = c.release();
  });
}

cicbm_status cicbm_config_set(cicbm_config* config, const char* key, const char* json_value) {
  return guarded([&] {
    require_arg(config, "config");
    require_arg(key, "key");
    require_arg(json_value, "json_value");
    json next = config->overrides;
    try {
      next[key] = json::parse(json_value);
    } catch (const json::exception& e) {
      cicbm::fail(cicbm::ErrorKind::Validation, std::string("value for '") + key + "' is not JSON: " + e.what());
    }
    config->config = cicbm::parse_config(next.dump());
    config->overrides = std::move(next);
  });
}

cicbm_status cicbm_config_to_json(const cicbm_config* config, char** out) {
  return guarded([&] {
    require_arg(out, "out");
    *out = dup_string(cicbm::to_json(config_of(config)));
  });
}

void cicbm_config_free(cicbm_config* config) { delete config; }

cicbm_status cicbm_matrix_create(size_t rows, size_t cols, const double* data, cicbm_matrix** out) {
  return guarded([&] {
    require_arg(out, "out");
    if (rows * cols > 0) require_arg(data, "data");
    auto m = std::make_unique<cicbm_matrix>();
    m->m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < cols; ++c) m->m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data[r * cols + c];
    *out = m.release();
  });
}

cicbm_status cicbm_matrix_read(const char* path, cicbm_matrix** out) {
  return guarded([&] {
    require_arg(path, "path");
    require_arg(out, "out");
    auto m = std::make_unique<cicbm_matrix>();
    m->m = cicbm::read_matrix(path);
    *out = m.release();
  });
}

cicbm_status cicbm_matrix_write(const cicbm_matrix* matrix, const char* path) {
  return guarded([&] {
    require_arg(matrix, "matrix");
    require_arg(path, "path");
    cicbm::write_matrix(matrix->m, path);
  });
}

size_t cicbm_matrix_rows(const cicbm_matrix* matrix) { return matrix ? static_cast<size_t>(matrix->m.rows()) : 0; }
size_t cicbm_matrix_cols(const cicbm_matrix* matrix) { return matrix ? static_cast<size_t>(matrix->m.cols()) : 0; }

cicbm_status cicbm_matrix_copy(const cicbm_matrix* matrix, double* out, size_t capacity) {
  return guarded([&] {
    require_arg(matrix, "matrix");
    const auto rows = static_cast<size_t>(matrix->m.rows());
    const auto cols = static_cast<size_t>(matrix->m.cols());
    cicbm::require(capacity >= rows * cols, cicbm::ErrorKind::Validation, "output buffer too small");
    if (rows * cols > 0) require_arg(out, "out");
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < cols; ++c) out[r * cols + c] = matrix->m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  });
}

void cicbm_matrix_free(cicbm_matrix* matrix) { delete matrix; }

cicbm_status cicbm_state_load(const char* dir, cicbm_state** out) {
  return guarded([&] {
    require_arg(dir, "dir");
    require_arg(out, "out");
    auto s = std::make_unique<cicbm_state>();
    s->state = cicbm::load_phase_state(dir);
    *out = s.release();
  });
}

int cicbm_state_phase(const cicbm_state* state) { return state ? state->state.phase_id : 0; }
size_t cicbm_state_concept_count(const cicbm_state* state) { return state ? state->state.concepts.size() : 0; }
size_t cicbm_state_class_count(const cicbm_state* state) { return state ? state->state.classes.size() : 0; }

cicbm_status cicbm_state_report(const cicbm_state* state, char** out) {
  return guarded([&] {
    require_arg(state, "state");
    require_arg(out, "out");
    emit(out, cicbm::metrics_report(state->state));
  });
}

void cicbm_state_free(cicbm_state* state) { delete state; }

cicbm_status cicbm_run_protocol(const char* manifest_dir, const char* out_dir, const cicbm_config* config, int resume,
                                char** report) {
  return guarded([&] {
    require_arg(manifest_dir, "manifest_dir");
    require_arg(out_dir, "out_dir");
    const cicbm::ManifestSource source(manifest_dir);
    const auto result = cicbm::run_protocol(source, out_dir, config_of(config), resume != 0);
    emit(report, result.report);
  });
}

cicbm_status cicbm_run_stage(const char* stage, const char* manifest_dir, const char* state_in, const char* state_out,
                             int phase, const cicbm_config* config, char** report) {
  return guarded([&] {
    require_arg(stage, "stage");
    require_arg(manifest_dir, "manifest_dir");
    require_arg(state_out, "state_out");
    const cicbm::Config& cfg = config_of(config);
    cicbm::validate(cfg);
    const cicbm::ManifestSource source(manifest_dir);
    const cicbm::PhaseData data = source.load(phase);
    cicbm::PhaseState state;
    if (state_in) state = cicbm::load_phase_state(state_in);
    const std::string name = stage;
    if (name == "concepts") {
      cicbm::stage_concepts(state, data, cfg);
    } else if (name == "bottleneck") {
      cicbm::stage_bottleneck(state, data, cfg);
    } else if (name == "fit") {
      cicbm::stage_fit(state, data, cfg);
    } else if (name == "evaluate") {
      write_predictions(cicbm::stage_evaluate(state, source, data, cfg), state_out);
    } else {
      cicbm::fail(cicbm::ErrorKind::Validation, "unknown stage '" + name + "'");
    }
    cicbm::save_phase_state(state, state_out);
    emit(report, name == "evaluate" ? cicbm::metrics_report(state) : state.reports.back());
  });
}

cicbm_status cicbm_gen_pseudo(const char* manifest_dir, const char* state_dir, int phase, const cicbm_config* config,
                              const char* out_dir, char** summary) {
  return guarded([&] {
    require_arg(manifest_dir, "manifest_dir");
    require_arg(state_dir, "state_dir");
    require_arg(out_dir, "out_dir");
    const cicbm::ManifestSource source(manifest_dir);
    const cicbm::PhaseData data = source.load(phase);
    cicbm::PhaseState state = cicbm::load_phase_state(state_dir);
    cicbm::require(state.phase_id == phase && (state.stage == cicbm::Stage::Bottleneck || state.stage == cicbm::Stage::Fit),
                   cicbm::ErrorKind::Validation,
                   "pseudo-features need the bottleneck or fit stage of phase " + std::to_string(phase));
    std::vector<int> new_ids = data.class_ids;
    std::sort(new_ids.begin(), new_ids.end());
    if (state.stage == cicbm::Stage::Bottleneck) {
      for (auto& [id, entry] : cicbm::compute_centroids(data.train, new_ids)) {
        entry.centroid = cicbm::quantize_f32(entry.centroid);
        entry.phase_introduced = phase;
        state.centroids.add(id, std::move(entry));
      }
    }
    const auto sets = cicbm::build_pseudo_sets(state, data, config_of(config));
    cicbm::fs::create_directories(out_dir);
    json classes = json::array();
    for (const auto& s : sets) {
      const std::string base = "pseudo_class_" + std::to_string(s.past_class);
      const cicbm::fs::path file = cicbm::fs::path(out_dir) / (base + ".bin");
      cicbm::write_matrix(s.features, file);
      cicbm::write_labels(std::vector<int>(static_cast<std::size_t>(s.features.rows()), s.past_class),
                          cicbm::fs::path(out_dir) / (base + ".bin.labels"));
      classes.push_back({{"class_id", s.past_class}, {"donor_class", s.donor_class}, {"rows", s.features.rows()},
                         {"file", file.filename().string()}});
    }
    emit(summary, {{"phase", phase}, {"pseudo_classes", classes}});
  });
}

cicbm_status cicbm_explain(const cicbm_state* state, const char* sample_file, int class_id, char** out) {
  return guarded([&] {
    require_arg(state, "state");
    require_arg(sample_file, "sample_file");
    require_arg(out, "out");
    const cicbm::Matrix samples = cicbm::read_matrix(sample_file);
    const auto& st = state->state;
    json rows = json::array();
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
      const auto e = cicbm::contributions(samples.row(r).transpose(), st.bottleneck, st.predictor, class_id);
      json contrib = json::array();
      for (const auto& c : e.contributions) {
        contrib.push_back({{"concept_id", c.concept_id}, {"text", st.concepts[c.concept_id].text}, {"value", c.value}});
      }
      rows.push_back({{"row", r}, {"logit", e.logit}, {"bias", e.bias}, {"contributions", contrib}});
    }
    emit(out, {{"class_id", class_id}, {"samples", rows}});
  });
}

cicbm_status cicbm_explain_global(const cicbm_state* state, int class_id, double threshold, char** out) {
  return guarded([&] {
    require_arg(state, "state");
    require_arg(out, "out");
    const auto edges = cicbm::global_weight_graph(state->state.predictor, state->state.concepts, class_id, threshold);
    json list = json::array();
    for (const auto& e : edges) {
      list.push_back({{"concept_id", e.concept_id},
                      {"text", e.text},
                      {"weight", e.weight},
                      {"introduced_phase", e.introduced_phase},
                      {"not_concept", e.is_not_concept}});
    }
    emit(out, {{"class_id", class_id}, {"threshold", threshold}, {"edges", list}});
  });
}

cicbm_status cicbm_gaussian_lab(const char* scenario, size_t probes, uint64_t seed, char** out) {
  return guarded([&] {
    require_arg(scenario, "scenario");
    require_arg(out, "out");
    emit(out, cicbm::gaussian_lab_report(cicbm::load_scenario(scenario), probes, seed));
  });
}

cicbm_status cicbm_e2e(const char* scenario, const cicbm_config* config, const char* out_dir, char** out) {
  return guarded([&] {
    require_arg(scenario, "scenario");
    const auto result = cicbm::run_e2e_scenario(cicbm::load_scenario(scenario), config_of(config),
                                                out_dir ? cicbm::fs::path(out_dir) : cicbm::fs::path());
    emit(out, result.report);
  });
}

cicbm_status cicbm_prototype_eval(const char* source, const cicbm_config* config, char** out) {
  return guarded([&] {
    require_arg(source, "source");
    require_arg(out, "out");
    emit(out, cicbm::prototype_eval(*open_source(source), config_of(config)));
  });
}

cicbm_status cicbm_audit(const char* out_dir, const char* source, char** out) {
  return guarded([&] {
    require_arg(out_dir, "out_dir");
    require_arg(source, "source");
    require_arg(out, "out");
    emit(out, cicbm::audit_artifacts(out_dir, *open_source(source)));
  });
}

}  // extern "C"
