// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "cicbm/cicbm.h"

namespace {

// Thrown to leave a subcommand with the status of a failed library call.
struct Failure {
  cicbm_status status;
};

void check(cicbm_status s) {
  if (s != CICBM_OK) throw Failure{s};
}

int exit_code(cicbm_status s) {
  switch (s) {
    case CICBM_OK: return 0;
    case CICBM_ERR_VALIDATION: return 2;
    case CICBM_ERR_DIVERGENCE: return 3;
    case CICBM_ERR_IO: return 4;
    default: return 1;
  }
}

void print_and_free(char* text) {
  if (text) {
    std::cout << text << "\n";
    cicbm_string_free(text);
  }
}

class ConfigHandle {
 public:
  explicit ConfigHandle(const std::string& path) {
    check(cicbm_config_load(path.empty() ? nullptr : path.c_str(), &handle_));
  }
  ~ConfigHandle() { cicbm_config_free(handle_); }
  ConfigHandle(const ConfigHandle&) = delete;
  ConfigHandle& operator=(const ConfigHandle&) = delete;

  void set(const char* key, const std::string& json_value) { check(cicbm_config_set(handle_, key, json_value.c_str())); }
  template <class T>
  void set_if(const char* key, const std::optional<T>& v) {
    if (v) set(key, to_json(*v));
  }
  void set_flag(const char* key, bool flag, bool value) {
    if (flag) set(key, value ? "true" : "false");
  }
  cicbm_config* get() const { return handle_; }

 private:
  static std::string to_json(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }
  static std::string to_json(int v) { return std::to_string(v); }
  static std::string to_json(std::uint64_t v) { return std::to_string(v); }
  static std::string to_json(const std::string& v) { return "\"" + v + "\""; }
  cicbm_config* handle_ = nullptr;
};

class StateHandle {
 public:
  explicit StateHandle(const std::string& dir) { check(cicbm_state_load(dir.c_str(), &handle_)); }
  ~StateHandle() { cicbm_state_free(handle_); }
  StateHandle(const StateHandle&) = delete;
  StateHandle& operator=(const StateHandle&) = delete;
  const cicbm_state* get() const { return handle_; }

 private:
  cicbm_state* handle_ = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental concept bottleneck pipeline"};
  app.require_subcommand(1);

  std::string manifests, out, config_path, state, state_in, sample_file, scenario, target_nnz;
  int phase = 0, class_id = 0;
  bool resume = false, freeze_old = false, dense = false, no_pseudo = false, no_concept_reg = false;
  bool concept_space = false;
  std::optional<double> beta, alpha, lambda, snr, mask;
  std::optional<int> steps, max_len;
  std::optional<double> class_sim, dedup;
  std::optional<std::uint64_t> seed;
  double threshold = 0.2;
  std::size_t probes = 20000;
  std::uint64_t lab_seed = 1993;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", config_path, "JSON config file"); };
  auto add_thresholds = [&](CLI::App* c) {
    c->add_option("--max-concept-length", max_len, "Longest accepted concept, in characters");
    c->add_option("--class-sim", class_sim, "Class-name similarity threshold");
    c->add_option("--dedup", dedup, "Duplicate similarity threshold");
  };
  auto apply_thresholds = [&](ConfigHandle& cfg) {
    cfg.set_if("max_concept_length", max_len);
    cfg.set_if("class_similarity_threshold", class_sim);
    cfg.set_if("dedup_threshold", dedup);
  };
  auto add_phase = [&](CLI::App* c) {
    c->add_option("--manifests", manifests, "Directory of phase manifests")->required();
    c->add_option("--phase", phase, "Phase number")->required()->check(CLI::PositiveNumber);
  };

  auto* run = app.add_subcommand("run", "Run every phase of the protocol");
  run->add_option("--manifests", manifests, "Directory of phase manifests")->required();
  run->add_option("--out", out, "Output directory")->required();
  run->add_flag("--resume", resume, "Continue after the last completed phase in --out");
  add_thresholds(run);
  add_config(run);

  auto* filter = app.add_subcommand("filter-concepts", "Screen and add the candidate concepts of a phase");
  add_phase(filter);
  filter->add_option("--state-in", state_in, "State of the previous phase (omit for phase 1)");
  filter->add_option("--out", out, "Directory for the new state")->required();
  add_thresholds(filter);
  add_config(filter);

  auto* train = app.add_subcommand("train-bottleneck", "Train the concept bottleneck of a phase");
  add_phase(train);
  train->add_option("--state", state, "State directory (updated in place unless --out)")->required();
  train->add_option("--out", out, "Directory for the new state");
  train->add_option("--beta", beta, "Distillation weight");
  train->add_option("--steps", steps, "Optimizer steps");
  train->add_option("--seed", seed, "Seed for new bottleneck rows");
  train->add_flag("--no-concept-reg", no_concept_reg, "Disable the distillation term");
  add_config(train);

  auto* pseudo = app.add_subcommand("gen-pseudo", "Write pseudo-features of every past class");
  add_phase(pseudo);
  pseudo->add_option("--state", state, "State after bottleneck training")->required();
  pseudo->add_option("--out", out, "Output directory")->required();
  pseudo->add_flag("--prototype-in-concept-space", concept_space, "Translate prototypes in concept space");
  add_config(pseudo);

  auto* fit = app.add_subcommand("fit-final", "Fit the sparse prediction layer of a phase");
  add_phase(fit);
  fit->add_option("--state", state, "State directory (updated in place unless --out)")->required();
  fit->add_option("--out", out, "Directory for the new state");
  fit->add_option("--alpha", alpha, "Elastic-net mixing weight");
  auto* lam = fit->add_option("--lambda", lambda, "Fixed regularization strength");
  fit->add_option("--target-nnz", target_nnz, "Nonzero target lo:hi for the lambda search")->excludes(lam);
  fit->add_flag("--freeze-old", freeze_old, "Hold the rows of earlier classes fixed");
  fit->add_flag("--dense", dense, "Fit without regularization");
  fit->add_flag("--no-pseudo", no_pseudo, "Fit without pseudo-concepts");
  fit->add_flag("--prototype-in-concept-space", concept_space, "Translate prototypes in concept space");
  add_config(fit);

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a fitted phase and print the metrics report");
  add_phase(evaluate);
  evaluate->add_option("--state", state, "Fitted state directory (updated in place unless --out)")->required();
  evaluate->add_option("--out", out, "Directory for the new state");
  add_config(evaluate);

  auto* explain = app.add_subcommand("explain", "Per-concept contributions for samples");
  explain->add_option("--state", state, "State directory")->required();
  explain->add_option("--sample-file", sample_file, "Feature matrix file")->required();
  explain->add_option("--class", class_id, "Class id")->required();

  auto* global = app.add_subcommand("explain-global", "Concept-to-class weight edges");
  global->add_option("--state", state, "State directory")->required();
  global->add_option("--class", class_id, "Class id")->required();
  global->add_option("--threshold", threshold, "Minimum absolute weight")->capture_default_str();

  auto* lab = app.add_subcommand("gaussian-lab", "Bayes boundaries and pseudo-distribution disagreement");
  lab->add_option("--scenario", scenario, "Scenario file or builtin:<name>")->required();
  lab->add_option("--probes", probes, "Monte-Carlo probes")->capture_default_str();
  lab->add_option("--seed", lab_seed, "Probe seed")->capture_default_str();

  auto* e2e = app.add_subcommand("e2e", "Run the protocol on a synthetic scenario");
  e2e->add_option("--scenario", scenario, "Scenario file or builtin:<name>")->required();
  e2e->add_option("--out", out, "Optional output directory");
  e2e->add_flag("--no-pseudo", no_pseudo, "Disable pseudo-concepts");
  e2e->add_flag("--no-concept-reg", no_concept_reg, "Disable the distillation term");
  e2e->add_flag("--freeze-old", freeze_old, "Hold the rows of earlier classes fixed");
  e2e->add_flag("--dense", dense, "Fit without regularization");
  e2e->add_flag("--prototype-in-concept-space", concept_space, "Translate prototypes in concept space");
  e2e->add_option("--beta", beta, "Distillation weight");
  e2e->add_option("--snr", snr, "Concept activation SNR in dB");
  e2e->add_option("--mask-concepts", mask, "Percent of candidates withheld per phase");
  add_thresholds(e2e);
  add_config(e2e);

  auto* proto = app.add_subcommand("prototype-eval", "Nearest-centroid accuracy matrices");
  auto* pm = proto->add_option("--manifests", manifests, "Directory of phase manifests");
  proto->add_option("--scenario", scenario, "Scenario file or builtin:<name>")->excludes(pm);

  auto* audit = app.add_subcommand("audit", "List persisted artifacts and check for stored raw features");
  audit->add_option("--out", out, "Output directory of a run")->required();
  auto* am = audit->add_option("--manifests", manifests, "Directory of phase manifests");
  audit->add_option("--scenario", scenario, "Scenario file or builtin:<name>")->excludes(am);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    char* text = nullptr;
    auto dest = [&]() { return out.empty() ? state : out; };
    if (run->parsed()) {
      ConfigHandle cfg(config_path);
      apply_thresholds(cfg);
      check(cicbm_run_protocol(manifests.c_str(), out.c_str(), cfg.get(), resume ? 1 : 0, &text));
    } else if (filter->parsed()) {
      ConfigHandle cfg(config_path);
      apply_thresholds(cfg);
      check(cicbm_run_stage("concepts", manifests.c_str(), state_in.empty() ? nullptr : state_in.c_str(), out.c_str(),
                            phase, cfg.get(), &text));
    } else if (train->parsed()) {
      ConfigHandle cfg(config_path);
      cfg.set_if("beta", beta);
      cfg.set_if("bottleneck_steps", steps);
      cfg.set_if("seed", seed);
      cfg.set_flag("concept_regularization", no_concept_reg, false);
      check(cicbm_run_stage("bottleneck", manifests.c_str(), state.c_str(), dest().c_str(), phase, cfg.get(), &text));
    } else if (pseudo->parsed()) {
      ConfigHandle cfg(config_path);
      cfg.set_flag("prototype_in_concept_space", concept_space, true);
      check(cicbm_gen_pseudo(manifests.c_str(), state.c_str(), phase, cfg.get(), out.c_str(), &text));
    } else if (fit->parsed()) {
      ConfigHandle cfg(config_path);
      cfg.set_if("alpha", alpha);
      cfg.set_if("lambda", lambda);
      if (!target_nnz.empty()) cfg.set("target_nnz", "\"" + target_nnz + "\"");
      cfg.set_flag("freeze_old", freeze_old, true);
      cfg.set_flag("dense", dense, true);
      cfg.set_flag("pseudo_concepts", no_pseudo, false);
      cfg.set_flag("prototype_in_concept_space", concept_space, true);
      check(cicbm_run_stage("fit", manifests.c_str(), state.c_str(), dest().c_str(), phase, cfg.get(), &text));
    } else if (evaluate->parsed()) {
      ConfigHandle cfg(config_path);
      check(cicbm_run_stage("evaluate", manifests.c_str(), state.c_str(), dest().c_str(), phase, cfg.get(), &text));
    } else if (explain->parsed()) {
      StateHandle st(state);
      check(cicbm_explain(st.get(), sample_file.c_str(), class_id, &text));
    } else if (global->parsed()) {
      StateHandle st(state);
      check(cicbm_explain_global(st.get(), class_id, threshold, &text));
    } else if (lab->parsed()) {
      check(cicbm_gaussian_lab(scenario.c_str(), probes, lab_seed, &text));
    } else if (e2e->parsed()) {
      ConfigHandle cfg(config_path);
      cfg.set_flag("pseudo_concepts", no_pseudo, false);
      cfg.set_flag("concept_regularization", no_concept_reg, false);
      cfg.set_flag("freeze_old", freeze_old, true);
      cfg.set_flag("dense", dense, true);
      cfg.set_flag("prototype_in_concept_space", concept_space, true);
      cfg.set_if("beta", beta);
      cfg.set_if("snr_db", snr);
      cfg.set_if("mask_concepts", mask);
      apply_thresholds(cfg);
      check(cicbm_e2e(scenario.c_str(), cfg.get(), out.empty() ? nullptr : out.c_str(), &text));
    } else if (proto->parsed()) {
      const std::string source = manifests.empty() ? scenario : manifests;
      if (source.empty()) {
        std::cerr << "error: prototype-eval needs --manifests or --scenario\n";
        return 2;
      }
      check(cicbm_prototype_eval(source.c_str(), nullptr, &text));
    } else if (audit->parsed()) {
      const std::string source = manifests.empty() ? scenario : manifests;
      if (source.empty()) {
        std::cerr << "error: audit needs --manifests or --scenario\n";
        return 2;
      }
      check(cicbm_audit(out.c_str(), source.c_str(), &text));
    }
    print_and_free(text);
  } catch (const Failure& f) {
    std::cerr << "error [" << cicbm_last_error_kind() << "]: " << cicbm_last_error() << "\n";
    return exit_code(f.status);
  }
  return 0;
}
