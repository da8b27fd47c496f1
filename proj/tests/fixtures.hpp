#pragma once

// Test helpers: scratch directories and a writer that dumps in-memory phases
// as manifest directories.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "cicbm/gaussian_lab.hpp"
#include "cicbm/matrixio.hpp"
#include "cicbm/protocol.hpp"
#include "json.hpp"

namespace cicbm::testing {

// Removed on destruction unless CICBM_KEEP_TEST_DIRS is set.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("cicbm_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    if (std::getenv("CICBM_KEEP_TEST_DIRS") == nullptr) {
      std::error_code ec;
      fs::remove_all(path_, ec);
    }
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Relative path -> bytes of every regular file under `root`.
inline std::vector<std::pair<std::string, std::string>> tree_bytes(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), file_bytes(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Writes phase_<t>/ data files plus phase_<t>.json manifests into `dir`.
inline void write_manifests(const std::vector<PhaseData>& phases, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& p : phases) {
    const std::string t = std::to_string(p.phase_id);
    const fs::path sub = dir / ("data_" + t);
    fs::create_directories(sub);
    write_matrix(p.train.data, sub / "train.bin");
    write_labels(p.train.labels, sub / "train.bin.labels");
    write_matrix(p.test.data, sub / "test.bin");
    write_labels(p.test.labels, sub / "test.bin.labels");
    write_matrix(p.train_activations, sub / "train_act.bin");
    write_matrix(p.test_activations, sub / "test_act.bin");
    write_matrix(p.class_name_embeddings, sub / "class_names.bin");
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : p.candidates) {
      nlohmann::json rec{{"text", c.text},
                         {"embedding", std::vector<double>(c.embedding.data(), c.embedding.data() + c.embedding.size())}};
      if (c.embedding2) {
        rec["embedding2"] = std::vector<double>(c.embedding2->data(), c.embedding2->data() + c.embedding2->size());
      }
      cands.push_back(rec);
    }
    write_text_file(sub / "candidates.json", nlohmann::json{{"candidates", cands}}.dump());
    nlohmann::json m{{"phase_id", p.phase_id},
                     {"class_ids", p.class_ids},
                     {"class_names", p.class_names},
                     {"train_features", "data_" + t + "/train.bin"},
                     {"test_features", "data_" + t + "/test.bin"},
                     {"train_activations", "data_" + t + "/train_act.bin"},
                     {"test_activations", "data_" + t + "/test_act.bin"},
                     {"concept_candidates", "data_" + t + "/candidates.json"},
                     {"class_name_embeddings", "data_" + t + "/class_names.bin"}};
    if (p.class_name_embeddings_2) {
      write_matrix(*p.class_name_embeddings_2, sub / "class_names_2.bin");
      m["class_name_embeddings_2"] = "data_" + t + "/class_names_2.bin";
    }
    write_text_file(dir / ("phase_" + t + ".json"), m.dump(2));
  }
}

inline void set_equal_priors(ScenarioConfig& s) {
  std::size_t n = 0;
  for (const auto& p : s.phases) n += p.size();
  for (auto& p : s.phases)
    for (auto& c : p) c.prior = 1.0 / static_cast<double>(n);
}

// A small three-phase scenario that runs in well under a second.
inline ScenarioConfig tiny_scenario(std::uint64_t seed = 7) {
  ScenarioConfig s;
  s.name = "tiny";
  s.seed = seed;
  s.train_per_class = 40;
  s.test_per_class = 20;
  s.concepts.concepts_per_phase = 8;
  s.concepts.embed_dim = 12;
  s.concepts.duplicate_fraction = 0.25;
  const int d = 8;
  int id = 0;
  for (int t = 1; t <= 3; ++t) {
    std::vector<GaussianClass> phase;
    for (int k = 0; k < 2; ++k, ++id) {
      GaussianClass c;
      c.class_id = id;
      c.phase_id = t;
      c.mean = Vector::Zero(d);
      c.mean(id % d) = 5.0;
      c.mean((id + 3) % d) = 1.5;
      c.sigma = 0.8 + 0.1 * t;
      phase.push_back(c);
    }
    s.phases.push_back(phase);
  }
  set_equal_priors(s);
  return s;
}

inline Config fast_config() {
  Config c;
  c.bottleneck_steps = 60;
  c.target_nnz = {3, 5};
  return c;
}

}  // namespace cicbm::testing
