#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cicbm/types.hpp"

namespace cicbm {

namespace fs = std::filesystem;

// Binary tensor file ("CIMB"):
//   bytes 0-3  magic "CIMB"
//   byte  4    format version (1)
//   byte  5    dtype tag (1 = float32, 2 = int32)
//   bytes 6-7  rank, uint16 little-endian
//   rank x uint64 little-endian dims
//   row-major little-endian payload
enum class DType : std::uint8_t { Float32 = 1, Int32 = 2 };

inline constexpr std::uint8_t kMatrixFormatVersion = 1;

struct Tensor {
  DType dtype = DType::Float32;
  std::vector<std::uint64_t> dims;
  std::vector<float> f32;
  std::vector<std::int32_t> i32;

  std::uint64_t element_count() const;
};

Tensor read_tensor(const fs::path& path);
void write_tensor(const Tensor& tensor, const fs::path& path);

// Rank-2 float32 files. Values are widened to float64 on read and narrowed on
// write, so matrices whose entries are float32-representable round-trip
// bit-exactly.
Matrix read_matrix(const fs::path& path);
void write_matrix(const Matrix& matrix, const fs::path& path);

// Rank-1 float32 files.
Vector read_vector(const fs::path& path);
void write_vector(const Vector& vector, const fs::path& path);

// Rank-1 int32 files.
std::vector<int> read_labels(const fs::path& path);
void write_labels(std::span<const int> labels, const fs::path& path);

// Rounds every entry to the nearest float32, i.e. to what a write/read cycle
// would produce.
Matrix quantize_f32(const Matrix& m);
Vector quantize_f32(const Vector& v);

enum class Split { Train, Test };

struct FeatureMatrix {
  Matrix data;              // N x d backbone features
  std::vector<int> labels;  // N class ids
  int phase_id = 1;
  Split split = Split::Train;

  std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(data.cols()); }
};

struct ActivationMatrix {
  Matrix data;                       // N x M
  std::vector<std::size_t> concept_ids;  // one per column
};

void validate(const FeatureMatrix& features);
void validate(const ActivationMatrix& activations);

// Features with their label sidecar.
FeatureMatrix load_feature_matrix(const fs::path& features, const fs::path& labels,
                                  int phase_id, Split split);

struct PhaseManifest {
  int phase_id = 0;
  std::vector<int> class_ids;
  std::vector<std::string> class_names;
  fs::path train_features;
  fs::path train_labels;
  fs::path test_features;
  fs::path test_labels;
  fs::path train_activations;
  fs::path test_activations;
  fs::path concept_candidates;
  fs::path class_name_embeddings;
  std::optional<fs::path> class_name_embeddings_2;
  fs::path source;  // the manifest file itself
};

// Parses one manifest, resolves relative paths against its directory, checks
// that every referenced file exists and that its class ids are disjoint from
// all manifests in `earlier`.
PhaseManifest load_phase_manifest(const fs::path& path,
                                  std::span<const PhaseManifest> earlier = {});

// Loads every *.json manifest in a directory, ordered by phase_id. Phase ids
// must be exactly 1..T.
std::vector<PhaseManifest> load_manifest_dir(const fs::path& dir);

// Reads a whole file into a string (I/O error with path context on failure).
std::string read_text_file(const fs::path& path);
// Writes through a temporary sibling and renames into place.
void write_text_file(const fs::path& path, const std::string& content);

}  // namespace cicbm
