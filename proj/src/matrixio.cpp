#include "cicbm/matrixio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "cicbm/errors.hpp"
#include "json.hpp"

namespace cicbm {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Disjointness: return "disjointness";
    case ErrorKind::Consistency: return "consistency";
    case ErrorKind::StaleReport: return "stale-report";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Format: return "format";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Version: return "version";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

namespace {

constexpr std::array<char, 4> kMagic = {'C', 'I', 'M', 'B'};
constexpr std::size_t kFixedHeader = 8;

template <class T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  U bits;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

template <class T>
T get_le(const unsigned char* p) {
  using U = std::make_unsigned_t<T>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  }
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }

std::string describe(const fs::path& path) { return "'" + path.string() + "'"; }

void check_finite_payload(const std::vector<float>& values, const fs::path& path) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::Validation, "non-finite value in " + describe(path));
    }
  }
}

}  // namespace

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + describe(path));
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::Io, "read failure on " + describe(path));
  return content;
}

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::Io, "cannot create directory for " + describe(path) + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + describe(tmp) + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorKind::Io, "write failure on " + describe(tmp));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move " + describe(tmp) + " to " + describe(path) + ": " + ec.message());
}

Tensor read_tensor(const fs::path& path) {
  const std::string raw = read_text_file(path);
  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
  if (raw.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), raw.begin())) {
    fail(ErrorKind::Format, "bad magic in " + describe(path));
  }
  if (raw.size() < kFixedHeader) fail(ErrorKind::Corruption, "truncated header in " + describe(path));
  if (bytes[4] != kMatrixFormatVersion) {
    fail(ErrorKind::Version, "unsupported matrix format version " + std::to_string(bytes[4]) + " in " + describe(path));
  }
  Tensor t;
  if (bytes[5] == static_cast<unsigned char>(DType::Float32)) {
    t.dtype = DType::Float32;
  } else if (bytes[5] == static_cast<unsigned char>(DType::Int32)) {
    t.dtype = DType::Int32;
  } else {
    fail(ErrorKind::Format, "unknown dtype tag " + std::to_string(bytes[5]) + " in " + describe(path));
  }
  const auto rank = get_le<std::uint16_t>(bytes + 6);
  const std::size_t header = kFixedHeader + 8u * rank;
  if (raw.size() < header) fail(ErrorKind::Corruption, "truncated dims in " + describe(path));
  t.dims.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) t.dims[i] = get_le<std::uint64_t>(bytes + kFixedHeader + 8 * i);

  const std::uint64_t count = t.element_count();
  const std::uint64_t expected = count * 4u;
  if (raw.size() - header != expected) {
    std::ostringstream msg;
    msg << "payload of " << (raw.size() - header) << " bytes, expected " << expected << " in " << describe(path);
    fail(ErrorKind::Corruption, msg.str());
  }
  const unsigned char* payload = bytes + header;
  if (t.dtype == DType::Float32) {
    t.f32.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      t.f32[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload + 4 * i));
    }
    check_finite_payload(t.f32, path);
  } else {
    t.i32.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) t.i32[i] = get_le<std::int32_t>(payload + 4 * i);
  }
  return t;
}

void write_tensor(const Tensor& t, const fs::path& path) {
  const std::uint64_t count = t.element_count();
  if (t.dtype == DType::Float32) {
    require(t.f32.size() == count, ErrorKind::Dimension, "tensor payload does not match dims");
    check_finite_payload(t.f32, path);
  } else {
    require(t.i32.size() == count, ErrorKind::Dimension, "tensor payload does not match dims");
  }
  require(t.dims.size() <= 0xFFFF, ErrorKind::Validation, "tensor rank too large");
  std::string out;
  out.reserve(kFixedHeader + 8 * t.dims.size() + 4 * count);
  out.append(kMagic.data(), kMagic.size());
  out.push_back(static_cast<char>(kMatrixFormatVersion));
  out.push_back(static_cast<char>(t.dtype));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.dims.size()));
  for (auto d : t.dims) put_le<std::uint64_t>(out, d);
  if (t.dtype == DType::Float32) {
    for (float v : t.f32) put_le<std::uint32_t>(out, float_bits(v));
  } else {
    for (auto v : t.i32) put_le<std::int32_t>(out, v);
  }
  write_text_file(path, out);
}

Matrix read_matrix(const fs::path& path) {
  Tensor t = read_tensor(path);
  require(t.dtype == DType::Float32, ErrorKind::Format, "expected float32 matrix in " + describe(path));
  require(t.dims.size() == 2, ErrorKind::Format, "expected rank-2 tensor in " + describe(path));
  Matrix m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<double>(t.f32[k++]);
  return m;
}

void write_matrix(const Matrix& matrix, const fs::path& path) {
  require(matrix.allFinite(), ErrorKind::Validation, "refusing to write non-finite matrix to " + describe(path));
  Tensor t;
  t.dtype = DType::Float32;
  t.dims = {static_cast<std::uint64_t>(matrix.rows()), static_cast<std::uint64_t>(matrix.cols())};
  t.f32.reserve(static_cast<std::size_t>(matrix.size()));
  for (Eigen::Index r = 0; r < matrix.rows(); ++r)
    for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
      const float f = static_cast<float>(matrix(r, c));
      require(std::isfinite(f), ErrorKind::Validation, "value overflows float32 in " + describe(path));
      t.f32.push_back(f);
    }
  write_tensor(t, path);
}

Vector read_vector(const fs::path& path) {
  Tensor t = read_tensor(path);
  require(t.dtype == DType::Float32, ErrorKind::Format, "expected float32 vector in " + describe(path));
  require(t.dims.size() == 1, ErrorKind::Format, "expected rank-1 tensor in " + describe(path));
  Vector v(static_cast<Eigen::Index>(t.dims[0]));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<double>(t.f32[static_cast<std::size_t>(i)]);
  return v;
}

void write_vector(const Vector& vector, const fs::path& path) {
  require(vector.allFinite(), ErrorKind::Validation, "refusing to write non-finite vector to " + describe(path));
  Tensor t;
  t.dtype = DType::Float32;
  t.dims = {static_cast<std::uint64_t>(vector.size())};
  for (Eigen::Index i = 0; i < vector.size(); ++i) {
    const float f = static_cast<float>(vector(i));
    require(std::isfinite(f), ErrorKind::Validation, "value overflows float32 in " + describe(path));
    t.f32.push_back(f);
  }
  write_tensor(t, path);
}

std::vector<int> read_labels(const fs::path& path) {
  Tensor t = read_tensor(path);
  require(t.dtype == DType::Int32, ErrorKind::Format, "expected int32 labels in " + describe(path));
  require(t.dims.size() == 1, ErrorKind::Format, "expected rank-1 labels in " + describe(path));
  return {t.i32.begin(), t.i32.end()};
}

void write_labels(std::span<const int> labels, const fs::path& path) {
  Tensor t;
  t.dtype = DType::Int32;
  t.dims = {static_cast<std::uint64_t>(labels.size())};
  t.i32.assign(labels.begin(), labels.end());
  write_tensor(t, path);
}

Matrix quantize_f32(const Matrix& m) {
  return m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

Vector quantize_f32(const Vector& v) {
  return v.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

void validate(const FeatureMatrix& f) {
  require(f.data.allFinite(), ErrorKind::Validation, "feature matrix has non-finite entries");
  require(f.labels.size() == f.rows(), ErrorKind::Dimension,
          "feature matrix has " + std::to_string(f.rows()) + " rows but " +
              std::to_string(f.labels.size()) + " labels");
  require(f.rows() >= 1 && f.dim() >= 1, ErrorKind::Validation, "feature matrix must be at least 1x1");
  require(f.phase_id >= 1, ErrorKind::Validation, "phase id must be >= 1");
}

void validate(const ActivationMatrix& a) {
  require(a.data.allFinite(), ErrorKind::Validation, "activation matrix has non-finite entries");
  require(static_cast<std::size_t>(a.data.cols()) == a.concept_ids.size(), ErrorKind::Dimension,
          "activation column count does not match concept ids");
}

FeatureMatrix load_feature_matrix(const fs::path& features, const fs::path& labels, int phase_id,
                                  Split split) {
  FeatureMatrix f;
  f.data = read_matrix(features);
  f.labels = read_labels(labels);
  f.phase_id = phase_id;
  f.split = split;
  validate(f);
  return f;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

const std::set<std::string>& manifest_keys() {
  static const std::set<std::string> keys = {
      "phase_id",          "class_ids",        "class_names",          "train_features",
      "test_features",     "train_labels",     "test_labels",          "train_activations",
      "test_activations",  "concept_candidates", "class_name_embeddings", "class_name_embeddings_2"};
  return keys;
}

}  // namespace

PhaseManifest load_phase_manifest(const fs::path& path, std::span<const PhaseManifest> earlier) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, "malformed manifest " + describe(path) + ": " + e.what());
  }
  require(j.is_object(), ErrorKind::Format, "manifest " + describe(path) + " is not an object");
  for (const auto& [key, _] : j.items()) {
    require(manifest_keys().count(key) > 0, ErrorKind::Validation,
            "unknown manifest key '" + key + "' in " + describe(path));
  }
  const fs::path base = path.parent_path();
  PhaseManifest m;
  m.source = path;
  try {
    m.phase_id = j.at("phase_id").get<int>();
    m.class_ids = j.at("class_ids").get<std::vector<int>>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.train_features = resolve(base, j.at("train_features").get<std::string>());
    m.test_features = resolve(base, j.at("test_features").get<std::string>());
    m.train_activations = resolve(base, j.at("train_activations").get<std::string>());
    m.test_activations = resolve(base, j.at("test_activations").get<std::string>());
    m.concept_candidates = resolve(base, j.at("concept_candidates").get<std::string>());
    m.class_name_embeddings = resolve(base, j.at("class_name_embeddings").get<std::string>());
    m.train_labels = j.contains("train_labels")
                         ? resolve(base, j["train_labels"].get<std::string>())
                         : fs::path(m.train_features.string() + ".labels");
    m.test_labels = j.contains("test_labels") ? resolve(base, j["test_labels"].get<std::string>())
                                              : fs::path(m.test_features.string() + ".labels");
    if (j.contains("class_name_embeddings_2")) {
      m.class_name_embeddings_2 = resolve(base, j["class_name_embeddings_2"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, "manifest " + describe(path) + ": " + e.what());
  }

  require(m.phase_id >= 1, ErrorKind::Validation, "phase_id must be >= 1 in " + describe(path));
  require(!m.class_ids.empty(), ErrorKind::Validation, "manifest declares no classes: " + describe(path));
  require(m.class_ids.size() == m.class_names.size(), ErrorKind::Validation,
          "class_ids and class_names differ in length in " + describe(path));
  std::set<int> own(m.class_ids.begin(), m.class_ids.end());
  require(own.size() == m.class_ids.size(), ErrorKind::Disjointness,
          "duplicate class id within " + describe(path));
  for (const auto& prev : earlier) {
    require(prev.phase_id != m.phase_id, ErrorKind::Validation,
            "phase " + std::to_string(m.phase_id) + " declared twice");
    for (int c : prev.class_ids) {
      if (own.count(c)) {
        fail(ErrorKind::Disjointness, "class id " + std::to_string(c) + " in phase " +
                                          std::to_string(m.phase_id) + " was already declared in phase " +
                                          std::to_string(prev.phase_id));
      }
    }
  }

  std::vector<const fs::path*> files = {&m.train_features,    &m.train_labels,      &m.test_features,
                                        &m.test_labels,       &m.train_activations, &m.test_activations,
                                        &m.concept_candidates, &m.class_name_embeddings};
  if (m.class_name_embeddings_2) files.push_back(&*m.class_name_embeddings_2);
  for (const fs::path* f : files) {
    require(fs::exists(*f), ErrorKind::Io,
            "manifest " + describe(path) + " references missing file " + describe(*f));
  }
  return m;
}

std::vector<PhaseManifest> load_manifest_dir(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::Io, "manifest directory " + describe(dir) + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  // Parse once without cross-checks to learn the phase order, then validate in
  // phase order so disjointness errors name the later phase.
  std::vector<std::pair<int, fs::path>> order;
  for (const auto& f : files) {
    try {
      auto j = nlohmann::json::parse(read_text_file(f));
      order.emplace_back(j.at("phase_id").get<int>(), f);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, "malformed manifest " + describe(f) + ": " + e.what());
    }
  }
  std::sort(order.begin(), order.end());
  std::vector<PhaseManifest> manifests;
  for (const auto& [phase, f] : order) {
    manifests.push_back(load_phase_manifest(f, manifests));
  }
  require(!manifests.empty(), ErrorKind::Validation, "no manifests in " + describe(dir));
  for (std::size_t i = 0; i < manifests.size(); ++i) {
    require(manifests[i].phase_id == static_cast<int>(i) + 1, ErrorKind::Validation,
            "manifest phases must be numbered 1..T without gaps");
  }
  return manifests;
}

}  // namespace cicbm
