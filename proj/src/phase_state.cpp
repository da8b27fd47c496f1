#include "cicbm/phase_state.hpp"

#include <algorithm>
#include <set>

#include "cicbm/errors.hpp"

namespace cicbm {

using nlohmann::json;

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::Concepts: return "concepts";
    case Stage::Bottleneck: return "bottleneck";
    case Stage::Fit: return "fit";
    case Stage::Evaluated: return "evaluated";
  }
  return "unknown";
}

Stage parse_stage(const std::string& text) {
  for (Stage s : {Stage::Concepts, Stage::Bottleneck, Stage::Fit, Stage::Evaluated}) {
    if (text == to_string(s)) return s;
  }
  fail(ErrorKind::Format, "unknown stage '" + text + "'");
}

std::vector<int> PhaseState::class_ids_of_phase(int phase) const {
  std::vector<int> ids;
  for (const auto& c : classes)
    if (c.phase == phase) ids.push_back(c.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> PhaseState::class_ids_before(int phase) const {
  std::vector<int> ids;
  for (const auto& c : classes)
    if (c.phase < phase) ids.push_back(c.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool PhaseState::operator==(const PhaseState& o) const {
  return phase_id == o.phase_id && stage == o.stage && concepts == o.concepts && classes == o.classes &&
         class_name_embeddings == o.class_name_embeddings &&
         class_name_embeddings_2 == o.class_name_embeddings_2 && candidates_seen == o.candidates_seen &&
         bottleneck == o.bottleneck && previous_bottleneck == o.previous_bottleneck && predictor == o.predictor &&
         centroids == o.centroids && accuracy == o.accuracy && reports == o.reports;
}

void check_consistency(const PhaseState& s) {
  const auto m = static_cast<Eigen::Index>(s.concepts.size());
  require(s.class_name_embeddings.rows() == static_cast<Eigen::Index>(s.classes.size()), ErrorKind::Consistency,
          "class-name embedding rows do not match the class list");
  if (s.class_name_embeddings_2) {
    require(s.class_name_embeddings_2->rows() == static_cast<Eigen::Index>(s.classes.size()),
            ErrorKind::Consistency, "second class-name embedding rows do not match the class list");
  }
  if (s.stage != Stage::Concepts) {
    require(s.bottleneck.W.rows() == m, ErrorKind::Consistency,
            "bottleneck has " + std::to_string(s.bottleneck.W.rows()) + " rows but the concept set has " +
                std::to_string(m) + " concepts");
  }
  const bool fitted = s.stage == Stage::Fit || s.stage == Stage::Evaluated;
  if (fitted) {
    require(s.predictor.W.cols() == m, ErrorKind::Consistency,
            "predictor has " + std::to_string(s.predictor.W.cols()) + " columns but the concept set has " +
                std::to_string(m) + " concepts");
  }
  if (s.predictor.W.rows() > 0 || s.predictor.b.size() > 0 || !s.predictor.class_ids.empty()) {
    require(s.predictor.W.rows() == static_cast<Eigen::Index>(s.predictor.class_ids.size()) &&
                s.predictor.b.size() == s.predictor.W.rows(),
            ErrorKind::Consistency, "predictor rows, biases and class ids disagree");
  }
  if (s.bottleneck.W.rows() > 0 && !s.centroids.empty()) {
    require(s.centroids.entries().begin()->second.centroid.size() == s.bottleneck.W.cols(), ErrorKind::Consistency,
            "centroid dimension does not match the bottleneck");
  }
  std::set<int> ids;
  for (const auto& c : s.classes) {
    require(ids.insert(c.id).second, ErrorKind::Consistency, "duplicate class id " + std::to_string(c.id));
    require(c.phase >= 1 && c.phase <= s.phase_id, ErrorKind::Consistency, "class phase out of range");
  }
  if (fitted) {
    for (int id : s.predictor.class_ids) {
      require(ids.count(id) > 0, ErrorKind::Consistency, "predictor row for unknown class " + std::to_string(id));
      require(s.centroids.contains(id), ErrorKind::Consistency, "missing centroid for class " + std::to_string(id));
    }
  }
  if (s.stage == Stage::Evaluated) {
    require(s.accuracy.completed_rows() == static_cast<std::size_t>(s.phase_id), ErrorKind::Consistency,
            "accuracy history does not cover every phase");
  }
}

void quantize(PhaseState& s) {
  s.class_name_embeddings = quantize_f32(s.class_name_embeddings);
  if (s.class_name_embeddings_2) s.class_name_embeddings_2 = quantize_f32(*s.class_name_embeddings_2);
  s.bottleneck.W = quantize_f32(s.bottleneck.W);
  s.previous_bottleneck.W = quantize_f32(s.previous_bottleneck.W);
  s.predictor.W = quantize_f32(s.predictor.W);
  s.predictor.b = quantize_f32(s.predictor.b);
  CentroidStore store;
  for (const auto& [id, e] : s.centroids.entries()) {
    CentroidEntry q = e;
    q.centroid = quantize_f32(e.centroid);
    store.add(id, std::move(q));
  }
  s.centroids = std::move(store);
}

namespace {

Matrix stack_rows(const std::vector<const Vector*>& rows, Eigen::Index width) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i]->transpose();
  return m;
}

}  // namespace

void save_phase_state(const PhaseState& s, const fs::path& dir) {
  check_consistency(s);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create state directory '" + dir.string() + "': " + ec.message());

  json concepts = json::array();
  std::vector<const Vector*> emb, emb2;
  for (const auto& e : s.concepts.entries()) {
    concepts.push_back({{"id", e.id},
                        {"text", e.text},
                        {"introduced_phase", e.introduced_phase},
                        {"candidate_index", e.candidate_index},
                        {"has_embedding2", e.embedding2.has_value()}});
    emb.push_back(&e.embedding);
    if (e.embedding2) emb2.push_back(&*e.embedding2);
  }
  json classes = json::array();
  for (const auto& c : s.classes) classes.push_back({{"id", c.id}, {"name", c.name}, {"phase", c.phase}});
  json centroids = json::array();
  std::vector<const Vector*> cent;
  for (const auto& [id, e] : s.centroids.entries()) {
    centroids.push_back({{"class_id", id}, {"sample_count", e.sample_count}, {"phase", e.phase_introduced}});
    cent.push_back(&e.centroid);
  }
  json j = {{"schema_version", kStateSchemaVersion},
            {"phase_id", s.phase_id},
            {"stage", to_string(s.stage)},
            {"candidates_seen", s.candidates_seen},
            {"concepts", concepts},
            {"phase_counts", s.concepts.phase_counts()},
            {"classes", classes},
            {"has_class_names_2", s.class_name_embeddings_2.has_value()},
            {"bottleneck_phase", s.bottleneck.phase_id},
            {"previous_bottleneck_phase", s.previous_bottleneck.phase_id},
            {"predictor", {{"class_ids", s.predictor.class_ids}, {"lambda", s.predictor.lambda},
                           {"alpha", s.predictor.alpha}}},
            {"centroids", centroids},
            {"accuracy", {{"class_counts", s.accuracy.class_counts()}, {"rows", s.accuracy.rows()}}},
            {"reports", s.reports}};

  const Eigen::Index e_dim = emb.empty() ? 0 : emb.front()->size();
  const Eigen::Index e2_dim = emb2.empty() ? 0 : emb2.front()->size();
  const Eigen::Index c_dim = cent.empty() ? 0 : cent.front()->size();
  write_matrix(stack_rows(emb, e_dim), dir / "concept_embeddings.bin");
  write_matrix(stack_rows(emb2, e2_dim), dir / "concept_embeddings_2.bin");
  write_matrix(s.class_name_embeddings, dir / "class_names.bin");
  if (s.class_name_embeddings_2) write_matrix(*s.class_name_embeddings_2, dir / "class_names_2.bin");
  write_matrix(s.bottleneck.W, dir / "bottleneck.bin");
  write_matrix(s.previous_bottleneck.W, dir / "previous_bottleneck.bin");
  write_matrix(s.predictor.W, dir / "predictor_W.bin");
  write_vector(s.predictor.b, dir / "predictor_b.bin");
  write_matrix(stack_rows(cent, c_dim), dir / "centroids.bin");
  // Written last: its presence marks a complete state.
  write_text_file(dir / "state.json", j.dump(2) + "\n");
}

PhaseState load_phase_state(const fs::path& dir) {
  json j;
  try {
    j = json::parse(read_text_file(dir / "state.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "malformed state.json in '" + dir.string() + "': " + e.what());
  }
  PhaseState s;
  try {
    const int version = j.at("schema_version").get<int>();
    require(version <= kStateSchemaVersion, ErrorKind::Version,
            "state schema version " + std::to_string(version) + " is newer than supported version " +
                std::to_string(kStateSchemaVersion));
    require(version == kStateSchemaVersion, ErrorKind::Version,
            "unsupported state schema version " + std::to_string(version));
    s.phase_id = j.at("phase_id").get<int>();
    s.stage = parse_stage(j.at("stage").get<std::string>());
    s.candidates_seen = j.at("candidates_seen").get<std::size_t>();

    const Matrix emb = read_matrix(dir / "concept_embeddings.bin");
    const Matrix emb2 = read_matrix(dir / "concept_embeddings_2.bin");
    const auto& cj = j.at("concepts");
    require(emb.rows() == static_cast<Eigen::Index>(cj.size()), ErrorKind::Consistency,
            "concept embedding rows do not match the concept list");
    std::vector<ConceptEntry> entries;
    Eigen::Index row2 = 0;
    for (std::size_t i = 0; i < cj.size(); ++i) {
      ConceptEntry e;
      e.id = cj[i].at("id").get<std::size_t>();
      e.text = cj[i].at("text").get<std::string>();
      e.introduced_phase = cj[i].at("introduced_phase").get<int>();
      e.candidate_index = cj[i].at("candidate_index").get<std::size_t>();
      e.embedding = emb.row(static_cast<Eigen::Index>(i)).transpose();
      if (cj[i].at("has_embedding2").get<bool>()) {
        require(row2 < emb2.rows(), ErrorKind::Consistency, "missing second-space concept embeddings");
        e.embedding2 = emb2.row(row2++).transpose();
      }
      entries.push_back(std::move(e));
    }
    require(row2 == emb2.rows(), ErrorKind::Consistency, "extra second-space concept embeddings");
    s.concepts = ConceptSet::restore(std::move(entries),
                                     j.at("phase_counts").get<std::vector<std::pair<int, std::size_t>>>());

    for (const auto& c : j.at("classes"))
      s.classes.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(), c.at("phase").get<int>()});
    s.class_name_embeddings = read_matrix(dir / "class_names.bin");
    if (j.at("has_class_names_2").get<bool>()) s.class_name_embeddings_2 = read_matrix(dir / "class_names_2.bin");

    s.bottleneck.W = read_matrix(dir / "bottleneck.bin");
    s.bottleneck.phase_id = j.at("bottleneck_phase").get<int>();
    s.previous_bottleneck.W = read_matrix(dir / "previous_bottleneck.bin");
    s.previous_bottleneck.phase_id = j.at("previous_bottleneck_phase").get<int>();

    const auto& pj = j.at("predictor");
    s.predictor.W = read_matrix(dir / "predictor_W.bin");
    s.predictor.b = read_vector(dir / "predictor_b.bin");
    s.predictor.class_ids = pj.at("class_ids").get<std::vector<int>>();
    s.predictor.lambda = pj.at("lambda").get<double>();
    s.predictor.alpha = pj.at("alpha").get<double>();

    const Matrix cent = read_matrix(dir / "centroids.bin");
    const auto& centj = j.at("centroids");
    require(cent.rows() == static_cast<Eigen::Index>(centj.size()), ErrorKind::Consistency,
            "centroid rows do not match the centroid list");
    for (std::size_t i = 0; i < centj.size(); ++i) {
      CentroidEntry e;
      e.centroid = cent.row(static_cast<Eigen::Index>(i)).transpose();
      e.sample_count = centj[i].at("sample_count").get<std::size_t>();
      e.phase_introduced = centj[i].at("phase").get<int>();
      s.centroids.add(centj[i].at("class_id").get<int>(), std::move(e));
    }

    const auto& aj = j.at("accuracy");
    s.accuracy = AccuracyMatrix(aj.at("class_counts").get<std::vector<std::size_t>>());
    for (const auto& row : aj.at("rows")) s.accuracy.append_row(row.get<std::vector<double>>());
    s.reports = j.at("reports");
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, "state.json in '" + dir.string() + "': " + e.what());
  }
  check_consistency(s);
  return s;
}

}  // namespace cicbm
