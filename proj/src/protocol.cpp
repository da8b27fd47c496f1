#include "cicbm/protocol.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include "cicbm/errors.hpp"
#include "cicbm/explain.hpp"
#include "cicbm/metrics.hpp"
#include "cicbm/pseudo.hpp"

namespace cicbm {

using nlohmann::json;

namespace {

Matrix normalized_rows(const Matrix& m, const std::string& what) {
  Matrix out = m;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    require(std::isfinite(n) && n > 0, ErrorKind::Validation, what + " row " + std::to_string(r) + " has zero norm");
    out.row(r) /= n;
  }
  return quantize_f32(out);
}

void check_labels(const FeatureMatrix& f, const std::vector<int>& class_ids, const std::string& what) {
  const std::set<int> allowed(class_ids.begin(), class_ids.end());
  for (int l : f.labels) {
    require(allowed.count(l) > 0, ErrorKind::Validation,
            what + " label " + std::to_string(l) + " is not a class of phase " + std::to_string(f.phase_id));
  }
}

Matrix rows_with_label(const FeatureMatrix& f, int label) {
  std::vector<Eigen::Index> rows;
  for (std::size_t r = 0; r < f.labels.size(); ++r)
    if (f.labels[r] == label) rows.push_back(static_cast<Eigen::Index>(r));
  Matrix out(static_cast<Eigen::Index>(rows.size()), f.data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = f.data.row(rows[i]);
  return out;
}

std::vector<int> sorted(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v;
}

json& current_report(PhaseState& state) {
  require(!state.reports.empty(), ErrorKind::Consistency, "phase report missing");
  return state.reports.back();
}

json map_to_json(const std::map<int, std::size_t>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Sources

ManifestSource::ManifestSource(const fs::path& dir) : manifests_(load_manifest_dir(dir)) {
  candidate_offsets_.push_back(0);
  for (const auto& m : manifests_) {
    const auto count = load_candidates(m.concept_candidates, 0).size();
    candidate_offsets_.push_back(candidate_offsets_.back() + count);
  }
}

FeatureMatrix ManifestSource::load_test(int phase) const {
  require(phase >= 1 && phase <= phase_count(), ErrorKind::Validation, "no manifest for phase " + std::to_string(phase));
  const auto& m = manifests_[static_cast<std::size_t>(phase - 1)];
  return load_feature_matrix(m.test_features, m.test_labels, phase, Split::Test);
}

FeatureMatrix ManifestSource::load_train(int phase) const {
  require(phase >= 1 && phase <= phase_count(), ErrorKind::Validation, "no manifest for phase " + std::to_string(phase));
  const auto& m = manifests_[static_cast<std::size_t>(phase - 1)];
  return load_feature_matrix(m.train_features, m.train_labels, phase, Split::Train);
}

PhaseData ManifestSource::load(int phase) const {
  require(phase >= 1 && phase <= phase_count(), ErrorKind::Validation, "no manifest for phase " + std::to_string(phase));
  const auto idx = static_cast<std::size_t>(phase - 1);
  const auto& m = manifests_[idx];
  PhaseData d;
  d.phase_id = phase;
  d.class_ids = m.class_ids;
  d.class_names = m.class_names;
  d.train = load_train(phase);
  d.test = load_test(phase);
  d.train_activations = read_matrix(m.train_activations);
  d.test_activations = read_matrix(m.test_activations);
  d.candidates_before = candidate_offsets_[idx];
  d.candidates = load_candidates(m.concept_candidates, d.candidates_before);
  d.class_name_embeddings = normalized_rows(read_matrix(m.class_name_embeddings), "class-name embedding");
  if (m.class_name_embeddings_2) {
    d.class_name_embeddings_2 = normalized_rows(read_matrix(*m.class_name_embeddings_2), "class-name embedding");
  }
  d.provenance = m.source.string();
  return d;
}

MemorySource::MemorySource(std::vector<PhaseData> phases) : phases_(std::move(phases)) {
  for (std::size_t i = 0; i < phases_.size(); ++i) {
    require(phases_[i].phase_id == static_cast<int>(i) + 1, ErrorKind::Validation, "phases must be numbered 1..T");
  }
}

PhaseData MemorySource::load(int phase) const {
  require(phase >= 1 && phase <= phase_count(), ErrorKind::Validation, "no data for phase " + std::to_string(phase));
  return phases_[static_cast<std::size_t>(phase - 1)];
}

FeatureMatrix MemorySource::load_test(int phase) const {
  require(phase >= 1 && phase <= phase_count(), ErrorKind::Validation, "no data for phase " + std::to_string(phase));
  return phases_[static_cast<std::size_t>(phase - 1)].test;
}

FeatureMatrix MemorySource::load_train(int phase) const {
  require(phase >= 1 && phase <= phase_count(), ErrorKind::Validation, "no data for phase " + std::to_string(phase));
  return phases_[static_cast<std::size_t>(phase - 1)].train;
}

// ---------------------------------------------------------------------------
// Helpers

Matrix concept_columns(const Matrix& activations, const ConceptSet& concepts) {
  Matrix out(activations.rows(), static_cast<Eigen::Index>(concepts.size()));
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(concepts[i].candidate_index);
    require(col < activations.cols(), ErrorKind::Dimension,
            "activation matrix has " + std::to_string(activations.cols()) + " columns; concept '" +
                concepts[i].text + "' needs column " + std::to_string(col));
    out.col(static_cast<Eigen::Index>(i)) = activations.col(col);
  }
  return out;
}

Matrix concept_activations(const Matrix& features, const BottleneckWeights& bottleneck) {
  require(features.cols() == bottleneck.W.cols(), ErrorKind::Dimension,
          "feature dimension " + std::to_string(features.cols()) + " does not match bottleneck dimension " +
              std::to_string(bottleneck.W.cols()));
  return features * bottleneck.W.transpose();
}

// ---------------------------------------------------------------------------
// Stages

void stage_concepts(PhaseState& state, const PhaseData& data, const Config& config) {
  const int t = data.phase_id;
  require(state.stage == Stage::Evaluated && state.phase_id == t - 1, ErrorKind::Validation,
          "phase " + std::to_string(t) + " needs the evaluated state of phase " + std::to_string(t - 1));
  require(data.candidates_before == state.candidates_seen, ErrorKind::Consistency,
          "candidate offset of phase " + std::to_string(t) + " does not match the state");
  require(data.class_names.size() == data.class_ids.size(), ErrorKind::Validation,
          "class_names and class_ids differ in length");
  require(data.class_name_embeddings.rows() == static_cast<Eigen::Index>(data.class_ids.size()),
          ErrorKind::Dimension, "one class-name embedding per class is required");
  for (int c : data.class_ids) {
    for (const auto& old : state.classes) {
      require(old.id != c, ErrorKind::Disjointness,
              "class " + std::to_string(c) + " was already introduced in phase " + std::to_string(old.phase));
    }
  }
  validate(data.train);
  validate(data.test);
  check_labels(data.train, data.class_ids, "train");
  check_labels(data.test, data.class_ids, "test");
  if (state.bottleneck.W.cols() > 0) {
    require(data.train.data.cols() == state.bottleneck.W.cols(), ErrorKind::Dimension,
            "feature dimension changed between phases");
  }
  const std::size_t cumulative = data.candidates_before + data.candidates.size();
  require(data.train_activations.cols() == static_cast<Eigen::Index>(cumulative) &&
              data.test_activations.cols() == static_cast<Eigen::Index>(cumulative),
          ErrorKind::Dimension,
          "phase " + std::to_string(t) + " activations need " + std::to_string(cumulative) + " columns");
  require(data.train_activations.rows() == data.train.data.rows() &&
              data.test_activations.rows() == data.test.data.rows(),
          ErrorKind::Dimension, "activation rows do not match the feature rows");

  // Optional concept masking: a seeded fraction of this phase's candidates is
  // withheld before screening.
  std::vector<Candidate> kept = data.candidates;
  std::size_t masked = 0;
  if (config.mask_concepts > 0 && !kept.empty()) {
    masked = static_cast<std::size_t>(std::floor(static_cast<double>(kept.size()) * config.mask_concepts / 100.0));
    std::vector<std::size_t> order(kept.size());
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(t), 0x4D41534Bu};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> drop(kept.size(), 0);
    for (std::size_t i = 0; i < masked; ++i) drop[order[i]] = 1;
    std::vector<Candidate> filtered;
    for (std::size_t i = 0; i < kept.size(); ++i)
      if (!drop[i]) filtered.push_back(std::move(kept[i]));
    kept = std::move(filtered);
  }

  // Class names seen so far, including this phase's.
  const Eigen::Index k_old = state.class_name_embeddings.rows();
  const Eigen::Index k_new = data.class_name_embeddings.rows();
  if (k_old > 0) {
    require(data.class_name_embeddings.cols() == state.class_name_embeddings.cols(), ErrorKind::Dimension,
            "class-name embedding dimension changed between phases");
  }
  Matrix names(k_old + k_new, data.class_name_embeddings.cols());
  if (k_old > 0) names.topRows(k_old) = state.class_name_embeddings;
  names.bottomRows(k_new) = data.class_name_embeddings;
  std::optional<Matrix> names2;
  const bool second = data.class_name_embeddings_2 && (k_old == 0 || state.class_name_embeddings_2);
  if (second) {
    require(data.class_name_embeddings_2->rows() == k_new, ErrorKind::Dimension,
            "one second-space class-name embedding per class is required");
    names2 = Matrix(k_old + k_new, data.class_name_embeddings_2->cols());
    if (k_old > 0) names2->topRows(k_old) = *state.class_name_embeddings_2;
    names2->bottomRows(k_new) = *data.class_name_embeddings_2;
  }

  const FilterReport report = filter_candidates(kept, state.concepts, names, names2 ? &*names2 : nullptr,
                                                config.filter);
  const std::size_t m_prev = state.concepts.size();
  state.concepts = expand(state.concepts, report, t);

  for (std::size_t i = 0; i < data.class_ids.size(); ++i) {
    state.classes.push_back({data.class_ids[i], data.class_names[i], t});
  }
  state.class_name_embeddings = std::move(names);
  state.class_name_embeddings_2 = std::move(names2);
  state.candidates_seen = cumulative;
  state.previous_bottleneck = state.bottleneck;
  state.phase_id = t;
  state.stage = Stage::Concepts;
  state.accuracy.add_phase(data.class_ids.size());

  std::map<std::string, std::size_t> reasons{{"too_long", 0}, {"class_similar", 0}, {"duplicate", 0}};
  json rejected = json::array();
  for (const auto& r : report.rejected) {
    ++reasons[to_string(r.reason)];
    rejected.push_back({{"text", r.candidate.text}, {"reason", to_string(r.reason)}});
  }
  json accepted = json::array();
  for (const auto& a : report.accepted) accepted.push_back(a.text);
  state.reports.push_back({{"phase", t},
                           {"source", data.provenance},
                           {"classes", sorted(data.class_ids)},
                           {"concepts",
                            {{"candidates", data.candidates.size()},
                             {"masked", masked},
                             {"accepted", report.accepted.size()},
                             {"rejected_by_reason", reasons},
                             {"accepted_texts", accepted},
                             {"rejections", rejected},
                             {"previous_total", m_prev},
                             {"total", state.concepts.size()}}}});
  quantize(state);
}

void stage_bottleneck(PhaseState& state, const PhaseData& data, const Config& config) {
  require(state.stage == Stage::Concepts && state.phase_id == data.phase_id, ErrorKind::Validation,
          "bottleneck training needs the concept stage of phase " + std::to_string(data.phase_id));
  const Matrix& F = data.train.data;
  BottleneckWeights prev = state.previous_bottleneck;
  if (prev.W.rows() == 0) prev.W.resize(0, F.cols());
  require(prev.W.cols() == F.cols(), ErrorKind::Dimension, "feature dimension does not match the bottleneck");
  const Matrix P = concept_columns(data.train_activations, state.concepts);
  const auto m_prev = static_cast<std::size_t>(prev.W.rows());
  require(state.concepts.size() >= m_prev, ErrorKind::Consistency, "concept set shrank");

  std::optional<DistillationCache> cache;
  if (m_prev > 0) cache = make_distillation_cache(prev, F, config.standardize_eps);
  BottleneckWeights init = expand_bottleneck(prev, state.concepts.size() - m_prev, config.seed);
  init.phase_id = data.phase_id;
  const TrainConfig tc = config.train_config();
  TrainResult result = train_bottleneck(init, F, P, cache ? &*cache : nullptr, tc);
  state.bottleneck = std::move(result.weights);
  state.bottleneck.W = quantize_f32(state.bottleneck.W);

  json rep = {{"steps", tc.steps},
              {"accepted_steps", result.accepted_steps},
              {"beta", cache ? tc.beta : 0.0},
              {"initial_loss", result.trajectory.front()},
              {"final_loss", result.trajectory.back()},
              {"new_concepts", state.concepts.size() - m_prev}};
  if (state.bottleneck.W.rows() > 0 && F.rows() >= 2) {
    rep["alignment_loss"] = alignment_loss(state.bottleneck, F, P, config.standardize_eps);
  }
  if (cache) {
    rep["distillation_similarity"] = distillation_similarity(state.bottleneck, F, *cache, config.standardize_eps);
  }
  current_report(state)["bottleneck"] = rep;
  state.stage = Stage::Bottleneck;
  quantize(state);
}

std::vector<PseudoSet> build_pseudo_sets(const PhaseState& state, const PhaseData& data, const Config& config) {
  const std::vector<int> old_ids = state.class_ids_before(data.phase_id);
  const std::vector<int> new_ids = sorted(data.class_ids);
  std::vector<PseudoSet> sets;
  for (int p : old_ids) {
    PseudoSet s;
    s.past_class = p;
    s.donor_class = nearest_new_class(p, state.centroids, new_ids);
    const Matrix donor_rows = rows_with_label(data.train, s.donor_class);
    s.features = generate_pseudo_features(p, s.donor_class, donor_rows, state.centroids);
    s.concepts = config.prototype_in_concept_space
                     ? concept_space_pseudo_concepts(p, s.donor_class, donor_rows, state.centroids,
                                                     state.previous_bottleneck, state.bottleneck)
                     : project_pseudo_concepts(s.features, state.bottleneck);
    sets.push_back(std::move(s));
  }
  return sets;
}

void stage_fit(PhaseState& state, const PhaseData& data, const Config& config) {
  const int t = data.phase_id;
  require(state.stage == Stage::Bottleneck && state.phase_id == t, ErrorKind::Validation,
          "fitting needs the bottleneck stage of phase " + std::to_string(t));
  const std::vector<int> new_ids = sorted(data.class_ids);
  const std::vector<int> old_ids = state.class_ids_before(t);
  for (auto& [id, entry] : compute_centroids(data.train, new_ids)) {
    entry.centroid = quantize_f32(entry.centroid);
    entry.phase_introduced = t;
    state.centroids.add(id, std::move(entry));
  }

  TrainingBatch batch;
  const Matrix real = concept_activations(data.train.data, state.bottleneck);
  std::map<int, std::size_t> real_counts, pseudo_counts;
  for (int l : data.train.labels) ++real_counts[l];
  const bool use_pseudo = config.pseudo_concepts && !config.freeze_old && !old_ids.empty();
  std::vector<PseudoSet> sets;
  if (use_pseudo) sets = build_pseudo_sets(state, data, config);
  Eigen::Index rows = real.rows();
  for (const auto& s : sets) rows += s.concepts.rows();
  batch.X.resize(rows, real.cols());
  batch.X.topRows(real.rows()) = real;
  batch.labels = data.train.labels;
  batch.sources.assign(data.train.labels.size(), SampleSource::Real);
  Eigen::Index at = real.rows();
  json donors = json::object();
  for (const auto& s : sets) {
    batch.X.middleRows(at, s.concepts.rows()) = s.concepts;
    at += s.concepts.rows();
    batch.labels.insert(batch.labels.end(), static_cast<std::size_t>(s.concepts.rows()), s.past_class);
    batch.sources.insert(batch.sources.end(), static_cast<std::size_t>(s.concepts.rows()), SampleSource::Pseudo);
    pseudo_counts[s.past_class] += static_cast<std::size_t>(s.concepts.rows());
    donors[std::to_string(s.past_class)] = s.donor_class;
  }

  SparsePredictor base = state.predictor;
  if (base.W.rows() == 0 && base.class_ids.empty()) base = empty_predictor(0, config.alpha);
  base.alpha = config.alpha;
  const SparsePredictor init = expand_predictor(base, new_ids, state.concepts.size() - base.concept_count());
  const SolverConfig solver = config.solver_config();
  const std::span<const int> frozen = config.freeze_old ? std::span<const int>(old_ids) : std::span<const int>();

  json fit = json::object();
  FitInfo info;
  SparsePredictor out;
  auto run_fixed = [&](double lambda) {
    return config.freeze_old ? freeze_old_rows_fit(batch, init, lambda, config.alpha, solver, frozen, &info)
                             : fit_sparse_predictor(batch, init, lambda, config.alpha, solver, &info);
  };
  if (config.dense) {
    fit["mode"] = "dense";
    out = run_fixed(0.0);
  } else if (config.lambda) {
    fit["mode"] = "fixed";
    out = run_fixed(*config.lambda);
  } else {
    fit["mode"] = "search";
    LambdaSearchResult res = lambda_search(batch, init, config.alpha, config.target_nnz, solver, frozen);
    out = std::move(res.predictor);
    info = res.info;
    out.lambda = res.lambda;
    fit["in_range"] = res.in_range;
    fit["monotonicity_violation"] = res.monotonicity_violation;
    fit["target"] = {res.target.first, res.target.second};
    json path = json::array();
    for (const auto& p : res.path) path.push_back({{"lambda", p.lambda}, {"mean_nonzeros", p.mean_nonzeros}});
    fit["path"] = path;
  }
  out.alpha = config.alpha;
  state.predictor = std::move(out);
  state.predictor.W = quantize_f32(state.predictor.W);
  state.predictor.b = quantize_f32(state.predictor.b);

  const SparsityReport sp = sparsity_report(state.predictor);
  fit["lambda"] = state.predictor.lambda;
  fit["alpha"] = state.predictor.alpha;
  fit["freeze_old"] = config.freeze_old;
  fit["pseudo_concepts"] = use_pseudo;
  fit["iterations"] = info.iterations;
  fit["objective"] = info.objective;
  fit["kkt_residual"] = info.kkt_residual;
  fit["converged"] = info.converged;
  fit["zero_screened"] = info.zero_screened;
  fit["restarts"] = info.restarts;
  fit["nonzeros_per_class"] = sp.nonzeros_per_class;
  fit["mean_nonzeros_per_class"] = sp.mean_per_class;
  fit["sparsity_percent"] = sp.percent;
  fit["real_rows_per_class"] = map_to_json(real_counts);
  fit["pseudo_rows_per_class"] = map_to_json(pseudo_counts);
  fit["pseudo_donors"] = donors;
  if (!pseudo_counts.empty()) {
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& m : {real_counts, pseudo_counts})
      for (const auto& [k, v] : m) lo = std::min(lo, v), hi = std::max(hi, v);
    fit["row_count_imbalance"] = lo > 0 ? static_cast<double>(hi) / static_cast<double>(lo) : 0.0;
  }
  current_report(state)["fit"] = fit;
  state.stage = Stage::Fit;
  quantize(state);
}

std::vector<std::vector<int>> stage_evaluate(PhaseState& state, const PhaseSource& source, const PhaseData& data,
                                             const Config& /*config*/) {
  const int t = data.phase_id;
  require(state.stage == Stage::Fit && state.phase_id == t, ErrorKind::Validation,
          "evaluation needs the fitted state of phase " + std::to_string(t));
  std::vector<double> row;
  std::vector<std::vector<int>> predictions;
  std::size_t old_correct = 0, old_total = 0, new_correct = 0, new_total = 0;
  for (int j = 1; j <= t; ++j) {
    const FeatureMatrix test = j == t ? data.test : source.load_test(j);
    const Prediction pred = predict(state.predictor, concept_activations(test.data, state.bottleneck));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.labels.size(); ++i) correct += pred.labels[i] == test.labels[i];
    (j < t ? old_correct : new_correct) += correct;
    (j < t ? old_total : new_total) += test.labels.size();
    row.push_back(accuracy(pred.labels, test.labels));
    predictions.push_back(pred.labels);
  }
  state.accuracy.append_row(row);

  json ev = {{"accuracy_row", row}, {"avg_phase_accuracy", avg_phase_accuracy(state.accuracy, t)},
             {"avg_phase_accuracy_weighted", avg_phase_accuracy(state.accuracy, t, true)},
             {"new_class_accuracy", new_total ? static_cast<double>(new_correct) / static_cast<double>(new_total) : 0.0}};
  if (t >= 2) {
    ev["avg_phase_forgetting"] = avg_phase_forgetting(state.accuracy, t);
    ev["avg_phase_forgetting_weighted"] = avg_phase_forgetting(state.accuracy, t, true);
    ev["old_class_accuracy"] = old_total ? static_cast<double>(old_correct) / static_cast<double>(old_total) : 0.0;
  }
  if (state.concepts.size() > 0) {
    Matrix emb(static_cast<Eigen::Index>(state.concepts.size()), state.concepts[0].embedding.size());
    for (std::size_t i = 0; i < state.concepts.size(); ++i)
      emb.row(static_cast<Eigen::Index>(i)) = state.concepts[i].embedding.transpose();
    const FidelityResult fid =
        concept_fidelity(concept_activations(data.test.data, state.bottleneck),
                         concept_columns(data.test_activations, state.concepts), emb);
    ev["fidelity"] = {{"mean_similarity", fid.mean_similarity},
                      {"top5_accuracy", fid.top5_accuracy},
                      {"evaluated_units", fid.evaluated_units},
                      {"skipped_units", fid.skipped_units}};
  }
  const SparsityReport sp = sparsity_report(state.predictor);
  ev["sparsity"] = {{"percent", sp.percent},
                    {"total_nonzeros", sp.total_nonzeros},
                    {"mean_per_class", sp.mean_per_class},
                    {"nonzeros_per_class", sp.nonzeros_per_class}};
  current_report(state)["evaluation"] = ev;
  state.stage = Stage::Evaluated;
  quantize(state);
  return predictions;
}

// ---------------------------------------------------------------------------
// Protocol

json metrics_report(const PhaseState& state) {
  const AccuracyMatrix& a = state.accuracy;
  const std::size_t T = a.completed_rows();
  json A = json::array(), Aw = json::array(), F = json::array(), Fw = json::array();
  for (std::size_t t = 1; t <= T; ++t) {
    A.push_back(avg_phase_accuracy(a, t));
    Aw.push_back(avg_phase_accuracy(a, t, true));
    F.push_back(t >= 2 ? json(avg_phase_forgetting(a, t)) : json(nullptr));
    Fw.push_back(t >= 2 ? json(avg_phase_forgetting(a, t, true)) : json(nullptr));
  }
  json j = {{"phases", T},
            {"class_counts", a.class_counts()},
            {"accuracy_matrix", a.rows()},
            {"avg_phase_accuracy", A},
            {"avg_phase_forgetting", F},
            {"avg_incremental_accuracy", T >= 1 ? json(avg_incremental_accuracy(a)) : json(nullptr)},
            {"avg_incremental_forgetting", T >= 2 ? json(avg_incremental_forgetting(a)) : json(nullptr)},
            {"weighted",
             {{"avg_phase_accuracy", Aw},
              {"avg_phase_forgetting", Fw},
              {"avg_incremental_accuracy", T >= 1 ? json(avg_incremental_accuracy(a, true)) : json(nullptr)},
              {"avg_incremental_forgetting", T >= 2 ? json(avg_incremental_forgetting(a, true)) : json(nullptr)}}},
            {"concept_counts", concept_growth_curve(state.concepts)},
            {"phase_reports", state.reports}};
  return j;
}

fs::path phase_dir(const fs::path& out_dir, int phase) { return out_dir / ("phase_" + std::to_string(phase)); }

ProtocolResult run_protocol(const PhaseSource& source, const fs::path& out_dir, const Config& config, bool resume) {
  validate(config);
  const int T = source.phase_count();
  require(T >= 1, ErrorKind::Validation, "no phases to run");
  const bool persist = !out_dir.empty();
  if (persist) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    require(!ec, ErrorKind::Io, "cannot create '" + out_dir.string() + "': " + ec.message());
    write_text_file(out_dir / "config.json", to_json(config) + "\n");
  }

  PhaseState state;
  int start = 1;
  if (resume && persist) {
    for (int t = T; t >= 1; --t) {
      if (!fs::exists(phase_dir(out_dir, t) / "state.json")) continue;
      PhaseState loaded = load_phase_state(phase_dir(out_dir, t));
      if (loaded.stage != Stage::Evaluated || loaded.phase_id != t) continue;
      state = std::move(loaded);
      start = t + 1;
      break;
    }
  }

  for (int t = start; t <= T; ++t) {
    try {
      const PhaseData data = source.load(t);
      stage_concepts(state, data, config);
      stage_bottleneck(state, data, config);
      stage_fit(state, data, config);
      const auto predictions = stage_evaluate(state, source, data, config);
      if (persist) {
        const fs::path dir = phase_dir(out_dir, t);
        for (std::size_t j = 0; j < predictions.size(); ++j) {
          fs::create_directories(dir / "predictions");
          write_labels(predictions[j], dir / "predictions" / ("test_phase_" + std::to_string(j + 1) + ".bin"));
        }
        save_phase_state(state, dir);
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "phase " + std::to_string(t) + ": " + e.what());
    }
  }

  ProtocolResult result{std::move(state), json()};
  result.report = metrics_report(result.state);
  if (persist) write_text_file(out_dir / "report.json", result.report.dump(2) + "\n");
  return result;
}

namespace {

std::string row_key(const float* row, std::size_t n) {
  return std::string(reinterpret_cast<const char*>(row), n * sizeof(float));
}

}  // namespace

json audit_artifacts(const fs::path& out_dir, const PhaseSource& source) {
  require(fs::is_directory(out_dir), ErrorKind::Io, "'" + out_dir.string() + "' is not a directory");
  std::unordered_set<std::string> raw;
  Eigen::Index d = -1;
  for (int p = 1; p <= source.phase_count(); ++p) {
    for (const FeatureMatrix& f : {source.load_train(p), source.load_test(p)}) {
      d = f.data.cols();
      const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = f.data.cast<float>();
      for (Eigen::Index r = 0; r < rows.rows(); ++r) raw.insert(row_key(rows.row(r).data(), static_cast<std::size_t>(d)));
    }
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(out_dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  json artifacts = json::array();
  json violations = json::array();
  std::size_t checked = 0;
  for (const auto& path : files) {
    const std::string rel = fs::relative(path, out_dir).generic_string();
    json a = {{"path", rel}, {"bytes", fs::file_size(path)}};
    if (path.extension() == ".bin") {
      const Tensor tensor = read_tensor(path);
      a["dtype"] = tensor.dtype == DType::Float32 ? "float32" : "int32";
      a["dims"] = tensor.dims;
      const bool exempt = path.filename() == "centroids.bin";
      a["exempt"] = exempt;
      if (!exempt && tensor.dtype == DType::Float32 && tensor.dims.size() == 2 &&
          static_cast<Eigen::Index>(tensor.dims[1]) == d && d > 0) {
        const auto width = static_cast<std::size_t>(d);
        for (std::uint64_t r = 0; r < tensor.dims[0]; ++r) {
          ++checked;
          if (raw.count(row_key(tensor.f32.data() + r * width, width))) {
            violations.push_back({{"path", rel}, {"row", r}});
          }
        }
      }
    }
    artifacts.push_back(a);
  }
  return {{"artifacts", artifacts}, {"rows_checked", checked}, {"violations", violations},
          {"clean", violations.empty()}};
}

json prototype_eval(const PhaseSource& source, const Config& /*config*/) {
  CentroidStore store;
  std::map<int, int> phase_of;
  json real_rows = json::array(), pseudo_rows = json::array();
  for (int t = 1; t <= source.phase_count(); ++t) {
    const PhaseData data = source.load(t);
    const std::vector<int> new_ids = sorted(data.class_ids);
    for (auto& [id, entry] : compute_centroids(data.train, new_ids)) {
      entry.phase_introduced = t;
      store.add(id, std::move(entry));
      phase_of[id] = t;
    }
    json real = json::array();
    for (int j = 1; j <= t; ++j) {
      const FeatureMatrix test = j == t ? data.test : source.load_test(j);
      real.push_back(accuracy(prototype_classify(test.data, store), test.labels));
    }
    real_rows.push_back(real);
    if (t < 2) continue;
    std::vector<std::size_t> hits(static_cast<std::size_t>(t - 1), 0), totals(static_cast<std::size_t>(t - 1), 0);
    for (const auto& [p, phase] : phase_of) {
      if (phase >= t) continue;
      const int donor = nearest_new_class(p, store, new_ids);
      const Matrix pseudo = generate_pseudo_features(p, donor, rows_with_label(data.train, donor), store);
      const auto labels = prototype_classify(pseudo, store);
      const auto slot = static_cast<std::size_t>(phase - 1);
      for (int l : labels) hits[slot] += l == p;
      totals[slot] += labels.size();
    }
    json pseudo = json::array();
    for (std::size_t j = 0; j < hits.size(); ++j)
      pseudo.push_back(totals[j] ? static_cast<double>(hits[j]) / static_cast<double>(totals[j]) : 0.0);
    pseudo_rows.push_back(pseudo);
  }
  return {{"real_accuracy", real_rows}, {"pseudo_accuracy", pseudo_rows}};
}

}  // namespace cicbm
