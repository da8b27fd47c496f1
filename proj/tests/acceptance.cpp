// Acceptance suite: one PASS/FAIL line per criterion, each with its measured
// value, tolerance and runtime. Exits nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>

#include "cicbm/bottleneck.hpp"
#include "cicbm/explain.hpp"
#include "cicbm/gaussian_lab.hpp"
#include "cicbm/metrics.hpp"
#include "cicbm/protocol.hpp"
#include "cicbm/pseudo.hpp"
#include "cicbm/sparse_glm.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cicbm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

// 1. Analytic gradients of the alignment and the combined loss against
// central differences.
Outcome gradient_oracle() {
  double worst = 0;
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    const Matrix F = gaussian(24, 7, rng);
    const Matrix P = gaussian(24, 6, rng);
    const BottleneckWeights prev{gaussian(4, 7, rng, 0.4), 1};
    const DistillationCache cache = make_distillation_cache(prev, F);
    const Matrix W = gaussian(6, 7, rng, 0.4);
    for (int variant = 0; variant < 2; ++variant) {
      const DistillationCache* c = variant == 0 ? nullptr : &cache;
      const LossGradient g = combined_loss_gradient(W, F, P, c, 1.0);
      auto f = [&](const Matrix& w) { return combined_loss(BottleneckWeights{w, 2}, F, P, c, 1.0); };
      std::uniform_int_distribution<Eigen::Index> row(0, W.rows() - 1), col(0, W.cols() - 1);
      for (int k = 0; k < 20; ++k) {
        const Eigen::Index r = row(rng), cc = col(rng);
        worst = std::max(worst, rel_err(g.gradient(r, cc), oracle::central_difference(f, W, r, cc, 1e-5)));
        ++checked;
      }
    }
  }
  return {worst < 1e-5, std::to_string(checked) + " coordinates, max rel err " + fmt("%.2e", worst) + " (limit 1e-05)"};
}

// 2. Exact-recovery fit: P = F W*^T.
Outcome exact_recovery() {
  std::mt19937_64 rng(2024);
  const int d = 10, M = 6;
  const Matrix F = gaussian(200, d, rng);
  const Matrix Wstar = gaussian(M, d, rng, 1.0 / std::sqrt(d));
  const Matrix P = F * Wstar.transpose();
  const BottleneckWeights init = expand_bottleneck(BottleneckWeights{Matrix(0, d), 1}, M, 7);
  TrainConfig cfg;
  cfg.steps = 1000;
  const TrainResult r = train_bottleneck(init, F, P, nullptr, cfg);
  const double gap = r.trajectory.back() + M;
  return {gap < 1e-3, "final loss " + fmt("%.6f", r.trajectory.back()) + ", gap to -M " + fmt("%.2e", gap) +
                          " (limit 1e-03) after " + std::to_string(cfg.steps) + " steps"};
}

// 3. Pseudo-feature transport over every ordered pair of seeded classes.
Outcome pseudo_transport() {
  std::mt19937_64 rng(33);
  const int classes = 6, d = 8;
  FeatureMatrix f;
  f.data = Matrix(0, d);
  std::vector<Matrix> rows;
  for (int k = 0; k < classes; ++k) {
    Matrix x = gaussian(60 + 10 * k, d, rng, 0.5 + 0.3 * k);
    x.rowwise() += gaussian(1, d, rng, 5.0).row(0);
    rows.push_back(x);
    Matrix grown(f.data.rows() + x.rows(), d);
    grown << f.data, x;
    f.data = grown;
    for (Eigen::Index i = 0; i < x.rows(); ++i) f.labels.push_back(k);
  }
  CentroidStore store;
  for (auto& [c, e] : compute_centroids(f)) store.add(c, e);
  double mean_err = 0, cov_err = 0;
  int pairs = 0;
  for (int p = 0; p < classes; ++p)
    for (int n = 0; n < classes; ++n) {
      if (p == n) continue;
      const Matrix pseudo = generate_pseudo_features(p, n, rows[static_cast<std::size_t>(n)], store);
      mean_err = std::max(mean_err, (oracle::column_means(pseudo) - store.at(p).centroid).cwiseAbs().maxCoeff());
      cov_err = std::max(cov_err, (oracle::covariance(pseudo) - oracle::covariance(rows[static_cast<std::size_t>(n)])).norm());
      ++pairs;
    }
  return {mean_err < 1e-10 && cov_err < 1e-10, std::to_string(pairs) + " pairs, mean err " + fmt("%.2e", mean_err) +
                                                   ", covariance err " + fmt("%.2e", cov_err) + " (limit 1e-10)"};
}

// 4. Sparse solver against coordinate descent, plus the shutdown case.
Outcome solver_oracle() {
  std::mt19937_64 rng(4);
  TrainingBatch b;
  b.X = gaussian(30, 4, rng);
  for (int i = 0; i < 30; ++i) {
    b.labels.push_back(i % 3);
    b.X(i, i % 3) += 1.0;
  }
  b.labels[0] = 2;  // unequal priors
  SparsePredictor init = expand_predictor(empty_predictor(4, 0.99), std::vector<int>{0, 1, 2}, 0);
  double worst_obj = 0, worst_kkt = 0;
  for (double lambda : {0.005, 0.02, 0.08}) {
    FitInfo info;
    const SparsePredictor p = fit_sparse_predictor(b, init, lambda, 0.99, SolverConfig{}, &info);
    const auto cd = oracle::coordinate_descent_glm(b.X, b.labels, 3, lambda, 0.99);
    const double ours = oracle::glm_objective(b.X, b.labels, p.W, p.b, lambda, 0.99);
    worst_obj = std::max(worst_obj, std::abs(ours - cd.objective) / std::abs(cd.objective));
    worst_kkt = std::max(worst_kkt, kkt_residual(p, b, lambda, 0.99));
  }
  const double top = lambda_max(b, init, 0.99);
  const SparsePredictor off = fit_sparse_predictor(b, init, top, 0.99, SolverConfig{});
  std::vector<double> counts(3, 0);
  for (int y : b.labels) counts[static_cast<std::size_t>(y)] += 1;
  double bias_err = 0;
  for (int k = 0; k < 3; ++k) bias_err = std::max(bias_err, std::abs(off.b(k) - std::log(counts[static_cast<std::size_t>(k)] / 30.0)));
  const bool zero = off.W.cwiseAbs().maxCoeff() == 0.0;
  return {worst_obj < 1e-4 && worst_kkt < 1e-5 && zero && bias_err < 1e-14,
          "objective rel diff " + fmt("%.2e", worst_obj) + " (limit 1e-04), KKT " + fmt("%.2e", worst_kkt) +
              " (limit 1e-05), shutdown W=0 " + (zero ? "yes" : "no") + ", log-prior bias err " + fmt("%.1e", bias_err)};
}

// 5. Lambda search hits the nonzero target on the sparsity scenario.
Outcome sparsity_target() {
  const auto r = run_e2e_scenario(builtin_scenario("sparsity"), Config{});
  bool ok = true;
  std::string detail;
  for (const auto& rep : r.state.reports) {
    const auto& fit = rep["fit"];
    const double nnz = fit["mean_nonzeros_per_class"].get<double>();
    const std::size_t m = fit["nonzeros_per_class"].size() > 0 ? rep["concepts"]["total"].get<std::size_t>() : 0;
    ok = ok && m >= 200 && fit["in_range"].get<bool>() && nnz >= 35 && nnz <= 55;
    detail += "phase " + std::to_string(rep["phase"].get<int>()) + ": M=" + std::to_string(m) +
              " mean nnz " + fmt("%.1f", nnz) + "; ";
  }
  return {ok, detail + "target [35,55]"};
}

// 6. Metric fixtures against the double loop.
Outcome metric_fixtures() {
  // Dyadic entries keep every partial sum exact, so equality is exact.
  const std::vector<std::vector<std::vector<double>>> fixtures{
      {{0.875}, {0.625, 0.75}},
      {{0.5}, {0.75, 0.5}, {0.25, 0.875, 0.625}},
      {{1.0}, {0.8125, 0.9375}, {0.6875, 0.75, 0.875}, {0.5, 0.5625, 0.625, 1.0}}};
  int mismatches = 0, compared = 0;
  for (const auto& rows : fixtures) {
    AccuracyMatrix equal(std::vector<std::size_t>(rows.size(), 10));
    for (const auto& r : rows) equal.append_row(r);
    for (std::size_t t = 1; t <= rows.size(); ++t) {
      mismatches += avg_phase_accuracy(equal, t) != oracle::phase_accuracy(rows, t);
      mismatches += avg_phase_accuracy(equal, t, true) != avg_phase_accuracy(equal, t);
      compared += 2;
      if (t >= 2) {
        mismatches += avg_phase_forgetting(equal, t) != oracle::phase_forgetting(rows, t);
        mismatches += avg_phase_forgetting(equal, t, true) != avg_phase_forgetting(equal, t);
        compared += 2;
      }
    }
    mismatches += avg_incremental_accuracy(equal) != oracle::incremental_accuracy(rows);
    mismatches += avg_incremental_forgetting(equal) != oracle::incremental_forgetting(rows);
    mismatches += avg_incremental_accuracy(equal, true) != avg_incremental_accuracy(equal);
    mismatches += avg_incremental_forgetting(equal, true) != avg_incremental_forgetting(equal);
    compared += 4;
  }
  return {mismatches == 0, std::to_string(compared) + " exact comparisons, " + std::to_string(mismatches) + " mismatches"};
}

// 7. Bayes geometry on the four-class unequal-variance scenario.
Outcome bayes_geometry() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  bool exact_zero = true;
  for (int i = 0; i < 200; ++i) {
    GaussianClass a, b;
    a.mean = gaussian(1, 5, rng).row(0).transpose();
    b.mean = gaussian(1, 5, rng).row(0).transpose();
    a.sigma = b.sigma = std::exp(nd(rng));
    exact_zero = exact_zero && bayes_boundary_coeffs(a, b, 5).A == 0.0;
  }
  const ScenarioConfig sc = builtin_scenario("fig3");
  const auto truth = sc.all_classes();
  const auto pseudo = pseudo_distributions(sc);
  double donor_gap = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    donor_gap = std::max(donor_gap, std::abs(pseudo[i].sigma - truth[i].sigma) / truth[i].sigma);
  const double rate = boundary_disagreement(pseudo, truth, kDefaultProbes, 1993);

  // Independent Monte-Carlo oracle with ten times the probes.
  std::mt19937_64 orng(424242);
  std::uniform_int_distribution<std::size_t> pick(0, truth.size() - 1);
  auto argmax = [](const std::vector<GaussianClass>& cs, const Vector& x) {
    int best = -1;
    double best_v = -1e300;
    for (const auto& c : cs) {
      const double v = oracle::log_density(x, c.mean, c.sigma);
      if (v > best_v || (v == best_v && c.class_id < best)) {
        best_v = v;
        best = c.class_id;
      }
    }
    return best;
  };
  const std::size_t n = 10 * kDefaultProbes;
  std::size_t disagree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = truth[pick(orng)];
    Vector x(c.mean.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = c.mean(k) + c.sigma * nd(orng);
    disagree += argmax(pseudo, x) != argmax(truth, x);
  }
  const double oracle_rate = static_cast<double>(disagree) / static_cast<double>(n);
  const bool pass = exact_zero && donor_gap <= 0.10 && rate < 0.05 && std::abs(rate - oracle_rate) < 0.01;
  return {pass, std::string("equal-variance A==0 ") + (exact_zero ? "yes" : "no") + ", donor sigma gap " +
                    fmt("%.3f", donor_gap) + " (<= 0.10), disagreement " + fmt("%.4f", rate) +
                    " (limit 0.05), oracle " + fmt("%.4f", oracle_rate) + ", |diff| " +
                    fmt("%.4f", std::abs(rate - oracle_rate)) + " (limit 0.01)"};
}

struct SeparableRuns {
  ProtocolResult full, no_pseudo, no_reg, freeze;
};

double distill_similarity(const ProtocolResult& r) {
  return r.state.reports[1]["bottleneck"]["distillation_similarity"].get<double>();
}

// 8. Pseudo-concept and concept-regularization ablations.
Outcome experiment_vi(const SeparableRuns& s) {
  const double on = s.full.state.accuracy.at(2, 1);
  const double off = s.no_pseudo.state.accuracy.at(2, 1);
  const double reg_delta = distill_similarity(s.full) - distill_similarity(s.no_reg);
  return {on > 0.9 && off < 0.1 && reg_delta >= 0,
          "a(2,1) pseudo ON " + fmt("%.3f", on) + " (> 0.9), OFF " + fmt("%.3f", off) +
              " (< 0.1), distillation similarity ON-OFF " + fmt("%+.4f", reg_delta) + " (>= 0)"};
}

// 9. Freezing old rows does not beat the full method on old classes.
Outcome experiment_xiv(const SeparableRuns& s) {
  const double full = s.full.state.reports[1]["evaluation"]["old_class_accuracy"].get<double>();
  const double frozen = s.freeze.state.reports[1]["evaluation"]["old_class_accuracy"].get<double>();
  return {frozen <= full, "old-class accuracy freeze-old " + fmt("%.3f", frozen) + " <= full " + fmt("%.3f", full)};
}

// 10. Logit reconstruction and the global weight graph on a trained state.
Outcome explanation_soundness(const SeparableRuns& s) {
  const PhaseState& st = s.full.state;
  std::mt19937_64 rng(10);
  const Matrix X = gaussian(100, static_cast<Eigen::Index>(st.bottleneck.feature_dim()), rng, 3.0);
  const Prediction pred = predict(st.predictor, X * st.bottleneck.W.transpose());
  double worst = 0;
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (std::size_t k = 0; k < st.predictor.class_count(); ++k) {
      const auto e = contributions(X.row(r).transpose(), st.bottleneck, st.predictor, st.predictor.class_ids[k]);
      double sum = e.bias;
      for (const auto& c : e.contributions) sum += c.value;
      worst = std::max(worst, std::abs(sum - pred.logits(r, static_cast<Eigen::Index>(k))));
    }
  int mismatched = 0, edges = 0;
  for (std::size_t k = 0; k < st.predictor.class_count(); ++k) {
    const auto g = global_weight_graph(st.predictor, st.concepts, st.predictor.class_ids[k], 0.2);
    std::vector<std::pair<std::size_t, double>> got, direct;
    for (const auto& e : g) got.emplace_back(e.concept_id, e.weight);
    for (Eigen::Index j = 0; j < st.predictor.W.cols(); ++j) {
      const double w = st.predictor.W(static_cast<Eigen::Index>(k), j);
      if (std::abs(w) > 0.2) direct.emplace_back(static_cast<std::size_t>(j), w);
    }
    mismatched += got != direct;
    edges += static_cast<int>(got.size());
  }
  return {worst < 1e-10 && mismatched == 0, "100 samples x " + std::to_string(st.predictor.class_count()) +
                                                " classes, max reconstruction err " + fmt("%.2e", worst) +
                                                " (limit 1e-10); " + std::to_string(edges) +
                                                " edges at 0.2, classes mismatching direct filter: " +
                                                std::to_string(mismatched)};
}

// 11. Byte-identical repeated runs and the exemplar-free audit.
Outcome determinism_audit() {
  cicbm::testing::ScratchDir dir("acceptance");
  cicbm::testing::write_manifests(sample_scenario(builtin_scenario("separable")).phases, dir / "manifests");
  const ManifestSource src(dir / "manifests");
  run_protocol(src, dir / "run1", Config{});
  run_protocol(src, dir / "run2", Config{});
  const auto a = cicbm::testing::tree_bytes(dir / "run1");
  const bool identical = a == cicbm::testing::tree_bytes(dir / "run2");
  const auto audit = audit_artifacts(dir / "run1", src);
  const bool clean = audit["clean"].get<bool>();
  return {identical && clean, std::to_string(a.size()) + " files " + (identical ? "byte-identical" : "DIFFER") +
                                  "; audit " + std::to_string(audit["artifacts"].size()) + " artifacts, " +
                                  std::to_string(audit["rows_checked"].get<std::size_t>()) + " rows checked, " +
                                  std::to_string(audit["violations"].size()) + " violations"};
}

}  // namespace

int main() {
  int failures = 0;
  // `extra_s` charges shared setup time to a criterion.
  auto report = [&](int id, const char* name, double limit_s, const std::function<Outcome()>& f,
                    double extra_s = 0) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = extra_s + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = limit_s <= 0 || secs < limit_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::string timing = fmt("%.2fs", secs);
    if (limit_s > 0) timing += " (limit " + fmt("%.0fs", limit_s) + ")";
    std::printf("%s [%2d] %s: %s; %s\n", pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient oracle", 10, gradient_oracle);
  report(2, "exact-recovery fit", 30, exact_recovery);
  report(3, "pseudo-feature transport", 5, pseudo_transport);
  report(4, "solver oracle", 30, solver_oracle);
  report(5, "sparsity target", 120, sparsity_target);
  report(6, "metric fixtures", 0, metric_fixtures);
  report(7, "Bayes geometry", 60, bayes_geometry);

  // Criteria 8-10 share the separable-scenario runs; their time is charged to 8.
  SeparableRuns runs;
  bool runs_ok = true;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const ScenarioConfig sc = builtin_scenario("separable");
    Config c;
    runs.full = run_e2e_scenario(sc, c);
    Config np = c;
    np.pseudo_concepts = false;
    runs.no_pseudo = run_e2e_scenario(sc, np);
    Config nr = c;
    nr.concept_regularization = false;
    runs.no_reg = run_e2e_scenario(sc, nr);
    Config fz = c;
    fz.freeze_old = true;
    runs.freeze = run_e2e_scenario(sc, fz);
  } catch (const std::exception& e) {
    runs_ok = false;
    std::printf("separable scenario runs failed: %s\n", e.what());
  }
  const double run_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto guarded = [&](const std::function<Outcome(const SeparableRuns&)>& f) {
    return [&, f]() { return runs_ok ? f(runs) : Outcome{false, "scenario runs unavailable"}; };
  };
  report(8, "pseudo-concept and concept-reg ablations", 180, guarded(experiment_vi), run_secs);
  report(9, "freeze-old ablation", 0, guarded(experiment_xiv));
  report(10, "explanation soundness", 0, guarded(explanation_soundness));
  report(11, "determinism and exemplar-free audit", 0, determinism_audit);

  std::printf("%d of 11 criteria passed\n", 11 - failures);
  return failures == 0 ? 0 : 1;
}
