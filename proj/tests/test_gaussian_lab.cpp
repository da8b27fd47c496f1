#include <random>

#include "cicbm/errors.hpp"
#include "cicbm/gaussian_lab.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cicbm;

namespace {

GaussianClass cls(int id, std::vector<double> mu, double sigma, int phase = 1) {
  GaussianClass c;
  c.class_id = id;
  c.phase_id = phase;
  c.mean = Eigen::Map<Vector>(mu.data(), static_cast<Eigen::Index>(mu.size()));
  c.sigma = sigma;
  return c;
}

}  // namespace

TEST_CASE("equal variances give a linear boundary") {
  const auto q = bayes_boundary_coeffs(cls(0, {0, 0}, 1), cls(1, {2, 0}, 1), 2);
  CHECK(q.A == 0.0);
  // Perpendicular bisector x1 = 1: zero on it, positive on the side of class 0.
  Vector on(2), near0(2);
  on << 1, 5;
  near0 << 0.2, -1;
  CHECK(std::abs(q.evaluate(on)) < 1e-12);
  CHECK(q.evaluate(near0) > 0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0, 3);
  for (int i = 0; i < 20; ++i) {
    const double s = std::exp(nd(rng) / 3);
    const auto r = bayes_boundary_coeffs(cls(0, {nd(rng), nd(rng), nd(rng)}, s), cls(1, {nd(rng), nd(rng), nd(rng)}, s), 3);
    CHECK(r.A == 0.0);
  }
}

TEST_CASE("equal-variance coefficients are the bisector of the means") {
  const auto ci = cls(0, {1, -2, 3}, 1.7);
  const auto cj = cls(1, {-0.5, 4, 2}, 1.7);
  const auto q = bayes_boundary_coeffs(ci, cj, 3);
  const double s2 = 1.7 * 1.7;
  const Vector expect_b = 2 * (ci.mean - cj.mean) / s2;
  CHECK((q.b - expect_b).cwiseAbs().maxCoeff() < 1e-12);
  const Vector mid = 0.5 * (ci.mean + cj.mean);
  CHECK(std::abs(q.evaluate(mid)) < 1e-12);
}

TEST_CASE("unequal variances agree with the density oracle") {
  const auto ci = cls(0, {0, 0}, 1.0);
  const auto cj = cls(1, {3, 0}, 2.0);
  const auto q = bayes_boundary_coeffs(ci, cj, 2);
  CHECK(q.A != 0.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(1.5, 3.0);
  for (int i = 0; i < 100; ++i) {
    Vector x(2);
    x << nd(rng), nd(rng);
    const double diff = oracle::log_density(x, ci.mean, ci.sigma) - oracle::log_density(x, cj.mean, cj.sigma);
    CHECK(std::abs(q.evaluate(x) - 2 * diff) < 1e-9);
    CHECK((q.evaluate(x) > 0) == (diff > 0));
  }
}

TEST_CASE("points with equal log densities satisfy the form") {
  const auto ci = cls(0, {0, 0, 0}, 1.3);
  const auto cj = cls(1, {2, 1, -1}, 0.8);
  const auto q = bayes_boundary_coeffs(ci, cj, 3);
  // Bisect along segments between the two means to find boundary points.
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0, 0.5);
  for (int i = 0; i < 10; ++i) {
    Vector off(3);
    off << nd(rng), nd(rng), nd(rng);
    Vector a = ci.mean + off, b = cj.mean + off;
    auto h = [&](const Vector& x) {
      return oracle::log_density(x, ci.mean, ci.sigma) - oracle::log_density(x, cj.mean, cj.sigma);
    };
    if ((h(a) > 0) == (h(b) > 0)) continue;
    for (int it = 0; it < 200; ++it) {
      const Vector m = 0.5 * (a + b);
      if ((h(m) > 0) == (h(a) > 0)) {
        a = m;
      } else {
        b = m;
      }
    }
    CHECK(std::abs(q.evaluate(0.5 * (a + b))) < 1e-10);
  }
}

TEST_CASE("bayes classify") {
  std::vector<GaussianClass> cs{cls(4, {0, 0}, 1), cls(2, {4, 0}, 1), cls(7, {0, 4}, 1)};
  CHECK(bayes_classify(cs[0].mean, cs) == 4);
  CHECK(bayes_classify(cs[2].mean, cs) == 7);
  Vector mid(2);
  mid << 2, 0;
  CHECK(bayes_classify(mid, cs) == 2);  // tie between 4 and 2

  std::vector<GaussianClass> un{cls(0, {0, 0, 0}, 1.0), cls(1, {2, 2, 0}, 1.5), cls(2, {-1, 3, 1}, 0.7)};
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.5, 2.5);
  for (int i = 0; i < 1000; ++i) {
    Vector x(3);
    x << nd(rng), nd(rng), nd(rng);
    int best = -1;
    double best_v = -1e300;
    for (const auto& c : un) {
      const double v = oracle::log_density(x, c.mean, c.sigma);
      if (v > best_v) {
        best_v = v;
        best = c.class_id;
      }
    }
    CHECK(bayes_classify(x, un) == best);
  }
}

TEST_CASE("sampling is deterministic and matches the class model") {
  ScenarioConfig s;
  s.seed = 4;
  s.train_per_class = 10000;
  s.test_per_class = 1;
  s.concepts.concepts_per_phase = 4;
  s.concepts.embed_dim = 6;
  s.phases = {{cls(0, {1, 2, 3}, 0.5), cls(1, {-3, 0, 1}, 2.0)}};
  cicbm::testing::set_equal_priors(s);
  const auto a = sample_scenario(s);
  const auto b = sample_scenario(s);
  CHECK(a.phases[0].train.data == b.phases[0].train.data);
  CHECK(a.phases[0].train_activations == b.phases[0].train_activations);
  for (int k = 0; k < 2; ++k) {
    Matrix rows(10000, 3);
    int r = 0;
    for (std::size_t i = 0; i < a.phases[0].train.labels.size(); ++i)
      if (a.phases[0].train.labels[i] == k) rows.row(r++) = a.phases[0].train.data.row(static_cast<Eigen::Index>(i));
    REQUIRE(r == 10000);
    const auto& c = s.phases[0][static_cast<std::size_t>(k)];
    CHECK((oracle::column_means(rows) - c.mean).cwiseAbs().maxCoeff() < 4 * c.sigma / 100.0);
    const Matrix target = c.sigma * c.sigma * Matrix::Identity(3, 3);
    CHECK((oracle::covariance(rows) - target).norm() < 0.05 * target.norm());
  }
  // A single test sample per class is its own mean.
  CHECK(a.phases[0].test.rows() == 2);
}

TEST_CASE("synthetic activations are noisy linear functionals") {
  ScenarioConfig s = cicbm::testing::tiny_scenario();
  s.concepts.noise = false;
  const auto sc = sample_scenario(s);
  const auto& p = sc.phases[1];
  const Matrix expected = p.train.data * sc.concept_functionals.topRows(p.train_activations.cols()).transpose();
  CHECK((p.train_activations - expected).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(p.candidates_before == sc.phases[0].candidates.size());
}

TEST_CASE("pseudo distributions take donor variances") {
  ScenarioConfig s;
  s.phases = {{cls(0, {4, 1}, 1.0), cls(1, {1, 4}, 0.9)}, {cls(2, {4, -1}, 1.05, 2), cls(3, {-1, 4}, 0.95, 2)}};
  cicbm::testing::set_equal_priors(s);
  const auto pseudo = pseudo_distributions(s);
  REQUIRE(pseudo.size() == 4);
  CHECK(pseudo[0].sigma == 1.05);
  CHECK(pseudo[1].sigma == 0.95);
  CHECK(pseudo[0].mean == s.phases[0][0].mean);
  CHECK(pseudo[2].sigma == 1.05);
}

TEST_CASE("boundary disagreement") {
  std::vector<GaussianClass> ref{cls(0, {0, 0}, 1), cls(1, {3, 0}, 1.5)};
  CHECK(boundary_disagreement(ref, ref, 5000, 1) == 0.0);
  auto other = ref;
  other[1].sigma = 1.0;
  const double r = boundary_disagreement(other, ref, 5000, 1);
  CHECK(r > 0.0);
  CHECK(r < 1.0);
  CHECK(boundary_disagreement(other, ref, 5000, 1) == r);
}

TEST_CASE("scenario files") {
  const std::string text = R"({"name": "mini", "seed": 3, "train_per_class": 5, "test_per_class": 2,
    "concepts": {"per_phase": 3, "snr_db": 20, "embed_dim": 4},
    "phases": [[{"class_id": 0, "mean": [1, 0], "sigma": 1}], [{"class_id": 1, "mean": [0, 1], "sigma": 0.5}]]})";
  const ScenarioConfig s = parse_scenario(text);
  CHECK(s.phases.size() == 2);
  CHECK(s.phases[1][0].phase_id == 2);
  CHECK(s.concepts.snr_db == 20);
  CHECK_THROWS_AS(parse_scenario(R"({"phases": [[{"class_id": 0, "mean": [1], "sigma": -1}]]})"), Error);
  CHECK_THROWS_AS(parse_scenario(R"({"phases": [[{"class_id": 0, "mean": [1], "sigma": 1}], [{"class_id": 0, "mean": [2], "sigma": 1}]]})"), Error);
  for (const char* name : {"separable", "fig3", "sparsity"}) CHECK_NOTHROW(validate(builtin_scenario(name)));
  CHECK_THROWS_AS(load_scenario("builtin:nope"), Error);
}

TEST_CASE("single-phase e2e has no pseudo generation") {
  ScenarioConfig s = cicbm::testing::tiny_scenario();
  s.phases.resize(1);
  cicbm::testing::set_equal_priors(s);
  const auto r = run_e2e_scenario(s, cicbm::testing::fast_config());
  CHECK(r.state.accuracy.completed_rows() == 1);
  CHECK(avg_incremental_accuracy(r.state.accuracy) == r.state.accuracy.at(1, 1));
  CHECK(r.state.reports[0]["fit"]["pseudo_rows_per_class"].empty());
}
