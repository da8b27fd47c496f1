#include <random>

#include "cicbm/bottleneck.hpp"
#include "cicbm/errors.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cicbm;

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

std::vector<double> stdvec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST_CASE("standardize") {
  const Vector s = standardize(vec({1, 2, 3}));
  CHECK(s(0) == doctest::Approx(-std::sqrt(1.5)).epsilon(1e-14));
  CHECK(s(1) == 0.0);
  CHECK(s(2) == doctest::Approx(std::sqrt(1.5)).epsilon(1e-14));
  CHECK(standardize(vec({5, 5, 5})) == Vector::Zero(3));
  const Vector v = gaussian(9, 1, 4).col(0);
  CHECK((standardize(standardize(v)) - standardize(v)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("cos_cubed_sim") {
  const Vector a = vec({1, 2, 3, 4});
  CHECK(cos_cubed_sim(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cos_cubed_sim(a, -a) == doctest::Approx(-1.0).epsilon(1e-15));
  const Vector b = vec({1, 3, 2, 4});
  // The standardized cubes of both vectors are +-27u and +-u in a different
  // order, so the similarity is (729 - 1) / (729 + 1).
  const double expected = oracle::cos_cubed(stdvec(a), stdvec(b));
  CHECK(expected == doctest::Approx(728.0 / 730.0).epsilon(1e-14));
  CHECK(cos_cubed_sim(a, b) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(cos_cubed_sim(vec({2, 2, 2, 2}), b) == 0.0);
}

TEST_CASE("affine invariance of the similarity") {
  const Vector a = gaussian(12, 1, 1).col(0);
  const Vector b = gaussian(12, 1, 2).col(0);
  const double base = cos_cubed_sim(a, b);
  const Vector shifted = (a * 3.5).array() + 2.0;
  CHECK(cos_cubed_sim(shifted, b) == doctest::Approx(base).epsilon(1e-12));
  const Vector flipped = (a * -0.5).array() + 7.0;
  CHECK(cos_cubed_sim(flipped, b) == doctest::Approx(-base).epsilon(1e-12));
}

TEST_CASE("alignment loss fixtures") {
  const Matrix F = gaussian(6, 3, 10);
  const Matrix P = gaussian(6, 4, 11);
  BottleneckWeights W{gaussian(4, 3, 12), 1};
  CHECK(alignment_loss(W, F, P) == doctest::Approx(oracle::combined_loss(W.W, F, P, nullptr, 0)).epsilon(1e-12));

  BottleneckWeights zero{Matrix::Zero(4, 3), 1};
  CHECK(alignment_loss(zero, F, P) == 0.0);

  // P built as affine rescalings of the outputs of W.
  const Matrix Q = F * W.W.transpose();
  Matrix Pa(6, 4);
  for (int i = 0; i < 4; ++i) Pa.col(i) = (Q.col(i) * (0.5 + i)).array() + static_cast<double>(i);
  CHECK(alignment_loss(W, F, Pa) == doctest::Approx(-4.0).epsilon(1e-12));
}

TEST_CASE("combined loss reductions") {
  const Matrix F = gaussian(10, 5, 20);
  const Matrix P = gaussian(10, 6, 21);
  BottleneckWeights prev{gaussian(4, 5, 22), 1};
  const BottleneckWeights cur = expand_bottleneck(prev, 2, 99);
  const DistillationCache cache = make_distillation_cache(prev, F);
  CHECK(combined_loss(cur, F, P, &cache, 0.0) == alignment_loss(cur, F, P));
  // Old rows unchanged: the distillation term is -beta * M_prev.
  const double beta = 0.7;
  const double total = combined_loss(cur, F, P, &cache, beta);
  CHECK(total - alignment_loss(cur, F, P) == doctest::Approx(-beta * 4).epsilon(1e-12));
  CHECK(distillation_similarity(cur, F, cache) == doctest::Approx(1.0).epsilon(1e-12));
  // Against the loop oracle with perturbed weights.
  BottleneckWeights moved = cur;
  moved.W += 0.3 * gaussian(6, 5, 23);
  const Matrix q_prev = F * prev.W.transpose();
  CHECK(combined_loss(moved, F, P, &cache, 1.0) ==
        doctest::Approx(oracle::combined_loss(moved.W, F, P, &q_prev, 1.0)).epsilon(1e-12));
  const double c = combined_loss(moved, F, P, &cache, 1.0);
  CHECK(c >= -6 - 4);
  CHECK(c <= 6 + 4);
}

TEST_CASE("analytic gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Matrix F = gaussian(15, 6, 100 + seed);
    const Matrix P = gaussian(15, 5, 200 + seed);
    const BottleneckWeights prev{gaussian(3, 6, 300 + seed), 1};
    const DistillationCache cache = make_distillation_cache(prev, F);
    const Matrix W = gaussian(5, 6, 400 + seed);
    const LossGradient g = combined_loss_gradient(W, F, P, &cache, 1.0);
    auto f = [&](const Matrix& w) { return combined_loss(BottleneckWeights{w, 2}, F, P, &cache, 1.0); };
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c)
        CHECK(rel_err(g.gradient(r, c), oracle::central_difference(f, W, r, c, 1e-5)) < 1e-5);
  }
}

TEST_CASE("expand_bottleneck") {
  const BottleneckWeights five{gaussian(5, 7, 1), 1};
  CHECK(expand_bottleneck(five, 0, 3).W == five.W);
  const auto a = expand_bottleneck(five, 3, 3);
  const auto b = expand_bottleneck(five, 3, 3);
  REQUIRE(a.W.rows() == 8);
  CHECK(a.W.topRows(5) == five.W);
  CHECK(a.W == b.W);
  CHECK(expand_bottleneck(five, 3, 4).W != a.W);
}

TEST_CASE("zero steps returns the initial weights") {
  const Matrix F = gaussian(8, 3, 1);
  const Matrix P = gaussian(8, 2, 2);
  const BottleneckWeights init{gaussian(2, 3, 3), 1};
  TrainConfig cfg;
  cfg.steps = 0;
  const TrainResult r = train_bottleneck(init, F, P, nullptr, cfg);
  CHECK(r.weights.W == init.W);
  CHECK(r.trajectory.size() == 1);
}

TEST_CASE("training trajectory never increases") {
  const Matrix F = gaussian(30, 6, 5);
  const Matrix P = gaussian(30, 4, 6);
  const BottleneckWeights init = expand_bottleneck(BottleneckWeights{Matrix(0, 6), 1}, 4, 7);
  TrainConfig cfg;
  cfg.steps = 200;
  const TrainResult r = train_bottleneck(init, F, P, nullptr, cfg);
  for (std::size_t i = 1; i < r.trajectory.size(); ++i) CHECK(r.trajectory[i] <= r.trajectory[i - 1]);
  CHECK(r.trajectory.back() < r.trajectory.front());
}

TEST_CASE("distillation weight keeps old concepts closer") {
  const Matrix F1 = gaussian(40, 6, 30);
  const Matrix P1 = gaussian(40, 3, 31);
  TrainConfig cfg;
  cfg.steps = 300;
  const BottleneckWeights w1 =
      train_bottleneck(expand_bottleneck(BottleneckWeights{Matrix(0, 6), 1}, 3, 1), F1, P1, nullptr, cfg).weights;
  // Phase 2 activations disagree with the old concepts.
  const Matrix F2 = gaussian(40, 6, 32);
  const Matrix P2 = gaussian(40, 5, 33);
  const DistillationCache cache = make_distillation_cache(w1, F2);
  const BottleneckWeights init = expand_bottleneck(w1, 2, 1);
  cfg.beta = 1.0;
  const double with = distillation_similarity(train_bottleneck(init, F2, P2, &cache, cfg).weights, F2, cache);
  cfg.beta = 0.0;
  const double without = distillation_similarity(train_bottleneck(init, F2, P2, &cache, cfg).weights, F2, cache);
  CHECK(with >= without);
}

TEST_CASE("invalid configuration and shapes") {
  TrainConfig cfg;
  cfg.beta = -1;
  CHECK_THROWS_AS(validate(cfg), Error);
  const BottleneckWeights w{Matrix::Ones(2, 3), 1};
  CHECK_THROWS_AS(alignment_loss(w, Matrix::Ones(4, 2), Matrix::Ones(4, 2)), Error);
  Matrix F = gaussian(5, 3, 1);
  F(0, 0) = std::nan("");
  cfg = TrainConfig{};
  cfg.steps = 1;
  try {
    train_bottleneck(w, F, gaussian(5, 2, 2), nullptr, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Divergence);
  }
}
