#include "cicbm/gaussian_lab.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "cicbm/errors.hpp"
#include "cicbm/parallel.hpp"

namespace cicbm {

using nlohmann::json;

namespace {

// Stream tags keep the generators of different purposes apart.
constexpr std::uint32_t kFeatureTag = 0x6A55;
constexpr std::uint32_t kConceptTag = 0xC0CE;
constexpr std::uint32_t kNoiseTag = 0x401E;
constexpr std::uint32_t kClassNameTag = 0xC1A5;
constexpr std::uint32_t kProbeTag = 0xB0B;

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), a, b, tag};
  return std::mt19937_64(seq);
}

Vector random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  do {
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  } while (!(v.norm() > 0));
  return v / v.norm();
}

int nearest_by_mean(const GaussianClass& c, const std::vector<GaussianClass>& candidates) {
  const double nc = c.mean.norm();
  require(nc > 0, ErrorKind::Validation, "class mean has zero norm");
  int best = -1;
  double best_cos = -std::numeric_limits<double>::infinity();
  for (const auto& n : candidates) {
    const double nn = n.mean.norm();
    require(nn > 0, ErrorKind::Validation, "class mean has zero norm");
    const double cs = c.mean.dot(n.mean) / (nc * nn);
    if (cs > best_cos || (cs == best_cos && n.class_id < best)) {
      best_cos = cs;
      best = n.class_id;
    }
  }
  return best;
}

const GaussianClass& by_id(const std::vector<GaussianClass>& classes, int id) {
  for (const auto& c : classes)
    if (c.class_id == id) return c;
  fail(ErrorKind::Validation, "unknown class " + std::to_string(id));
}

}  // namespace

std::size_t ScenarioConfig::dim() const {
  return phases.empty() || phases.front().empty() ? 0 : static_cast<std::size_t>(phases.front().front().mean.size());
}

std::vector<GaussianClass> ScenarioConfig::all_classes() const {
  std::vector<GaussianClass> out;
  for (const auto& p : phases) out.insert(out.end(), p.begin(), p.end());
  return out;
}

void validate(const ScenarioConfig& c) {
  require(!c.phases.empty(), ErrorKind::Validation, "scenario needs at least one phase");
  const std::size_t d = c.dim();
  require(d >= 1, ErrorKind::Validation, "scenario feature dimension must be >= 1");
  std::set<int> ids;
  double prior_sum = 0;
  for (std::size_t t = 0; t < c.phases.size(); ++t) {
    require(!c.phases[t].empty(), ErrorKind::Validation, "every phase needs at least one class");
    for (const auto& g : c.phases[t]) {
      require(ids.insert(g.class_id).second, ErrorKind::Disjointness,
              "class " + std::to_string(g.class_id) + " appears in more than one place");
      require(g.class_id >= 0, ErrorKind::Validation, "class ids must be >= 0");
      require(static_cast<std::size_t>(g.mean.size()) == d && g.mean.allFinite(), ErrorKind::Dimension,
              "class means must share one finite dimension");
      require(g.sigma > 0 && std::isfinite(g.sigma), ErrorKind::Validation, "sigma must be > 0");
      require(g.prior > 0 && g.prior <= 1, ErrorKind::Validation, "priors must lie in (0, 1]");
      require(g.phase_id == static_cast<int>(t) + 1, ErrorKind::Validation, "class phase id does not match its phase");
      prior_sum += g.prior;
    }
  }
  require(std::abs(prior_sum - 1.0) <= 1e-9, ErrorKind::Validation, "class priors must sum to 1");
  require(c.train_per_class >= 1 && c.test_per_class >= 1, ErrorKind::Validation,
          "samples per class must be >= 1");
  require(c.concepts.concepts_per_phase >= 1, ErrorKind::Validation, "concepts_per_phase must be >= 1");
  require(c.concepts.embed_dim >= 2, ErrorKind::Validation, "embed_dim must be >= 2");
  require(c.concepts.duplicate_fraction >= 0 && c.concepts.duplicate_fraction < 1, ErrorKind::Validation,
          "duplicate_fraction must lie in [0, 1)");
  require(std::isfinite(c.concepts.snr_db), ErrorKind::Validation, "snr_db must be finite");
}

QuadraticBoundary bayes_boundary_coeffs(const GaussianClass& ci, const GaussianClass& cj, std::size_t d) {
  require(ci.sigma > 0 && cj.sigma > 0, ErrorKind::Validation, "sigma must be > 0");
  require(static_cast<std::size_t>(ci.mean.size()) == d && static_cast<std::size_t>(cj.mean.size()) == d,
          ErrorKind::Dimension, "class means must have dimension d");
  const double vi = ci.sigma * ci.sigma;
  const double vj = cj.sigma * cj.sigma;
  QuadraticBoundary q;
  // Identical variances cancel exactly.
  q.A = vi == vj ? 0.0 : 1.0 / vj - 1.0 / vi;
  q.b = -2.0 * (cj.mean / vj - ci.mean / vi);
  q.c = cj.mean.squaredNorm() / vj - ci.mean.squaredNorm() / vi + static_cast<double>(d) * std::log(vj / vi);
  return q;
}

double gaussian_log_density(const Vector& x, const GaussianClass& c) {
  const double v = c.sigma * c.sigma;
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * v) - (x - c.mean).squaredNorm() / (2.0 * v);
}

int bayes_classify(const Vector& x, const std::vector<GaussianClass>& classes) {
  require(!classes.empty(), ErrorKind::Validation, "no classes to choose from");
  int best = classes.front().class_id;
  double best_ld = gaussian_log_density(x, classes.front());
  for (std::size_t k = 1; k < classes.size(); ++k) {
    const double ld = gaussian_log_density(x, classes[k]);
    if (ld > best_ld || (ld == best_ld && classes[k].class_id < best)) {
      best_ld = ld;
      best = classes[k].class_id;
    }
  }
  return best;
}

SampledScenario sample_scenario(const ScenarioConfig& config) {
  validate(config);
  const auto d = static_cast<Eigen::Index>(config.dim());
  const auto& gen = config.concepts;
  SampledScenario out;
  out.concept_functionals.resize(0, d);
  std::vector<Candidate> all_candidates;

  for (std::size_t ti = 0; ti < config.phases.size(); ++ti) {
    const int t = static_cast<int>(ti) + 1;
    PhaseData pd;
    pd.phase_id = t;
    pd.provenance = "scenario:" + config.name + " seed " + std::to_string(config.seed);

    for (int split = 0; split < 2; ++split) {
      const int per_class = split == 0 ? config.train_per_class : config.test_per_class;
      FeatureMatrix& fm = split == 0 ? pd.train : pd.test;
      fm.phase_id = t;
      fm.split = split == 0 ? Split::Train : Split::Test;
      fm.data.resize(static_cast<Eigen::Index>(config.phases[ti].size()) * per_class, d);
      Eigen::Index row = 0;
      for (const auto& g : config.phases[ti]) {
        auto rng = stream(config.seed, static_cast<std::uint32_t>(g.class_id), static_cast<std::uint32_t>(split),
                          kFeatureTag);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (int n = 0; n < per_class; ++n, ++row) {
          for (Eigen::Index k = 0; k < d; ++k) fm.data(row, k) = g.mean[k] + g.sigma * normal(rng);
          fm.labels.push_back(g.class_id);
        }
      }
      fm.data = quantize_f32(fm.data);
    }

    // Candidates of this phase; a share of later phases repeats earlier ones.
    auto crng = stream(config.seed, static_cast<std::uint32_t>(t), 0, kConceptTag);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    const int n = gen.concepts_per_phase;
    const int dups = all_candidates.empty() ? 0 : static_cast<int>(std::floor(n * gen.duplicate_fraction));
    pd.candidates_before = all_candidates.size();
    Matrix G(out.concept_functionals.rows() + n, d);
    G.topRows(out.concept_functionals.rows()) = out.concept_functionals;
    for (int i = 0; i < n; ++i) {
      Candidate c;
      c.candidate_index = all_candidates.size();
      c.text = "concept " + std::to_string(t) + "." + std::to_string(i);
      const auto r = static_cast<Eigen::Index>(c.candidate_index);
      if (i < dups) {
        std::uniform_int_distribution<std::size_t> pick(0, pd.candidates_before - 1);
        const std::size_t src = pick(crng);
        c.embedding = all_candidates[src].embedding;
        G.row(r) = G.row(static_cast<Eigen::Index>(src));
      } else {
        c.embedding = quantize_f32(Vector(random_unit(crng, gen.embed_dim)));
        for (Eigen::Index k = 0; k < d; ++k) G(r, k) = normal(crng);
      }
      pd.candidates.push_back(c);
      all_candidates.push_back(std::move(c));
    }
    out.concept_functionals = std::move(G);

    for (int split = 0; split < 2; ++split) {
      const FeatureMatrix& fm = split == 0 ? pd.train : pd.test;
      Matrix P = fm.data * out.concept_functionals.transpose();
      if (gen.noise && P.rows() >= 2) {
        auto nrng = stream(config.seed, static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(split), kNoiseTag);
        std::normal_distribution<double> unit(0.0, 1.0);
        const double scale = std::pow(10.0, -gen.snr_db / 20.0);
        for (Eigen::Index col = 0; col < P.cols(); ++col) {
          const double mean = P.col(col).mean();
          const double sd = std::sqrt((P.col(col).array() - mean).square().mean());
          for (Eigen::Index r = 0; r < P.rows(); ++r) P(r, col) += sd * scale * unit(nrng);
        }
      }
      (split == 0 ? pd.train_activations : pd.test_activations) = quantize_f32(P);
    }

    pd.class_name_embeddings.resize(static_cast<Eigen::Index>(config.phases[ti].size()), gen.embed_dim);
    for (std::size_t k = 0; k < config.phases[ti].size(); ++k) {
      const auto& g = config.phases[ti][k];
      pd.class_ids.push_back(g.class_id);
      pd.class_names.push_back("class " + std::to_string(g.class_id));
      auto rng = stream(config.seed, static_cast<std::uint32_t>(g.class_id), 0, kClassNameTag);
      pd.class_name_embeddings.row(static_cast<Eigen::Index>(k)) = random_unit(rng, gen.embed_dim).transpose();
    }
    pd.class_name_embeddings = quantize_f32(pd.class_name_embeddings);
    out.phases.push_back(std::move(pd));
  }
  return out;
}

std::vector<GaussianClass> pseudo_distributions(const ScenarioConfig& config) {
  validate(config);
  const auto& last = config.phases.back();
  std::vector<GaussianClass> out;
  for (std::size_t t = 0; t + 1 < config.phases.size(); ++t) {
    for (const auto& g : config.phases[t]) {
      GaussianClass p = g;
      p.sigma = by_id(last, nearest_by_mean(g, last)).sigma;
      out.push_back(p);
    }
  }
  out.insert(out.end(), last.begin(), last.end());
  return out;
}

double boundary_disagreement(const std::vector<GaussianClass>& pseudo, const std::vector<GaussianClass>& reference,
                             std::size_t n_probe, std::uint64_t seed) {
  require(reference.size() >= 2, ErrorKind::Validation, "disagreement needs at least two classes");
  require(pseudo.size() == reference.size(), ErrorKind::Validation, "pseudo and reference class lists differ");
  if (n_probe == 0) return 0.0;
  const std::size_t streams = (n_probe + kProbeStreamSize - 1) / kProbeStreamSize;
  std::vector<std::size_t> counts(streams, 0);
  parallel_for(streams, [&](std::size_t s) {
    auto rng = stream(seed, static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32), kProbeTag);
    std::uniform_int_distribution<std::size_t> pick(0, reference.size() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t begin = s * kProbeStreamSize;
    const std::size_t end = std::min(n_probe, begin + kProbeStreamSize);
    Vector x(reference.front().mean.size());
    for (std::size_t i = begin; i < end; ++i) {
      const auto& g = reference[pick(rng)];
      for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = g.mean[k] + g.sigma * normal(rng);
      counts[s] += bayes_classify(x, pseudo) != bayes_classify(x, reference);
    }
  });
  std::size_t total = 0;
  for (auto c : counts) total += c;
  return static_cast<double>(total) / static_cast<double>(n_probe);
}

json gaussian_lab_report(const ScenarioConfig& config, std::size_t n_probe, std::uint64_t seed) {
  validate(config);
  const auto classes = config.all_classes();
  const auto pseudo = pseudo_distributions(config);
  const std::size_t d = config.dim();
  json pairs = json::array();
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      const auto q = bayes_boundary_coeffs(classes[i], classes[j], d);
      const auto qp = bayes_boundary_coeffs(pseudo[i], pseudo[j], d);
      pairs.push_back({{"class_i", classes[i].class_id},
                       {"class_j", classes[j].class_id},
                       {"true", {{"A", q.A}, {"b", std::vector<double>(q.b.data(), q.b.data() + q.b.size())}, {"c", q.c}}},
                       {"pseudo",
                        {{"A", qp.A}, {"b", std::vector<double>(qp.b.data(), qp.b.data() + qp.b.size())}, {"c", qp.c}}}});
    }
  }
  json pseudo_sigmas = json::object();
  for (const auto& p : pseudo) pseudo_sigmas[std::to_string(p.class_id)] = p.sigma;
  return {{"scenario", config.name},
          {"dimension", d},
          {"pairs", pairs},
          {"pseudo_sigmas", pseudo_sigmas},
          {"probes", n_probe},
          {"probe_seed", seed},
          {"probe_stream_size", kProbeStreamSize},
          {"disagreement", boundary_disagreement(pseudo, classes, n_probe, seed)}};
}

ProtocolResult run_e2e_scenario(const ScenarioConfig& scenario, const Config& config, const fs::path& out_dir) {
  ScenarioConfig sc = scenario;
  if (config.snr_db) {
    sc.concepts.snr_db = *config.snr_db;
    sc.concepts.noise = true;
  }
  MemorySource source(sample_scenario(sc).phases);
  return run_protocol(source, out_dir, config);
}

ScenarioConfig parse_scenario(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed scenario: ") + e.what());
  }
  static const std::set<std::string> known = {"name", "seed", "train_per_class", "test_per_class", "concepts",
                                              "phases"};
  for (const auto& item : j.items())
    require(known.count(item.key()) > 0, ErrorKind::Validation, "unknown scenario key '" + item.key() + "'");
  ScenarioConfig c;
  try {
    c.name = j.value("name", std::string("custom"));
    c.seed = j.value("seed", c.seed);
    c.train_per_class = j.value("train_per_class", c.train_per_class);
    c.test_per_class = j.value("test_per_class", c.test_per_class);
    if (j.contains("concepts")) {
      const auto& g = j["concepts"];
      c.concepts.concepts_per_phase = g.value("per_phase", c.concepts.concepts_per_phase);
      c.concepts.snr_db = g.value("snr_db", c.concepts.snr_db);
      c.concepts.noise = g.value("noise", c.concepts.noise);
      c.concepts.embed_dim = g.value("embed_dim", c.concepts.embed_dim);
      c.concepts.duplicate_fraction = g.value("duplicate_fraction", c.concepts.duplicate_fraction);
    }
    std::size_t count = 0;
    bool explicit_priors = false;
    for (std::size_t t = 0; t < j.at("phases").size(); ++t) {
      std::vector<GaussianClass> phase;
      for (const auto& g : j["phases"][t]) {
        GaussianClass gc;
        gc.class_id = g.at("class_id").get<int>();
        gc.phase_id = static_cast<int>(t) + 1;
        const auto mean = g.at("mean").get<std::vector<double>>();
        gc.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        gc.sigma = g.at("sigma").get<double>();
        if (g.contains("prior")) {
          gc.prior = g["prior"].get<double>();
          explicit_priors = true;
        }
        phase.push_back(std::move(gc));
        ++count;
      }
      c.phases.push_back(std::move(phase));
    }
    if (!explicit_priors && count > 0) {
      for (auto& p : c.phases)
        for (auto& g : p) g.prior = 1.0 / static_cast<double>(count);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string("scenario: ") + e.what());
  }
  validate(c);
  return c;
}

ScenarioConfig builtin_scenario(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  auto add = [&c](int phase, int id, Vector mean, double sigma) {
    if (static_cast<int>(c.phases.size()) < phase) c.phases.resize(static_cast<std::size_t>(phase));
    GaussianClass g;
    g.class_id = id;
    g.phase_id = phase;
    g.mean = std::move(mean);
    g.sigma = sigma;
    c.phases[static_cast<std::size_t>(phase - 1)].push_back(std::move(g));
  };
  if (name == "separable") {
    // Two phases of three well-separated classes in 16 dimensions.
    constexpr int d = 16;
    for (int k = 0; k < 6; ++k) {
      Vector mu = Vector::Zero(d);
      mu[k] = 6.0;
      mu[6 + (k + 1) % 6] = 2.0;
      add(k < 3 ? 1 : 2, k, mu, k < 3 ? 1.0 : 1.2);
    }
    c.train_per_class = 150;
    c.test_per_class = 100;
    c.concepts.concepts_per_phase = 24;
    c.concepts.duplicate_fraction = 0.125;
  } else if (name == "fig3") {
    // Two old and two new classes in the plane; each old class has a new
    // neighbour whose sigma is within 10% of its own.
    add(1, 0, Vector{{4.0, 1.0}}, 1.0);
    add(1, 1, Vector{{1.0, 4.0}}, 0.9);
    add(2, 2, Vector{{4.0, -1.0}}, 1.05);
    add(2, 3, Vector{{-1.0, 4.0}}, 0.95);
    c.train_per_class = 200;
    c.test_per_class = 200;
    c.concepts.concepts_per_phase = 8;
    c.concepts.embed_dim = 16;
  } else if (name == "sparsity") {
    // Two phases of ten overlapping classes, 200 candidate concepts per
    // phase. Overlap keeps the sparse path away from the few-support-vector
    // regime of separable data.
    constexpr int d = 64;
    for (int k = 0; k < 20; ++k) {
      Vector mu = Vector::Zero(d);
      mu[k % d] = 3.0;
      mu[(k + d / 2) % d] = 2.0;
      add(k < 10 ? 1 : 2, k, mu, 1.5);
    }
    c.train_per_class = 60;
    c.test_per_class = 50;
    c.concepts.concepts_per_phase = 200;
    c.concepts.embed_dim = 48;
  } else {
    fail(ErrorKind::Validation, "unknown builtin scenario '" + name + "'");
  }
  std::size_t count = 0;
  for (const auto& p : c.phases) count += p.size();
  for (auto& p : c.phases)
    for (auto& g : p) g.prior = 1.0 / static_cast<double>(count);
  validate(c);
  return c;
}

ScenarioConfig load_scenario(const std::string& spec) {
  const std::string prefix = "builtin:";
  if (spec.rfind(prefix, 0) == 0) return builtin_scenario(spec.substr(prefix.size()));
  return parse_scenario(read_text_file(spec));
}

}  // namespace cicbm
