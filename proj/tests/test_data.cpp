#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "data.hpp"
#include "doctest.h"
#include "evaluation.hpp"
#include "rng.hpp"
#include "trainer.hpp"

using namespace csfda;
using namespace csfda::data;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "csfda_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("generate_domain_pair: seeded determinism") {
  SyntheticDomainSpec spec;
  spec.samples_per_class = 20;
  const auto a = generate_domain_pair(spec, 99);
  const auto b = generate_domain_pair(spec, 99);
  CHECK(a.first.features == b.first.features);
  CHECK(a.second.features == b.second.features);
  CHECK(a.first.labels == b.first.labels);

  const auto c = generate_domain_pair(spec, 100);
  CHECK((a.first.features - c.first.features).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("generate_domain_pair: no transform means matching statistics") {
  SyntheticDomainSpec spec;
  spec.rotation = 0.0;
  spec.scale = 1.0;
  spec.noise = 0.0;
  spec.samples_per_class = 400;
  const auto [source, target] = generate_domain_pair(spec, 7);

  // Same class-conditional distribution: per-class means agree to sampling
  // error (std/sqrt(n) ~ 0.0125, allow 5 sigma).
  for (int c = 0; c < spec.classes; ++c) {
    Vec mu_s = Vec::Zero(spec.ambient_dim), mu_t = Vec::Zero(spec.ambient_dim);
    int ns = 0, nt = 0;
    for (int i = 0; i < source.size(); ++i)
      if (source.labels[static_cast<std::size_t>(i)] == c) {
        mu_s += source.features.row(i).transpose();
        ++ns;
      }
    for (int i = 0; i < target.size(); ++i)
      if (target.labels[static_cast<std::size_t>(i)] == c) {
        mu_t += target.features.row(i).transpose();
        ++nt;
      }
    mu_s /= ns;
    mu_t /= nt;
    CHECK((mu_s - mu_t).norm() < 5 * 0.25 / std::sqrt(400.0) * 4);
  }
}

TEST_CASE("antipodal rotation drops a source-trained model below chance") {
  SyntheticDomainSpec spec;
  spec.rotation = 3.14159265358979323846;
  spec.samples_per_class = 60;
  const auto [source, target] = generate_domain_pair(spec, 13);

  csfda::train::AdaptationConfig cfg;
  cfg.seed = 13;
  cfg.source_epochs = 60;
  auto init = csfda::models::make_target_model(spec.ambient_dim, 32,
                                               spec.classes, 13);
  const auto model = csfda::train::train_source(init, source, cfg);
  CHECK(csfda::eval::accuracy(model.logits(source.features).values,
                              source.labels) > 95.0);
  CHECK(csfda::eval::accuracy(model.logits(target.features).values,
                              target.labels) < 100.0 / spec.classes);
}

TEST_CASE("build_scenario: closed keeps everything") {
  SyntheticDomainSpec spec;
  spec.samples_per_class = 10;
  const auto pair = generate_domain_pair(spec, 5);
  ScenarioSpec sc;
  sc.setting = Setting::Closed;
  const auto scenario = build_scenario(pair, sc, 5);
  CHECK(scenario.source_train.size() == pair.first.size());
  CHECK(scenario.target().size() == pair.second.size());
  CHECK(scenario.known_classes == 5);
}

TEST_CASE("build_scenario: partial filters the target to the subset") {
  SyntheticDomainSpec spec;
  spec.samples_per_class = 10;
  const auto pair = generate_domain_pair(spec, 5);
  ScenarioSpec sc;
  sc.setting = Setting::Partial;
  sc.target_classes = {0, 1};
  const auto scenario = build_scenario(pair, sc, 5);
  std::set<int> seen(scenario.target().labels.begin(),
                     scenario.target().labels.end());
  CHECK(seen == std::set<int>{0, 1});
  CHECK(scenario.source_train.size() == pair.first.size());

  // Relation violation: C_t not inside C_s.
  ScenarioSpec bad;
  bad.setting = Setting::Partial;
  bad.source_classes = {0, 1, 2};
  bad.target_classes = {0, 1, 3};
  CHECK_THROWS_AS(build_scenario(pair, bad, 5), ValidationError);
}

TEST_CASE("build_scenario: open keeps unknown classes out of the source") {
  SyntheticDomainSpec spec;
  spec.samples_per_class = 10;
  spec.outlier_classes = 2;  // unknown classes live outside the circle
  const auto pair = generate_domain_pair(spec, 5);
  ScenarioSpec sc;
  sc.setting = Setting::Open;
  sc.source_classes = {0, 1, 2, 3, 4};
  const auto scenario = build_scenario(pair, sc, 5);
  std::set<int> src(scenario.source_train.labels.begin(),
                    scenario.source_train.labels.end());
  CHECK(src == std::set<int>{0, 1, 2, 3, 4});
  std::set<int> tgt(scenario.target().labels.begin(),
                    scenario.target().labels.end());
  CHECK(tgt.count(5) == 1);
  CHECK(tgt.count(6) == 1);
  CHECK(scenario.known_classes == 5);
}

TEST_CASE("build_scenario: generalized split is exact, disjoint, covering") {
  SyntheticDomainSpec spec;
  spec.classes = 5;
  spec.samples_per_class = 180;  // 900 source samples
  const auto pair = generate_domain_pair(spec, 5);
  ScenarioSpec sc;
  sc.setting = Setting::Generalized;
  sc.source_train_ratio = 0.9;
  const auto scenario = build_scenario(pair, sc, 5);
  REQUIRE(scenario.source_test.has_value());
  CHECK(scenario.source_train.size() == 810);
  CHECK(scenario.source_test->size() == 90);

  // Disjointness and coverage via exact feature-row membership.
  std::set<std::string> train_rows;
  for (int i = 0; i < scenario.source_train.size(); ++i) {
    std::string key;
    for (int d = 0; d < scenario.source_train.dim(); ++d)
      key += std::to_string(scenario.source_train.features(i, d)) + ",";
    train_rows.insert(key);
  }
  int overlap = 0;
  for (int i = 0; i < scenario.source_test->size(); ++i) {
    std::string key;
    for (int d = 0; d < scenario.source_test->dim(); ++d)
      key += std::to_string(scenario.source_test->features(i, d)) + ",";
    overlap += train_rows.count(key);
  }
  CHECK(overlap == 0);
  CHECK(scenario.source_train.size() + scenario.source_test->size() ==
        pair.first.size());
}

TEST_CASE("build_scenario: sf-oodg produces one target per variant preset") {
  SyntheticDomainSpec spec;
  spec.samples_per_class = 10;
  const auto pair = generate_domain_pair(spec, 5);
  ScenarioSpec sc;
  sc.setting = Setting::SfOodg;
  const auto scenario = build_scenario(pair, sc, 5);
  CHECK(scenario.targets.size() == 4);
  for (const auto& t : scenario.targets) CHECK(t.size() == pair.second.size());
}

TEST_CASE("corrupt: identity at zero, monotone displacement in k") {
  SyntheticDomainSpec spec;
  spec.samples_per_class = 50;
  const auto [source, target] = generate_domain_pair(spec, 21);

  const auto same = corrupt(target, 0.0, 77);
  CHECK(same.features == target.features);

  double prev = 0.0;
  for (double k : {8.0, 12.0, 16.0, 20.0}) {
    const auto noisy = corrupt(target, k, 77);
    const double displacement = (noisy.features - target.features).norm();
    CHECK(displacement > prev);
    prev = displacement;
    CHECK(noisy.labels == target.labels);
  }
}

TEST_CASE("manifest: round-trip preserves the set exactly") {
  SyntheticDomainSpec spec;
  spec.samples_per_class = 8;
  const auto [source, target] = generate_domain_pair(spec, 31);
  const auto path = temp_file("roundtrip.tsv");
  write_manifest(source, path.string());
  const auto loaded = load_manifest(path.string());
  CHECK(loaded.features == source.features);  // bit-exact via %.17g
  CHECK(loaded.labels == source.labels);
  CHECK(loaded.class_names == source.class_names);
  CHECK(loaded.domain == source.domain);
}

TEST_CASE("manifest: parse errors carry line numbers and label names") {
  const auto path = temp_file("bad.tsv");

  {
    std::ofstream out(path);
    out << "causal-sfda-manifest\tversion=1\td=2\tclasses=a,b\n";
  }
  CHECK_THROWS_WITH_AS(load_manifest(path.string()),
                       doctest::Contains("no records"), ValidationError);

  {
    std::ofstream out(path);
    out << "causal-sfda-manifest\tversion=1\td=2\tclasses=a,b\n";
    out << "0\tsource\tzebra\t0.5\t0.5\n";
  }
  CHECK_THROWS_WITH_AS(load_manifest(path.string()),
                       doctest::Contains("'zebra'"), ValidationError);
  CHECK_THROWS_WITH_AS(load_manifest(path.string()), doctest::Contains(":2:"),
                       ValidationError);

  {
    std::ofstream out(path);
    out << "causal-sfda-manifest\tversion=7\td=2\tclasses=a,b\n";
    out << "0\tsource\ta\t0.5\t0.5\n";
  }
  CHECK_THROWS_WITH_AS(load_manifest(path.string()),
                       doctest::Contains("version"), ValidationError);

  CHECK_THROWS_AS(load_manifest("/nonexistent/path.tsv"), ValidationError);
}

TEST_CASE("split_set covers the input with disjoint parts") {
  SyntheticDomainSpec spec;
  spec.samples_per_class = 13;  // odd count exercises rounding
  const auto [source, target] = generate_domain_pair(spec, 41);
  const auto [a, b] = split_set(source, 0.9, 3);
  CHECK(a.size() + b.size() == source.size());
  CHECK(a.size() == 59);  // round(0.9 * 65)
}

TEST_CASE("rotate_in_plane moves only plane coordinates") {
  SyntheticDomainSpec spec;
  spec.samples_per_class = 5;
  const auto [source, target] = generate_domain_pair(spec, 51);
  const Mat basis = shift_plane_basis(spec, 51);
  const auto rotated = rotate_in_plane(source, basis, 0.3);
  // Norms preserved (rotation) and off-plane components untouched.
  for (int i = 0; i < source.size(); ++i) {
    CHECK(rotated.features.row(i).norm() ==
          doctest::Approx(source.features.row(i).norm()).epsilon(1e-9));
    const Vec x = source.features.row(i).transpose();
    const Vec y = rotated.features.row(i).transpose();
    const Vec x_perp = x - basis * (basis.transpose() * x);
    const Vec y_perp = y - basis * (basis.transpose() * y);
    CHECK((x_perp - y_perp).norm() < 1e-9);
  }
}
