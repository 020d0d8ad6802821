#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "causalsfda.h"
#include "doctest.h"

#ifndef CSFDA_FIXTURE_DIR
#define CSFDA_FIXTURE_DIR "fixtures"
#endif

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "csfda_capi_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("capi: entropy and mutual information") {
  const double uniform[2] = {0.5, 0.5};
  double h = 0.0;
  REQUIRE(csf_entropy(uniform, 2, &h) == CSF_OK);
  CHECK(h == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const double bad[2] = {0.5, 0.6};
  CHECK(csf_entropy(bad, 2, &h) == CSF_ERROR_INVALID);
  CHECK(std::strlen(csf_last_error()) > 0);

  const double joint[4] = {0.5, 0.0, 0.0, 0.5};
  double mi = 0.0;
  REQUIRE(csf_mutual_information(joint, 2, 2, &mi) == CSF_OK);
  CHECK(mi == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK(csf_entropy(nullptr, 2, &h) == CSF_ERROR_INVALID);
}

TEST_CASE("capi: oracle sweeps report trial counts and write dumps") {
  csf_sweep_summary summary{};
  REQUIRE(csf_lemma1_sweep(0, 50, nullptr, &summary) == CSF_OK);
  CHECK(summary.trials == 50);
  CHECK(summary.passed == 50);

  const auto dump = (temp_dir() / "sweep.csv").string();
  REQUIRE(csf_theorem1_sweep(0, 25, dump.c_str(), &summary) == CSF_OK);
  CHECK(summary.trials == 25);
  std::ifstream in(dump);
  std::string header;
  std::getline(in, header);
  CHECK(header == "trial,lhs_nats,rhs_nats,holds");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 25);
}

TEST_CASE("capi: verify passes normally and fails under the injection hook") {
  csf_verify_options opts{};
  opts.trials = 50;
  opts.grad_samples = 5;
  char* report = nullptr;
  int32_t all_passed = 0;
  REQUIRE(csf_verify(&opts, &report, &all_passed) == CSF_OK);
  CHECK(all_passed == 1);
  CHECK(std::string(report).find("lemma1: 50/50") != std::string::npos);
  csf_string_free(report);

  opts.inject_vmi_grad_sign_flip = 1;
  report = nullptr;
  CHECK(csf_verify(&opts, &report, &all_passed) == CSF_ERROR_VERIFY);
  CHECK(all_passed == 0);
  CHECK(std::string(report).find("FAILED") != std::string::npos);
  csf_string_free(report);
}

TEST_CASE("capi: results handles expose the unification metrics") {
  const auto fixture =
      (std::filesystem::path(CSFDA_FIXTURE_DIR) / "unification_scores.txt")
          .string();
  csf_results* results = nullptr;
  REQUIRE(csf_results_load(fixture.c_str(), &results) == CSF_OK);

  double value = 0.0;
  REQUIRE(csf_results_metric(results, "CausalDA", "H_all", &value) == CSF_OK);
  CHECK(value == doctest::Approx(79.12).epsilon(1e-3));
  REQUIRE(csf_results_metric(results, "DIFO", "H_wrg", &value) == CSF_OK);
  CHECK(value == doctest::Approx(12.1).epsilon(1e-3));
  REQUIRE(csf_results_metric(results, "ProDe", "H_loso:sf-oodg", &value) ==
          CSF_OK);
  CHECK(value == doctest::Approx(84.6).epsilon(1e-3));
  REQUIRE(csf_results_metric(results, "CausalDA", "score:partial", &value) ==
          CSF_OK);
  CHECK(value == 87.1);

  CHECK(csf_results_metric(results, "NoSuch", "H_all", &value) ==
        CSF_ERROR_INVALID);
  CHECK(csf_results_metric(results, "DIFO", "H_nope", &value) ==
        CSF_ERROR_INVALID);

  char* table = nullptr;
  REQUIRE(csf_results_render_table(results, &table) == CSF_OK);
  CHECK(std::string(table).find("H_wrg") != std::string::npos);
  csf_string_free(table);

  char* csv = nullptr;
  REQUIRE(csf_results_unification_csv(results, &csv) == CSF_OK);
  CHECK(std::string(csv).rfind("method,metric,setting,value", 0) == 0);
  csf_string_free(csv);

  csf_results_free(results);

  CHECK(csf_results_load("/nonexistent/results.txt", &results) ==
        CSF_ERROR_INVALID);
}

TEST_CASE("capi: synth writes a loadable scenario") {
  const auto out = (temp_dir() / "synth_out").string();
  std::filesystem::remove_all(out);

  csf_synth_options opts{};
  opts.samples_per_class = 10;
  opts.rotation = 0.3;
  opts.noise = 0.0;
  opts.scale = 1.0;
  opts.setting = "partial";
  opts.target_classes = "0,1";
  opts.seed = 7;

  char* descriptor = nullptr;
  REQUIRE(csf_synth_scenario(&opts, out.c_str(), &descriptor) == CSF_OK);
  CHECK(std::filesystem::exists(descriptor));
  CHECK(std::filesystem::exists(std::filesystem::path(out) / "source.tsv"));
  CHECK(std::filesystem::exists(std::filesystem::path(out) / "target.tsv"));

  std::ifstream in(descriptor);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("setting\tpartial") != std::string::npos);
  csf_string_free(descriptor);

  // Invalid setting name is an input error.
  opts.setting = "sideways";
  CHECK(csf_synth_scenario(&opts, out.c_str(), &descriptor) ==
        CSF_ERROR_INVALID);
}
