// End-to-end checks of the installed command-line surface, driven as
// subprocesses against the real binary.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

#ifndef CSFDA_CLI_PATH
#error "CSFDA_CLI_PATH must point at the causalsfda binary"
#endif
#ifndef CSFDA_FIXTURE_DIR
#error "CSFDA_FIXTURE_DIR must point at the fixtures directory"
#endif

namespace {

namespace fs = std::filesystem;

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

CommandResult run_command(const std::string& args) {
  const auto out_path = fs::temp_directory_path() / "csfda_cli_out.txt";
  const std::string cmd = std::string(CSFDA_CLI_PATH) + " " + args + " > " +
                          out_path.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CommandResult result;
  result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(out_path);
  result.output.assign(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
  return result;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "csfda_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

void write_config(const fs::path& path, const fs::path& scenario,
                  const fs::path& out, int epochs = 4,
                  const std::string& extra = "") {
  std::ofstream cfg(path);
  cfg << "causal-sfda-config v1\n"
      << "[run]\nseed = 11\nout = " << out.string() << "\n"
      << "[scenario]\ndescriptor = " << scenario.string() << "\n"
      << "[source]\nepochs = 40\n"
      << "[adapt]\nepochs = " << epochs << "\n"
      << extra;
}

}  // namespace

TEST_CASE("cli: synth writes manifests and is byte-stable per seed") {
  const auto dir = fresh_dir("synth");
  const auto a = run_command("synth --out " + (dir / "a").string() +
                             " --seed 5 --samples 12");
  REQUIRE(a.exit_code == 0);
  CHECK(fs::exists(dir / "a" / "scenario.txt"));
  CHECK(fs::exists(dir / "a" / "source.tsv"));
  CHECK(fs::exists(dir / "a" / "target.tsv"));

  const auto b = run_command("synth --out " + (dir / "b").string() +
                             " --seed 5 --samples 12");
  REQUIRE(b.exit_code == 0);
  CHECK(read_file(dir / "a" / "source.tsv") ==
        read_file(dir / "b" / "source.tsv"));
  CHECK(read_file(dir / "a" / "target.tsv") ==
        read_file(dir / "b" / "target.tsv"));

  // Partial-set relation is encoded in the descriptor.
  const auto c = run_command("synth --out " + (dir / "c").string() +
                             " --seed 5 --samples 12 --setting partial "
                             "--target-classes 0,1");
  REQUIRE(c.exit_code == 0);
  const auto descriptor = read_file(dir / "c" / "scenario.txt");
  CHECK(descriptor.find("setting\tpartial") != std::string::npos);

  // Invalid spec: usage error.
  const auto d = run_command("synth --out " + (dir / "d").string() +
                             " --setting upside-down");
  CHECK(d.exit_code == 2);
}

TEST_CASE("cli: adapt is deterministic and honors error contracts") {
  const auto dir = fresh_dir("adapt");
  REQUIRE(run_command("synth --out " + (dir / "scen").string() +
                      " --seed 11 --samples 24")
              .exit_code == 0);

  write_config(dir / "run.cfg", dir / "scen" / "scenario.txt", dir / "run1");
  const auto first = run_command("adapt --config " +
                                 (dir / "run.cfg").string());
  REQUIRE(first.exit_code == 0);
  CHECK(fs::exists(dir / "run1" / "checkpoint.txt"));
  CHECK(fs::exists(dir / "run1" / "losses.csv"));

  const auto again = run_command("adapt --config " +
                                 (dir / "run.cfg").string() + " --out " +
                                 (dir / "run2").string());
  REQUIRE(again.exit_code == 0);
  CHECK(read_file(dir / "run1" / "metrics.csv") ==
        read_file(dir / "run2" / "metrics.csv"));
  CHECK(read_file(dir / "run1" / "losses.csv") ==
        read_file(dir / "run2" / "losses.csv"));
  CHECK(read_file(dir / "run1" / "checkpoint.txt") ==
        read_file(dir / "run2" / "checkpoint.txt"));

  // A different seed changes the run.
  const auto other = run_command("adapt --config " +
                                 (dir / "run.cfg").string() + " --out " +
                                 (dir / "run3").string() + " --seed 12");
  REQUIRE(other.exit_code == 0);
  CHECK(read_file(dir / "run1" / "metrics.csv") !=
        read_file(dir / "run3" / "metrics.csv"));

  // Missing manifest: exit 2 and the message names the path.
  write_config(dir / "bad.cfg", dir / "nowhere" / "scenario.txt",
               dir / "run4");
  const auto bad = run_command("adapt --config " + (dir / "bad.cfg").string());
  CHECK(bad.exit_code == 2);
  CHECK(bad.output.find("nowhere") != std::string::npos);

  // Config parse errors: exit 2 with a line number.
  {
    std::ofstream cfg(dir / "broken.cfg");
    cfg << "causal-sfda-config v1\n[adapt]\nwat = 1\n";
  }
  const auto broken =
      run_command("adapt --config " + (dir / "broken.cfg").string());
  CHECK(broken.exit_code == 2);
  CHECK(broken.output.find(":3:") != std::string::npos);
}

TEST_CASE("cli: CAUSAL_SFDA_SEED overrides the config seed") {
  const auto dir = fresh_dir("envseed");
  REQUIRE(run_command("synth --out " + (dir / "scen").string() +
                      " --seed 11 --samples 24")
              .exit_code == 0);
  write_config(dir / "run.cfg", dir / "scen" / "scenario.txt", dir / "e1", 2);

  setenv("CAUSAL_SFDA_SEED", "777", 1);
  const auto env_run =
      run_command("adapt --config " + (dir / "run.cfg").string());
  unsetenv("CAUSAL_SFDA_SEED");
  REQUIRE(env_run.exit_code == 0);

  write_config(dir / "run777.cfg", dir / "scen" / "scenario.txt", dir / "e2",
               2);
  const auto explicit_run = run_command(
      "adapt --config " + (dir / "run777.cfg").string() + " --seed 777");
  REQUIRE(explicit_run.exit_code == 0);
  CHECK(read_file(dir / "e1" / "metrics.csv") ==
        read_file(dir / "e2" / "metrics.csv"));
}

TEST_CASE("cli: eval and report close the loop") {
  const auto dir = fresh_dir("evalreport");
  REQUIRE(run_command("synth --out " + (dir / "scen").string() +
                      " --seed 13 --samples 24 --setting generalized")
              .exit_code == 0);
  write_config(dir / "run.cfg", dir / "scen" / "scenario.txt", dir / "run");
  REQUIRE(run_command("adapt --config " + (dir / "run.cfg").string())
              .exit_code == 0);

  const auto results = dir / "results.txt";
  const auto eval = run_command("eval --run " + (dir / "run").string() +
                                " --results " + results.string() +
                                " --method demo");
  REQUIRE(eval.exit_code == 0);
  const auto text = read_file(results);
  CHECK(text.find("demo\tgeneralized\t") != std::string::npos);
  CHECK(text.find("generalized_source") != std::string::npos);

  // report merges multiple files into a union table.
  const auto fixture =
      (fs::path(CSFDA_FIXTURE_DIR) / "unification_scores.txt").string();
  const auto merged = run_command("report " + fixture + " " + fixture);
  REQUIRE(merged.exit_code == 0);
  CHECK(merged.output.find("CausalDA") != std::string::npos);
  CHECK(merged.output.find("H_all") != std::string::npos);

  // Empty/missing results input: exit 2.
  const auto missing = run_command("report " + (dir / "nope.txt").string());
  CHECK(missing.exit_code == 2);

  // Malformed results file: exit 2 with a line number.
  {
    std::ofstream bad(dir / "bad_results.txt");
    bad << "causal-sfda-results\tversion=1\nscore\tonly-two\n";
  }
  const auto malformed =
      run_command("report " + (dir / "bad_results.txt").string());
  CHECK(malformed.exit_code == 2);
  CHECK(malformed.output.find(":2:") != std::string::npos);
}

TEST_CASE("cli: verify prints counts and respects --trials and --dump") {
  const auto dir = fresh_dir("verify");
  const auto dump = (dir / "trials.csv").string();
  const auto res = run_command("verify --trials 10 --grad-samples 3 --dump " +
                               dump);
  REQUIRE(res.exit_code == 0);
  CHECK(res.output.find("lemma1: 10/10") != std::string::npos);
  CHECK(res.output.find("theorem1: 10/10") != std::string::npos);
  CHECK(res.output.find("grad: all < 1e-4") != std::string::npos);
  const auto csv = read_file(dump);
  CHECK(csv.rfind("trial,lhs_nats,rhs_nats,holds", 0) == 0);

  // Negative control: the injected gradient flip must fail verification.
  const auto flipped = run_command(
      "verify --trials 5 --grad-samples 3 --inject-vmi-grad-flip");
  CHECK(flipped.exit_code == 1);
  CHECK(flipped.output.find("FAILED") != std::string::npos);
}
