#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "evaluation.hpp"

namespace csfda::driver {

// ---- Scenario descriptors ---------------------------------------------------
//
// The synth driver writes manifests plus one descriptor file tying them
// together; adapt/eval drivers rebuild everything from it. Manifest paths are
// stored relative to the descriptor. The generating synthetic spec rides
// along so the toy encoder geometry can be reconstructed deterministically.

struct ScenarioDescriptor {
  data::Setting setting = data::Setting::Closed;
  int known_classes = 0;
  std::string source_manifest;
  std::string source_test_manifest;  // generalized only
  std::vector<std::string> target_manifests;
  data::SyntheticDomainSpec synthetic;
  std::uint64_t seed = 0;

  std::string to_text() const;
};

ScenarioDescriptor descriptor_from_string(const std::string& text,
                                          const std::string& origin);
void save_descriptor(const ScenarioDescriptor& d, const std::string& path);
ScenarioDescriptor load_descriptor(const std::string& path);

// Loads the manifests referenced by a descriptor into a Scenario.
data::Scenario materialize(const ScenarioDescriptor& d,
                           const std::string& descriptor_path);

// ---- synth ------------------------------------------------------------------

struct SynthOptions {
  data::SyntheticDomainSpec spec;
  data::ScenarioSpec scenario;
  std::uint64_t seed = 2024;
};

// Generates the domain pair, applies the scenario, writes the manifests and
// descriptor under out_dir, and returns the descriptor path.
std::string run_synth(const SynthOptions& opts, const std::string& out_dir);

// ---- adapt ------------------------------------------------------------------

struct AdaptOutcome {
  std::string run_dir;
  double final_target_accuracy = 0.0;
  double final_pseudo_accuracy = 0.0;
  double wall_seconds = 0.0;
};

// Full driver: load config + scenario, build the encoder, pre-train or load
// the source model, run the alternating adaptation, and write the run
// directory (config snapshot, losses.csv, metrics.csv, checkpoint.txt,
// source_checkpoint.txt, audit.txt, summary.txt).
AdaptOutcome run_adapt(const config::RunConfig& cfg);

// ---- eval -------------------------------------------------------------------

struct EvalOptions {
  std::string run_dir;      // produced by run_adapt
  std::string method_name = "CausalDA";
  double open_threshold = 0.5;
  // Optional scenario override; defaults to the one in the run config.
  std::string scenario_path;
};

// Evaluates the run's final checkpoint under the scenario's protocol,
// returns the score records, and merges them into results_out (created when
// missing). Also evaluates the retained source checkpoint for the
// generalized protocol sanity row when present.
eval::ScenarioScores run_eval(const EvalOptions& opts,
                              const std::string& results_out);

// ---- continual --------------------------------------------------------------

struct ContinualOptions {
  data::SyntheticDomainSpec base;  // shared class geometry
  std::vector<double> rotations;   // one domain per entry; >= 2
  std::uint64_t seed = 2024;
  train::AdaptationConfig adapt;
  int hidden = 64;
  // Encoder exposure angle; NaN anchors it mid-sequence.
  double anchor_rotation = std::numeric_limits<double>::quiet_NaN();
  eval::ContinualConfig protocol;
};

// Builds one domain per rotation over a shared geometry, trains on the first
// and adapts along the sequence with a single frozen encoder.
eval::ContinualReport run_continual(const ContinualOptions& opts);

// Accuracy grid plus the average-drop row, formatted for terminals / CSV.
std::string render_continual(const eval::ContinualReport& report);
std::string continual_csv(const eval::ContinualReport& report);

}  // namespace csfda::driver
