#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "models.hpp"
#include "trainer.hpp"

namespace csfda::config {

// A full run description, parsed from a flat key-value file with section
// headers (see docs/FORMATS.md). Every field has a default; unknown sections
// or keys are rejected with a line number. CAUSAL_SFDA_SEED in the
// environment overrides the seed from the file.
struct RunConfig {
  std::uint64_t seed = 2024;
  std::string out_dir = "run";
  std::string scenario_path;  // descriptor written by the synth driver

  // Source pre-training; a non-empty checkpoint path skips training.
  std::string source_checkpoint;

  int model_hidden = 64;

  models::ToyVilSpec encoder;
  // When unset, the encoder anchors follow the scenario's rotation.
  std::optional<double> anchor_rotation_override;

  train::AdaptationConfig adapt;

  double open_threshold = 0.5;

  std::string to_text() const;  // round-trippable snapshot
};

RunConfig parse_config_text(const std::string& text,
                            const std::string& origin = "<string>");
RunConfig load_config(const std::string& path);

}  // namespace csfda::config
