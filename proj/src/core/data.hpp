#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"

namespace csfda::data {

// A labeled feature set. Labels index into class_names; in open-set
// scenarios, labels >= the scenario's known-class count denote classes the
// source model has never seen.
struct LabeledSet {
  Mat features;             // n x D
  std::vector<int> labels;  // n, each in [0, |class_names|)
  std::vector<std::string> class_names;
  std::string domain;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
  void validate() const;
};

// Geometry of a synthetic domain pair. Known-class means sit uniformly on a
// circle of the given radius inside a random 2-D subspace of R^D; optional
// outlier classes (open-set unknowns) continue around the circle at
// outlier_radius_factor * radius. The target domain applies an in-plane
// anisotropic scale followed by an in-plane rotation to fresh draws from the
// same class Gaussians, then adds isotropic noise.
struct SyntheticDomainSpec {
  int classes = 5;
  int ambient_dim = 16;
  double radius = 1.0;
  double cluster_std = 0.15;
  int outlier_classes = 0;
  double outlier_radius_factor = 1.5;
  double rotation = 1.5707963267948966;  // pi/2
  double scale = 1.0;
  double noise = 0.0;
  int samples_per_class = 100;

  int total_classes() const { return classes + outlier_classes; }
  void validate() const;
};

enum class Setting { Closed, Open, Partial, Generalized, SfOodg };

std::string setting_name(Setting s);
Setting setting_from_name(const std::string& name);

// Declaration of an SFDA setting as the class-set relation between source
// and target plus protocol parameters.
struct ScenarioSpec {
  Setting setting = Setting::Closed;
  std::vector<int> source_classes;  // empty = all known classes
  std::vector<int> target_classes;  // empty = derived from the setting
  double source_train_ratio = 0.9;  // generalized split
  // sf-oodg variant presets: (corruption level, extra rotation) pairs applied
  // to the base target. Four presets mirror the four shifted-variant
  // evaluations structurally.
  std::vector<std::pair<double, double>> oodg_variants = {
      {4.0, 0.0}, {8.0, 0.1}, {12.0, 0.2}, {16.0, 0.3}};
};

// Materialized scenario ready for training/evaluation.
struct Scenario {
  Setting setting = Setting::Closed;
  LabeledSet source_train;
  std::optional<LabeledSet> source_test;  // generalized only
  std::vector<LabeledSet> targets;        // one entry except sf-oodg
  int known_classes = 0;  // classes the source model is trained on

  const LabeledSet& target() const { return targets.at(0); }
};

// Geometry helpers shared with the toy encoder: canonical class means
// (C_total x D) and the D x 2 orthonormal basis of the shift plane, both
// fully determined by (spec, seed).
Mat canonical_class_means(const SyntheticDomainSpec& spec, std::uint64_t seed);
Mat shift_plane_basis(const SyntheticDomainSpec& spec, std::uint64_t seed);

// Draws the covariate-shifted pair. Deterministic per (spec, seed); source
// and target use disjoint derived streams. A degenerate radius (0 with more
// than one class) is accepted with a warning on stderr.
std::pair<LabeledSet, LabeledSet> generate_domain_pair(
    const SyntheticDomainSpec& spec, std::uint64_t seed);

// One shifted domain over the same class geometry as generate_domain_pair
// for this seed, drawn from an independent sample stream named by tag.
// Used by domain sequences (continual protocol) where every domain shares
// the classes but not the draws.
LabeledSet generate_domain_variant(const SyntheticDomainSpec& spec,
                                   std::uint64_t geometry_seed,
                                   const std::string& stream_tag);

// Applies the declared class-set relation and protocol to a generated pair.
// closed: unchanged; open: source filtered to the known classes; partial:
// target filtered to the declared subset; generalized: closed plus a
// disjoint source train/test split at source_train_ratio; sf-oodg: source
// unchanged, targets replaced by the corrupted/rotated variants.
Scenario build_scenario(const std::pair<LabeledSet, LabeledSet>& pair,
                        const ScenarioSpec& spec, std::uint64_t seed);

// Gaussian corruption at kernel level k: additive noise with per-dimension
// std equal to (k/20) * the feature's std over the set. k = 0 returns the
// input unchanged (no RNG is consumed). Labels are never touched.
LabeledSet corrupt(const LabeledSet& set, double kernel_level,
                   std::uint64_t seed);

// Extra in-plane rotation applied to an existing set (sf-oodg variants).
LabeledSet rotate_in_plane(const LabeledSet& set, const Mat& plane_basis,
                           double angle);

// ---- Manifest I/O ---------------------------------------------------------
//
// One record per line, tab-separated: id, domain, label name, then D feature
// values printed with 17 significant digits (lossless double round-trip).
// The header line carries the format version, D, C and the class list:
//   causal-sfda-manifest<TAB>version=1<TAB>d=16<TAB>classes=cat,dog,...
// All parse errors name the offending line number.

void write_manifest(const LabeledSet& set, const std::string& path);
LabeledSet load_manifest(const std::string& path);

// 90/10-style split helper (also used by the continual protocol). Shuffles
// with the given seed; the two parts are disjoint and cover the input.
std::pair<LabeledSet, LabeledSet> split_set(const LabeledSet& set,
                                            double first_ratio,
                                            std::uint64_t seed);

// Subset by class membership, preserving order and class names.
LabeledSet filter_classes(const LabeledSet& set,
                          const std::vector<int>& keep_classes);

}  // namespace csfda::data
