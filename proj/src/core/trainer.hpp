#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "models.hpp"
#include "objectives.hpp"

namespace csfda::train {

// Hyper-parameters for source pre-training and the alternating adaptation
// loop. Trade-offs (alpha, sigma_w, tau) and the optimizer family
// (SGD + momentum 0.9, batch 64, 15 epochs) follow the reference
// configuration; learning rates are artifact defaults and configurable.
struct AdaptationConfig {
  // Trade-offs.
  double alpha = 0.003;
  double sigma_w = 0.4;
  double tau = 1.0;
  obj::EcSigns ec_signs;

  // Optimizer. Calibrated on the synthetic benchmark: the model rate is the
  // largest that adapts cleanly inside 15 epochs, and the prompt/sigma rates
  // are sized so phase-1 recovers the encoder's shared anchor offset.
  double lr_model = 0.03;
  double lr_prompt = 0.2;
  double lr_sigma = 0.05;
  double momentum = 0.9;
  bool cosine_decay = true;
  int batch_size = 64;
  int epochs = 15;

  // Prompt.
  std::string prompt_template = "a photo of a [CLS].";
  int prompt_tokens = 4;

  // Source pre-training.
  int source_epochs = 120;
  double source_lr = 0.05;

  std::uint64_t seed = 2024;

  void validate() const;
};

struct IterRecord {
  int iter = 0;
  double l_ec = 0.0, l_pmi = 0.0, l_vmi = 0.0;
  double l_ic = 0.0, l_un = 0.0, l_sce = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 0 = pre-adaptation snapshot
  double target_accuracy = 0.0;
  double pseudo_label_accuracy = 0.0;
};

// Counts every label access by purpose. The adaptation loop hands its
// optimization path a features-only view, so the "optimization" counter can
// only move if someone wires labels into an update — which is exactly what
// the source-free audit is there to catch.
struct LabelAudit {
  long optimization_reads = 0;
  long logging_reads = 0;
};

// Read access to a labeled set that records who asked for labels.
class AuditedSet {
 public:
  explicit AuditedSet(const data::LabeledSet& set) : set_(&set) {}

  const Mat& features() const { return set_->features; }
  int size() const { return set_->size(); }

  enum class Purpose { Optimization, Logging };
  const std::vector<int>& labels(Purpose purpose) {
    if (purpose == Purpose::Optimization)
      ++audit_.optimization_reads;
    else
      ++audit_.logging_reads;
    return set_->labels;
  }

  const LabelAudit& audit() const { return audit_; }

 private:
  const data::LabeledSet* set_;
  LabelAudit audit_;
};

struct RunHistory {
  std::vector<IterRecord> iters;
  std::vector<EpochRecord> epochs;  // epochs.size() == cfg.epochs + 1

  models::TargetModel final_model;
  models::PromptContext final_prompt;
  obj::DiagCovariance final_sigma;

  std::uint64_t vil_hash_before = 0;
  std::uint64_t vil_hash_after = 0;
  LabelAudit label_audit;
  int skipped_steps = 0;
  double wall_seconds = 0.0;
};

// SGD momentum buffers for the two phases.
struct PromptOptState {
  Mat v_tokens;
  Vec v_sigma;
};
struct ModelOptState {
  Mat v_w1, v_w2;
  Vec v_b1, v_b2;
};

// Supervised cross-entropy pre-training on the source domain. Stops at the
// epoch cap or once training accuracy plateaus (no improvement > 0.05 points
// over the trailing 10 epochs). Aborts with a diagnostic on non-finite loss.
models::TargetModel train_source(const models::TargetModel& init,
                                 const data::LabeledSet& source,
                                 const AdaptationConfig& cfg);

// One phase-1 update: a gradient step on the external-causality objective
// with respect to (prompt tokens, sigma); the target model is frozen. Steps
// with non-finite gradients are skipped and counted. Returns the loss record
// for this iteration (EC components filled in).
void phase1_step(const Mat& batch_features, models::PromptContext& prompt,
                 obj::DiagCovariance& cov, const models::TargetModel& target,
                 const models::VilEncoder& enc, const AdaptationConfig& cfg,
                 double lr_scale, PromptOptState& opt, IterRecord& rec,
                 int* skipped);

// Pseudo-labels for a batch from the current prompt: softmax of the frozen
// encoder's logits. Constants downstream.
obj::ProbBatch make_pseudo_labels(const Mat& batch_features,
                                  const models::PromptContext& prompt,
                                  const models::VilEncoder& enc);

// One phase-2 update: a gradient step on the internal-causality objective
// with respect to the target model parameters; prompt and sigma are frozen.
void phase2_step(const Mat& batch_features, const obj::ProbBatch& pseudo,
                 models::TargetModel& target, const AdaptationConfig& cfg,
                 double lr_scale, ModelOptState& opt, IterRecord& rec,
                 int* skipped);

// The full alternating loop: clone the source model, initialize the prompt,
// then per batch run phase-1, convert the updated prompt to pseudo-labels,
// and run phase-2. Target labels are touched only for history logging, via
// the audited accessor.
RunHistory adapt(const models::TargetModel& source_model,
                 const data::LabeledSet& target_set,
                 const models::VilEncoder& enc, const AdaptationConfig& cfg);

// ---- Run-directory artifacts ----------------------------------------------

// losses.csv: iter,L_EC,L_PMI,L_VMI,L_IC,L_UN,L_SCE
std::string losses_csv(const RunHistory& h);
// metrics.csv: epoch,target_accuracy,pseudo_label_accuracy
std::string metrics_csv(const RunHistory& h);

// Checkpoint text format (versioned; see docs/FORMATS.md): header lines,
// then one "tensor <name> <rows> <cols>" block per parameter with rows
// printed tab-separated at 17 significant digits.
struct Checkpoint {
  models::TargetModel model;
  models::PromptContext prompt;
  obj::DiagCovariance sigma;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
};

std::string checkpoint_to_string(const Checkpoint& ck);
Checkpoint checkpoint_from_string(const std::string& text);
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace csfda::train
