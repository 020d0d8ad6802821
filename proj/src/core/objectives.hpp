#pragma once

#include <map>
#include <string>

#include "common.hpp"

namespace csfda::obj {

// Loss functions for the two adaptation phases. Every loss returns its scalar
// together with analytic gradients for each learnable argument, keyed by
// argument name; the trainer chains these into model/prompt parameters via
// the models layer. Gradients are exact for strictly positive probabilities;
// where logs are clamped (entries below 1e-12) the clamped branch contributes
// zero derivative.

// n x C pre-softmax class scores.
struct LogitBatch {
  Mat values;

  void validate() const;
};

// n x C row-stochastic matrix. Produced batches (softmax outputs, pseudo
// labels) satisfy the tight 1e-9 row-sum invariant; loss preconditions use a
// wider window so finite-difference probes (step 1e-5) stay valid inputs.
struct ProbBatch {
  static constexpr double kRowSumTol = 1e-9;
  static constexpr double kLossInputRowSumTol = 1e-4;

  Mat values;

  void validate(double row_sum_tol = kRowSumTol) const;
};

// Learnable diagonal covariance of the variational distribution. Entries are
// clamped to the floor after every update; a sigma at the floor flags a
// dimension the bottleneck has squeezed out.
struct DiagCovariance {
  static constexpr double kFloor = 1e-6;

  Vec sigma;

  static DiagCovariance ones(int dim) {
    return DiagCovariance{Vec::Ones(dim)};
  }
  void clamp() {
    for (Eigen::Index c = 0; c < sigma.size(); ++c)
      if (sigma[c] < kFloor) sigma[c] = kFloor;
  }
};

struct LossValue {
  double value = 0.0;
  // Gradient per learnable argument, same shape as the argument. Vector
  // arguments (sigma) are stored as single-column matrices.
  std::map<std::string, Mat> gradients;
  // Sub-terms of composed objectives, for history logging.
  std::map<std::string, double> components;

  const Mat& grad(const std::string& name) const;
};

// Row-wise softmax with the usual max-shift stabilization.
Mat softmax_rows(const Mat& logits);
// VJP of softmax_rows: given p = softmax_rows(z) and g = dL/dp, returns
// dL/dz = p .* (g - rowsum(g .* p)).
Mat softmax_rows_vjp(const Mat& p, const Mat& g);

// Variational MI bound between the two logit variables, modeled as a Gaussian
// with mean equal to the target logits and learnable diagonal covariance:
//   value = -(1/n) sum_i [ (o_i - a_i)' Sigma^-1 (o_i - a_i) + log|Sigma| ].
// Gradients: "vil_logits" (n x C) and "sigma" (C x 1). Target logits are
// constants (the target model is frozen during phase-1).
LossValue vmi_loss(const LogitBatch& vil_logits,
                   const LogitBatch& target_logits, const DiagCovariance& cov);

// Covariance-weighted reparameterization of the ViL prediction:
//   p'_i = softmax( softmax(1/sigma) .* softmax(o_i) ).
// The inner weight vector suppresses high-variance (non-causal) dimensions.
ProbBatch reweight_fw(const LogitBatch& vil_logits, const DiagCovariance& cov);

struct ReweightGrads {
  Mat d_vil_logits;  // n x C
  Vec d_sigma;       // C
};
// VJP of reweight_fw for a downstream gradient g = dL/dp' (n x C).
ReweightGrads reweight_fw_vjp(const LogitBatch& vil_logits,
                              const DiagCovariance& cov, const Mat& g);

// Batch joint used by the probabilistic MI loss:
//   P = (1/n) sum_i vil_i pseudo_i', symmetrized and renormalized.
Mat pmi_batch_joint(const ProbBatch& vil_probs, const ProbBatch& pseudo_probs);

// Mutual information of the batch joint above. Gradients: "vil_probs" and
// "pseudo_probs".
LossValue pmi_loss(const ProbBatch& vil_probs, const ProbBatch& pseudo_probs);

// Sign multipliers for the external-causality objective. The default
// (+1, -1) composes the literal form  L_PMI - alpha * L_VMI;  flipping either
// sign selects the opposite optimization direction for that term.
struct EcSigns {
  double pmi = +1.0;
  double vmi = -1.0;
};

// Phase-1 self-supervised objective:
//   value = s_pmi * L_PMI(softmax(o), reweight(o, sigma))
//         + s_vmi * alpha * L_VMI(o, a, sigma).
// Gradients: "vil_logits", "sigma". Components: "pmi", "vmi".
LossValue ec_objective(const LogitBatch& vil_logits,
                       const LogitBatch& target_logits,
                       const DiagCovariance& cov, double alpha,
                       const EcSigns& signs = {});

// Information-maximization regularizer over target predictions:
//   value = sum_i H(p_i) + tau * sum_c rho_c log(rho_c * C),
// with rho the batch class marginal. Zero exactly when every row is one-hot
// and the marginal is uniform. Gradient: "target_probs".
LossValue un_loss(const ProbBatch& target_probs, double tau);

// Soft cross-entropy against (constant) pseudo-labels:
//   value = -(1/n) sum_i sum_c q_ic log p_ic.
// Gradient: "target_probs".
LossValue sce_loss(const ProbBatch& target_probs,
                   const ProbBatch& pseudo_labels);

// Phase-2 objective: un_loss + sigma_w * sce_loss. Gradient: "target_probs".
// Components: "un", "sce".
LossValue ic_objective(const ProbBatch& target_probs,
                       const ProbBatch& pseudo_labels, double tau,
                       double sigma_w);

}  // namespace csfda::obj
