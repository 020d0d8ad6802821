#include "objectives.hpp"

#include <cmath>
#include <string>

namespace csfda::obj {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) +
              "x" + std::to_string(a.cols()) + " vs " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
}

void require_finite(const Mat& m, const char* what) {
  require(m.allFinite(), std::string(what) + ": non-finite entries");
}

Mat as_column(const Vec& v) { return Mat(v); }

}  // namespace

void LogitBatch::validate() const {
  require(values.rows() >= 1, "logit batch needs n >= 1");
  require(values.cols() >= 2, "logit batch needs C >= 2");
  require_finite(values, "logit batch");
}

void ProbBatch::validate(double row_sum_tol) const {
  require(values.rows() >= 1, "prob batch needs n >= 1");
  require(values.cols() >= 2, "prob batch needs C >= 2");
  require_finite(values, "prob batch");
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      require(values(i, c) >= 0.0, "prob batch row " + std::to_string(i) +
                                       " has a negative entry");
      sum += values(i, c);
    }
    require(std::abs(sum - 1.0) <= row_sum_tol, "prob batch row " +
                                                    std::to_string(i) +
                                                    " does not sum to 1");
  }
}

const Mat& LossValue::grad(const std::string& name) const {
  const auto it = gradients.find(name);
  require(it != gradients.end(), "no gradient named '" + name + "'");
  return it->second;
}

Mat softmax_rows(const Mat& logits) {
  Mat p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      p(i, c) = std::exp(logits(i, c) - m);
      sum += p(i, c);
    }
    p.row(i) /= sum;
  }
  return p;
}

Mat softmax_rows_vjp(const Mat& p, const Mat& g) {
  Mat out(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double dot = p.row(i).dot(g.row(i));
    out.row(i) = p.row(i).cwiseProduct(g.row(i).array().matrix() -
                                       Mat::Constant(1, p.cols(), dot));
  }
  return out;
}

LossValue vmi_loss(const LogitBatch& vil_logits,
                   const LogitBatch& target_logits,
                   const DiagCovariance& cov) {
  vil_logits.validate();
  target_logits.validate();
  require_same_shape(vil_logits.values, target_logits.values, "vmi_loss");
  require(cov.sigma.size() == vil_logits.values.cols(),
          "vmi_loss: covariance dimension does not match class count");

  // Sigma entries below the floor are treated as the floor, not an error.
  Vec sigma = cov.sigma;
  for (Eigen::Index c = 0; c < sigma.size(); ++c)
    if (sigma[c] < DiagCovariance::kFloor) sigma[c] = DiagCovariance::kFloor;

  const Mat diff = vil_logits.values - target_logits.values;
  const auto n = static_cast<double>(diff.rows());
  double logdet = 0.0;
  for (Eigen::Index c = 0; c < sigma.size(); ++c) logdet += std::log(sigma[c]);

  double quad = 0.0;
  Mat d_vil = Mat::Zero(diff.rows(), diff.cols());
  Vec d_sigma = Vec::Zero(sigma.size());
  for (Eigen::Index i = 0; i < diff.rows(); ++i) {
    for (Eigen::Index c = 0; c < diff.cols(); ++c) {
      const double d = diff(i, c);
      quad += d * d / sigma[c];
      d_vil(i, c) = -2.0 * d / (n * sigma[c]);
      d_sigma[c] += d * d / (n * sigma[c] * sigma[c]);
    }
  }
  for (Eigen::Index c = 0; c < sigma.size(); ++c) d_sigma[c] -= 1.0 / sigma[c];

  LossValue out;
  out.value = -(quad / n + logdet);
  out.gradients["vil_logits"] = std::move(d_vil);
  out.gradients["sigma"] = as_column(d_sigma);
  return out;
}

ProbBatch reweight_fw(const LogitBatch& vil_logits,
                      const DiagCovariance& cov) {
  vil_logits.validate();
  require(cov.sigma.size() == vil_logits.values.cols(),
          "reweight_fw: covariance dimension does not match class count");
  const Mat w = softmax_rows(cov.sigma.cwiseInverse().transpose());  // 1 x C
  const Mat u = softmax_rows(vil_logits.values);
  Mat v(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    v.row(i) = u.row(i).cwiseProduct(w.row(0));
  return ProbBatch{softmax_rows(v)};
}

ReweightGrads reweight_fw_vjp(const LogitBatch& vil_logits,
                              const DiagCovariance& cov, const Mat& g) {
  require_same_shape(vil_logits.values, g, "reweight_fw_vjp");
  const Vec inv_sigma = cov.sigma.cwiseInverse();
  const Mat w = softmax_rows(inv_sigma.transpose());  // 1 x C
  const Mat u = softmax_rows(vil_logits.values);
  Mat v(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    v.row(i) = u.row(i).cwiseProduct(w.row(0));
  const Mat p = softmax_rows(v);

  const Mat gv = softmax_rows_vjp(p, g);
  Mat gu(u.rows(), u.cols());
  Mat gw_acc = Mat::Zero(1, u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    gu.row(i) = gv.row(i).cwiseProduct(w.row(0));
    gw_acc.row(0) += gv.row(i).cwiseProduct(u.row(i));
  }

  ReweightGrads out;
  out.d_vil_logits = softmax_rows_vjp(u, gu);
  const Mat gr = softmax_rows_vjp(w, gw_acc);  // gradient wrt 1/sigma
  out.d_sigma = Vec(u.cols());
  for (Eigen::Index c = 0; c < u.cols(); ++c)
    out.d_sigma[c] = -gr(0, c) / (cov.sigma[c] * cov.sigma[c]);
  return out;
}

Mat pmi_batch_joint(const ProbBatch& vil_probs,
                    const ProbBatch& pseudo_probs) {
  require_same_shape(vil_probs.values, pseudo_probs.values, "pmi_batch_joint");
  const auto n = static_cast<double>(vil_probs.values.rows());
  Mat joint = vil_probs.values.transpose() * pseudo_probs.values / n;
  joint = ((joint + joint.transpose()) / 2.0).eval();
  joint /= joint.sum();
  return joint;
}

LossValue pmi_loss(const ProbBatch& vil_probs, const ProbBatch& pseudo_probs) {
  vil_probs.validate(ProbBatch::kLossInputRowSumTol);
  pseudo_probs.validate(ProbBatch::kLossInputRowSumTol);
  require_same_shape(vil_probs.values, pseudo_probs.values, "pmi_loss");

  const auto n = static_cast<double>(vil_probs.values.rows());
  const Eigen::Index C = vil_probs.values.cols();

  // Forward chain, kept explicit so the backward pass can mirror it:
  // raw batch joint -> symmetrize -> renormalize -> discrete MI.
  const Mat raw = vil_probs.values.transpose() * pseudo_probs.values / n;
  const Mat sym = (raw + raw.transpose()) / 2.0;
  const double total = sym.sum();
  const Mat joint = sym / total;

  const Vec pr = joint.rowwise().sum();
  const Vec pc = joint.colwise().sum().transpose();
  double mi = 0.0;
  Mat g_joint(C, C);
  for (Eigen::Index a = 0; a < C; ++a) {
    for (Eigen::Index b = 0; b < C; ++b) {
      const double log_ratio =
          clamped_log(joint(a, b)) - clamped_log(pr[a]) - clamped_log(pc[b]);
      mi += joint(a, b) * log_ratio;
      g_joint(a, b) = log_ratio - 1.0;
    }
  }

  // Chain through the renormalization and the symmetrization.
  const double weighted = (g_joint.array() * joint.array()).sum();
  const Mat g_sym = (g_joint.array() - weighted).matrix() / total;
  const Mat g_raw = (g_sym + g_sym.transpose()) / 2.0;

  LossValue out;
  out.value = mi;
  out.gradients["vil_probs"] = pseudo_probs.values * g_raw.transpose() / n;
  out.gradients["pseudo_probs"] = vil_probs.values * g_raw / n;
  return out;
}

LossValue ec_objective(const LogitBatch& vil_logits,
                       const LogitBatch& target_logits,
                       const DiagCovariance& cov, double alpha,
                       const EcSigns& signs) {
  require(alpha >= 0.0, "ec_objective: alpha must be >= 0");

  const ProbBatch vil_probs{softmax_rows(vil_logits.values)};
  const ProbBatch reweighted = reweight_fw(vil_logits, cov);
  const LossValue pmi = pmi_loss(vil_probs, reweighted);
  const LossValue vmi = vmi_loss(vil_logits, target_logits, cov);

  LossValue out;
  out.value = signs.pmi * pmi.value + signs.vmi * alpha * vmi.value;
  out.components["pmi"] = pmi.value;
  out.components["vmi"] = vmi.value;

  // d/d vil_logits: through softmax into the first PMI argument, through
  // reweight_fw into the second, plus the direct VMI term.
  const Mat d_from_vil_probs =
      softmax_rows_vjp(vil_probs.values, signs.pmi * pmi.grad("vil_probs"));
  const ReweightGrads rw =
      reweight_fw_vjp(vil_logits, cov, signs.pmi * pmi.grad("pseudo_probs"));
  out.gradients["vil_logits"] = d_from_vil_probs + rw.d_vil_logits +
                                signs.vmi * alpha * vmi.grad("vil_logits");
  out.gradients["sigma"] =
      Mat(rw.d_sigma) + signs.vmi * alpha * vmi.grad("sigma");
  return out;
}

LossValue un_loss(const ProbBatch& target_probs, double tau) {
  target_probs.validate(ProbBatch::kLossInputRowSumTol);
  require(tau >= 0.0, "un_loss: tau must be >= 0");
  const Mat& p = target_probs.values;
  const auto n = static_cast<double>(p.rows());
  const auto C = static_cast<double>(p.cols());

  double entropy_sum = 0.0;
  Mat grad = Mat::Zero(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double lp = clamped_log(p(i, c));
      entropy_sum -= p(i, c) * lp;
      grad(i, c) = -(lp + 1.0);
    }
  }

  // KL(rho || uniform) >= 0 for simplex inputs; no rectifier here, so the
  // function stays smooth for finite-difference probes slightly off the
  // simplex (where the pseudo-KL may be a hair negative).
  const Vec rho = p.colwise().mean().transpose();
  double kl = 0.0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    const double lr = clamped_log(rho[c] * C);
    if (rho[c] > 0.0) kl += rho[c] * lr;
    grad.col(c).array() += tau / n * (lr + 1.0);
  }

  LossValue out;
  out.value = entropy_sum + tau * kl;
  out.components["entropy"] = entropy_sum;
  out.components["balance_kl"] = kl;
  out.gradients["target_probs"] = std::move(grad);
  return out;
}

LossValue sce_loss(const ProbBatch& target_probs,
                   const ProbBatch& pseudo_labels) {
  target_probs.validate(ProbBatch::kLossInputRowSumTol);
  pseudo_labels.validate(ProbBatch::kLossInputRowSumTol);
  require_same_shape(target_probs.values, pseudo_labels.values, "sce_loss");
  const Mat& p = target_probs.values;
  const Mat& q = pseudo_labels.values;
  const auto n = static_cast<double>(p.rows());

  double value = 0.0;
  Mat grad(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double pc = p(i, c) < kProbFloor ? kProbFloor : p(i, c);
      value -= q(i, c) * std::log(pc);
      grad(i, c) = -q(i, c) / (n * pc);
    }
  }

  LossValue out;
  out.value = value / n;
  out.gradients["target_probs"] = std::move(grad);
  return out;
}

LossValue ic_objective(const ProbBatch& target_probs,
                       const ProbBatch& pseudo_labels, double tau,
                       double sigma_w) {
  require(sigma_w >= 0.0, "ic_objective: sigma_w must be >= 0");
  const LossValue un = un_loss(target_probs, tau);
  const LossValue sce = sce_loss(target_probs, pseudo_labels);

  LossValue out;
  out.value = un.value + sigma_w * sce.value;
  out.components["un"] = un.value;
  out.components["sce"] = sce.value;
  out.components["entropy"] = un.components.at("entropy");
  out.components["balance_kl"] = un.components.at("balance_kl");
  out.gradients["target_probs"] =
      un.grad("target_probs") + sigma_w * sce.grad("target_probs");
  return out;
}

}  // namespace csfda::obj
