#include "verify.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "data.hpp"
#include "models.hpp"
#include "objectives.hpp"
#include "rng.hpp"

namespace csfda::verify {

namespace {

constexpr double kFdStep = 1e-5;

Mat random_matrix(Rng& rng, int rows, int cols, double scale) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Dirichlet rows blended with uniform mass so FD probes keep entries positive
// and clear of the log clamps.
Mat random_prob_matrix(Rng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const auto row = rng.dirichlet_flat(static_cast<std::size_t>(cols));
    for (int j = 0; j < cols; ++j)
      m(i, j) = 0.9 * row[static_cast<std::size_t>(j)] + 0.1 / cols;
  }
  return m;
}

Vec random_sigma(Rng& rng, int dim) {
  Vec s(dim);
  for (int c = 0; c < dim; ++c) s[c] = 0.3 + 1.7 * rng.uniform();
  return s;
}

double relative_error(const Mat& analytic, const Mat& fd) {
  const double denom = analytic.norm() + fd.norm();
  if (denom < 1e-12) return 0.0;
  return (analytic - fd).norm() / denom;
}

Mat central_fd(const std::function<double(const Mat&)>& f, const Mat& x) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Mat hi = x, lo = x;
      hi(i, j) += kFdStep;
      lo(i, j) -= kFdStep;
      g(i, j) = (f(hi) - f(lo)) / (2.0 * kFdStep);
    }
  }
  return g;
}

struct CheckAccumulator {
  std::vector<GradCheck>& out;

  void add(const std::string& loss, const std::string& argument,
           double max_rel_err, int samples) {
    out.push_back({loss, argument, max_rel_err, samples,
                   max_rel_err < kGradTolerance});
  }
};

void run_gradient_suite(const VerifyOptions& opts,
                        std::vector<GradCheck>& checks) {
  Rng rng(derive_seed(opts.seed, "grad-suite"));
  const int samples = opts.grad_samples;
  const double flip = opts.inject_vmi_grad_sign_flip ? -1.0 : 1.0;

  double vmi_logits_err = 0.0, vmi_sigma_err = 0.0;
  double rw_logits_err = 0.0, rw_sigma_err = 0.0;
  double pmi_a_err = 0.0, pmi_b_err = 0.0;
  double ec_logits_err = 0.0, ec_sigma_err = 0.0;
  double un_err = 0.0, sce_err = 0.0, ic_err = 0.0;

  for (int s = 0; s < samples; ++s) {
    const int n = 2 + static_cast<int>(rng.uniform_index(6));
    const int C = 2 + static_cast<int>(rng.uniform_index(4));
    const Mat vl = random_matrix(rng, n, C, 2.0);
    const Mat tl = random_matrix(rng, n, C, 2.0);
    const Vec sigma = random_sigma(rng, C);
    const obj::DiagCovariance cov{sigma};
    const obj::LogitBatch vil{vl}, tgt{tl};

    {
      const auto lv = obj::vmi_loss(vil, tgt, cov);
      vmi_logits_err = std::max(
          vmi_logits_err,
          relative_error(flip * lv.grad("vil_logits"),
                         central_fd(
                             [&](const Mat& x) {
                               return obj::vmi_loss(obj::LogitBatch{x}, tgt,
                                                    cov)
                                   .value;
                             },
                             vl)));
      vmi_sigma_err = std::max(
          vmi_sigma_err,
          relative_error(flip * lv.grad("sigma"),
                         central_fd(
                             [&](const Mat& x) {
                               return obj::vmi_loss(
                                          vil, tgt,
                                          obj::DiagCovariance{Vec(x.col(0))})
                                   .value;
                             },
                             Mat(sigma))));
    }

    {
      // Eq. 12 is vector-valued; probe it through a fixed random weighting.
      const Mat w = random_matrix(rng, n, C, 1.0);
      const auto probe = [&](const obj::LogitBatch& l,
                             const obj::DiagCovariance& cv) {
        return (obj::reweight_fw(l, cv).values.array() * w.array()).sum();
      };
      const auto grads = obj::reweight_fw_vjp(vil, cov, w);
      rw_logits_err = std::max(
          rw_logits_err,
          relative_error(grads.d_vil_logits,
                         central_fd(
                             [&](const Mat& x) {
                               return probe(obj::LogitBatch{x}, cov);
                             },
                             vl)));
      rw_sigma_err = std::max(
          rw_sigma_err,
          relative_error(Mat(grads.d_sigma),
                         central_fd(
                             [&](const Mat& x) {
                               return probe(
                                   vil, obj::DiagCovariance{Vec(x.col(0))});
                             },
                             Mat(sigma))));
    }

    {
      const obj::ProbBatch a{random_prob_matrix(rng, n, C)};
      const obj::ProbBatch b{random_prob_matrix(rng, n, C)};
      const auto lv = obj::pmi_loss(a, b);
      pmi_a_err = std::max(
          pmi_a_err,
          relative_error(lv.grad("vil_probs"),
                         central_fd(
                             [&](const Mat& x) {
                               return obj::pmi_loss(obj::ProbBatch{x}, b)
                                   .value;
                             },
                             a.values)));
      pmi_b_err = std::max(
          pmi_b_err,
          relative_error(lv.grad("pseudo_probs"),
                         central_fd(
                             [&](const Mat& x) {
                               return obj::pmi_loss(a, obj::ProbBatch{x})
                                   .value;
                             },
                             b.values)));
    }

    {
      const double alpha = 0.003;
      const auto lv = obj::ec_objective(vil, tgt, cov, alpha);
      ec_logits_err = std::max(
          ec_logits_err,
          relative_error(lv.grad("vil_logits"),
                         central_fd(
                             [&](const Mat& x) {
                               return obj::ec_objective(obj::LogitBatch{x},
                                                        tgt, cov, alpha)
                                   .value;
                             },
                             vl)));
      ec_sigma_err = std::max(
          ec_sigma_err,
          relative_error(lv.grad("sigma"),
                         central_fd(
                             [&](const Mat& x) {
                               return obj::ec_objective(
                                          vil, tgt,
                                          obj::DiagCovariance{Vec(x.col(0))},
                                          alpha)
                                   .value;
                             },
                             Mat(sigma))));
    }

    {
      const obj::ProbBatch p{random_prob_matrix(rng, n, C)};
      const obj::ProbBatch q{random_prob_matrix(rng, n, C)};
      const double tau = 1.0, sigma_w = 0.4;
      const auto un = obj::un_loss(p, tau);
      un_err = std::max(
          un_err, relative_error(un.grad("target_probs"),
                                 central_fd(
                                     [&](const Mat& x) {
                                       return obj::un_loss(obj::ProbBatch{x},
                                                           tau)
                                           .value;
                                     },
                                     p.values)));
      const auto sce = obj::sce_loss(p, q);
      sce_err = std::max(
          sce_err, relative_error(sce.grad("target_probs"),
                                  central_fd(
                                      [&](const Mat& x) {
                                        return obj::sce_loss(
                                                   obj::ProbBatch{x}, q)
                                            .value;
                                      },
                                      p.values)));
      const auto ic = obj::ic_objective(p, q, tau, sigma_w);
      ic_err = std::max(
          ic_err, relative_error(ic.grad("target_probs"),
                                 central_fd(
                                     [&](const Mat& x) {
                                       return obj::ic_objective(
                                                  obj::ProbBatch{x}, q, tau,
                                                  sigma_w)
                                           .value;
                                     },
                                     p.values)));
    }
  }

  CheckAccumulator acc{checks};
  acc.add("vmi_loss", "vil_logits", vmi_logits_err, samples);
  acc.add("vmi_loss", "sigma", vmi_sigma_err, samples);
  acc.add("reweight_fw", "vil_logits", rw_logits_err, samples);
  acc.add("reweight_fw", "sigma", rw_sigma_err, samples);
  acc.add("pmi_loss", "vil_probs", pmi_a_err, samples);
  acc.add("pmi_loss", "pseudo_probs", pmi_b_err, samples);
  acc.add("ec_objective", "vil_logits", ec_logits_err, samples);
  acc.add("ec_objective", "sigma", ec_sigma_err, samples);
  acc.add("un_loss", "target_probs", un_err, samples);
  acc.add("sce_loss", "target_probs", sce_err, samples);
  acc.add("ic_objective", "target_probs", ic_err, samples);
}

void run_model_gradient_checks(const VerifyOptions& opts,
                               std::vector<GradCheck>& checks) {
  Rng rng(derive_seed(opts.seed, "model-grad"));
  data::SyntheticDomainSpec spec;
  spec.samples_per_class = 4;
  const Mat means = data::canonical_class_means(spec, opts.seed);
  const Mat basis = data::shift_plane_basis(spec, opts.seed);
  std::vector<std::string> names;
  for (int c = 0; c < spec.classes; ++c)
    names.push_back("class" + std::to_string(c));
  const models::ToyVilEncoder enc(means, basis, names, models::ToyVilSpec{},
                                  opts.seed);

  const int reps = std::max(1, opts.grad_samples / 5);
  double prompt_err = 0.0, model_err = 0.0;
  for (int r = 0; r < reps; ++r) {
    const Mat batch = random_matrix(rng, 4, spec.ambient_dim, 1.0);
    const Mat w = random_matrix(rng, 4, spec.classes, 1.0);

    auto ctx = models::init_prompt("a photo of a [CLS].", 4, enc.embed_dim(),
                                   opts.seed + r);
    const Mat analytic = enc.class_logits_vjp(batch, ctx, w);
    Mat fd(ctx.tokens.rows(), ctx.tokens.cols());
    for (Eigen::Index i = 0; i < ctx.tokens.rows(); ++i)
      for (Eigen::Index j = 0; j < ctx.tokens.cols(); ++j) {
        auto hi = ctx, lo = ctx;
        hi.tokens(i, j) += kFdStep;
        lo.tokens(i, j) -= kFdStep;
        fd(i, j) = ((enc.class_logits(batch, hi).values.array() * w.array())
                        .sum() -
                    (enc.class_logits(batch, lo).values.array() * w.array())
                        .sum()) /
                   (2.0 * kFdStep);
      }
    prompt_err = std::max(prompt_err, relative_error(analytic, fd));

    auto model = models::make_target_model(spec.ambient_dim, 16,
                                           spec.classes, opts.seed + r);
    const auto grads = model.backward(batch, w);
    auto probe = [&] {
      return (model.logits(batch).values.array() * w.array()).sum();
    };
    auto check_param = [&](double* p, double analytic_g) {
      const double orig = *p;
      *p = orig + kFdStep;
      const double hi = probe();
      *p = orig - kFdStep;
      const double lo = probe();
      *p = orig;
      const double fd_g = (hi - lo) / (2.0 * kFdStep);
      const double denom = std::abs(analytic_g) + std::abs(fd_g);
      if (denom > 1e-12)
        model_err = std::max(model_err,
                             std::abs(analytic_g - fd_g) / denom);
    };
    // 10 parameters spread over every tensor.
    for (int k = 0; k < 4; ++k) {
      const auto i = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::uint64_t>(model.w1.rows())));
      const auto j = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::uint64_t>(model.w1.cols())));
      check_param(&model.w1(i, j), grads.w1(i, j));
    }
    for (int k = 0; k < 3; ++k) {
      const auto i = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::uint64_t>(model.w2.rows())));
      const auto j = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::uint64_t>(model.w2.cols())));
      check_param(&model.w2(i, j), grads.w2(i, j));
    }
    for (int k = 0; k < 2; ++k) {
      const auto i = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::uint64_t>(model.b1.size())));
      check_param(&model.b1(i), grads.b1(i));
    }
    {
      const auto i = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::uint64_t>(model.b2.size())));
      check_param(&model.b2(i), grads.b2(i));
    }
  }

  CheckAccumulator acc{checks};
  acc.add("vil_class_logits", "prompt_tokens", prompt_err, reps);
  acc.add("target_logits", "parameters", model_err, reps);
}

void dump_sweeps(const std::string& path, const mi::SweepReport& lemma1,
                 const mi::SweepReport& theorem1) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  out << "trial,lhs_nats,rhs_nats,holds\n";
  int trial = 0;
  auto emit = [&](const mi::SweepReport& report) {
    for (const auto& t : report.trials) {
      char buf[80];
      std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%d\n", trial, t.lhs,
                    t.rhs, t.holds ? 1 : 0);
      out << buf;
      ++trial;
    }
  };
  emit(lemma1);
  emit(theorem1);
}

}  // namespace

bool VerifyReport::all_passed() const {
  if (!lemma1.all_passed() || !theorem1.all_passed()) return false;
  for (const auto& check : gradient_checks)
    if (!check.passed) return false;
  return true;
}

VerifyReport run_verification(const VerifyOptions& opts) {
  require(opts.trials >= 1, "verify: trials must be >= 1");
  require(opts.grad_samples >= 1, "verify: grad_samples must be >= 1");

  VerifyReport report;
  report.lemma1 = mi::lemma1_sweep(opts.seed, opts.trials);
  report.theorem1 = mi::theorem1_sweep(opts.seed, opts.trials);
  run_gradient_suite(opts, report.gradient_checks);
  run_model_gradient_checks(opts, report.gradient_checks);

  if (!opts.dump_csv_path.empty())
    dump_sweeps(opts.dump_csv_path, report.lemma1, report.theorem1);
  return report;
}

std::string render_report(const VerifyReport& report) {
  std::ostringstream out;
  out << "lemma1: " << report.lemma1.passed << '/' << report.lemma1.total()
      << (report.lemma1.all_passed() ? "" : "  FAILED") << '\n';
  out << "theorem1: " << report.theorem1.passed << '/'
      << report.theorem1.total()
      << (report.theorem1.all_passed() ? "" : "  FAILED") << '\n';

  double worst = 0.0;
  bool grad_ok = true;
  for (const auto& check : report.gradient_checks) {
    worst = std::max(worst, check.max_rel_err);
    grad_ok = grad_ok && check.passed;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", worst);
  out << "grad: " << (grad_ok ? "all < 1e-4" : "FAILED") << " (worst " << buf
      << ")\n";
  for (const auto& check : report.gradient_checks) {
    std::snprintf(buf, sizeof(buf), "%.3g", check.max_rel_err);
    out << "  " << check.loss << " d/d " << check.argument << ": max rel err "
        << buf << " over " << check.samples << " inputs"
        << (check.passed ? "" : "  FAILED") << '\n';
  }
  return out.str();
}

}  // namespace csfda::verify
