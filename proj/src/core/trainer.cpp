#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "rng.hpp"

namespace csfda::train {

namespace {

constexpr double kPi = 3.14159265358979323846;

double cosine_scale(bool enabled, int iter, int total) {
  if (!enabled || total <= 1) return 1.0;
  return 0.5 * (1.0 + std::cos(kPi * iter / total));
}

// Argmax accuracy with ties broken toward the lowest class index.
double argmax_accuracy(const Mat& scores, const std::vector<int>& labels) {
  int hits = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = static_cast<int>(c);
    hits += best == labels[static_cast<std::size_t>(i)];
  }
  return 100.0 * hits / static_cast<double>(scores.rows());
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_tensor(std::ostream& out, const std::string& name, const Mat& m) {
  out << "tensor\t" << name << '\t' << m.rows() << '\t' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << '\t';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

}  // namespace

void AdaptationConfig::validate() const {
  require(alpha >= 0.0 && sigma_w >= 0.0 && tau >= 0.0,
          "trade-off parameters must be >= 0");
  require(batch_size >= 1 && epochs >= 0, "bad batch size or epoch count");
  require(prompt_tokens >= 1, "prompt_tokens must be >= 1");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(lr_model >= 0.0 && lr_prompt >= 0.0 && lr_sigma >= 0.0 &&
              source_lr >= 0.0,
          "learning rates must be >= 0");
}

models::TargetModel train_source(const models::TargetModel& init,
                                 const data::LabeledSet& source,
                                 const AdaptationConfig& cfg) {
  cfg.validate();
  source.validate();
  require(init.input_dim() == source.dim(),
          "source set dimension does not match the model");

  models::TargetModel model = models::clone_model(init);
  if (cfg.source_epochs == 0) return model;

  const int n = source.size();
  const int C = model.num_classes();
  Rng shuffle_rng(derive_seed(cfg.seed, "source-shuffle"));

  ModelOptState opt;
  opt.v_w1 = Mat::Zero(model.w1.rows(), model.w1.cols());
  opt.v_b1 = Vec::Zero(model.b1.size());
  opt.v_w2 = Mat::Zero(model.w2.rows(), model.w2.cols());
  opt.v_b2 = Vec::Zero(model.b2.size());

  double best_acc = -1.0;
  int epochs_since_improvement = 0;

  for (int epoch = 0; epoch < cfg.source_epochs; ++epoch) {
    const auto perm = shuffle_rng.permutation(static_cast<std::size_t>(n));
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      Mat batch(b, source.dim());
      std::vector<int> ys(static_cast<std::size_t>(b));
      for (int k = 0; k < b; ++k) {
        const auto idx = perm[static_cast<std::size_t>(start + k)];
        batch.row(k) = source.features.row(static_cast<Eigen::Index>(idx));
        ys[static_cast<std::size_t>(k)] = source.labels[idx];
      }

      const auto logits = model.logits(batch);
      const Mat probs = obj::softmax_rows(logits.values);
      double loss = 0.0;
      Mat d_logits = probs;
      for (int k = 0; k < b; ++k) {
        const int y = ys[static_cast<std::size_t>(k)];
        loss -= clamped_log(probs(k, y));
        d_logits(k, y) -= 1.0;
      }
      loss /= b;
      d_logits /= b;
      if (!std::isfinite(loss))
        throw RuntimeError("source training diverged (non-finite loss)");

      const auto g = model.backward(batch, d_logits);
      const double lr = cfg.source_lr;
      opt.v_w1 = cfg.momentum * opt.v_w1 - lr * g.w1;
      opt.v_b1 = cfg.momentum * opt.v_b1 - lr * g.b1;
      opt.v_w2 = cfg.momentum * opt.v_w2 - lr * g.w2;
      opt.v_b2 = cfg.momentum * opt.v_b2 - lr * g.b2;
      model.w1 += opt.v_w1;
      model.b1 += opt.v_b1;
      model.w2 += opt.v_w2;
      model.b2 += opt.v_b2;
    }

    const double acc =
        argmax_accuracy(model.logits(source.features).values, source.labels);
    if (acc > best_acc + 0.05) {
      best_acc = acc;
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
    }
    if (acc >= 100.0 || epochs_since_improvement >= 10) break;
  }
  (void)C;
  return model;
}

void phase1_step(const Mat& batch_features, models::PromptContext& prompt,
                 obj::DiagCovariance& cov, const models::TargetModel& target,
                 const models::VilEncoder& enc, const AdaptationConfig& cfg,
                 double lr_scale, PromptOptState& opt, IterRecord& rec,
                 int* skipped) {
  const auto vil_logits = enc.class_logits(batch_features, prompt);
  const auto target_logits = target.logits(batch_features);  // frozen
  const auto ec = obj::ec_objective(vil_logits, target_logits, cov, cfg.alpha,
                                    cfg.ec_signs);

  rec.l_ec = ec.value;
  rec.l_pmi = ec.components.at("pmi");
  rec.l_vmi = ec.components.at("vmi");

  const Mat d_tokens =
      enc.class_logits_vjp(batch_features, prompt, ec.grad("vil_logits"));
  const Vec d_sigma = Vec(ec.grad("sigma"));

  if (!d_tokens.allFinite() || !d_sigma.allFinite() ||
      !std::isfinite(ec.value)) {
    std::cerr << "warning: phase-1 step skipped (non-finite gradient)\n";
    if (skipped) ++*skipped;
    return;
  }

  opt.v_tokens = cfg.momentum * opt.v_tokens -
                 cfg.lr_prompt * lr_scale * d_tokens;
  opt.v_sigma = cfg.momentum * opt.v_sigma - cfg.lr_sigma * lr_scale * d_sigma;
  prompt.tokens += opt.v_tokens;
  cov.sigma += opt.v_sigma;
  cov.clamp();
}

obj::ProbBatch make_pseudo_labels(const Mat& batch_features,
                                  const models::PromptContext& prompt,
                                  const models::VilEncoder& enc) {
  return obj::ProbBatch{
      obj::softmax_rows(enc.class_logits(batch_features, prompt).values)};
}

void phase2_step(const Mat& batch_features, const obj::ProbBatch& pseudo,
                 models::TargetModel& target, const AdaptationConfig& cfg,
                 double lr_scale, ModelOptState& opt, IterRecord& rec,
                 int* skipped) {
  const auto logits = target.logits(batch_features);
  const obj::ProbBatch probs{obj::softmax_rows(logits.values)};
  const auto n = static_cast<double>(batch_features.rows());

  // The internal objective sums per-sample entropies, so its literal batch
  // value scales with the batch while the balance and cross-entropy terms do
  // not. The step therefore descends the per-sample-normalized estimator
  // ic(p, q, n*tau, n*sigma_w) / n, which keeps the three terms at the
  // configured trade-off ratios regardless of batch size. Recorded losses
  // stay in the literal per-batch form.
  const auto ic =
      obj::ic_objective(probs, pseudo, n * cfg.tau, n * cfg.sigma_w);

  rec.l_sce = ic.components.at("sce");
  rec.l_un = ic.components.at("entropy") +
             cfg.tau * ic.components.at("balance_kl");
  rec.l_ic = rec.l_un + cfg.sigma_w * rec.l_sce;

  const Mat d_logits = obj::softmax_rows_vjp(
      probs.values, Mat(ic.grad("target_probs") / n));
  const auto g = target.backward(batch_features, d_logits);

  if (!g.w1.allFinite() || !g.b1.allFinite() || !g.w2.allFinite() ||
      !g.b2.allFinite() || !std::isfinite(ic.value)) {
    std::cerr << "warning: phase-2 step skipped (non-finite gradient)\n";
    if (skipped) ++*skipped;
    return;
  }

  const double lr = cfg.lr_model * lr_scale;
  opt.v_w1 = cfg.momentum * opt.v_w1 - lr * g.w1;
  opt.v_b1 = cfg.momentum * opt.v_b1 - lr * g.b1;
  opt.v_w2 = cfg.momentum * opt.v_w2 - lr * g.w2;
  opt.v_b2 = cfg.momentum * opt.v_b2 - lr * g.b2;
  target.w1 += opt.v_w1;
  target.b1 += opt.v_b1;
  target.w2 += opt.v_w2;
  target.b2 += opt.v_b2;
}

RunHistory adapt(const models::TargetModel& source_model,
                 const data::LabeledSet& target_set,
                 const models::VilEncoder& enc, const AdaptationConfig& cfg) {
  cfg.validate();
  target_set.validate();
  require(source_model.num_classes() == enc.num_classes(),
          "model/encoder class counts differ");
  require(source_model.input_dim() == target_set.dim(),
          "target set dimension does not match the model");
  require(enc.input_dim() == target_set.dim(),
          "target set dimension does not match the encoder");

  const auto t0 = std::chrono::steady_clock::now();

  RunHistory h;
  h.vil_hash_before = enc.param_hash();

  models::TargetModel model = models::clone_model(source_model);
  models::PromptContext prompt = models::init_prompt(
      cfg.prompt_template, cfg.prompt_tokens, enc.embed_dim(), cfg.seed);
  obj::DiagCovariance sigma = obj::DiagCovariance::ones(enc.num_classes());

  AuditedSet audited(target_set);
  const Mat& features = audited.features();
  const int n = audited.size();

  PromptOptState popt;
  popt.v_tokens = Mat::Zero(prompt.tokens.rows(), prompt.tokens.cols());
  popt.v_sigma = Vec::Zero(sigma.sigma.size());
  ModelOptState mopt;
  mopt.v_w1 = Mat::Zero(model.w1.rows(), model.w1.cols());
  mopt.v_b1 = Vec::Zero(model.b1.size());
  mopt.v_w2 = Mat::Zero(model.w2.rows(), model.w2.cols());
  mopt.v_b2 = Vec::Zero(model.b2.size());

  auto record_epoch = [&](int epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const auto& labels = audited.labels(AuditedSet::Purpose::Logging);
    rec.target_accuracy = argmax_accuracy(model.logits(features).values,
                                          labels);
    rec.pseudo_label_accuracy = argmax_accuracy(
        enc.class_logits(features, prompt).values, labels);
    h.epochs.push_back(rec);
  };
  record_epoch(0);

  Rng shuffle_rng(derive_seed(cfg.seed, "adapt-shuffle"));
  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int total_iters = cfg.epochs * batches_per_epoch;

  int iter = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto perm = shuffle_rng.permutation(static_cast<std::size_t>(n));
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      Mat batch(b, features.cols());
      for (int k = 0; k < b; ++k)
        batch.row(k) = features.row(static_cast<Eigen::Index>(
            perm[static_cast<std::size_t>(start + k)]));

      IterRecord rec;
      rec.iter = iter;
      const double lr_scale =
          cosine_scale(cfg.cosine_decay, iter, total_iters);
      try {
        // Alternation order: one (prompt, sigma) update, then pseudo-label
        // conversion with the updated prompt, then one model update.
        phase1_step(batch, prompt, sigma, model, enc, cfg, lr_scale, popt,
                    rec, &h.skipped_steps);
        const auto pseudo = make_pseudo_labels(batch, prompt, enc);
        phase2_step(batch, pseudo, model, cfg, lr_scale, mopt, rec,
                    &h.skipped_steps);
      } catch (const std::exception& e) {
        throw RuntimeError("adaptation failed at iteration " +
                           std::to_string(iter) + ": " + e.what());
      }
      h.iters.push_back(rec);
      ++iter;
    }
    record_epoch(epoch);
  }

  h.final_model = std::move(model);
  h.final_prompt = std::move(prompt);
  h.final_sigma = std::move(sigma);
  h.vil_hash_after = enc.param_hash();
  h.label_audit = audited.audit();
  h.wall_seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return h;
}

std::string losses_csv(const RunHistory& h) {
  std::ostringstream out;
  out << "iter,L_EC,L_PMI,L_VMI,L_IC,L_UN,L_SCE\n";
  for (const auto& r : h.iters)
    out << r.iter << ',' << format_double(r.l_ec) << ','
        << format_double(r.l_pmi) << ',' << format_double(r.l_vmi) << ','
        << format_double(r.l_ic) << ',' << format_double(r.l_un) << ','
        << format_double(r.l_sce) << '\n';
  return out.str();
}

std::string metrics_csv(const RunHistory& h) {
  std::ostringstream out;
  out << "epoch,target_accuracy,pseudo_label_accuracy\n";
  for (const auto& r : h.epochs)
    out << r.epoch << ',' << format_double(r.target_accuracy) << ','
        << format_double(r.pseudo_label_accuracy) << '\n';
  return out.str();
}

std::string checkpoint_to_string(const Checkpoint& ck) {
  std::ostringstream out;
  out << "causal-sfda-checkpoint\tversion=1\n";
  out << "seed\t" << ck.seed << '\n';
  std::string classes;
  for (std::size_t c = 0; c < ck.class_names.size(); ++c) {
    if (c) classes += ',';
    classes += ck.class_names[c];
  }
  out << "classes\t" << classes << '\n';
  out << "prompt_template\t" << ck.prompt.init_template << '\n';
  write_tensor(out, "model.w1", ck.model.w1);
  write_tensor(out, "model.b1", Mat(ck.model.b1));
  write_tensor(out, "model.w2", ck.model.w2);
  write_tensor(out, "model.b2", Mat(ck.model.b2));
  write_tensor(out, "prompt.tokens", ck.prompt.tokens);
  write_tensor(out, "sigma", Mat(ck.sigma.sigma));
  return out.str();
}

namespace {

Mat read_tensor(std::istream& in, const std::string& expected_name,
                int* line_no) {
  std::string line;
  if (!std::getline(in, line))
    throw ValidationError("checkpoint truncated before tensor '" +
                          expected_name + "'");
  ++*line_no;
  std::istringstream head(line);
  std::string tag, name;
  Eigen::Index rows = 0, cols = 0;
  head >> tag >> name >> rows >> cols;
  require(tag == "tensor" && name == expected_name,
          "checkpoint line " + std::to_string(*line_no) +
              ": expected tensor '" + expected_name + "'");
  require(rows >= 1 && cols >= 1, "checkpoint tensor '" + expected_name +
                                      "' has bad shape");
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line))
      throw ValidationError("checkpoint truncated inside tensor '" +
                            expected_name + "'");
    ++*line_no;
    std::istringstream row(line);
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!(row >> m(i, j)))
        throw ValidationError("checkpoint line " + std::to_string(*line_no) +
                              ": bad value in tensor '" + expected_name + "'");
    }
  }
  return m;
}

}  // namespace

Checkpoint checkpoint_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;

  require(static_cast<bool>(std::getline(in, line)), "empty checkpoint");
  ++line_no;
  require(line == "causal-sfda-checkpoint\tversion=1",
          "not a supported checkpoint header: '" + line + "'");

  Checkpoint ck;
  require(static_cast<bool>(std::getline(in, line)), "checkpoint truncated");
  ++line_no;
  require(line.rfind("seed\t", 0) == 0, "checkpoint missing seed line");
  ck.seed = std::stoull(line.substr(5));

  require(static_cast<bool>(std::getline(in, line)), "checkpoint truncated");
  ++line_no;
  require(line.rfind("classes\t", 0) == 0, "checkpoint missing classes line");
  {
    std::string names = line.substr(8);
    std::string cur;
    for (char ch : names) {
      if (ch == ',') {
        ck.class_names.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    ck.class_names.push_back(cur);
  }

  require(static_cast<bool>(std::getline(in, line)), "checkpoint truncated");
  ++line_no;
  require(line.rfind("prompt_template\t", 0) == 0,
          "checkpoint missing prompt_template line");
  ck.prompt.init_template = line.substr(16);

  ck.model.w1 = read_tensor(in, "model.w1", &line_no);
  ck.model.b1 = Vec(read_tensor(in, "model.b1", &line_no).col(0));
  ck.model.w2 = read_tensor(in, "model.w2", &line_no);
  ck.model.b2 = Vec(read_tensor(in, "model.b2", &line_no).col(0));
  ck.prompt.tokens = read_tensor(in, "prompt.tokens", &line_no);
  ck.sigma.sigma = Vec(read_tensor(in, "sigma", &line_no).col(0));
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open '" + path + "' for writing");
  out << checkpoint_to_string(ck);
  if (!out) throw RuntimeError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint '" + path + "' does not exist");
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace csfda::train
