#include <cmath>

#include "data.hpp"
#include "doctest.h"
#include "evaluation.hpp"
#include "models.hpp"
#include "rng.hpp"
#include "trainer.hpp"

using namespace csfda;
using namespace csfda::train;

namespace {

struct Fixture {
  data::SyntheticDomainSpec spec;
  data::LabeledSet source;
  data::LabeledSet target;
  models::ToyVilEncoder encoder;
  AdaptationConfig cfg;

  static Fixture make(std::uint64_t seed, double rotation,
                      int samples_per_class = 30) {
    data::SyntheticDomainSpec spec;
    spec.samples_per_class = samples_per_class;
    spec.rotation = rotation;
    auto pair = data::generate_domain_pair(spec, seed);
    const auto means = data::canonical_class_means(spec, seed);
    const auto basis = data::shift_plane_basis(spec, seed);
    std::vector<std::string> names;
    for (int c = 0; c < spec.classes; ++c)
      names.push_back("class" + std::to_string(c));
    AdaptationConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 3;
    cfg.source_epochs = 60;
    models::ToyVilSpec vil;
    vil.anchor_rotation = rotation;  // the encoder knows the target family
    return Fixture{spec, std::move(pair.first), std::move(pair.second),
                   models::ToyVilEncoder(means, basis, names, vil, seed),
                   cfg};
  }
};

}  // namespace

TEST_CASE("train_source: separable data is learned to high accuracy") {
  data::SyntheticDomainSpec spec;
  spec.classes = 2;
  spec.samples_per_class = 80;
  spec.cluster_std = 0.15;  // well-separated two-class problem
  const auto pair = data::generate_domain_pair(spec, 101);

  AdaptationConfig cfg;
  cfg.seed = 101;
  cfg.source_epochs = 120;
  auto init = models::make_target_model(spec.ambient_dim, 32, 2, 101);
  const auto model = train_source(init, pair.first, cfg);
  CHECK(eval::accuracy(model.logits(pair.first.features).values,
                       pair.first.labels) >= 99.0);
}

TEST_CASE("train_source: zero epochs is the identity; seeds reproduce") {
  auto fx = Fixture::make(103, 0.5);
  auto init = models::make_target_model(fx.spec.ambient_dim, 32,
                                        fx.spec.classes, 103);
  AdaptationConfig cfg = fx.cfg;
  cfg.source_epochs = 0;
  const auto unchanged = train_source(init, fx.source, cfg);
  CHECK(unchanged.content_hash() == init.content_hash());

  cfg.source_epochs = 25;
  const auto a = train_source(init, fx.source, cfg);
  const auto b = train_source(init, fx.source, cfg);
  CHECK(a.content_hash() == b.content_hash());
}

TEST_CASE("phase1_step: zero learning rate leaves parameters untouched") {
  auto fx = Fixture::make(107, 0.8);
  auto model = models::make_target_model(fx.spec.ambient_dim, 32,
                                         fx.spec.classes, 107);
  auto prompt = models::init_prompt(fx.cfg.prompt_template, 4,
                                    fx.encoder.embed_dim(), 107);
  auto sigma = obj::DiagCovariance::ones(fx.spec.classes);

  AdaptationConfig cfg = fx.cfg;
  cfg.lr_prompt = 0.0;
  cfg.lr_sigma = 0.0;
  PromptOptState opt;
  opt.v_tokens = Mat::Zero(prompt.tokens.rows(), prompt.tokens.cols());
  opt.v_sigma = Vec::Zero(fx.spec.classes);
  IterRecord rec;

  const auto tokens_before = prompt.tokens;
  const auto sigma_before = sigma.sigma;
  const auto model_hash = model.content_hash();
  phase1_step(fx.target.features.topRows(32), prompt, sigma, model,
              fx.encoder, cfg, 1.0, opt, rec, nullptr);
  CHECK(prompt.tokens == tokens_before);
  CHECK(sigma.sigma == sigma_before);
  CHECK(model.content_hash() == model_hash);  // freeze contract
  CHECK(std::isfinite(rec.l_ec));
}

TEST_CASE("phase1_step: small steps descend the EC objective") {
  auto fx = Fixture::make(109, 0.8);
  auto model = models::make_target_model(fx.spec.ambient_dim, 32,
                                         fx.spec.classes, 109);
  const Mat batch = fx.target.features.topRows(48);

  auto evaluate = [&](const models::PromptContext& p,
                      const obj::DiagCovariance& s) {
    return obj::ec_objective(fx.encoder.class_logits(batch, p),
                             model.logits(batch), s, fx.cfg.alpha)
        .value;
  };

  bool any_descent = false;
  for (double lr : {1e-3, 1e-4, 1e-5, 1e-6}) {
    auto prompt = models::init_prompt(fx.cfg.prompt_template, 4,
                                      fx.encoder.embed_dim(), 109);
    auto sigma = obj::DiagCovariance::ones(fx.spec.classes);
    const double before = evaluate(prompt, sigma);

    AdaptationConfig cfg = fx.cfg;
    cfg.lr_prompt = lr;
    cfg.lr_sigma = lr;
    PromptOptState opt;
    opt.v_tokens = Mat::Zero(prompt.tokens.rows(), prompt.tokens.cols());
    opt.v_sigma = Vec::Zero(fx.spec.classes);
    IterRecord rec;
    phase1_step(batch, prompt, sigma, model, fx.encoder, cfg, 1.0, opt, rec,
                nullptr);
    const double after = evaluate(prompt, sigma);
    if (lr <= 1e-5) CHECK(after < before);
    any_descent = any_descent || after < before;
  }
  CHECK(any_descent);
}

TEST_CASE("make_pseudo_labels: uniform logits and anchored batches") {
  auto fx = Fixture::make(113, 0.0);
  const auto prompt = models::init_prompt("a photo of a [CLS].", 4,
                                          fx.encoder.embed_dim(), 113);
  const auto q = make_pseudo_labels(fx.target.features.topRows(16), prompt,
                                    fx.encoder);
  q.validate();

  // Identical anchors give uniform logits per row, hence uniform rows.
  {
    models::ToyVilSpec flat;
    flat.anchor_noise = 0.0;
    data::SyntheticDomainSpec degenerate = fx.spec;
    degenerate.radius = 0.0;  // all class means collapse to the origin
    const Mat means = Mat::Zero(fx.spec.classes, fx.spec.ambient_dim);
    const Mat basis = data::shift_plane_basis(degenerate, 113);
    std::vector<std::string> names;
    for (int c = 0; c < fx.spec.classes; ++c)
      names.push_back("class" + std::to_string(c));
    models::ToyVilEncoder same_anchors(means, basis, names, flat, 113);
    models::PromptContext zero;
    zero.tokens = Mat::Zero(4, flat.embed_dim);
    const auto uniform = make_pseudo_labels(fx.target.features.topRows(8),
                                            zero, same_anchors);
    CHECK((uniform.values.array() - 1.0 / fx.spec.classes)
              .abs()
              .maxCoeff() < 1e-12);
  }

  // With bias-free, noise-free anchors built at coverage step 1, class-mean
  // inputs produce near-one-hot correct rows.
  models::ToyVilSpec clean;
  clean.anchor_noise = 0.0;
  clean.anchor_bias = 0.0;
  clean.anchor_rotation = 0.0;
  clean.temperature = 40.0;
  const auto means = data::canonical_class_means(fx.spec, 113);
  const auto basis = data::shift_plane_basis(fx.spec, 113);
  std::vector<std::string> names;
  for (int c = 0; c < fx.spec.classes; ++c)
    names.push_back("class" + std::to_string(c));
  models::ToyVilEncoder aligned(means, basis, names, clean, 113);
  models::PromptContext zero_ctx;
  zero_ctx.tokens = Mat::Zero(4, clean.embed_dim);
  const auto q2 = make_pseudo_labels(means, zero_ctx, aligned);
  for (int c = 0; c < fx.spec.classes; ++c) {
    int best = 0;
    q2.values.row(c).maxCoeff(&best);
    CHECK(best == c);
    CHECK(q2.values(c, c) > 0.5);
  }
}

TEST_CASE("phase2_step: zero lr no-op, descent, and the freeze contract") {
  auto fx = Fixture::make(127, 0.8);
  auto init = models::make_target_model(fx.spec.ambient_dim, 32,
                                        fx.spec.classes, 127);
  auto model = train_source(init, fx.source, fx.cfg);
  const Mat batch = fx.target.features.topRows(48);
  const auto prompt = models::init_prompt(fx.cfg.prompt_template, 4,
                                          fx.encoder.embed_dim(), 127);
  const auto pseudo = make_pseudo_labels(batch, prompt, fx.encoder);

  // phase2_step descends the per-sample-normalized internal objective.
  const auto n = static_cast<double>(batch.rows());
  auto evaluate = [&](const models::TargetModel& m) {
    return obj::ic_objective(
               obj::ProbBatch{obj::softmax_rows(m.logits(batch).values)},
               pseudo, n * fx.cfg.tau, n * fx.cfg.sigma_w)
               .value /
           n;
  };

  {
    AdaptationConfig cfg = fx.cfg;
    cfg.lr_model = 0.0;
    ModelOptState opt;
    opt.v_w1 = Mat::Zero(model.w1.rows(), model.w1.cols());
    opt.v_b1 = Vec::Zero(model.b1.size());
    opt.v_w2 = Mat::Zero(model.w2.rows(), model.w2.cols());
    opt.v_b2 = Vec::Zero(model.b2.size());
    IterRecord rec;
    auto copy = models::clone_model(model);
    const auto prompt_hash = prompt.content_hash();
    phase2_step(batch, pseudo, copy, cfg, 1.0, opt, rec, nullptr);
    CHECK(copy.content_hash() == model.content_hash());
    CHECK(prompt.content_hash() == prompt_hash);
    CHECK(std::isfinite(rec.l_ic));
  }

  for (double lr : {1e-4, 1e-5}) {
    AdaptationConfig cfg = fx.cfg;
    cfg.lr_model = lr;
    ModelOptState opt;
    opt.v_w1 = Mat::Zero(model.w1.rows(), model.w1.cols());
    opt.v_b1 = Vec::Zero(model.b1.size());
    opt.v_w2 = Mat::Zero(model.w2.rows(), model.w2.cols());
    opt.v_b2 = Vec::Zero(model.b2.size());
    IterRecord rec;
    auto copy = models::clone_model(model);
    const double before = evaluate(copy);
    phase2_step(batch, pseudo, copy, cfg, 1.0, opt, rec, nullptr);
    CHECK(evaluate(copy) < before);
  }
}

TEST_CASE("adapt: shift-free scenario does not degrade the source model") {
  auto fx = Fixture::make(131, 0.0, 40);
  fx.cfg.epochs = 5;
  auto init = models::make_target_model(fx.spec.ambient_dim, 32,
                                        fx.spec.classes, 131);
  const auto source_model = train_source(init, fx.source, fx.cfg);
  const double source_acc = eval::accuracy(
      source_model.logits(fx.target.features).values, fx.target.labels);

  const auto history = adapt(source_model, fx.target, fx.encoder, fx.cfg);
  const double adapted_acc = eval::accuracy(
      history.final_model.logits(fx.target.features).values,
      fx.target.labels);
  CHECK(adapted_acc >= source_acc - 1.0);

  // History completeness and structure.
  CHECK(history.epochs.size() == static_cast<std::size_t>(fx.cfg.epochs) + 1);
  const int batches = (fx.target.size() + fx.cfg.batch_size - 1) /
                      fx.cfg.batch_size;
  CHECK(history.iters.size() ==
        static_cast<std::size_t>(fx.cfg.epochs * batches));
  for (const auto& rec : history.epochs) {
    CHECK(rec.target_accuracy >= 0.0);
    CHECK(rec.pseudo_label_accuracy >= 0.0);
  }
  CHECK(history.vil_hash_before == history.vil_hash_after);
  CHECK(history.label_audit.optimization_reads == 0);
  CHECK(history.label_audit.logging_reads > 0);
}

TEST_CASE("adapt: label content influences nothing but the logs") {
  auto fx = Fixture::make(137, 0.6);
  auto init = models::make_target_model(fx.spec.ambient_dim, 32,
                                        fx.spec.classes, 137);
  const auto source_model = train_source(init, fx.source, fx.cfg);

  const auto h1 = adapt(source_model, fx.target, fx.encoder, fx.cfg);

  data::LabeledSet zeroed = fx.target;
  for (auto& label : zeroed.labels) label = 0;
  const auto h2 = adapt(source_model, zeroed, fx.encoder, fx.cfg);

  // Bitwise-identical checkpoints; only the logged accuracies differ.
  const Checkpoint c1{h1.final_model, h1.final_prompt, h1.final_sigma,
                      fx.target.class_names, fx.cfg.seed};
  const Checkpoint c2{h2.final_model, h2.final_prompt, h2.final_sigma,
                      fx.target.class_names, fx.cfg.seed};
  CHECK(checkpoint_to_string(c1) == checkpoint_to_string(c2));
  CHECK(losses_csv(h1) == losses_csv(h2));
  CHECK(metrics_csv(h1) != metrics_csv(h2));
}

TEST_CASE("adapt leaves the retained source model bit-identical") {
  auto fx = Fixture::make(151, 0.7);
  auto init = models::make_target_model(fx.spec.ambient_dim, 32,
                                        fx.spec.classes, 151);
  const auto source_model = train_source(init, fx.source, fx.cfg);
  const auto acc_before = eval::accuracy(
      source_model.logits(fx.source.features).values, fx.source.labels);
  const auto hash_before = source_model.content_hash();

  (void)adapt(source_model, fx.target, fx.encoder, fx.cfg);

  CHECK(source_model.content_hash() == hash_before);
  CHECK(eval::accuracy(source_model.logits(fx.source.features).values,
                       fx.source.labels) == acc_before);
}

TEST_CASE("adapt: identical seeds give identical histories") {
  auto fx = Fixture::make(139, 0.9);
  auto init = models::make_target_model(fx.spec.ambient_dim, 32,
                                        fx.spec.classes, 139);
  const auto source_model = train_source(init, fx.source, fx.cfg);
  const auto h1 = adapt(source_model, fx.target, fx.encoder, fx.cfg);
  const auto h2 = adapt(source_model, fx.target, fx.encoder, fx.cfg);
  CHECK(losses_csv(h1) == losses_csv(h2));
  CHECK(metrics_csv(h1) == metrics_csv(h2));
  CHECK(h1.final_model.content_hash() == h2.final_model.content_hash());
  CHECK(h1.final_prompt.content_hash() == h2.final_prompt.content_hash());
}

TEST_CASE("checkpoints round-trip exactly") {
  auto fx = Fixture::make(149, 0.4);
  auto init = models::make_target_model(fx.spec.ambient_dim, 16,
                                        fx.spec.classes, 149);
  fx.cfg.epochs = 1;
  const auto source_model = train_source(init, fx.source, fx.cfg);
  const auto history = adapt(source_model, fx.target, fx.encoder, fx.cfg);

  const Checkpoint ck{history.final_model, history.final_prompt,
                      history.final_sigma, fx.target.class_names,
                      fx.cfg.seed};
  const auto text = checkpoint_to_string(ck);
  const auto back = checkpoint_from_string(text);
  CHECK(back.model.content_hash() == ck.model.content_hash());
  CHECK(back.prompt.content_hash() == ck.prompt.content_hash());
  CHECK(back.sigma.sigma == ck.sigma.sigma);
  CHECK(back.class_names == ck.class_names);
  CHECK(back.seed == ck.seed);
  CHECK(back.prompt.init_template == ck.prompt.init_template);

  CHECK_THROWS_AS(checkpoint_from_string("garbage"), ValidationError);
}
