#include <cmath>

#include "data.hpp"
#include "doctest.h"
#include "models.hpp"
#include "rng.hpp"

using namespace csfda;
using namespace csfda::models;

namespace {

struct ToyWorld {
  data::SyntheticDomainSpec spec;
  Mat means;
  Mat basis;
  ToyVilEncoder encoder;

  static ToyWorld make(std::uint64_t seed, ToyVilSpec vil = {}) {
    data::SyntheticDomainSpec spec;
    const Mat means = data::canonical_class_means(spec, seed);
    const Mat basis = data::shift_plane_basis(spec, seed);
    std::vector<std::string> names;
    for (int c = 0; c < spec.classes; ++c)
      names.push_back("class" + std::to_string(c));
    return ToyWorld{spec, means, basis,
                    ToyVilEncoder(means, basis, names, vil, seed)};
  }
};

}  // namespace

TEST_CASE("init_prompt: deterministic, template-sensitive, placeholder-free") {
  const auto a = init_prompt("a photo of a [CLS].", 4, 16, 7);
  const auto b = init_prompt("a photo of a [CLS].", 4, 16, 7);
  CHECK(a.tokens == b.tokens);
  CHECK(a.tokens.rows() == 4);
  CHECK(a.tokens.cols() == 16);

  // Distinct templates give distinct token matrices.
  const auto c = init_prompt("X X X X [CLASS].", 4, 16, 7);
  CHECK((a.tokens - c.tokens).cwiseAbs().maxCoeff() > 0.0);

  // The class placeholder is excluded: "a photo of a" is exactly 4 words, so
  // M=4 needs no padding, and repeating the word "a" repeats its row.
  CHECK(a.tokens.row(0) == a.tokens.row(3));
  // Padding kicks in for M beyond the word count and is deterministic.
  const auto padded = init_prompt("a photo of a [CLS].", 6, 16, 7);
  CHECK(padded.tokens.rows() == 6);
  CHECK((padded.tokens.topRows(4) - a.tokens).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(init_prompt("[CLS]", 4, 16, 7), ValidationError);
  CHECK_THROWS_AS(init_prompt("", 4, 16, 7), ValidationError);
}

TEST_CASE("toy encoder: anchor-aligned inputs win, cosine is scale-invariant") {
  ToyVilSpec vil;
  vil.anchor_noise = 0.0;
  vil.anchor_bias = 0.0;
  vil.anchor_rotation = 0.0;  // anchors exactly at the canonical directions
  auto world = ToyWorld::make(11, vil);

  // A batch sitting exactly on each class mean, zero-mean context.
  PromptContext ctx;
  ctx.tokens = Mat::Zero(4, vil.embed_dim);
  const auto logits =
      world.encoder.class_logits(world.means, ctx);
  for (int c = 0; c < world.spec.classes; ++c) {
    int argmax = 0;
    logits.values.row(c).maxCoeff(&argmax);
    CHECK(argmax == c);
  }

  // Scaling an input leaves its logits unchanged.
  const Mat doubled = world.means * 2.0;
  const auto logits2 = world.encoder.class_logits(doubled, ctx);
  CHECK((logits.values - logits2.values).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("toy encoder: prompt gradient agrees with finite differences") {
  auto world = ToyWorld::make(13);
  Rng rng(17);
  Mat batch(3, world.spec.ambient_dim);
  for (int i = 0; i < 3; ++i)
    for (int d = 0; d < world.spec.ambient_dim; ++d)
      batch(i, d) = rng.normal();

  auto ctx = init_prompt("a photo of a [CLS].", 4, 32, 13);
  // Probe functional: weighted sum of logits with fixed random weights.
  Mat w(3, world.spec.classes);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < world.spec.classes; ++c) w(i, c) = rng.normal();

  const Mat analytic = world.encoder.class_logits_vjp(batch, ctx, w);
  const double h = 1e-6;
  double max_rel = 0.0;
  for (int m = 0; m < 4; ++m) {
    for (int d = 0; d < 32; d += 5) {
      PromptContext hi = ctx, lo = ctx;
      hi.tokens(m, d) += h;
      lo.tokens(m, d) -= h;
      const double fhi =
          (world.encoder.class_logits(batch, hi).values.array() * w.array())
              .sum();
      const double flo =
          (world.encoder.class_logits(batch, lo).values.array() * w.array())
              .sum();
      const double fd = (fhi - flo) / (2.0 * h);
      const double rel = std::abs(fd - analytic(m, d)) /
                         std::max(1e-8, std::abs(fd) + std::abs(analytic(m, d)));
      max_rel = std::max(max_rel, rel);
    }
  }
  CHECK(max_rel < 1e-4);

  // Moving along the gradient of one logit increases that logit.
  Mat pick = Mat::Zero(3, world.spec.classes);
  pick(0, 2) = 1.0;
  const Mat dir = world.encoder.class_logits_vjp(batch, ctx, pick);
  PromptContext moved = ctx;
  moved.tokens += 1e-3 * dir;
  CHECK(world.encoder.class_logits(batch, moved).values(0, 2) >
        world.encoder.class_logits(batch, ctx).values(0, 2));
}

TEST_CASE("toy encoder parameters hash identically across calls") {
  auto world = ToyWorld::make(19);
  CHECK(world.encoder.param_hash() == world.encoder.param_hash());
  auto other = ToyWorld::make(20);
  CHECK(world.encoder.param_hash() != other.encoder.param_hash());
}

TEST_CASE("target model: zero classifier, duplicated rows, gradient check") {
  auto m = make_target_model(8, 16, 3, 23);
  m.w2.setZero();
  m.b2.setZero();
  Rng rng(29);
  Mat batch(4, 8);
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 8; ++d) batch(i, d) = rng.normal();
  CHECK(m.logits(batch).values.cwiseAbs().maxCoeff() == 0.0);

  m = make_target_model(8, 16, 3, 23);
  Mat twice(2, 8);
  twice.row(0) = batch.row(0);
  twice.row(1) = batch.row(0);
  const auto lg = m.logits(twice);
  CHECK((lg.values.row(0) - lg.values.row(1)).cwiseAbs().maxCoeff() == 0.0);

  // FD check on a handful of parameters through a weighted-logit probe.
  Mat w(4, 3);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) w(i, c) = rng.normal();
  const auto grads = m.backward(batch, w);
  auto probe = [&](const TargetModel& model) {
    return (model.logits(batch).values.array() * w.array()).sum();
  };
  const double h = 1e-6;
  int checked = 0;
  double max_rel = 0.0;
  auto check_param = [&](double* p, double g) {
    const double orig = *p;
    *p = orig + h;
    const double hi = probe(m);
    *p = orig - h;
    const double lo = probe(m);
    *p = orig;
    const double fd = (hi - lo) / (2.0 * h);
    max_rel = std::max(max_rel, std::abs(fd - g) /
                                    std::max(1e-8, std::abs(fd) + std::abs(g)));
    ++checked;
  };
  check_param(&m.w1(0, 0), grads.w1(0, 0));
  check_param(&m.w1(5, 3), grads.w1(5, 3));
  check_param(&m.b1(2), grads.b1(2));
  check_param(&m.b1(9), grads.b1(9));
  check_param(&m.w2(0, 1), grads.w2(0, 1));
  check_param(&m.w2(2, 7), grads.w2(2, 7));
  check_param(&m.b2(0), grads.b2(0));
  check_param(&m.b2(2), grads.b2(2));
  check_param(&m.w1(15, 7), grads.w1(15, 7));
  check_param(&m.w2(1, 15), grads.w2(1, 15));
  CHECK(checked == 10);
  CHECK(max_rel < 1e-4);
}

TEST_CASE("clone_model: deep copy isolates the original") {
  auto m = make_target_model(6, 8, 3, 31);
  Rng rng(37);
  Mat batch(5, 6);
  for (int i = 0; i < 5; ++i)
    for (int d = 0; d < 6; ++d) batch(i, d) = rng.normal();

  auto clone = clone_model(m);
  CHECK((clone.logits(batch).values - m.logits(batch).values)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  const auto hash_before = m.content_hash();
  clone.w1.array() += 1.0;
  clone.b2.array() -= 0.5;
  CHECK(m.content_hash() == hash_before);
  CHECK(clone.content_hash() != hash_before);
  CHECK((clone.logits(batch).values - m.logits(batch).values)
            .cwiseAbs()
            .maxCoeff() > 0.0);
}

TEST_CASE("target model reports its parameter count") {
  auto m = make_target_model(16, 64, 5, 41);
  CHECK(m.param_count() == 16 * 64 + 64 + 64 * 5 + 5);
}
