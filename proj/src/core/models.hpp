#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"
#include "objectives.hpp"

namespace csfda::models {

// Learnable prompt context: M token embeddings of width d. The mean token
// vector is what the toy encoder consumes (CoOp-simplified: it shifts every
// class anchor by the same amount).
struct PromptContext {
  Mat tokens;  // M x d
  std::string init_template;

  Vec mean_token() const { return tokens.colwise().mean().transpose(); }
  std::uint64_t content_hash() const;
};

// Builds the context from a template string. Each word is embedded as a
// seeded hash-to-Gaussian vector: the word's FNV-1a hash mixed with the seed
// seeds a private RNG that draws d entries from N(0, 1/sqrt(d)). Class-name
// placeholders ([CLS] / [CLASS], case-insensitive, punctuation stripped) are
// excluded: the class name enters through the encoder's anchors instead.
// Shorter templates are padded with embeddings of "<pad:k>"; longer ones are
// truncated to the first M words.
PromptContext init_prompt(const std::string& template_text, int num_tokens,
                          int width, std::uint64_t seed);

// Frozen vision-language encoder interface. class_logits must be
// deterministic given its inputs and differentiable with respect to the
// prompt tokens via class_logits_vjp. Implementations never expose a way to
// update their internal parameters.
class VilEncoder {
 public:
  virtual ~VilEncoder() = default;

  virtual int input_dim() const = 0;
  virtual int embed_dim() const = 0;
  virtual int num_classes() const = 0;
  virtual const std::vector<std::string>& class_names() const = 0;

  // batch: n x D -> n x d.
  virtual Mat image_embed(const Mat& batch) const = 0;
  // batch: n x D, ctx width must equal embed_dim -> n x C logits.
  virtual obj::LogitBatch class_logits(const Mat& batch,
                                       const PromptContext& ctx) const = 0;
  // Given dL/dlogits (n x C), returns dL/dtokens (M x d).
  virtual Mat class_logits_vjp(const Mat& batch, const PromptContext& ctx,
                               const Mat& d_logits) const = 0;
  // Content hash over all internal parameters; used to enforce the
  // frozen-encoder invariant across an adaptation run.
  virtual std::uint64_t param_hash() const = 0;
};

// Construction knobs for the desk-scale CLIP stand-in. The encoder projects
// inputs through a fixed random map and scores them by temperature-scaled
// cosine against per-class text anchors. Anchors are the class directions as
// they appear under the encoder's pretraining exposure — the canonical class
// means rotated in-plane by anchor_rotation (default: the standard benchmark
// shift, so the stand-in plays CLIP's role of knowing the deployment domain
// the source model has never seen) — unit-normalized, perturbed per class,
// and offset by one shared bias vector. The shared bias is the headroom
// prompt learning can recover: the mean context token adds to every anchor,
// so learning approximately -bias re-sharpens zero-shot predictions.
struct ToyVilSpec {
  int embed_dim = 32;
  double temperature = 10.0;
  double anchor_rotation = 1.5707963267948966;  // pi/2
  double anchor_noise = 0.1;
  double anchor_bias = 0.8;
};

class ToyVilEncoder final : public VilEncoder {
 public:
  // class_means: C x D canonical (pre-shift) class means; plane_basis: D x 2
  // orthonormal basis of the subspace the domain rotation acts in.
  ToyVilEncoder(const Mat& class_means, const Mat& plane_basis,
                std::vector<std::string> class_names, const ToyVilSpec& spec,
                std::uint64_t seed);

  int input_dim() const override { return static_cast<int>(w_img_.cols()); }
  int embed_dim() const override { return static_cast<int>(w_img_.rows()); }
  int num_classes() const override {
    return static_cast<int>(anchors_.rows());
  }
  const std::vector<std::string>& class_names() const override {
    return class_names_;
  }

  Mat image_embed(const Mat& batch) const override;
  obj::LogitBatch class_logits(const Mat& batch,
                               const PromptContext& ctx) const override;
  Mat class_logits_vjp(const Mat& batch, const PromptContext& ctx,
                       const Mat& d_logits) const override;
  std::uint64_t param_hash() const override;

  const Mat& anchors() const { return anchors_; }
  double temperature() const { return temperature_; }

 private:
  Mat w_img_;    // d x D fixed random projection
  Mat anchors_;  // C x d per-class text anchors
  double temperature_;
  std::vector<std::string> class_names_;
};

// Small trainable classifier: one tanh hidden layer plus a linear head.
struct TargetModel {
  Mat w1;  // h x D
  Vec b1;  // h
  Mat w2;  // C x h
  Vec b2;  // C

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  int num_classes() const { return static_cast<int>(w2.rows()); }
  std::size_t param_count() const;

  obj::LogitBatch logits(const Mat& batch) const;

  struct Grads {
    Mat w1;
    Vec b1;
    Mat w2;
    Vec b2;
  };
  // Backward pass for dL/dlogits (n x C).
  Grads backward(const Mat& batch, const Mat& d_logits) const;

  std::uint64_t content_hash() const;
};

TargetModel make_target_model(int input_dim, int hidden_dim, int num_classes,
                              std::uint64_t seed);

// Deep copy. The clone shares no storage with the original, so adapting the
// clone leaves the source model available for later evaluation.
TargetModel clone_model(const TargetModel& m);

std::uint64_t hash_matrix(const Mat& m, std::uint64_t h = 1469598103934665603ULL);

}  // namespace csfda::models
