#include "models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "rng.hpp"

namespace csfda::models {

namespace {

constexpr double kCosineEps = 1e-12;

std::string strip_punct(const std::string& w) {
  std::string out;
  for (char ch : w) {
    if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '<' ||
        ch == '>' || ch == ':')
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  return out;
}

bool is_class_placeholder(const std::string& stripped) {
  return stripped == "cls" || stripped == "class";
}

Vec word_embedding(const std::string& word, int width, std::uint64_t seed) {
  Rng rng(derive_seed(seed ^ fnv1a64(word), "word-embed"));
  Vec v(width);
  const double scale = 1.0 / std::sqrt(static_cast<double>(width));
  for (int k = 0; k < width; ++k) v[k] = scale * rng.normal();
  return v;
}

}  // namespace

std::uint64_t hash_matrix(const Mat& m, std::uint64_t h) {
  // Hash the row-major byte image so layout changes cannot alias.
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      h = fnv1a64(&v, sizeof(v), h);
    }
  return h;
}

std::uint64_t PromptContext::content_hash() const {
  return hash_matrix(tokens);
}

PromptContext init_prompt(const std::string& template_text, int num_tokens,
                          int width, std::uint64_t seed) {
  require(num_tokens >= 1 && width >= 1,
          "init_prompt: M and d must be >= 1");
  std::istringstream in(template_text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) {
    const std::string stripped = strip_punct(w);
    if (stripped.empty() || is_class_placeholder(stripped)) continue;
    words.push_back(stripped);
  }
  require(!words.empty(), "init_prompt: template has no context words");

  PromptContext ctx;
  ctx.init_template = template_text;
  ctx.tokens = Mat(num_tokens, width);
  for (int m = 0; m < num_tokens; ++m) {
    const std::string token =
        m < static_cast<int>(words.size())
            ? words[static_cast<std::size_t>(m)]
            : "<pad:" + std::to_string(m) + ">";
    ctx.tokens.row(m) = word_embedding(token, width, seed).transpose();
  }
  return ctx;
}

ToyVilEncoder::ToyVilEncoder(const Mat& class_means, const Mat& plane_basis,
                             std::vector<std::string> class_names,
                             const ToyVilSpec& spec, std::uint64_t seed)
    : temperature_(spec.temperature), class_names_(std::move(class_names)) {
  require(spec.temperature > 0.0, "toy encoder temperature must be > 0");
  require(plane_basis.rows() == class_means.cols() && plane_basis.cols() == 2,
          "plane basis must be D x 2");
  require(static_cast<Eigen::Index>(class_names_.size()) ==
              class_means.rows(),
          "class name count does not match class mean count");

  const auto D = class_means.cols();
  const auto C = class_means.rows();
  const int d = spec.embed_dim;

  Rng rng(derive_seed(seed, "toy-vil"));
  w_img_ = Mat(d, D);
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  for (int r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < D; ++c) w_img_(r, c) = scale * rng.normal();

  // Class directions under the encoder's pretraining exposure: the
  // canonical means rotated in-plane by anchor_rotation.
  const Vec q1 = plane_basis.col(0);
  const Vec q2 = plane_basis.col(1);
  Mat exposed = Mat::Zero(C, D);
  {
    const double ca = std::cos(spec.anchor_rotation);
    const double sa = std::sin(spec.anchor_rotation);
    for (Eigen::Index c = 0; c < C; ++c) {
      const Vec mu = class_means.row(c).transpose();
      const double a = q1.dot(mu), b = q2.dot(mu);
      const Vec rotated = mu - a * q1 - b * q2 + (a * ca - b * sa) * q1 +
                          (a * sa + b * ca) * q2;
      exposed.row(c) = rotated.transpose();
    }
  }

  Mat clean(C, d);
  for (Eigen::Index c = 0; c < C; ++c) {
    const Vec e = w_img_ * exposed.row(c).transpose();
    clean.row(c) = (e / std::max(e.norm(), kCosineEps)).transpose();
  }

  // Shared bias, drawn inside the span of the class directions. A shared
  // offset only disturbs cosine rankings through the anchor norms, and the
  // norms only vary when the offset has class-dependent projections — which
  // requires it to live in the anchor span. This is the corruption a learned
  // mean-context shift of roughly -bias can undo.
  Vec bias = Vec::Zero(d);
  for (Eigen::Index c = 0; c < C; ++c) bias += rng.normal() * clean.row(c).transpose();
  bias *= spec.anchor_bias / std::max(bias.norm(), kCosineEps);

  anchors_ = Mat(C, d);
  for (Eigen::Index c = 0; c < C; ++c) {
    Vec e = clean.row(c).transpose();
    for (int k = 0; k < d; ++k) e[k] += spec.anchor_noise * rng.normal();
    anchors_.row(c) = (e + bias).transpose();
  }
}

Mat ToyVilEncoder::image_embed(const Mat& batch) const {
  require(batch.cols() == w_img_.cols(),
          "toy encoder: batch dimension does not match input_dim");
  return batch * w_img_.transpose();
}

obj::LogitBatch ToyVilEncoder::class_logits(const Mat& batch,
                                            const PromptContext& ctx) const {
  require(batch.rows() >= 1, "toy encoder: empty batch");
  require(ctx.tokens.cols() == anchors_.cols(),
          "toy encoder: prompt width does not match embed_dim");
  const Mat emb = image_embed(batch);
  const Vec shift = ctx.mean_token();

  Mat logits(batch.rows(), anchors_.rows());
  for (Eigen::Index c = 0; c < anchors_.rows(); ++c) {
    const Vec a = anchors_.row(c).transpose() + shift;
    const double na = std::max(a.norm(), kCosineEps);
    for (Eigen::Index i = 0; i < emb.rows(); ++i) {
      const Vec u = emb.row(i).transpose();
      const double nu = std::max(u.norm(), kCosineEps);
      logits(i, c) = temperature_ * u.dot(a) / (nu * na);
    }
  }
  return obj::LogitBatch{std::move(logits)};
}

Mat ToyVilEncoder::class_logits_vjp(const Mat& batch, const PromptContext& ctx,
                                    const Mat& d_logits) const {
  require(d_logits.rows() == batch.rows() &&
              d_logits.cols() == anchors_.rows(),
          "toy encoder vjp: gradient shape mismatch");
  const Mat emb = image_embed(batch);
  const Vec shift = ctx.mean_token();

  // logits(i,c) = t * u_i . a_c / (|u_i| |a_c|) with a_c = anchor_c + mean
  // token; d logits / d a_c = t/|a_c| * (u_i/|u_i| - cos * a_c/|a_c|).
  Vec d_shift = Vec::Zero(anchors_.cols());
  for (Eigen::Index c = 0; c < anchors_.rows(); ++c) {
    const Vec a = anchors_.row(c).transpose() + shift;
    const double na = std::max(a.norm(), kCosineEps);
    const Vec a_hat = a / na;
    for (Eigen::Index i = 0; i < emb.rows(); ++i) {
      const Vec u = emb.row(i).transpose();
      const double nu = std::max(u.norm(), kCosineEps);
      const Vec u_hat = u / nu;
      const double cos_ic = u_hat.dot(a_hat);
      d_shift +=
          d_logits(i, c) * temperature_ / na * (u_hat - cos_ic * a_hat);
    }
  }

  // The mean over M tokens spreads the shift gradient evenly across rows.
  const auto M = ctx.tokens.rows();
  Mat d_tokens(M, ctx.tokens.cols());
  for (Eigen::Index m = 0; m < M; ++m)
    d_tokens.row(m) = d_shift.transpose() / static_cast<double>(M);
  return d_tokens;
}

std::uint64_t ToyVilEncoder::param_hash() const {
  std::uint64_t h = hash_matrix(w_img_);
  h = hash_matrix(anchors_, h);
  h = fnv1a64(&temperature_, sizeof(temperature_), h);
  return h;
}

std::size_t TargetModel::param_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() +
                                  b2.size());
}

obj::LogitBatch TargetModel::logits(const Mat& batch) const {
  require(batch.cols() == w1.cols(),
          "target model: batch dimension does not match input_dim");
  const Mat hidden = ((batch * w1.transpose()).rowwise() + b1.transpose())
                         .array()
                         .tanh()
                         .matrix();
  Mat out = (hidden * w2.transpose()).rowwise() + b2.transpose();
  return obj::LogitBatch{std::move(out)};
}

TargetModel::Grads TargetModel::backward(const Mat& batch,
                                         const Mat& d_logits) const {
  require(batch.cols() == w1.cols(), "target model backward: bad batch");
  require(d_logits.cols() == w2.rows(), "target model backward: bad grad");
  const Mat pre = (batch * w1.transpose()).rowwise() + b1.transpose();
  const Mat hidden = pre.array().tanh().matrix();

  Grads g;
  g.w2 = d_logits.transpose() * hidden;
  g.b2 = d_logits.colwise().sum().transpose();
  const Mat d_hidden = d_logits * w2;
  const Mat d_pre =
      (d_hidden.array() * (1.0 - hidden.array().square())).matrix();
  g.w1 = d_pre.transpose() * batch;
  g.b1 = d_pre.colwise().sum().transpose();
  return g;
}

std::uint64_t TargetModel::content_hash() const {
  std::uint64_t h = hash_matrix(w1);
  h = hash_matrix(Mat(b1), h);
  h = hash_matrix(w2, h);
  h = hash_matrix(Mat(b2), h);
  return h;
}

TargetModel make_target_model(int input_dim, int hidden_dim, int num_classes,
                              std::uint64_t seed) {
  require(input_dim >= 1 && hidden_dim >= 1 && num_classes >= 2,
          "make_target_model: bad dimensions");
  Rng rng(derive_seed(seed, "target-model"));
  TargetModel m;
  m.w1 = Mat(hidden_dim, input_dim);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (int r = 0; r < hidden_dim; ++r)
    for (int c = 0; c < input_dim; ++c) m.w1(r, c) = s1 * rng.normal();
  m.b1 = Vec::Zero(hidden_dim);
  m.w2 = Mat(num_classes, hidden_dim);
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (int r = 0; r < num_classes; ++r)
    for (int c = 0; c < hidden_dim; ++c) m.w2(r, c) = s2 * rng.normal();
  m.b2 = Vec::Zero(num_classes);
  return m;
}

TargetModel clone_model(const TargetModel& m) { return m; }

}  // namespace csfda::models
