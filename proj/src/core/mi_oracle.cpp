#include "mi_oracle.hpp"

#include <cmath>
#include <string>

namespace csfda::mi {

namespace {

constexpr double kIneqSlack = 1e-10;
constexpr double kMarginalTolerance = 1e-9;

void check_alphabet_size(Eigen::Index n, const char* what) {
  require(n >= 1 && n <= kMaxAlphabet,
          std::string(what) + " alphabet size must be in [1, 64], got " +
              std::to_string(n));
}

// -p log p with the 0 log 0 = 0 convention.
double plogp(double p) { return p > 0.0 ? -p * std::log(p) : 0.0; }

}  // namespace

void DiscreteDist::validate() const {
  check_alphabet_size(probs.size(), "distribution");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    require(probs[i] >= 0.0, "distribution entry " + std::to_string(i) +
                                 " is negative: " + std::to_string(probs[i]));
    sum += probs[i];
  }
  require(std::abs(sum - 1.0) <= kSumTolerance,
          "distribution entries sum to " + std::to_string(sum) + ", not 1");
}

void DiscreteJoint::validate() const {
  check_alphabet_size(table.rows(), "joint first");
  check_alphabet_size(table.cols(), "joint second");
  double sum = 0.0;
  for (Eigen::Index a = 0; a < table.rows(); ++a) {
    for (Eigen::Index b = 0; b < table.cols(); ++b) {
      require(table(a, b) >= 0.0,
              "joint entry (" + std::to_string(a) + "," + std::to_string(b) +
                  ") is negative");
      sum += table(a, b);
    }
  }
  require(std::abs(sum - 1.0) <= kSumTolerance,
          "joint entries sum to " + std::to_string(sum) + ", not 1");
}

DiscreteDist DiscreteJoint::marginal_first() const {
  return DiscreteDist{table.rowwise().sum()};
}

DiscreteDist DiscreteJoint::marginal_second() const {
  return DiscreteDist{table.colwise().sum().transpose()};
}

bool AlphabetMap::bijective() const {
  if (output_size != input_size()) return false;
  std::vector<bool> hit(to.size(), false);
  for (int v : to) {
    if (v < 0 || v >= output_size || hit[v]) return false;
    hit[v] = true;
  }
  return true;
}

void AlphabetMap::validate() const {
  require(!to.empty(), "alphabet map has empty input alphabet");
  require(output_size >= 1, "alphabet map has empty output alphabet");
  check_alphabet_size(static_cast<Eigen::Index>(to.size()), "map input");
  check_alphabet_size(output_size, "map output");
  for (std::size_t i = 0; i < to.size(); ++i) {
    require(to[i] >= 0 && to[i] < output_size,
            "map image of symbol " + std::to_string(i) + " out of range");
  }
}

double entropy(const DiscreteDist& d) {
  d.validate();
  double h = 0.0;
  for (Eigen::Index i = 0; i < d.probs.size(); ++i) h += plogp(d.probs[i]);
  // Guard against -0.0 from rounding on near-point masses.
  return h < 0.0 ? 0.0 : h;
}

double mutual_information(const DiscreteJoint& j) {
  j.validate();
  const Vec pa = j.table.rowwise().sum();
  const Vec pb = j.table.colwise().sum().transpose();
  double mi = 0.0;
  for (Eigen::Index a = 0; a < j.table.rows(); ++a) {
    for (Eigen::Index b = 0; b < j.table.cols(); ++b) {
      const double pab = j.table(a, b);
      if (pab > 0.0) mi += pab * std::log(pab / (pa[a] * pb[b]));
    }
  }
  return mi < 0.0 ? 0.0 : mi;
}

DiscreteJoint push_forward(const DiscreteJoint& j, const AlphabetMap& m,
                           Axis axis) {
  j.validate();
  m.validate();
  const Eigen::Index n_in =
      axis == Axis::Second ? j.table.cols() : j.table.rows();
  require(m.input_size() == n_in,
          "map input alphabet (" + std::to_string(m.input_size()) +
              ") does not match joint axis size (" + std::to_string(n_in) +
              ")");
  Mat out;
  if (axis == Axis::Second) {
    out = Mat::Zero(j.table.rows(), m.output_size);
    for (Eigen::Index b = 0; b < j.table.cols(); ++b)
      out.col(m.to[static_cast<std::size_t>(b)]) += j.table.col(b);
  } else {
    out = Mat::Zero(m.output_size, j.table.cols());
    for (Eigen::Index a = 0; a < j.table.rows(); ++a)
      out.row(m.to[static_cast<std::size_t>(a)]) += j.table.row(a);
  }
  return DiscreteJoint{std::move(out)};
}

Lemma1Result check_lemma1(const DiscreteJoint& j, const AlphabetMap& m) {
  require(m.compressive(),
          "check_lemma1 requires a compressive map (|out| < |in|)");
  Lemma1Result r;
  r.lhs = mutual_information(j);
  r.rhs = mutual_information(push_forward(j, m, Axis::Second));
  r.holds = r.lhs >= r.rhs - kIneqSlack;
  return r;
}

Theorem1Result check_theorem1(const DiscreteJoint& j_zz,
                              const DiscreteJoint& j_zy,
                              const AlphabetMap& m) {
  j_zz.validate();
  j_zy.validate();
  // The Z' alphabet is axis two of j_zz and axis one of j_zy.
  const Vec zp_from_zz = j_zz.table.colwise().sum().transpose();
  const Vec zp_from_zy = j_zy.table.rowwise().sum();
  require(zp_from_zz.size() == zp_from_zy.size(),
          "joints disagree on the Z' alphabet size");
  require((zp_from_zz - zp_from_zy).cwiseAbs().maxCoeff() <=
              kMarginalTolerance,
          "joints disagree on the Z' marginal beyond 1e-9");

  Theorem1Result r;
  const double i_zzp = mutual_information(j_zz);
  r.i_zprime_y = mutual_information(j_zy);
  r.i_yprime_y = mutual_information(push_forward(j_zy, m, Axis::First));
  r.literal = i_zzp - r.i_zprime_y;
  r.surrogate = i_zzp - r.i_yprime_y;
  r.bound_holds = r.literal <= r.surrogate + kIneqSlack;
  return r;
}

DiscreteJoint random_joint(Rng& rng, int rows, int cols) {
  const auto cells = rng.dirichlet_flat(
      static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  Mat table(rows, cols);
  std::size_t k = 0;
  for (int a = 0; a < rows; ++a)
    for (int b = 0; b < cols; ++b) table(a, b) = cells[k++];
  return DiscreteJoint{std::move(table)};
}

AlphabetMap random_compressive_map(Rng& rng, int input_size) {
  require(input_size >= 2, "compressive map needs |in| >= 2");
  const int output_size =
      1 + static_cast<int>(rng.uniform_index(
              static_cast<std::uint64_t>(input_size - 1)));
  AlphabetMap m;
  m.output_size = output_size;
  m.to.resize(static_cast<std::size_t>(input_size));
  // Hit every output symbol once, assign the remaining inputs uniformly,
  // then shuffle so the surjective "prefix" is not positional.
  for (int i = 0; i < input_size; ++i) {
    m.to[static_cast<std::size_t>(i)] =
        i < output_size
            ? i
            : static_cast<int>(rng.uniform_index(
                  static_cast<std::uint64_t>(output_size)));
  }
  const auto perm = rng.permutation(static_cast<std::size_t>(input_size));
  std::vector<int> shuffled(m.to.size());
  for (std::size_t i = 0; i < m.to.size(); ++i) shuffled[i] = m.to[perm[i]];
  m.to = std::move(shuffled);
  return m;
}

AlphabetMap random_bijection(Rng& rng, int input_size) {
  AlphabetMap m;
  m.output_size = input_size;
  const auto perm = rng.permutation(static_cast<std::size_t>(input_size));
  m.to.resize(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    m.to[i] = static_cast<int>(perm[i]);
  return m;
}

SweepReport lemma1_sweep(std::uint64_t seed, int trials) {
  Rng rng(derive_seed(seed, "lemma1"));
  SweepReport report;
  report.trials.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    const int rows = 2 + static_cast<int>(rng.uniform_index(7));  // 2..8
    const int cols = 2 + static_cast<int>(rng.uniform_index(7));
    const auto joint = random_joint(rng, rows, cols);
    const auto map = random_compressive_map(rng, cols);
    const auto res = check_lemma1(joint, map);
    report.trials.push_back({res.lhs, res.rhs, res.holds});
    if (res.holds) ++report.passed;
  }
  return report;
}

SweepReport theorem1_sweep(std::uint64_t seed, int trials) {
  Rng rng(derive_seed(seed, "theorem1"));
  SweepReport report;
  report.trials.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    const int nz = 2 + static_cast<int>(rng.uniform_index(6));   // |Z|
    const int nzp = 2 + static_cast<int>(rng.uniform_index(6));  // |Z'|
    const int ny = 2 + static_cast<int>(rng.uniform_index(6));   // |Y|

    // Draw p(z'), p(z|z'), p(y|z'): the two joints then share the Z'
    // marginal exactly by construction.
    const auto pzp = rng.dirichlet_flat(static_cast<std::size_t>(nzp));
    Mat zz(nz, nzp), zy(nzp, ny);
    for (int k = 0; k < nzp; ++k) {
      const auto pz_given = rng.dirichlet_flat(static_cast<std::size_t>(nz));
      const auto py_given = rng.dirichlet_flat(static_cast<std::size_t>(ny));
      for (int z = 0; z < nz; ++z)
        zz(z, k) = pzp[static_cast<std::size_t>(k)] *
                   pz_given[static_cast<std::size_t>(z)];
      for (int y = 0; y < ny; ++y)
        zy(k, y) = pzp[static_cast<std::size_t>(k)] *
                   py_given[static_cast<std::size_t>(y)];
    }
    // Renormalize away accumulated rounding so validate() passes at 1e-12.
    zz /= zz.sum();
    zy /= zy.sum();
    const DiscreteJoint j_zz{std::move(zz)};
    const DiscreteJoint j_zy{std::move(zy)};

    const auto compressive = random_compressive_map(rng, nzp);
    const auto bijective = random_bijection(rng, nzp);

    const auto bound = check_theorem1(j_zz, j_zy, compressive);
    const auto equal = check_theorem1(j_zz, j_zy, bijective);
    const bool equality_ok =
        std::abs(equal.i_yprime_y - equal.i_zprime_y) <= kIneqSlack;

    SweepTrial trial;
    trial.lhs = bound.literal;
    trial.rhs = bound.surrogate;
    trial.holds = bound.bound_holds && equal.bound_holds && equality_ok;
    report.trials.push_back(trial);
    if (trial.holds) ++report.passed;
  }
  return report;
}

}  // namespace csfda::mi
