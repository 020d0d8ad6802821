#pragma once

#include <cstdint>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace csfda::mi {

// Exact information-theoretic computations on small discrete distributions.
// Natural-log units throughout. Alphabets are capped at 64 symbols so every
// quantity is computed by exhaustive enumeration in well under a second.
// All functions are pure; values are immutable once validated.

inline constexpr int kMaxAlphabet = 64;
inline constexpr double kSumTolerance = 1e-12;

// Probability vector over a finite alphabet.
struct DiscreteDist {
  Vec probs;

  // Throws ValidationError unless entries are >= 0 and sum to 1 (1e-12).
  void validate() const;
};

// Exhaustive probability table over two finite alphabets. Axis one indexes
// rows, axis two indexes columns.
struct DiscreteJoint {
  Mat table;

  void validate() const;
  DiscreteDist marginal_first() const;
  DiscreteDist marginal_second() const;
  DiscreteJoint transposed() const { return DiscreteJoint{table.transpose()}; }
};

// Total function from an input alphabet to an output alphabet.
struct AlphabetMap {
  std::vector<int> to;  // to[i] = image of input symbol i
  int output_size = 0;

  int input_size() const { return static_cast<int>(to.size()); }
  bool compressive() const { return output_size < input_size(); }
  // Invertible: |out| == |in| and the assignment is a permutation.
  bool bijective() const;
  void validate() const;
};

enum class Axis { First, Second };

// Shannon entropy, -sum p log p with 0 log 0 = 0. Result in nats, >= 0.
double entropy(const DiscreteDist& d);

// sum P(a,b) log[ P(a,b) / (P(a) P(b)) ], in nats.
double mutual_information(const DiscreteJoint& j);

// Joint of (A, f(B)) (axis == Second) or (f(A), B) (axis == First): output
// entries are sums of input entries over preimages.
DiscreteJoint push_forward(const DiscreteJoint& j, const AlphabetMap& m,
                           Axis axis);

struct Lemma1Result {
  bool holds = false;
  double lhs = 0.0;  // I(Z1, X1)
  double rhs = 0.0;  // I(Z1, f(X1))
};

// Data-processing check for a compressive map on axis two:
// holds <=> I(Z1,X1) >= I(Z1,Y1) - 1e-10. Non-compressive maps are rejected.
Lemma1Result check_lemma1(const DiscreteJoint& j, const AlphabetMap& m);

struct Theorem1Result {
  bool bound_holds = false;
  double literal = 0.0;    // I(Z,Z') - I(Z',Y)
  double surrogate = 0.0;  // I(Z,Z') - I(Y',Y), Y' = m(Z')
  double i_zprime_y = 0.0;
  double i_yprime_y = 0.0;
};

// Bound check for the bottleneck surrogate. j_zz is the joint of (Z, Z');
// j_zy the joint of (Z', Y); m acts on the Z' alphabet. The two joints must
// agree on the Z' marginal within 1e-9. bound_holds <=> literal <= surrogate
// + 1e-10. When m is bijective, I(Y',Y) additionally equals I(Z',Y).
Theorem1Result check_theorem1(const DiscreteJoint& j_zz,
                              const DiscreteJoint& j_zy, const AlphabetMap& m);

// ---- Randomized oracle sweeps -------------------------------------------
//
// Joint tables are sampled cell-wise from Dirichlet(1); maps are sampled
// uniformly among surjective assignments (compressive case) or permutations
// (bijective case). Everything is driven by the single documented seed.

struct SweepTrial {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

struct SweepReport {
  std::vector<SweepTrial> trials;
  int passed = 0;
  int total() const { return static_cast<int>(trials.size()); }
  bool all_passed() const { return passed == total(); }
};

inline constexpr std::uint64_t kDefaultSweepSeed = 20240117ULL;

// Lemma 1 sweep: lhs/rhs are the two mutual informations; holds is the
// inequality at 1e-10 slack.
SweepReport lemma1_sweep(std::uint64_t seed, int trials);

// Theorem 1 sweep: each trial draws a consistent (j_zz, j_zy) pair and checks
// the bound under a random compressive map plus the MI equality under a
// random bijective map. lhs/rhs hold literal/surrogate for the compressive
// case; holds requires both checks.
SweepReport theorem1_sweep(std::uint64_t seed, int trials);

// Random helpers shared with tests.
DiscreteJoint random_joint(Rng& rng, int rows, int cols);
AlphabetMap random_compressive_map(Rng& rng, int input_size);
AlphabetMap random_bijection(Rng& rng, int input_size);

}  // namespace csfda::mi
