#pragma once

#include <limits>
#include <vector>

#include "lld/nthr.hpp"
#include "lld/objective.hpp"

namespace lld {

// Result of one reinitialize-update-measure probe for a single question.
struct UpdateReport {
  int question = 0;
  Variant variant = Variant::Grpo;
  double delta = 0.0;                       // mean log-likelihood change of positives
  std::vector<double> per_response_delta;   // one entry per positive response
  double first_order = 0.0;                 // d(delta)/d(lr) at lr = 0
  double lr_used = 0.0;
  double gwhes = std::numeric_limits<double>::quiet_NaN();
  double term_i = std::numeric_limits<double>::quiet_NaN();
  double term_ii = std::numeric_limits<double>::quiet_NaN();
  double term_iii = std::numeric_limits<double>::quiet_NaN();
  double term_iv = std::numeric_limits<double>::quiet_NaN();
  bool terms_valid = false;
  bool lld_flag = false;
  double eps_lld = 0.0;
};

struct TermDecomposition {
  double term_i = 0.0;    // positive-pair embedding sum
  double term_ii = 0.0;   // negative-pair embedding sum
  double term_iii = 0.0;  // first-token unembedding cross term
  double term_iv = 0.0;   // weighted squared prediction-error unembedding norms, k >= 2
  double total() const { return term_i - term_ii + term_iii + term_iv; }
};

// (1/N+) sum_i [ln pi_after(y_i+ | x) - ln pi_before(y_i+ | x)]
double delta_likelihood(const PolicyParams& before, const PolicyParams& after,
                        const RolloutGroup& group);

// Embedding/unembedding split of the directional derivative of
// ln pi(y_i+ | x) along the unnormalized group-preference gradient.
// Requires all G responses to have pairwise distinct first tokens.
TermDecomposition term_decomposition(const PolicyParams& params,
                                     const RolloutGroup& group,
                                     int positive_local_index);

// Clones params, builds the variant's mask, applies one ascent step at
// cfg.learning_rate and measures the likelihood change. The input params are
// left untouched (per-sample reinitialization). `rng` drives the RANDOM mask.
UpdateReport single_step_probe(const PolicyParams& params,
                               const RolloutGroup& group,
                               const UpdateConfig& cfg, Rng& rng,
                               double eps_lld = 0.0);

// true iff delta < eps_lld (strict)
bool lld_classify(double delta, double eps_lld);

// Two orderings of the same id set, most-extreme first.
struct RankingPair {
  std::vector<int> first;
  std::vector<int> second;
};

// |top-K(first) cap top-K(second)| / K
double topk_overlap(const RankingPair& pair, int k);

}  // namespace lld
