#pragma once

#include <limits>
#include <vector>

#include "lld/model.hpp"
#include "lld/rollout.hpp"

namespace lld {

// Prediction-error similarity weight between two (context, token) steps:
// the inner product of their softmax prediction-error vectors e_tok - pi.
struct AlphaWeight {
  double value = 0.0;
  enum class Kind { Plus, Minus } kind = Kind::Minus;
  int k = 0;       // position in the reference positive response
  int k_other = 0; // position in the paired response (k' or k'')
};

double alpha_weight(const PolicyParams& params, const ContextKey& ctx_a,
                    Token token_a, const ContextKey& ctx_b, Token token_b);

// Per-group token report. Negative responses and positive responses are
// addressed by their local index (order of appearance in the group).
struct NthrReport {
  std::vector<int> negative_response;          // local j -> group response idx
  std::vector<int> positive_response;          // local i -> group response idx
  std::vector<std::vector<double>> s_minus;    // [j][k'] token hidden reward
  std::vector<double> sbar_plus;               // [i'] mutual influence
  double tau = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  double eta = std::numeric_limits<double>::quiet_NaN();  // set when a mask is built
  std::vector<std::vector<int>> selected;      // [j] -> selected positions k'
  // fast-path only: upper bounds on the restricted-vocabulary error
  std::vector<std::vector<double>> s_minus_bound;
  std::vector<double> sbar_plus_bound;

  bool has_scores() const { return !s_minus.empty() || !negative_response.empty(); }
  bool has_selection() const { return !std::isnan(tau); }
  int selected_total() const {
    int n = 0;
    for (const auto& v : selected) n += static_cast<int>(v.size());
    return n;
  }
};

// Embedding-channel score for one positive response (local index i among the
// positives): p_minus * sum alpha_minus <h+, h-> - p_plus * sum alpha_plus
// <h+, h+>. Larger means lazier likelihood growth for that response.
double gwhes(const PolicyParams& params, const RolloutGroup& group,
             int positive_local_index);

// mean of gwhes over the group's positive responses
double gwhes_mean(const PolicyParams& params, const RolloutGroup& group);

// s_minus[j][k'] = sum_i sum_k alpha_minus * <h+_{i,<k}, h-_{j,<k'}>,
// summed over every token of every positive response (naive triple loop)
NthrReport nthr_scores(const PolicyParams& params, const RolloutGroup& group);

// single-positive variant: the influence of negative token (j, k') on one
// positive response alone
double nthr_score_single(const PolicyParams& params, const RolloutGroup& group,
                         int positive_local_index, int negative_local_index,
                         int k_prime);

// sbar[i'] = (1/|y+_{i'}|) sum_{k''} sum_i sum_k alpha_plus * <h+, h+>
std::vector<double> positive_mutual_influence(const PolicyParams& params,
                                              const RolloutGroup& group);

// Fills tau = beta * min sbar and selected[j] = { k' : s_minus > tau }
// (strict). beta = +inf selects nothing, beta = -inf selects everything;
// both bypass the product so that an infinite beta never meets a zero min.
void select_tokens(NthrReport& report, double beta);

double eta_schedule(double p);  // 2 * |0.5 - p|

// Restricted-vocabulary / summation-first configuration. With an empty
// restricted set the group's own token set plus the end token is used; with
// use_full_vocabulary the fast path reproduces the naive scores exactly (up
// to summation order).
struct FastPathConfig {
  bool use_full_vocabulary = false;
  std::vector<Token> restricted;  // optional explicit token set
};

// Summation-first evaluation of the scores: the positive prediction-error x
// embedding outer products are accumulated into one |V*| x d matrix before
// any pairing with negative tokens. Also fills sbar_plus and the mass-bound
// columns.
NthrReport fast_nthr(const PolicyParams& params, const RolloutGroup& group,
                     const FastPathConfig& cfg);

// convenience: scores + mutual influence + selection in one report
NthrReport build_nthr_report(const PolicyParams& params,
                             const RolloutGroup& group, double beta);

}  // namespace lld
