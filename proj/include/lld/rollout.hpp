#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lld/model.hpp"
#include "lld/rng.hpp"

namespace lld {

struct Response {
  std::vector<Token> tokens;
  int reward = -1;  // -1 until scored, then 0 or 1

  bool scored() const { return reward >= 0; }
  bool is_positive() const { return reward == 1; }
  int length() const { return static_cast<int>(tokens.size()); }
};

// One question's G sampled responses plus the group statistics derived from
// their binary rewards. `advantages` holds the per-response scalar that is
// broadcast to every token of that response.
struct RolloutGroup {
  int question = 0;
  std::vector<Response> responses;
  double p = -1.0;  // success rate, set by score_group
  int n_pos = 0;
  int n_neg = 0;
  std::vector<double> advantages;  // empty until compute_advantages
  std::uint64_t seed = 0;          // sampling seed, recorded in dumps

  int size() const { return static_cast<int>(responses.size()); }
  bool scored() const { return p >= 0.0; }
  bool degenerate() const { return p <= 0.0 || p >= 1.0; }
  int total_tokens() const {
    int n = 0;
    for (const Response& r : responses) n += r.length();
    return n;
  }
  std::vector<int> positive_indices() const;
  std::vector<int> negative_indices() const;
  // context for position k (0-based) of response r: (question, tokens[0..k))
  ContextKey context_at(int response, int k) const;
};

// Deterministic scorer: reward 1 iff the answer span occurs contiguously in
// the response tokens.
struct TaskOracle {
  std::vector<Token> answer_span;
};

int score_response(const TaskOracle& oracle, const Response& response);

enum class VarianceMode { Population, Sample };

// Samples G responses autoregressively; stops each at the end token
// (vocab-1) or after max_len tokens. New contexts are inserted into params.
// Rewards are left unset.
RolloutGroup sample_group(PolicyParams& params, int question, int group_size,
                          int max_len, Rng& rng);

// Ensures every prefix context of every response exists in params. Used when
// groups are constructed directly rather than sampled.
void register_group(PolicyParams& params, const RolloutGroup& group);

// Copy of W plus only the group's own contexts. Probes clone parameters per
// question; slicing keeps that clone independent of how many other questions
// the full table has accumulated.
PolicyParams question_slice(const PolicyParams& params,
                            const RolloutGroup& group);

void score_group(RolloutGroup& group, const TaskOracle& oracle);

// A_hat = (r - mu) / sigma with mu = p and sigma = sqrt(p(1-p)) in
// Population mode (the default; keeps the group-weight identities exact at
// finite G). Sample mode divides the variance by G-1 instead.
void compute_advantages(RolloutGroup& group,
                        VarianceMode mode = VarianceMode::Population);

// (p_plus, p_minus) = ((1-p)/sqrt(p(1-p)), p/sqrt(p(1-p)))
std::pair<double, double> group_weights(double p);

// drops groups with p in {0, 1} (dynamic sampling)
std::vector<RolloutGroup> filter_degenerate(std::vector<RolloutGroup> groups);

}  // namespace lld
