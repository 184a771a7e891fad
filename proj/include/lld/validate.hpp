#pragma once

#include <string>
#include <vector>

#include "lld/objective.hpp"
#include "lld/rollout.hpp"

namespace lld {

// A policy plus one scored group with advantages, built directly (not
// sampled) so identity checks can control shapes and reward patterns.
struct TestInstance {
  PolicyParams params;
  RolloutGroup group;
};

struct InstanceOptions {
  int min_vocab = 2;
  int max_vocab = 16;
  int min_dim = 1;
  int max_dim = 8;
  int min_group = 2;
  int max_group = 6;
  int min_len = 1;
  int max_len = 6;
  bool distinct_first_tokens = false;
};

TestInstance random_instance(Rng& rng, const InstanceOptions& opts);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// closed-form grad_log_likelihood vs central finite differences
CheckResult check_gradient_finite_difference(std::uint64_t seed, int instances);
// token-level surrogate gradient vs the weighted group-preference gradient
CheckResult check_gradient_route_equivalence(std::uint64_t seed, int instances);
// I - II + III + IV vs the directional derivative, and the embedding score
// vs II - I
CheckResult check_decomposition_identity(std::uint64_t seed, int instances);
// naive triple-loop scores vs the summation-first path at full vocabulary
CheckResult check_nthr_dual_path(std::uint64_t seed, int instances);
// scanning one negative context embedding along the positive direction:
// score up, one-step likelihood change down
CheckResult check_token_score_monotonicity(std::uint64_t seed, int points);
// advantage zero-sum and p+ N+ = p- N- on random (p, G)
CheckResult check_advantage_identities(std::uint64_t seed, int combos);

std::vector<CheckResult> run_all_checks(std::uint64_t seed);

}  // namespace lld
