#pragma once

#include <string>
#include <vector>

#include "lld/model.hpp"
#include "lld/nthr.hpp"
#include "lld/rollout.hpp"

namespace lld {

enum class Variant { Grpo, PosOnly, Random, Nthr };

const char* variant_name(Variant v);          // GRPO / POS_ONLY / RANDOM / NTHR
Variant parse_variant(const std::string& s);  // throws ConfigError

// How the penalty attenuation factor eta is chosen per group.
enum class EtaPolicy {
  Fixed,            // constant value
  SuccessRate,      // eta = p
  FailureRate,      // eta = 1 - p
  CenteredAbs,      // eta = 2 * |0.5 - p|
};

struct UpdateConfig {
  double clip_epsilon = 0.2;
  double learning_rate = 0.5;
  Variant variant = Variant::Grpo;
  bool length_normalize = true;  // 1 / sum_i |y_i| in the surrogate
  EtaPolicy eta_policy = EtaPolicy::Fixed;
  double eta_value = 0.0;  // used when eta_policy == Fixed
  double beta = 1.0;       // threshold scale on min mutual influence
  VarianceMode variance = VarianceMode::Population;
};

double resolve_eta(const UpdateConfig& cfg, double p);

// per-response, per-token advantage multiplier in {1, eta, 0}
struct TokenAdvantageMask {
  std::vector<std::vector<double>> weights;

  static TokenAdvantageMask ones(const RolloutGroup& group);
  double at(int response, int k) const { return weights[response][k]; }
};

// per-token likelihood ratios gamma = pi / pi_old; exactly 1 at theta = theta_old
std::vector<std::vector<double>> likelihood_ratios(const PolicyParams& params,
                                                   const PolicyParams& old_params,
                                                   const RolloutGroup& group);

// Clipped token-level surrogate for one group:
// (1/sum|y_i|) sum_{i,k} min(gamma * A, A * clip(gamma, 1-eps, 1+eps)).
// The normalization follows cfg.length_normalize.
double grpo_objective_value(const PolicyParams& params,
                            const PolicyParams& old_params,
                            const RolloutGroup& group, const UpdateConfig& cfg);

// Group-preference reduction of the same objective (binary rewards):
// p+ sum_i min(ratio_i, 1+eps) - p- sum_j max(ratio_j, 1-eps) with
// sequence-level ratios.
double group_preference_objective(const PolicyParams& params,
                                  const PolicyParams& old_params,
                                  const RolloutGroup& group,
                                  const UpdateConfig& cfg);

// Policy-gradient of the surrogate at theta = theta_old (gamma = 1, clip
// inactive): (1/sum|y_i|) sum_{i,k} mask * A_i * grad ln pi(y_{i,k} | ctx).
ParamGradient grpo_gradient(const PolicyParams& params,
                            const RolloutGroup& group, const UpdateConfig& cfg,
                            const TokenAdvantageMask& mask);

// Variant mask. GRPO: all ones. POS_ONLY: negative-response tokens zeroed.
// RANDOM: |selected_j| uniformly chosen tokens per negative response zeroed
// (needs the report for the counts). NTHR: eta on selected tokens.
TokenAdvantageMask make_mask(const RolloutGroup& group, const UpdateConfig& cfg,
                             const NthrReport* report, Rng& rng);

// theta' = theta + lr * grad (ascent); throws on non-finite gradient
PolicyParams apply_update(const PolicyParams& params, const ParamGradient& grad,
                          double lr);

}  // namespace lld
