#include "lld/objective.hpp"

#include <algorithm>
#include <cmath>

namespace lld {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Grpo: return "GRPO";
    case Variant::PosOnly: return "POS_ONLY";
    case Variant::Random: return "RANDOM";
    case Variant::Nthr: return "NTHR";
  }
  return "GRPO";
}

Variant parse_variant(const std::string& s) {
  if (s == "GRPO") return Variant::Grpo;
  if (s == "POS_ONLY") return Variant::PosOnly;
  if (s == "RANDOM") return Variant::Random;
  if (s == "NTHR") return Variant::Nthr;
  throw ConfigError("unknown variant '" + s + "'");
}

double resolve_eta(const UpdateConfig& cfg, double p) {
  switch (cfg.eta_policy) {
    case EtaPolicy::Fixed: return cfg.eta_value;
    case EtaPolicy::SuccessRate: return p;
    case EtaPolicy::FailureRate: return 1.0 - p;
    case EtaPolicy::CenteredAbs: return eta_schedule(p);
  }
  return cfg.eta_value;
}

TokenAdvantageMask TokenAdvantageMask::ones(const RolloutGroup& group) {
  TokenAdvantageMask mask;
  mask.weights.resize(group.size());
  for (int i = 0; i < group.size(); ++i)
    mask.weights[i].assign(group.responses[i].tokens.size(), 1.0);
  return mask;
}

std::vector<std::vector<double>> likelihood_ratios(
    const PolicyParams& params, const PolicyParams& old_params,
    const RolloutGroup& group) {
  std::vector<std::vector<double>> ratios(group.size());
  for (int i = 0; i < group.size(); ++i) {
    const Response& resp = group.responses[i];
    ContextKey ctx{group.question, {}};
    for (Token t : resp.tokens) {
      double lp = step_log_prob(params, ctx, t);
      double lp_old = step_log_prob(old_params, ctx, t);
      ratios[i].push_back(std::exp(lp - lp_old));
      ctx.prefix.push_back(t);
    }
  }
  return ratios;
}

double grpo_objective_value(const PolicyParams& params,
                            const PolicyParams& old_params,
                            const RolloutGroup& group,
                            const UpdateConfig& cfg) {
  if (group.advantages.empty())
    throw DegenerateGroupError("objective requires computed advantages");
  const double eps = cfg.clip_epsilon;
  auto ratios = likelihood_ratios(params, old_params, group);
  double acc = 0.0;
  for (int i = 0; i < group.size(); ++i) {
    const double adv = group.advantages[i];
    for (double gamma : ratios[i]) {
      double clipped = std::clamp(gamma, 1.0 - eps, 1.0 + eps);
      acc += std::min(gamma * adv, clipped * adv);
    }
  }
  if (cfg.length_normalize) acc /= group.total_tokens();
  return acc;
}

double group_preference_objective(const PolicyParams& params,
                                  const PolicyParams& old_params,
                                  const RolloutGroup& group,
                                  const UpdateConfig& cfg) {
  if (!group.scored() || group.degenerate())
    throw DegenerateGroupError("group preference objective needs 0 < p < 1");
  const auto [p_plus, p_minus] = group_weights(group.p);
  const double eps = cfg.clip_epsilon;
  double acc = 0.0;
  for (int i = 0; i < group.size(); ++i) {
    const Response& resp = group.responses[i];
    double ll = sequence_log_likelihood(params, group.question, resp.tokens);
    double ll_old =
        sequence_log_likelihood(old_params, group.question, resp.tokens);
    double ratio = std::exp(ll - ll_old);
    if (resp.is_positive())
      acc += p_plus * std::min(ratio, 1.0 + eps);
    else
      acc -= p_minus * std::max(ratio, 1.0 - eps);
  }
  return acc;
}

ParamGradient grpo_gradient(const PolicyParams& params,
                            const RolloutGroup& group, const UpdateConfig& cfg,
                            const TokenAdvantageMask& mask) {
  if (group.advantages.empty())
    throw DegenerateGroupError("gradient requires computed advantages");
  const double norm =
      cfg.length_normalize ? 1.0 / group.total_tokens() : 1.0;
  ParamGradient grad = ParamGradient::zeros_like(params);
  for (int i = 0; i < group.size(); ++i) {
    const Response& resp = group.responses[i];
    const double adv = group.advantages[i];
    ContextKey ctx{group.question, {}};
    for (std::size_t k = 0; k < resp.tokens.size(); ++k) {
      double w = mask.at(i, static_cast<int>(k)) * adv * norm;
      if (w != 0.0) accumulate_step_grad(params, ctx, resp.tokens[k], w, grad);
      ctx.prefix.push_back(resp.tokens[k]);
    }
  }
  return grad;
}

TokenAdvantageMask make_mask(const RolloutGroup& group, const UpdateConfig& cfg,
                             const NthrReport* report, Rng& rng) {
  TokenAdvantageMask mask = TokenAdvantageMask::ones(group);
  switch (cfg.variant) {
    case Variant::Grpo:
      break;
    case Variant::PosOnly:
      for (int i = 0; i < group.size(); ++i)
        if (!group.responses[i].is_positive())
          std::fill(mask.weights[i].begin(), mask.weights[i].end(), 0.0);
      break;
    case Variant::Random: {
      if (report == nullptr || !report->has_selection())
        throw ConfigError("RANDOM variant needs a selected token report");
      for (std::size_t j = 0; j < report->negative_response.size(); ++j) {
        int resp = report->negative_response[j];
        int len = group.responses[resp].length();
        int count = std::min<int>(static_cast<int>(report->selected[j].size()),
                                  len);
        // partial Fisher-Yates: first `count` entries of a shuffled index set
        std::vector<int> idx(len);
        for (int k = 0; k < len; ++k) idx[k] = k;
        for (int k = 0; k < count; ++k) {
          int r = k + rng.uniform_int(len - k);
          std::swap(idx[k], idx[r]);
          mask.weights[resp][idx[k]] = 0.0;
        }
      }
      break;
    }
    case Variant::Nthr: {
      if (report == nullptr || !report->has_selection())
        throw ConfigError("NTHR variant needs a selected token report");
      const double eta = resolve_eta(cfg, group.p);
      for (std::size_t j = 0; j < report->negative_response.size(); ++j) {
        int resp = report->negative_response[j];
        for (int kp : report->selected[j]) mask.weights[resp][kp] = eta;
      }
      break;
    }
  }
  return mask;
}

PolicyParams apply_update(const PolicyParams& params, const ParamGradient& grad,
                          double lr) {
  if (!grad.finite())
    throw Error(ErrorCategory::Internal, "non-finite gradient entries");
  PolicyParams out = params;
  Matrix& w = out.unembedding();
  for (std::size_t i = 0; i < w.data.size(); ++i)
    w.data[i] += lr * grad.d_unembedding.data[i];
  for (const auto& [key, dh] : grad.d_contexts) {
    Vec& h = out.context_embedding_mut(key);
    for (std::size_t c = 0; c < dh.size(); ++c) h[c] += lr * dh[c];
  }
  return out;
}

}  // namespace lld
