#include "lld/rollout.hpp"

#include <algorithm>
#include <cmath>

namespace lld {

std::vector<int> RolloutGroup::positive_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (responses[i].is_positive()) out.push_back(i);
  return out;
}

std::vector<int> RolloutGroup::negative_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (responses[i].scored() && !responses[i].is_positive()) out.push_back(i);
  return out;
}

ContextKey RolloutGroup::context_at(int response, int k) const {
  const std::vector<Token>& toks = responses[response].tokens;
  return ContextKey{question, std::vector<Token>(toks.begin(), toks.begin() + k)};
}

int score_response(const TaskOracle& oracle, const Response& response) {
  const auto& span = oracle.answer_span;
  const auto& toks = response.tokens;
  if (span.empty() || span.size() > toks.size()) return 0;
  auto it = std::search(toks.begin(), toks.end(), span.begin(), span.end());
  return it != toks.end() ? 1 : 0;
}

RolloutGroup sample_group(PolicyParams& params, int question, int group_size,
                          int max_len, Rng& rng) {
  if (group_size < 2) throw ConfigError("group size must be >= 2");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  const Token end_token = params.vocab() - 1;

  RolloutGroup group;
  group.question = question;
  group.responses.resize(group_size);
  for (Response& resp : group.responses) {
    ContextKey ctx{question, {}};
    for (int k = 0; k < max_len; ++k) {
      params.ensure_context(ctx);
      Distribution probs = next_token_distribution(params, ctx);
      // inverse-CDF draw; the final bucket absorbs rounding slack
      double u = rng.uniform();
      Token tok = params.vocab() - 1;
      double cum = 0.0;
      for (int z = 0; z < params.vocab(); ++z) {
        cum += probs[z];
        if (u < cum) {
          tok = z;
          break;
        }
      }
      resp.tokens.push_back(tok);
      if (tok == end_token) break;
      ctx.prefix.push_back(tok);
    }
  }
  return group;
}

void register_group(PolicyParams& params, const RolloutGroup& group) {
  for (const Response& resp : group.responses) {
    ContextKey ctx{group.question, {}};
    for (Token t : resp.tokens) {
      params.ensure_context(ctx);
      ctx.prefix.push_back(t);
    }
  }
}

PolicyParams question_slice(const PolicyParams& params,
                            const RolloutGroup& group) {
  PolicyParams out =
      PolicyParams::init(params.vocab(), params.dim(), params.init_seed());
  out.unembedding() = params.unembedding();
  for (const Response& resp : group.responses) {
    ContextKey ctx{group.question, {}};
    for (Token t : resp.tokens) {
      out.ensure_context(ctx) = params.context_embedding(ctx);
      ctx.prefix.push_back(t);
    }
  }
  return out;
}

void score_group(RolloutGroup& group, const TaskOracle& oracle) {
  group.n_pos = 0;
  group.n_neg = 0;
  for (Response& resp : group.responses) {
    resp.reward = score_response(oracle, resp);
    (resp.reward == 1 ? group.n_pos : group.n_neg)++;
  }
  group.p = static_cast<double>(group.n_pos) / group.size();
}

void compute_advantages(RolloutGroup& group, VarianceMode mode) {
  if (!group.scored())
    throw DegenerateGroupError("advantages require scored rewards");
  if (group.degenerate())
    throw DegenerateGroupError("group has p in {0,1}; filter before use");
  const double p = group.p;
  double sigma = std::sqrt(p * (1.0 - p));
  if (mode == VarianceMode::Sample) {
    const double g = static_cast<double>(group.size());
    sigma = std::sqrt(g * p * (1.0 - p) / (g - 1.0));
  }
  group.advantages.resize(group.size());
  for (int i = 0; i < group.size(); ++i)
    group.advantages[i] = (group.responses[i].reward - p) / sigma;
}

std::pair<double, double> group_weights(double p) {
  if (p <= 0.0 || p >= 1.0)
    throw DegenerateGroupError("group weights need 0 < p < 1");
  const double s = std::sqrt(p * (1.0 - p));
  return {(1.0 - p) / s, p / s};
}

std::vector<RolloutGroup> filter_degenerate(std::vector<RolloutGroup> groups) {
  std::vector<RolloutGroup> kept;
  kept.reserve(groups.size());
  for (RolloutGroup& g : groups) {
    if (!g.scored())
      throw DegenerateGroupError("filter requires scored groups");
    if (!g.degenerate()) kept.push_back(std::move(g));
  }
  return kept;
}

}  // namespace lld
