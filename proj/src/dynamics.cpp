#include "lld/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace lld {

double delta_likelihood(const PolicyParams& before, const PolicyParams& after,
                        const RolloutGroup& group) {
  const std::vector<int> pos = group.positive_indices();
  if (pos.empty())
    throw DegenerateGroupError("likelihood change needs at least one positive");
  double acc = 0.0;
  for (int i : pos) {
    const auto& toks = group.responses[i].tokens;
    acc += sequence_log_likelihood(after, group.question, toks) -
           sequence_log_likelihood(before, group.question, toks);
  }
  return acc / static_cast<double>(pos.size());
}

TermDecomposition term_decomposition(const PolicyParams& params,
                                     const RolloutGroup& group,
                                     int positive_local_index) {
  if (!group.scored() || group.degenerate())
    throw DegenerateGroupError("decomposition needs 0 < p < 1");
  std::unordered_set<Token> first_tokens;
  for (const Response& r : group.responses)
    if (!first_tokens.insert(r.tokens.at(0)).second)
      throw AssumptionViolatedError(
          "responses must have pairwise distinct first tokens");

  const std::vector<int> pos = group.positive_indices();
  const std::vector<int> neg = group.negative_indices();
  const auto [p_plus, p_minus] = group_weights(group.p);
  const int ref = pos[positive_local_index];
  const int dim = params.dim();
  const Matrix& w = params.unembedding();

  auto err_of = [&](const ContextKey& ctx, Token t) {
    Vec e = next_token_distribution(params, ctx);
    for (double& v : e) v = -v;
    e[t] += 1.0;
    return e;
  };
  auto vec_dot = [](const Vec& a, const Vec& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  };
  // w_token - sum_z pi(z | ctx) w_z
  auto unembed_err = [&](const ContextKey& ctx, Token t) {
    Distribution probs = next_token_distribution(params, ctx);
    Vec out(dim, 0.0);
    const double* wt = w.row(t);
    for (int c = 0; c < dim; ++c) out[c] = wt[c];
    for (int z = 0; z < params.vocab(); ++z) {
      const double* wz = w.row(z);
      for (int c = 0; c < dim; ++c) out[c] -= probs[z] * wz[c];
    }
    return out;
  };

  struct Steps {
    std::vector<ContextKey> ctx;
    std::vector<Vec> err;
    std::vector<const Vec*> h;
  };
  auto steps_of = [&](int response) {
    Steps s;
    ContextKey ctx{group.question, {}};
    for (Token t : group.responses[response].tokens) {
      s.ctx.push_back(ctx);
      s.err.push_back(err_of(ctx, t));
      s.h.push_back(&params.context_embedding(ctx));
      ctx.prefix.push_back(t);
    }
    return s;
  };

  Steps ref_steps = steps_of(ref);
  TermDecomposition out;

  for (int i : pos) {
    Steps si = steps_of(i);
    for (std::size_t k = 0; k < ref_steps.err.size(); ++k)
      for (std::size_t kpp = 0; kpp < si.err.size(); ++kpp)
        out.term_i += vec_dot(ref_steps.err[k], si.err[kpp]) *
                      vec_dot(*ref_steps.h[k], *si.h[kpp]);
  }
  out.term_i *= p_plus;

  for (int j : neg) {
    Steps sj = steps_of(j);
    for (std::size_t k = 0; k < ref_steps.err.size(); ++k)
      for (std::size_t kp = 0; kp < sj.err.size(); ++kp)
        out.term_ii += vec_dot(ref_steps.err[k], sj.err[kp]) *
                       vec_dot(*ref_steps.h[k], *sj.h[kp]);
  }
  out.term_ii *= p_minus;

  // first-token unembedding term at the shared question context; the
  // probability-weighted mean unembedding cancels because p+ N+ = p- N-
  const ContextKey root{group.question, {}};
  Vec ref_root_err = unembed_err(root, group.responses[ref].tokens[0]);
  Vec direction(dim, 0.0);
  for (int i : pos) {
    const double* wt = w.row(group.responses[i].tokens[0]);
    for (int c = 0; c < dim; ++c) direction[c] += p_plus * wt[c];
  }
  for (int j : neg) {
    const double* wt = w.row(group.responses[j].tokens[0]);
    for (int c = 0; c < dim; ++c) direction[c] -= p_minus * wt[c];
  }
  out.term_iii = vec_dot(ref_root_err, direction);

  // own-context squared norms for k >= 2, weighted by p+ (the reference
  // response's own contribution to the update direction)
  for (std::size_t k = 1; k < ref_steps.ctx.size(); ++k) {
    Vec ue = unembed_err(ref_steps.ctx[k], group.responses[ref].tokens[k]);
    out.term_iv += vec_dot(ue, ue);
  }
  out.term_iv *= p_plus;

  return out;
}

UpdateReport single_step_probe(const PolicyParams& params,
                               const RolloutGroup& group,
                               const UpdateConfig& cfg, Rng& rng,
                               double eps_lld) {
  if (!group.scored() || group.degenerate())
    throw DegenerateGroupError("probe needs a non-degenerate scored group");

  RolloutGroup g = group;
  if (g.advantages.empty()) compute_advantages(g, cfg.variance);

  NthrReport report;
  const NthrReport* report_ptr = nullptr;
  if (cfg.variant == Variant::Nthr || cfg.variant == Variant::Random) {
    report = build_nthr_report(params, g, cfg.beta);
    report.eta = resolve_eta(cfg, g.p);
    report_ptr = &report;
  }
  TokenAdvantageMask mask = make_mask(g, cfg, report_ptr, rng);

  UpdateReport out;
  out.question = g.question;
  out.variant = cfg.variant;
  out.eps_lld = eps_lld;
  out.lr_used = cfg.learning_rate;

  ParamGradient grad = grpo_gradient(params, g, cfg, mask);
  PolicyParams after = apply_update(params, grad, cfg.learning_rate);

  const std::vector<int> pos = g.positive_indices();
  double fo = 0.0;
  for (int i : pos) {
    const auto& toks = g.responses[i].tokens;
    out.per_response_delta.push_back(
        sequence_log_likelihood(after, g.question, toks) -
        sequence_log_likelihood(params, g.question, toks));
    fo += param_dot(grad_log_likelihood(params, g.question, toks), grad);
  }
  out.first_order = fo / static_cast<double>(pos.size());
  out.delta = 0.0;
  for (double d : out.per_response_delta) out.delta += d;
  out.delta /= static_cast<double>(pos.size());
  out.lld_flag = lld_classify(out.delta, eps_lld);

  out.gwhes = gwhes_mean(params, g);
  try {
    TermDecomposition td;
    double ti = 0, tii = 0, tiii = 0, tiv = 0;
    for (int i = 0; i < g.n_pos; ++i) {
      td = term_decomposition(params, g, i);
      ti += td.term_i;
      tii += td.term_ii;
      tiii += td.term_iii;
      tiv += td.term_iv;
    }
    out.term_i = ti / g.n_pos;
    out.term_ii = tii / g.n_pos;
    out.term_iii = tiii / g.n_pos;
    out.term_iv = tiv / g.n_pos;
    out.terms_valid = true;
  } catch (const AssumptionViolatedError&) {
    out.terms_valid = false;
  }
  return out;
}

bool lld_classify(double delta, double eps_lld) { return delta < eps_lld; }

double topk_overlap(const RankingPair& pair, int k) {
  if (k <= 0) throw ConfigError("top-K overlap needs K >= 1");
  if (pair.first.size() != pair.second.size())
    throw ConfigError("rankings must order the same id set");
  if (static_cast<std::size_t>(k) > pair.first.size())
    throw ConfigError("K exceeds the ranking size");
  std::unordered_set<int> ids(pair.first.begin(), pair.first.end());
  for (int id : pair.second)
    if (!ids.count(id))
      throw ConfigError("rankings must be permutations of the same id set");

  std::unordered_set<int> top(pair.first.begin(), pair.first.begin() + k);
  int hits = 0;
  for (int i = 0; i < k; ++i)
    if (top.count(pair.second[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(k);
}

}  // namespace lld
