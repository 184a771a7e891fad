#include "lld/nthr.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace lld {

namespace {

double dot(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

// prediction-error vector e_token - pi(.|ctx)
Vec prediction_error(const PolicyParams& params, const ContextKey& ctx,
                     Token token) {
  Vec err = next_token_distribution(params, ctx);
  for (double& v : err) v = -v;
  err[token] += 1.0;
  return err;
}

// per-step caches for one group: contexts, embeddings, prediction errors
struct StepCache {
  std::vector<ContextKey> ctx;   // context of each position
  std::vector<const Vec*> h;     // embedding of each context
  std::vector<Vec> err;          // prediction error of each position
};

StepCache cache_response(const PolicyParams& params, const RolloutGroup& group,
                         int response) {
  StepCache c;
  const Response& resp = group.responses[response];
  ContextKey ctx{group.question, {}};
  for (Token t : resp.tokens) {
    c.ctx.push_back(ctx);
    c.h.push_back(&params.context_embedding(ctx));
    c.err.push_back(prediction_error(params, ctx, t));
    ctx.prefix.push_back(t);
  }
  return c;
}

void require_mixed(const RolloutGroup& group) {
  if (!group.scored() || group.degenerate())
    throw DegenerateGroupError("operation requires a scored group with 0 < p < 1");
}

}  // namespace

double alpha_weight(const PolicyParams& params, const ContextKey& ctx_a,
                    Token token_a, const ContextKey& ctx_b, Token token_b) {
  Vec ea = prediction_error(params, ctx_a, token_a);
  Vec eb = prediction_error(params, ctx_b, token_b);
  return dot(ea, eb);
}

double gwhes(const PolicyParams& params, const RolloutGroup& group,
             int positive_local_index) {
  require_mixed(group);
  const std::vector<int> pos = group.positive_indices();
  const std::vector<int> neg = group.negative_indices();
  const auto [p_plus, p_minus] = group_weights(group.p);

  StepCache ref = cache_response(params, group, pos[positive_local_index]);

  double negative_part = 0.0;
  for (int j : neg) {
    StepCache cj = cache_response(params, group, j);
    for (std::size_t k = 0; k < ref.err.size(); ++k)
      for (std::size_t kp = 0; kp < cj.err.size(); ++kp)
        negative_part += dot(ref.err[k], cj.err[kp]) * dot(*ref.h[k], *cj.h[kp]);
  }
  double positive_part = 0.0;
  for (int i : pos) {
    StepCache ci = cache_response(params, group, i);
    for (std::size_t k = 0; k < ref.err.size(); ++k)
      for (std::size_t kpp = 0; kpp < ci.err.size(); ++kpp)
        positive_part += dot(ref.err[k], ci.err[kpp]) * dot(*ref.h[k], *ci.h[kpp]);
  }
  return p_minus * negative_part - p_plus * positive_part;
}

double gwhes_mean(const PolicyParams& params, const RolloutGroup& group) {
  require_mixed(group);
  const int n = group.n_pos;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += gwhes(params, group, i);
  return acc / n;
}

NthrReport nthr_scores(const PolicyParams& params, const RolloutGroup& group) {
  require_mixed(group);
  NthrReport report;
  report.positive_response = group.positive_indices();
  report.negative_response = group.negative_indices();

  std::vector<StepCache> pos_cache;
  for (int i : report.positive_response)
    pos_cache.push_back(cache_response(params, group, i));

  for (int j : report.negative_response) {
    StepCache cj = cache_response(params, group, j);
    std::vector<double> scores(cj.err.size(), 0.0);
    for (std::size_t kp = 0; kp < cj.err.size(); ++kp) {
      double s = 0.0;
      for (const StepCache& ci : pos_cache)
        for (std::size_t k = 0; k < ci.err.size(); ++k)
          s += dot(ci.err[k], cj.err[kp]) * dot(*ci.h[k], *cj.h[kp]);
      scores[kp] = s;
    }
    report.s_minus.push_back(std::move(scores));
  }
  return report;
}

double nthr_score_single(const PolicyParams& params, const RolloutGroup& group,
                         int positive_local_index, int negative_local_index,
                         int k_prime) {
  require_mixed(group);
  const std::vector<int> pos = group.positive_indices();
  const std::vector<int> neg = group.negative_indices();
  StepCache ci = cache_response(params, group, pos[positive_local_index]);
  StepCache cj = cache_response(params, group, neg[negative_local_index]);
  double s = 0.0;
  for (std::size_t k = 0; k < ci.err.size(); ++k)
    s += dot(ci.err[k], cj.err[k_prime]) * dot(*ci.h[k], *cj.h[k_prime]);
  return s;
}

std::vector<double> positive_mutual_influence(const PolicyParams& params,
                                              const RolloutGroup& group) {
  const std::vector<int> pos = group.positive_indices();
  if (pos.empty())
    throw DegenerateGroupError("mutual influence needs at least one positive");

  std::vector<StepCache> cache;
  for (int i : pos) cache.push_back(cache_response(params, group, i));

  std::vector<double> sbar(pos.size(), 0.0);
  for (std::size_t ip = 0; ip < pos.size(); ++ip) {
    const StepCache& ref = cache[ip];
    double acc = 0.0;
    for (std::size_t kpp = 0; kpp < ref.err.size(); ++kpp)
      for (const StepCache& ci : cache)
        for (std::size_t k = 0; k < ci.err.size(); ++k)
          acc += dot(ci.err[k], ref.err[kpp]) * dot(*ci.h[k], *ref.h[kpp]);
    sbar[ip] = acc / static_cast<double>(ref.err.size());
  }
  return sbar;
}

void select_tokens(NthrReport& report, double beta) {
  if (report.sbar_plus.empty())
    throw DegenerateGroupError("selection requires positive mutual influences");
  report.beta = beta;
  if (std::isinf(beta)) {
    // sentinels: +inf never selects, -inf selects every negative token
    report.tau = beta;
  } else {
    double min_sbar = *std::min_element(report.sbar_plus.begin(),
                                        report.sbar_plus.end());
    report.tau = beta * min_sbar;
  }
  report.selected.assign(report.s_minus.size(), {});
  for (std::size_t j = 0; j < report.s_minus.size(); ++j)
    for (std::size_t kp = 0; kp < report.s_minus[j].size(); ++kp)
      if (report.s_minus[j][kp] > report.tau)  // strict
        report.selected[j].push_back(static_cast<int>(kp));
}

double eta_schedule(double p) {
  if (p <= 0.0 || p >= 1.0)
    throw DegenerateGroupError("eta schedule needs 0 < p < 1");
  return 2.0 * std::abs(0.5 - p);
}

NthrReport fast_nthr(const PolicyParams& params, const RolloutGroup& group,
                     const FastPathConfig& cfg) {
  require_mixed(group);
  NthrReport report;
  report.positive_response = group.positive_indices();
  report.negative_response = group.negative_indices();

  // Restricted vocabulary V*: group tokens + end token, optionally widened by
  // an explicit set. The group's own tokens are always kept so that every
  // scored step's realized token stays inside V* (the mass bound relies on
  // this).
  std::vector<Token> vstar;
  if (cfg.use_full_vocabulary) {
    vstar.resize(params.vocab());
    for (int z = 0; z < params.vocab(); ++z) vstar[z] = z;
  } else {
    std::vector<char> seen(params.vocab(), 0);
    for (const Response& r : group.responses)
      for (Token t : r.tokens) seen[t] = 1;
    seen[params.vocab() - 1] = 1;
    for (Token t : cfg.restricted) seen[t] = 1;
    for (int z = 0; z < params.vocab(); ++z)
      if (seen[z]) vstar.push_back(z);
  }
  const int vs = static_cast<int>(vstar.size());
  const int dim = params.dim();

  // restricted prediction error + out-of-V* mass for one step
  auto restricted_err = [&](const ContextKey& ctx, Token token,
                            double& out_mass) {
    Distribution probs = next_token_distribution(params, ctx);
    Vec err(vs, 0.0);
    double in_mass = 0.0;
    for (int r = 0; r < vs; ++r) {
      err[r] = -probs[vstar[r]];
      in_mass += probs[vstar[r]];
      if (vstar[r] == token) err[r] += 1.0;
    }
    out_mass = std::max(0.0, 1.0 - in_mass);
    return err;
  };

  // summation-first accumulator: M = sum_{i,k} err+_{i,k} h+_{i,<k}^T
  Matrix m(vs, dim);
  double pos_mass_norm = 0.0;  // sum_i,k mass(i,k) * ||h+_{i,<k}||
  for (int i : report.positive_response) {
    const Response& resp = group.responses[i];
    ContextKey ctx{group.question, {}};
    for (Token t : resp.tokens) {
      const Vec& h = params.context_embedding(ctx);
      double mass = 0.0;
      Vec err = restricted_err(ctx, t, mass);
      for (int r = 0; r < vs; ++r) {
        double* mr = m.row(r);
        for (int c = 0; c < dim; ++c) mr[c] += err[r] * h[c];
      }
      pos_mass_norm += mass * norm(h);
      ctx.prefix.push_back(t);
    }
  }

  // s = err^T M h for each scored step
  auto score_step = [&](const ContextKey& ctx, Token token, double& out_bound) {
    const Vec& h = params.context_embedding(ctx);
    double mass = 0.0;
    Vec err = restricted_err(ctx, token, mass);
    Vec mh(vs, 0.0);
    for (int r = 0; r < vs; ++r) {
      const double* mr = m.row(r);
      double acc = 0.0;
      for (int c = 0; c < dim; ++c) acc += mr[c] * h[c];
      mh[r] = acc;
    }
    out_bound = mass * norm(h) * pos_mass_norm;
    return dot(err, mh);
  };

  for (int j : report.negative_response) {
    const Response& resp = group.responses[j];
    std::vector<double> scores(resp.tokens.size(), 0.0);
    std::vector<double> bounds(resp.tokens.size(), 0.0);
    ContextKey ctx{group.question, {}};
    for (std::size_t kp = 0; kp < resp.tokens.size(); ++kp) {
      scores[kp] = score_step(ctx, resp.tokens[kp], bounds[kp]);
      ctx.prefix.push_back(resp.tokens[kp]);
    }
    report.s_minus.push_back(std::move(scores));
    report.s_minus_bound.push_back(std::move(bounds));
  }

  for (int i : report.positive_response) {
    const Response& resp = group.responses[i];
    double acc = 0.0, bound_acc = 0.0;
    ContextKey ctx{group.question, {}};
    for (std::size_t kpp = 0; kpp < resp.tokens.size(); ++kpp) {
      double b = 0.0;
      acc += score_step(ctx, resp.tokens[kpp], b);
      bound_acc += b;
      ctx.prefix.push_back(resp.tokens[kpp]);
    }
    report.sbar_plus.push_back(acc / resp.length());
    report.sbar_plus_bound.push_back(bound_acc / resp.length());
  }
  return report;
}

NthrReport build_nthr_report(const PolicyParams& params,
                             const RolloutGroup& group, double beta) {
  NthrReport report = nthr_scores(params, group);
  report.sbar_plus = positive_mutual_influence(params, group);
  select_tokens(report, beta);
  return report;
}

}  // namespace lld
