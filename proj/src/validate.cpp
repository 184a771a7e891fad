#include "lld/validate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lld/dynamics.hpp"
#include "lld/nthr.hpp"
#include "lld/stats.hpp"

namespace lld {

namespace {

std::string fmt_sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

void assign_rewards(RolloutGroup& group, const std::vector<int>& rewards) {
  group.n_pos = 0;
  group.n_neg = 0;
  for (int i = 0; i < group.size(); ++i) {
    group.responses[i].reward = rewards[i];
    (rewards[i] == 1 ? group.n_pos : group.n_neg)++;
  }
  group.p = static_cast<double>(group.n_pos) / group.size();
}

// p+ sum_i grad ln pi(y_i+) - p- sum_j grad ln pi(y_j-), unnormalized
ParamGradient group_preference_gradient(const PolicyParams& params,
                                        const RolloutGroup& group) {
  const auto [p_plus, p_minus] = group_weights(group.p);
  ParamGradient grad = ParamGradient::zeros_like(params);
  for (int i = 0; i < group.size(); ++i) {
    ParamGradient gi =
        grad_log_likelihood(params, group.question, group.responses[i].tokens);
    grad.add_scaled(gi, group.responses[i].is_positive() ? p_plus : -p_minus);
  }
  return grad;
}

double max_entry_diff(const ParamGradient& a, const ParamGradient& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.d_unembedding.data.size(); ++i)
    worst = std::max(worst, std::abs(a.d_unembedding.data[i] -
                                     b.d_unembedding.data[i]));
  auto scan = [&worst](const auto& lhs, const auto& rhs) {
    for (const auto& [key, vec] : lhs) {
      auto it = rhs.find(key);
      for (std::size_t c = 0; c < vec.size(); ++c) {
        double other = it == rhs.end() ? 0.0 : it->second[c];
        worst = std::max(worst, std::abs(vec[c] - other));
      }
    }
  };
  scan(a.d_contexts, b.d_contexts);
  scan(b.d_contexts, a.d_contexts);
  return worst;
}

}  // namespace

TestInstance random_instance(Rng& rng, const InstanceOptions& opts) {
  TestInstance inst;
  int vocab = opts.min_vocab + rng.uniform_int(opts.max_vocab - opts.min_vocab + 1);
  int group_size =
      opts.min_group + rng.uniform_int(opts.max_group - opts.min_group + 1);
  if (opts.distinct_first_tokens) vocab = std::max(vocab, group_size);
  const int dim = opts.min_dim + rng.uniform_int(opts.max_dim - opts.min_dim + 1);

  inst.params = PolicyParams::init(vocab, dim, rng.next_u64());
  inst.group.question = 0;
  inst.group.responses.resize(group_size);

  std::vector<Token> firsts(vocab);
  for (int z = 0; z < vocab; ++z) firsts[z] = z;
  if (opts.distinct_first_tokens) {
    for (int i = 0; i < group_size; ++i) {  // partial shuffle, vocab >= group
      int r = i + rng.uniform_int(vocab - i);
      std::swap(firsts[i], firsts[r]);
    }
  }

  for (int i = 0; i < group_size; ++i) {
    int len = opts.min_len + rng.uniform_int(opts.max_len - opts.min_len + 1);
    Response& resp = inst.group.responses[i];
    for (int k = 0; k < len; ++k) {
      Token t = opts.distinct_first_tokens && k == 0 ? firsts[i]
                                                     : rng.uniform_int(vocab);
      resp.tokens.push_back(t);
    }
  }

  // mixed rewards: 1 <= N+ <= G-1
  const int n_pos = 1 + rng.uniform_int(group_size - 1);
  std::vector<int> rewards(group_size, 0);
  for (int i = 0; i < n_pos; ++i) rewards[i] = 1;
  for (int i = group_size - 1; i > 0; --i)
    std::swap(rewards[i], rewards[rng.uniform_int(i + 1)]);
  assign_rewards(inst.group, rewards);

  register_group(inst.params, inst.group);
  compute_advantages(inst.group);
  return inst;
}

CheckResult check_gradient_finite_difference(std::uint64_t seed,
                                             int instances) {
  Rng rng(derive_seed(seed, {0x46, 0x44}));
  const double step = 1e-6;
  double worst = 0.0;
  for (int n = 0; n < instances; ++n) {
    const int vocab = 2 + rng.uniform_int(15);
    const int dim = 1 + rng.uniform_int(8);
    const int len = 1 + rng.uniform_int(6);
    PolicyParams params = PolicyParams::init(vocab, dim, rng.next_u64());
    std::vector<Token> tokens;
    for (int k = 0; k < len; ++k) tokens.push_back(rng.uniform_int(vocab));
    ContextKey ctx{0, {}};
    for (Token t : tokens) {
      params.ensure_context(ctx);
      ctx.prefix.push_back(t);
    }

    ParamGradient grad = grad_log_likelihood(params, 0, tokens);

    // pass when |analytic - fd| <= max(1e-8, 1e-5 * max(|analytic|, |fd|));
    // `worst` tracks the error / tolerance ratio
    auto check_coord = [&](double analytic, auto&& bump) {
      PolicyParams plus = params;
      bump(plus, step);
      PolicyParams minus = params;
      bump(minus, -step);
      double fd = (sequence_log_likelihood(plus, 0, tokens) -
                   sequence_log_likelihood(minus, 0, tokens)) /
                  (2.0 * step);
      double tol =
          std::max(1e-8, 1e-5 * std::max(std::abs(analytic), std::abs(fd)));
      worst = std::max(worst, std::abs(analytic - fd) / tol);
    };

    for (int r = 0; r < vocab; ++r)
      for (int c = 0; c < dim; ++c)
        check_coord(grad.d_unembedding.at(r, c),
                    [r, c](PolicyParams& p, double d) {
                      p.unembedding().at(r, c) += d;
                    });
    for (const auto& [key, dvec] : grad.d_contexts)
      for (int c = 0; c < dim; ++c)
        check_coord(dvec[c], [&key, c](PolicyParams& p, double d) {
          p.context_embedding_mut(key)[c] += d;
        });
  }
  CheckResult res;
  res.name = "gradient_fd";
  res.pass = worst <= 1.0;
  res.detail = "max error/tolerance ratio " + fmt_sci(worst) + " over " +
               std::to_string(instances) + " instances";
  return res;
}

CheckResult check_gradient_route_equivalence(std::uint64_t seed, int instances) {
  Rng rng(derive_seed(seed, {0x4c, 0x31}));
  InstanceOptions opts;
  double worst = 0.0;
  for (int n = 0; n < instances; ++n) {
    TestInstance inst = random_instance(rng, opts);
    UpdateConfig cfg;
    cfg.length_normalize = false;
    ParamGradient token_route =
        grpo_gradient(inst.params, inst.group, cfg,
                      TokenAdvantageMask::ones(inst.group));
    ParamGradient sequence_route =
        group_preference_gradient(inst.params, inst.group);
    worst = std::max(worst, max_entry_diff(token_route, sequence_route));
  }
  CheckResult res;
  res.name = "gradient_route_equivalence";
  res.pass = worst <= 1e-10;
  res.detail = "max entry difference " + fmt_sci(worst) + " over " +
               std::to_string(instances) + " groups";
  return res;
}

CheckResult check_decomposition_identity(std::uint64_t seed, int instances) {
  Rng rng(derive_seed(seed, {0x54, 0x31}));
  InstanceOptions opts;
  opts.distinct_first_tokens = true;
  double worst_identity = 0.0;
  double worst_gwhes = 0.0;
  for (int n = 0; n < instances; ++n) {
    TestInstance inst = random_instance(rng, opts);
    ParamGradient direction =
        group_preference_gradient(inst.params, inst.group);
    for (int i = 0; i < inst.group.n_pos; ++i) {
      TermDecomposition td = term_decomposition(inst.params, inst.group, i);
      const int resp = inst.group.positive_indices()[i];
      ParamGradient gi = grad_log_likelihood(
          inst.params, inst.group.question, inst.group.responses[resp].tokens);
      worst_identity = std::max(
          worst_identity, std::abs(td.total() - param_dot(gi, direction)));
      worst_gwhes = std::max(
          worst_gwhes, std::abs(gwhes(inst.params, inst.group, i) -
                                (td.term_ii - td.term_i)));
    }
  }
  CheckResult res;
  res.name = "decomposition_identity";
  res.pass = worst_identity <= 1e-8 && worst_gwhes <= 1e-10;
  res.detail = "max identity error " + fmt_sci(worst_identity) +
               ", max embedding-score error " + fmt_sci(worst_gwhes) +
               " over " + std::to_string(instances) + " instances";
  return res;
}

CheckResult check_nthr_dual_path(std::uint64_t seed, int instances) {
  Rng rng(derive_seed(seed, {0x4e, 0x54}));
  InstanceOptions opts;
  double worst = 0.0;
  for (int n = 0; n < instances; ++n) {
    TestInstance inst = random_instance(rng, opts);
    NthrReport naive = nthr_scores(inst.params, inst.group);
    naive.sbar_plus = positive_mutual_influence(inst.params, inst.group);
    FastPathConfig fast_cfg;
    fast_cfg.use_full_vocabulary = true;
    NthrReport fast = fast_nthr(inst.params, inst.group, fast_cfg);
    for (std::size_t j = 0; j < naive.s_minus.size(); ++j)
      for (std::size_t kp = 0; kp < naive.s_minus[j].size(); ++kp)
        worst = std::max(worst, std::abs(naive.s_minus[j][kp] -
                                         fast.s_minus[j][kp]));
    for (std::size_t i = 0; i < naive.sbar_plus.size(); ++i)
      worst = std::max(worst,
                       std::abs(naive.sbar_plus[i] - fast.sbar_plus[i]));
  }
  CheckResult res;
  res.name = "nthr_dual_path";
  res.pass = worst <= 1e-9;
  res.detail = "max score difference " + fmt_sci(worst) + " over " +
               std::to_string(instances) + " instances";
  return res;
}

CheckResult check_token_score_monotonicity(std::uint64_t seed, int points) {
  // Fixed tiny group; only the scanned negative token's context embedding
  // moves, along the direction of the positive's matching context embedding.
  Rng rng(derive_seed(seed, {0x43, 0x31}));
  const int vocab = 4;  // tokens 0..2 content, 3 end
  const int dim = 8;
  PolicyParams base = PolicyParams::init(vocab, dim, rng.next_u64());

  RolloutGroup group;
  group.question = 0;
  group.responses.resize(3);
  group.responses[0].tokens = {0, 3};  // positive
  group.responses[1].tokens = {1, 3};  // negative, same end token at k'=1
  group.responses[2].tokens = {2, 3};  // negative
  assign_rewards(group, {1, 0, 0});
  register_group(base, group);
  compute_advantages(group);

  const ContextKey pos_ctx{0, {0}};
  const ContextKey scan_ctx{0, {1}};
  const Vec h_pos = base.context_embedding(pos_ctx);
  const Vec h_base = base.context_embedding(scan_ctx);

  UpdateConfig cfg;
  cfg.learning_rate = 0.02;

  std::vector<double> scores, deltas;
  for (int t = 0; t < points; ++t) {
    const double scale =
        -1.0 + 3.0 * static_cast<double>(t) / (points - 1);  // [-1, 2]
    PolicyParams params = base;
    Vec& h = params.context_embedding_mut(scan_ctx);
    for (int c = 0; c < dim; ++c) h[c] = h_base[c] + scale * h_pos[c];

    NthrReport report = nthr_scores(params, group);
    scores.push_back(report.s_minus[0][1]);

    ParamGradient grad = grpo_gradient(params, group, cfg,
                                       TokenAdvantageMask::ones(group));
    PolicyParams after = apply_update(params, grad, cfg.learning_rate);
    deltas.push_back(delta_likelihood(params, after, group));
  }

  const double rho = spearman(scores, deltas);
  CheckResult res;
  res.name = "token_score_monotonicity";
  res.pass = rho <= -0.9;
  res.detail = "rank correlation " + fmt_sci(rho) + " over " +
               std::to_string(points) + " family points";
  return res;
}

CheckResult check_advantage_identities(std::uint64_t seed, int combos) {
  Rng rng(derive_seed(seed, {0x41, 0x44}));
  double worst_sum = 0.0;
  double worst_weights = 0.0;
  for (int n = 0; n < combos; ++n) {
    const int group_size = 2 + rng.uniform_int(63);
    const int n_pos = 1 + rng.uniform_int(group_size - 1);
    RolloutGroup group;
    group.question = n;
    group.responses.resize(group_size);
    std::vector<int> rewards(group_size, 0);
    for (int i = 0; i < group_size; ++i) {
      group.responses[i].tokens = {0};
      rewards[i] = i < n_pos ? 1 : 0;
    }
    assign_rewards(group, rewards);
    compute_advantages(group);

    double total = 0.0;
    for (double a : group.advantages) total += a;
    worst_sum = std::max(worst_sum, std::abs(total));

    const auto [p_plus, p_minus] = group_weights(group.p);
    worst_weights = std::max(
        worst_weights,
        std::abs(p_plus * group.n_pos - p_minus * group.n_neg));
  }
  CheckResult res;
  res.name = "advantage_identities";
  res.pass = worst_sum <= 1e-10 && worst_weights <= 1e-12;
  res.detail = "max advantage sum " + fmt_sci(worst_sum) +
               ", max weight identity error " + fmt_sci(worst_weights) +
               " over " + std::to_string(combos) + " groups";
  return res;
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
  return {
      check_gradient_finite_difference(seed, 100),
      check_gradient_route_equivalence(seed, 50),
      check_decomposition_identity(seed, 50),
      check_nthr_dual_path(seed, 25),
      check_token_score_monotonicity(seed, 20),
      check_advantage_identities(seed, 1000),
  };
}

}  // namespace lld
