#include <doctest.h>

#include <cmath>

#include "lld/objective.hpp"
#include "lld/validate.hpp"

using namespace lld;

namespace {

// two single-token responses 0 (positive) and 1 (negative) over a shared
// root; with d=1 the root embedding controls both sequence ratios at once
struct TwoResponseSetup {
  PolicyParams params;      // old parameters, pi(0 | root) = 0.5
  RolloutGroup group;
  ContextKey root{0, {}};

  TwoResponseSetup() : params(PolicyParams::init(2, 1, 3)) {
    params.unembedding().at(0, 0) = 1.0;
    params.unembedding().at(1, 0) = -1.0;
    params.ensure_context(root) = Vec{0.0};  // equal logits

    group.question = 0;
    group.responses.resize(2);
    group.responses[0].tokens = {0};
    group.responses[0].reward = 1;
    group.responses[1].tokens = {1};
    group.responses[1].reward = 0;
    group.n_pos = 1;
    group.n_neg = 1;
    group.p = 0.5;
    compute_advantages(group);
  }

  // params whose pi(0 | root) equals the requested probability
  PolicyParams with_positive_prob(double prob) const {
    PolicyParams p = params;
    // logit gap 2h = ln(prob / (1 - prob))
    p.context_embedding_mut(root)[0] = 0.5 * std::log(prob / (1.0 - prob));
    return p;
  }
};

ParamGradient handrolled_group_gradient(const PolicyParams& params,
                                        const RolloutGroup& group,
                                        bool length_normalize) {
  // independent token-by-token assembly from raw distributions
  ParamGradient grad = ParamGradient::zeros_like(params);
  const double norm =
      length_normalize ? 1.0 / group.total_tokens() : 1.0;
  for (int i = 0; i < group.size(); ++i) {
    ContextKey ctx{group.question, {}};
    for (Token t : group.responses[i].tokens) {
      Distribution probs = next_token_distribution(params, ctx);
      const Vec& h = params.context_embedding(ctx);
      double scale = group.advantages[i] * norm;
      for (int z = 0; z < params.vocab(); ++z) {
        double coeff = scale * ((z == t ? 1.0 : 0.0) - probs[z]);
        for (int c = 0; c < params.dim(); ++c)
          grad.d_unembedding.at(z, c) += coeff * h[c];
      }
      auto it = grad.d_contexts.find(ctx);
      if (it == grad.d_contexts.end())
        it = grad.d_contexts.emplace(ctx, Vec(params.dim(), 0.0)).first;
      for (int z = 0; z < params.vocab(); ++z) {
        double coeff = scale * ((z == t ? 1.0 : 0.0) - probs[z]);
        for (int c = 0; c < params.dim(); ++c)
          it->second[c] += coeff * params.unembedding().at(z, c);
      }
      ctx.prefix.push_back(t);
    }
  }
  return grad;
}

double max_grad_diff(const ParamGradient& a, const ParamGradient& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.d_unembedding.data.size(); ++i)
    worst = std::max(worst, std::abs(a.d_unembedding.data[i] -
                                     b.d_unembedding.data[i]));
  for (const auto& [key, vec] : a.d_contexts) {
    auto it = b.d_contexts.find(key);
    REQUIRE(it != b.d_contexts.end());
    for (std::size_t c = 0; c < vec.size(); ++c)
      worst = std::max(worst, std::abs(vec[c] - it->second[c]));
  }
  return worst;
}

}  // namespace

TEST_CASE("variant names are the four literal strings") {
  CHECK(parse_variant("GRPO") == Variant::Grpo);
  CHECK(parse_variant("POS_ONLY") == Variant::PosOnly);
  CHECK(parse_variant("RANDOM") == Variant::Random);
  CHECK(parse_variant("NTHR") == Variant::Nthr);
  CHECK(variant_name(Variant::PosOnly) == std::string("POS_ONLY"));
  CHECK_THROWS_AS(parse_variant("grpo"), ConfigError);
}

TEST_CASE("likelihood ratios are exactly one at the old parameters") {
  Rng rng(7);
  TestInstance inst = random_instance(rng, InstanceOptions{});
  auto ratios = likelihood_ratios(inst.params, inst.params, inst.group);
  for (const auto& resp : ratios)
    for (double gamma : resp) CHECK(gamma == 1.0);
}

TEST_CASE("surrogate value at the old parameters is the advantage mean") {
  Rng rng(11);
  UpdateConfig cfg;
  for (int n = 0; n < 20; ++n) {
    TestInstance inst = random_instance(rng, InstanceOptions{});
    double expected = 0.0;
    for (int i = 0; i < inst.group.size(); ++i)
      expected += inst.group.advantages[i] * inst.group.responses[i].length();
    expected /= inst.group.total_tokens();
    CHECK(grpo_objective_value(inst.params, inst.params, inst.group, cfg) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("surrogate value vanishes for balanced equal-length groups") {
  TwoResponseSetup s;  // p = 0.5, both responses one token
  UpdateConfig cfg;
  CHECK(grpo_objective_value(s.params, s.params, s.group, cfg) ==
        doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("raising one positive token's probability raises the surrogate") {
  TwoResponseSetup s;
  UpdateConfig cfg;
  double base = grpo_objective_value(s.params, s.params, s.group, cfg);
  double prev = base;
  for (double prob : {0.52, 0.55, 0.58}) {
    PolicyParams p = s.with_positive_prob(prob);
    double v = grpo_objective_value(p, s.params, s.group, cfg);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("group preference value is zero at the old parameters") {
  Rng rng(13);
  UpdateConfig cfg;
  for (int n = 0; n < 20; ++n) {
    TestInstance inst = random_instance(rng, InstanceOptions{});
    CHECK(std::abs(group_preference_objective(inst.params, inst.params,
                                              inst.group, cfg)) <= 1e-12);
  }
}

TEST_CASE("group preference value on hand-built ratios") {
  TwoResponseSetup s;
  UpdateConfig cfg;  // eps = 0.2

  // pi(0) = 0.55: ratios (1.1, 0.9), clips inactive -> 1.1 - 0.9
  PolicyParams p = s.with_positive_prob(0.55);
  CHECK(group_preference_objective(p, s.params, s.group, cfg) ==
        doctest::Approx(0.2).epsilon(1e-12));

  // pi(0) = 0.75: positive ratio 1.5 clips to 1.2, negative 0.5 floors at 0.8
  PolicyParams q = s.with_positive_prob(0.75);
  CHECK(group_preference_objective(q, s.params, s.group, cfg) ==
        doctest::Approx(1.2 - 0.8).epsilon(1e-12));
}

TEST_CASE("an all-zero mask produces the zero gradient") {
  Rng rng(17);
  TestInstance inst = random_instance(rng, InstanceOptions{});
  TokenAdvantageMask mask = TokenAdvantageMask::ones(inst.group);
  for (auto& row : mask.weights) std::fill(row.begin(), row.end(), 0.0);
  UpdateConfig cfg;
  ParamGradient g = grpo_gradient(inst.params, inst.group, cfg, mask);
  for (double v : g.d_unembedding.data) CHECK(v == 0.0);
  for (const auto& [key, vec] : g.d_contexts)
    for (double v : vec) CHECK(v == 0.0);
}

TEST_CASE("a single unmasked positive reduces to its scaled log-gradient") {
  Rng rng(19);
  InstanceOptions opts;
  TestInstance inst = random_instance(rng, opts);
  const std::vector<int> pos = inst.group.positive_indices();
  const int keep = pos[0];

  TokenAdvantageMask mask = TokenAdvantageMask::ones(inst.group);
  for (int i = 0; i < inst.group.size(); ++i)
    if (i != keep) std::fill(mask.weights[i].begin(), mask.weights[i].end(), 0.0);

  UpdateConfig cfg;
  ParamGradient g = grpo_gradient(inst.params, inst.group, cfg, mask);

  ParamGradient expected = grad_log_likelihood(
      inst.params, inst.group.question, inst.group.responses[keep].tokens);
  expected.scale(inst.group.advantages[keep] / inst.group.total_tokens());
  CHECK(max_grad_diff(g, expected) <= 1e-14);
}

TEST_CASE("gradient matches an independent token-by-token assembly") {
  Rng rng(23);
  for (int n = 0; n < 10; ++n) {
    TestInstance inst = random_instance(rng, InstanceOptions{});
    UpdateConfig cfg;
    ParamGradient g = grpo_gradient(inst.params, inst.group, cfg,
                                    TokenAdvantageMask::ones(inst.group));
    ParamGradient oracle =
        handrolled_group_gradient(inst.params, inst.group, true);
    CHECK(max_grad_diff(g, oracle) <= 1e-12);
  }
}

TEST_CASE("token-route and sequence-route gradients coincide") {
  CheckResult res = check_gradient_route_equivalence(1234, 10);
  INFO(res.detail);
  CHECK(res.pass);
}

TEST_CASE("both objective values differentiate to their analytic gradients") {
  Rng rng(27);
  UpdateConfig cfg;
  cfg.length_normalize = false;
  const double h = 1e-6;
  for (int n = 0; n < 5; ++n) {
    TestInstance inst = random_instance(rng, InstanceOptions{});

    // random direction with the gradient's shape
    ParamGradient dir = grad_log_likelihood(
        inst.params, inst.group.question, inst.group.responses[0].tokens);
    for (double& v : dir.d_unembedding.data) v = rng.gaussian();
    for (auto& [key, vec] : dir.d_contexts)
      for (double& v : vec) v = rng.gaussian();

    PolicyParams plus = apply_update(inst.params, dir, h);
    PolicyParams minus = apply_update(inst.params, dir, -h);

    ParamGradient token_grad = grpo_gradient(
        inst.params, inst.group, cfg, TokenAdvantageMask::ones(inst.group));
    double fd_token = (grpo_objective_value(plus, inst.params, inst.group, cfg) -
                       grpo_objective_value(minus, inst.params, inst.group, cfg)) /
                      (2.0 * h);
    CHECK(fd_token == doctest::Approx(param_dot(token_grad, dir)).epsilon(1e-5));

    // the sequence-level objective differentiates to the weighted group form
    const auto [p_plus, p_minus] = group_weights(inst.group.p);
    ParamGradient seq_grad = ParamGradient::zeros_like(inst.params);
    for (int i = 0; i < inst.group.size(); ++i)
      seq_grad.add_scaled(
          grad_log_likelihood(inst.params, inst.group.question,
                              inst.group.responses[i].tokens),
          inst.group.responses[i].is_positive() ? p_plus : -p_minus);
    double fd_seq =
        (group_preference_objective(plus, inst.params, inst.group, cfg) -
         group_preference_objective(minus, inst.params, inst.group, cfg)) /
        (2.0 * h);
    CHECK(fd_seq == doctest::Approx(param_dot(seq_grad, dir)).epsilon(1e-5));
  }
}

TEST_CASE("positive-only updates never reduce positive likelihood mass") {
  Rng rng(29);
  UpdateConfig cfg;
  cfg.variant = Variant::PosOnly;
  for (int n = 0; n < 20; ++n) {
    TestInstance inst = random_instance(rng, InstanceOptions{});
    Rng mask_rng(1);
    TokenAdvantageMask mask = make_mask(inst.group, cfg, nullptr, mask_rng);
    ParamGradient g = grpo_gradient(inst.params, inst.group, cfg, mask);
    ParamGradient sum_pos = ParamGradient::zeros_like(inst.params);
    for (int i : inst.group.positive_indices())
      sum_pos.add_scaled(grad_log_likelihood(inst.params, inst.group.question,
                                             inst.group.responses[i].tokens),
                         1.0);
    CHECK(param_dot(sum_pos, g) >= 0.0);
  }
}

TEST_CASE("changing one mask entry only moves that token's contribution") {
  Rng rng(31);
  TestInstance inst = random_instance(rng, InstanceOptions{});
  UpdateConfig cfg;
  TokenAdvantageMask base = TokenAdvantageMask::ones(inst.group);
  const int resp = inst.group.negative_indices()[0];
  const int kp = inst.group.responses[resp].length() - 1;
  TokenAdvantageMask flipped = base;
  flipped.weights[resp][kp] = 0.0;

  ParamGradient ga = grpo_gradient(inst.params, inst.group, cfg, base);
  ParamGradient gb = grpo_gradient(inst.params, inst.group, cfg, flipped);
  ga.add_scaled(gb, -1.0);

  const ContextKey ctx = inst.group.context_at(resp, kp);
  // the hidden-side difference lives only in that token's context
  for (const auto& [key, vec] : ga.d_contexts) {
    double norm = 0.0;
    for (double v : vec) norm += v * v;
    if (key == ctx) {
      CHECK(norm > 0.0);
    } else {
      CHECK(norm <= 1e-28);
    }
  }
  // the unembedding difference is the rank-one prediction-error outer product
  Distribution probs = next_token_distribution(inst.params, ctx);
  const Vec& h = inst.params.context_embedding(ctx);
  const Token tok = inst.group.responses[resp].tokens[kp];
  const double scale =
      inst.group.advantages[resp] / inst.group.total_tokens();
  for (int z = 0; z < inst.params.vocab(); ++z)
    for (int c = 0; c < inst.params.dim(); ++c) {
      double expected = scale * ((z == tok ? 1.0 : 0.0) - probs[z]) * h[c];
      CHECK(ga.d_unembedding.at(z, c) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("masks follow the variant definitions") {
  Rng rng(37);
  TestInstance inst = random_instance(rng, InstanceOptions{});
  const auto neg = inst.group.negative_indices();

  UpdateConfig cfg;
  Rng mask_rng(3);

  cfg.variant = Variant::Grpo;
  TokenAdvantageMask grpo = make_mask(inst.group, cfg, nullptr, mask_rng);
  for (const auto& row : grpo.weights)
    for (double w : row) CHECK(w == 1.0);

  cfg.variant = Variant::PosOnly;
  TokenAdvantageMask pos_only = make_mask(inst.group, cfg, nullptr, mask_rng);
  for (int i = 0; i < inst.group.size(); ++i)
    for (double w : pos_only.weights[i])
      CHECK(w == (inst.group.responses[i].is_positive() ? 1.0 : 0.0));

  // a report with selections drives NTHR and the RANDOM counts
  NthrReport report = build_nthr_report(inst.params, inst.group, 1.0);

  cfg.variant = Variant::Nthr;
  cfg.eta_policy = EtaPolicy::Fixed;
  cfg.eta_value = 0.25;
  TokenAdvantageMask nthr = make_mask(inst.group, cfg, &report, mask_rng);
  for (std::size_t j = 0; j < report.negative_response.size(); ++j) {
    int resp = report.negative_response[j];
    for (int k = 0; k < inst.group.responses[resp].length(); ++k) {
      bool selected = std::find(report.selected[j].begin(),
                                report.selected[j].end(),
                                k) != report.selected[j].end();
      CHECK(nthr.weights[resp][k] == (selected ? 0.25 : 1.0));
    }
  }

  cfg.variant = Variant::Random;
  TokenAdvantageMask random_mask = make_mask(inst.group, cfg, &report, mask_rng);
  for (std::size_t j = 0; j < report.negative_response.size(); ++j) {
    int resp = report.negative_response[j];
    int zeros = 0;
    for (double w : random_mask.weights[resp]) zeros += w == 0.0 ? 1 : 0;
    int expected = std::min<int>(static_cast<int>(report.selected[j].size()),
                                 inst.group.responses[resp].length());
    CHECK(zeros == expected);
  }
  // positive rows untouched by RANDOM
  for (int i : inst.group.positive_indices())
    for (double w : random_mask.weights[i]) CHECK(w == 1.0);

  cfg.variant = Variant::Nthr;
  CHECK_THROWS_AS(make_mask(inst.group, cfg, nullptr, mask_rng), ConfigError);

  // empty selections make RANDOM identical to GRPO
  NthrReport empty = report;
  for (auto& sel : empty.selected) sel.clear();
  cfg.variant = Variant::Random;
  TokenAdvantageMask same = make_mask(inst.group, cfg, &empty, mask_rng);
  for (const auto& row : same.weights)
    for (double w : row) CHECK(w == 1.0);
}

TEST_CASE("eta policies resolve from the success rate") {
  UpdateConfig cfg;
  cfg.eta_policy = EtaPolicy::Fixed;
  cfg.eta_value = 0.4;
  CHECK(resolve_eta(cfg, 0.75) == 0.4);
  cfg.eta_policy = EtaPolicy::SuccessRate;
  CHECK(resolve_eta(cfg, 0.75) == 0.75);
  cfg.eta_policy = EtaPolicy::FailureRate;
  CHECK(resolve_eta(cfg, 0.75) == doctest::Approx(0.25));
  cfg.eta_policy = EtaPolicy::CenteredAbs;
  CHECK(resolve_eta(cfg, 0.75) == doctest::Approx(0.5));
}

TEST_CASE("updates move parameters along the gradient") {
  Rng rng(41);
  TestInstance inst = random_instance(rng, InstanceOptions{});
  UpdateConfig cfg;
  ParamGradient g = grpo_gradient(inst.params, inst.group, cfg,
                                  TokenAdvantageMask::ones(inst.group));

  PolicyParams same = apply_update(inst.params, g, 0.0);
  CHECK(same.unembedding().data == inst.params.unembedding().data);

  ParamGradient zero = ParamGradient::zeros_like(inst.params);
  PolicyParams same2 = apply_update(inst.params, zero, 0.7);
  CHECK(same2.unembedding().data == inst.params.unembedding().data);

  // ascent: small steps increase the clipped surrogate
  PolicyParams stepped = apply_update(inst.params, g, 1e-3);
  double before = grpo_objective_value(inst.params, inst.params, inst.group, cfg);
  double after = grpo_objective_value(stepped, inst.params, inst.group, cfg);
  CHECK(after > before);

  ParamGradient bad = ParamGradient::zeros_like(inst.params);
  bad.d_unembedding.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(apply_update(inst.params, bad, 0.1), Error);
}
