#include <doctest.h>

#include <cmath>
#include <numeric>

#include "lld/dynamics.hpp"
#include "lld/stats.hpp"
#include "lld/validate.hpp"

using namespace lld;

namespace {

RolloutGroup make_group(const std::vector<std::vector<Token>>& tokens,
                        const std::vector<int>& rewards) {
  RolloutGroup g;
  g.question = 0;
  g.n_pos = 0;
  g.n_neg = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Response r;
    r.tokens = tokens[i];
    r.reward = rewards[i];
    g.responses.push_back(r);
    (rewards[i] == 1 ? g.n_pos : g.n_neg)++;
  }
  g.p = static_cast<double>(g.n_pos) / g.size();
  return g;
}

}  // namespace

TEST_CASE("likelihood change is zero when nothing moves") {
  Rng rng(3);
  TestInstance inst = random_instance(rng, InstanceOptions{});
  CHECK(delta_likelihood(inst.params, inst.params, inst.group) == 0.0);
}

TEST_CASE("likelihood change averages the per-response differences") {
  Rng rng(5);
  TestInstance inst = random_instance(rng, InstanceOptions{});
  PolicyParams after = inst.params;
  for (const ContextKey& key : after.context_order()) {
    Vec& h = after.context_embedding_mut(key);
    for (double& v : h) v += 0.05;
  }
  double expected = 0.0;
  const auto pos = inst.group.positive_indices();
  for (int i : pos)
    expected += sequence_log_likelihood(after, inst.group.question,
                                        inst.group.responses[i].tokens) -
                sequence_log_likelihood(inst.params, inst.group.question,
                                        inst.group.responses[i].tokens);
  expected /= static_cast<double>(pos.size());
  CHECK(delta_likelihood(inst.params, after, inst.group) ==
        doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("positive-only ascent never loses likelihood at first order") {
  Rng rng(7);
  UpdateConfig cfg;
  cfg.variant = Variant::PosOnly;
  cfg.learning_rate = 1e-5;
  for (int n = 0; n < 20; ++n) {
    TestInstance inst = random_instance(rng, InstanceOptions{});
    Rng mask_rng(1);
    UpdateReport rep =
        single_step_probe(inst.params, inst.group, cfg, mask_rng);
    CHECK(rep.delta >= -1e-12);
  }
}

TEST_CASE("probes keep the input parameters untouched") {
  Rng rng(9);
  TestInstance inst = random_instance(rng, InstanceOptions{});
  const int first_pos = inst.group.positive_indices()[0];
  double before = sequence_log_likelihood(
      inst.params, inst.group.question, inst.group.responses[first_pos].tokens);
  UpdateConfig cfg;
  Rng r1(2), r2(2);
  UpdateReport a = single_step_probe(inst.params, inst.group, cfg, r1);
  UpdateReport b = single_step_probe(inst.params, inst.group, cfg, r2);
  CHECK(a.delta == b.delta);
  CHECK(sequence_log_likelihood(inst.params, inst.group.question,
                                inst.group.responses[first_pos].tokens) ==
        before);
}

TEST_CASE("zero learning rate measures zero change and flags laziness") {
  Rng rng(11);
  TestInstance inst = random_instance(rng, InstanceOptions{});
  UpdateConfig cfg;
  cfg.learning_rate = 0.0;
  Rng mask_rng(3);
  UpdateReport rep =
      single_step_probe(inst.params, inst.group, cfg, mask_rng, 0.01);
  CHECK(rep.delta == 0.0);
  CHECK(rep.lld_flag);
  CHECK(!lld_classify(0.0, 0.0));  // strict boundary
  CHECK(lld_classify(-0.3, 0.0));
  CHECK(!lld_classify(0.5, 0.01));
}

TEST_CASE("strong overlap instances separate the probe variants") {
  // positives fan out; both negatives duplicate the first positive's prefix
  // and diverge at the last step, the lazy geometry
  PolicyParams p = PolicyParams::init(8, 2, 17);
  RolloutGroup g = make_group(
      {{0, 1, 7}, {2, 7}, {3, 7}, {4, 7}, {5, 7}, {6, 7}, {0, 1, 2}, {0, 1, 3}},
      {1, 1, 1, 1, 1, 1, 0, 0});
  register_group(p, g);
  compute_advantages(g);

  UpdateConfig cfg;
  cfg.learning_rate = 0.01;
  Rng r1(4), r2(4), r3(4);

  cfg.variant = Variant::Grpo;
  UpdateReport grpo = single_step_probe(p, g, cfg, r1);
  cfg.variant = Variant::PosOnly;
  UpdateReport pos_only = single_step_probe(p, g, cfg, r2);
  cfg.variant = Variant::Nthr;
  cfg.beta = 1.0;
  cfg.eta_policy = EtaPolicy::Fixed;
  cfg.eta_value = 0.0;
  UpdateReport nthr = single_step_probe(p, g, cfg, r3);

  CHECK(pos_only.delta > grpo.delta);
  CHECK(nthr.delta >= grpo.delta);
}

TEST_CASE("decomposition handles the structured edge cases") {
  Rng rng(19);
  InstanceOptions opts;
  opts.distinct_first_tokens = true;
  TestInstance inst = random_instance(rng, opts);

  // all-zero embeddings kill both embedding terms but not the norm term
  PolicyParams zeroed = inst.params;
  for (const ContextKey& key : zeroed.context_order())
    std::fill(zeroed.context_embedding_mut(key).begin(),
              zeroed.context_embedding_mut(key).end(), 0.0);
  for (int i = 0; i < inst.group.n_pos; ++i) {
    TermDecomposition td = term_decomposition(zeroed, inst.group, i);
    CHECK(td.term_i == 0.0);
    CHECK(td.term_ii == 0.0);
    CHECK(td.term_iv >= 0.0);
  }

  // zeroing only the negatives' private contexts removes the negative-pair
  // term whenever the shared root is also zero
  PolicyParams negzero = inst.params;
  std::fill(negzero.context_embedding_mut(ContextKey{0, {}}).begin(),
            negzero.context_embedding_mut(ContextKey{0, {}}).end(), 0.0);
  for (int j : inst.group.negative_indices())
    for (int k = 0; k < inst.group.responses[j].length(); ++k) {
      ContextKey ctx = inst.group.context_at(j, k);
      std::fill(negzero.context_embedding_mut(ctx).begin(),
                negzero.context_embedding_mut(ctx).end(), 0.0);
    }
  TermDecomposition td = term_decomposition(negzero, inst.group, 0);
  CHECK(td.term_ii == 0.0);
}

TEST_CASE("shared first tokens violate the decomposition assumption") {
  PolicyParams p = PolicyParams::init(4, 2, 21);
  RolloutGroup g = make_group({{1, 2}, {1, 3}, {2}}, {1, 0, 1});
  register_group(p, g);
  CHECK_THROWS_AS(term_decomposition(p, g, 0), AssumptionViolatedError);
}

TEST_CASE("decomposition equals the directional derivative") {
  CheckResult res = check_decomposition_identity(777, 10);
  INFO(res.detail);
  CHECK(res.pass);
}

TEST_CASE("laziness tracks the embedding score across a controlled family") {
  // scale the coupling between one negative's context and the positives'
  // shared direction; only embedding inner products change materially
  PolicyParams base = PolicyParams::init(6, 4, 23);
  RolloutGroup g = make_group({{0, 5}, {1, 5}, {2, 5}, {3, 5}}, {1, 1, 1, 0});
  register_group(base, g);
  compute_advantages(g);
  const ContextKey scan{0, {3}};
  const Vec dir = base.context_embedding(ContextKey{0, {0}});
  const Vec start = base.context_embedding(scan);

  UpdateConfig cfg;
  cfg.learning_rate = 0.01;
  std::vector<double> scores, deltas;
  for (int t = 0; t < 20; ++t) {
    double s = -1.0 + 2.5 * t / 19.0;
    PolicyParams p = base;
    Vec& h = p.context_embedding_mut(scan);
    for (std::size_t c = 0; c < h.size(); ++c) h[c] = start[c] + s * dir[c];
    scores.push_back(gwhes_mean(p, g));
    Rng mask_rng(1);
    UpdateReport rep = single_step_probe(p, g, cfg, mask_rng);
    deltas.push_back(rep.delta);
  }
  CHECK(spearman(scores, deltas) <= -0.9);
}

TEST_CASE("top-K overlap counts shared leading ids") {
  RankingPair same{{1, 2, 3, 4}, {1, 2, 3, 4}};
  CHECK(topk_overlap(same, 4) == 1.0);
  CHECK(topk_overlap(same, 2) == 1.0);

  RankingPair disjoint{{1, 2, 3, 4}, {3, 4, 1, 2}};
  CHECK(topk_overlap(disjoint, 2) == 0.0);
  CHECK(topk_overlap(disjoint, 4) == 1.0);  // K = set size is always 1

  RankingPair reordered{{5, 6, 7, 8, 9, 10}, {7, 5, 9, 6, 8, 10}};
  CHECK(topk_overlap(reordered, 3) == doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(topk_overlap(same, 0), ConfigError);
  CHECK_THROWS_AS(topk_overlap(same, 5), ConfigError);
  RankingPair mismatched{{1, 2}, {1, 3}};
  CHECK_THROWS_AS(topk_overlap(mismatched, 1), ConfigError);
}

TEST_CASE("random rankings overlap at the analytic baseline") {
  const int n = 40, k = 10, shuffles = 1000;
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(29);
  double total = 0.0;
  for (int s = 0; s < shuffles; ++s) {
    std::vector<int> shuffled = ids;
    for (int i = n - 1; i > 0; --i)
      std::swap(shuffled[i], shuffled[rng.uniform_int(i + 1)]);
    total += topk_overlap(RankingPair{ids, shuffled}, k);
  }
  const double mean_overlap = total / shuffles;
  const double expected = static_cast<double>(k) / n;
  // hypergeometric variance of the overlap count, scaled to the fraction
  const double var_count =
      k * expected * (1.0 - expected) * (n - k) / (n - 1.0);
  const double se = std::sqrt(var_count) / k / std::sqrt(shuffles);
  CHECK(std::abs(mean_overlap - expected) <= 3.0 * se);
}
