#include "lld/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "lld/csv.hpp"

namespace lld {

namespace {

constexpr std::uint64_t kTagParams = 0x50;
constexpr std::uint64_t kTagSample = 0x53;
constexpr std::uint64_t kTagTask = 0x54;
constexpr std::uint64_t kTagMask = 0x4d;
constexpr int kMaxHalvings = 60;

struct SchemaEntry {
  std::string file;
  std::vector<std::string> columns;
};

std::string join_columns(const std::vector<std::string>& cols) {
  std::string out;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) out += ',';
    out += cols[i];
  }
  return out;
}

// writes the per-run column schema and the manifest; both are listed in the
// manifest's file set
void finalize_run(const std::string& dir, RunManifest& manifest,
                  const std::vector<SchemaEntry>& schema) {
  const std::string schema_name = manifest.suite + "_schema.txt";
  {
    std::ofstream out(std::filesystem::path(dir) / schema_name);
    if (!out) throw IoError("cannot write " + schema_name);
    for (const SchemaEntry& e : schema)
      out << e.file << ": " << join_columns(e.columns) << "\n";
  }
  manifest.files.push_back(schema_name);
  std::sort(manifest.files.begin(), manifest.files.end());

  nlohmann::json j;
  j["artifact_version"] = manifest.artifact_version;
  j["suite"] = manifest.suite;
  j["config_hash"] = manifest.config_hash;
  j["seed"] = manifest.seed;
  j["counts"] = {{"questions_total", manifest.questions_total},
                 {"degenerate_filtered", manifest.degenerate_filtered},
                 {"surveyed", manifest.surveyed}};
  j["files"] = manifest.files;
  std::ofstream out(std::filesystem::path(dir) / (manifest.suite +
                                                  "_manifest.json"));
  if (!out) throw IoError("cannot write manifest");
  out << j.dump(2) << "\n";
}

std::string csv_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

const std::vector<std::string> kGroupColumns = {
    "question", "response", "reward", "advantage", "seed", "tokens"};

void dump_groups(const std::string& dir, const std::string& name,
                 const std::vector<RolloutGroup>& groups,
                 VarianceMode variance) {
  CsvWriter csv(csv_path(dir, name), kGroupColumns);
  for (const RolloutGroup& g : groups) {
    std::vector<double> advantages(g.size(),
                                   std::numeric_limits<double>::quiet_NaN());
    if (!g.degenerate()) {
      RolloutGroup tmp = g;
      compute_advantages(tmp, variance);
      advantages = tmp.advantages;
    }
    for (int i = 0; i < g.size(); ++i)
      csv.row({std::to_string(g.question), std::to_string(i),
               std::to_string(g.responses[i].reward), fmt_double(advantages[i]),
               std::to_string(g.seed), fmt_tokens(g.responses[i].tokens)});
  }
}

const std::vector<std::string> kProbeColumns = {
    "question", "variant", "p", "lr", "delta", "first_order", "gwhes",
    "term_i", "term_ii", "term_iii", "term_iv", "terms_valid", "lld_flag",
    "eps_lld"};

void append_probe_rows(CsvWriter& csv, const RolloutGroup& group,
                       const ProbeSet& probes) {
  for (const UpdateReport& r : probes.reports)
    csv.row({std::to_string(r.question), variant_name(r.variant),
             fmt_double(group.p), fmt_double(r.lr_used), fmt_double(r.delta),
             fmt_double(r.first_order), fmt_double(r.gwhes),
             fmt_double(r.term_i), fmt_double(r.term_ii),
             fmt_double(r.term_iii), fmt_double(r.term_iv),
             r.terms_valid ? "1" : "0", r.lld_flag ? "1" : "0",
             fmt_double(r.eps_lld)});
}

}  // namespace

TaskOracle task_for_question(const ExperimentConfig& cfg, PolicyParams& params,
                             int question) {
  TaskOracle oracle;
  if (cfg.span_pick == "greedy") {
    ContextKey ctx{question, {}};
    for (int s = 0; s < cfg.span_len; ++s) {
      params.ensure_context(ctx);
      Distribution probs = next_token_distribution(params, ctx);
      Token best = 0;  // most likely content token; the end token is excluded
      for (int z = 1; z < cfg.vocab - 1; ++z)
        if (probs[z] > probs[best]) best = z;
      oracle.answer_span.push_back(best);
      ctx.prefix.push_back(best);
    }
    return oracle;
  }
  Rng rng(derive_seed(cfg.seed, {kTagTask, static_cast<std::uint64_t>(question)}));
  for (int s = 0; s < cfg.span_len; ++s)
    oracle.answer_span.push_back(rng.uniform_int(cfg.vocab - 1));
  return oracle;
}

PolicyParams base_params(const ExperimentConfig& cfg) {
  return PolicyParams::init(cfg.vocab, cfg.dim, derive_seed(cfg.seed, {kTagParams}));
}

std::vector<RolloutGroup> generate_groups(const ExperimentConfig& cfg,
                                          PolicyParams& params) {
  std::vector<RolloutGroup> groups;
  groups.reserve(cfg.questions);
  for (int q = 0; q < cfg.questions; ++q) {
    const std::uint64_t sample_seed =
        derive_seed(cfg.seed, {kTagSample, static_cast<std::uint64_t>(q)});
    Rng rng(sample_seed);
    RolloutGroup group =
        sample_group(params, q, cfg.group_size, cfg.max_len, rng);
    group.seed = sample_seed;
    score_group(group, task_for_question(cfg, params, q));
    groups.push_back(std::move(group));
  }
  return groups;
}

ProbeSet probe_question(const PolicyParams& full_params,
                        const RolloutGroup& group, const ExperimentConfig& cfg,
                        const std::vector<UpdateConfig>& variants) {
  RolloutGroup g = group;
  if (g.advantages.empty()) compute_advantages(g, cfg.variance_mode());

  // per-sample reinitialization: probes run on a question-local clone
  const PolicyParams params = question_slice(full_params, g);

  const std::vector<int> pos = g.positive_indices();
  std::vector<ParamGradient> pos_grads;
  std::vector<double> ll_before;
  for (int i : pos) {
    pos_grads.push_back(
        grad_log_likelihood(params, g.question, g.responses[i].tokens));
    ll_before.push_back(
        sequence_log_likelihood(params, g.question, g.responses[i].tokens));
  }

  bool need_scores = false;
  for (const UpdateConfig& uc : variants)
    need_scores |= uc.variant == Variant::Nthr || uc.variant == Variant::Random;
  NthrReport base_report;
  if (need_scores) {
    base_report = nthr_scores(params, g);
    base_report.sbar_plus = positive_mutual_influence(params, g);
  }

  // question-level diagnostics shared by every variant
  const double q_gwhes = gwhes_mean(params, g);
  double term_i = std::numeric_limits<double>::quiet_NaN();
  double term_ii = term_i, term_iii = term_i, term_iv = term_i;
  bool terms_valid = false;
  try {
    double ti = 0, tii = 0, tiii = 0, tiv = 0;
    for (int i = 0; i < g.n_pos; ++i) {
      TermDecomposition td = term_decomposition(params, g, i);
      ti += td.term_i;
      tii += td.term_ii;
      tiii += td.term_iii;
      tiv += td.term_iv;
    }
    term_i = ti / g.n_pos;
    term_ii = tii / g.n_pos;
    term_iii = tiii / g.n_pos;
    term_iv = tiv / g.n_pos;
    terms_valid = true;
  } catch (const AssumptionViolatedError&) {
  }

  ProbeSet out;
  std::vector<ParamGradient> grads;
  std::vector<double> first_order(variants.size(), 0.0);
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    const UpdateConfig& uc = variants[vi];
    NthrReport report;
    const NthrReport* report_ptr = nullptr;
    int selected = -1;
    if (uc.variant == Variant::Nthr || uc.variant == Variant::Random) {
      report = base_report;
      select_tokens(report, uc.beta);
      report.eta = resolve_eta(uc, g.p);
      selected = report.selected_total();
      report_ptr = &report;
    }
    out.selected_total.push_back(selected);
    Rng rng(derive_seed(cfg.seed,
                        {kTagMask, static_cast<std::uint64_t>(g.question), vi}));
    TokenAdvantageMask mask = make_mask(g, uc, report_ptr, rng);
    grads.push_back(grpo_gradient(params, g, uc, mask));
    double fo = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i)
      fo += param_dot(pos_grads[i], grads.back());
    first_order[vi] = fo / static_cast<double>(pos.size());
  }

  double lr = cfg.learning_rate;
  std::vector<std::vector<double>> per_response(variants.size());
  std::vector<double> deltas(variants.size(), 0.0);
  for (int iter = 0; iter < kMaxHalvings; ++iter) {
    bool ok = true;
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      PolicyParams after = apply_update(params, grads[vi], lr);
      per_response[vi].assign(pos.size(), 0.0);
      double acc = 0.0;
      for (std::size_t i = 0; i < pos.size(); ++i) {
        double d = sequence_log_likelihood(after, g.question,
                                           g.responses[pos[i]].tokens) -
                   ll_before[i];
        per_response[vi][i] = d;
        acc += d;
      }
      deltas[vi] = acc / static_cast<double>(pos.size());
      ok = ok && std::abs(deltas[vi] - lr * first_order[vi]) <=
                     0.05 * std::abs(deltas[vi]);
    }
    if (ok) break;
    lr *= 0.5;
  }

  out.lr = lr;
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    UpdateReport r;
    r.question = g.question;
    r.variant = variants[vi].variant;
    r.delta = deltas[vi];
    r.per_response_delta = per_response[vi];
    r.first_order = first_order[vi];
    r.lr_used = lr;
    r.gwhes = q_gwhes;
    r.term_i = term_i;
    r.term_ii = term_ii;
    r.term_iii = term_iii;
    r.term_iv = term_iv;
    r.terms_valid = terms_valid;
    r.eps_lld = cfg.eps_lld;
    r.lld_flag = lld_classify(r.delta, cfg.eps_lld);
    out.reports.push_back(std::move(r));
  }
  return out;
}

namespace {

struct Prepared {
  PolicyParams params;
  std::vector<RolloutGroup> all_groups;
  std::vector<RolloutGroup> valid;
};

Prepared prepare(const ExperimentConfig& cfg, const std::string& suite) {
  ExperimentConfig checked = cfg;
  checked.validate();
  Prepared prep{base_params(cfg), {}, {}};
  prep.all_groups = generate_groups(cfg, prep.params);
  prep.valid = filter_degenerate(prep.all_groups);
  if (prep.valid.empty())
    throw EmptySurveyError(suite + ": every sampled group was degenerate");
  return prep;
}

RunManifest make_manifest(const ExperimentConfig& cfg, const std::string& suite,
                          std::size_t total, std::size_t valid) {
  RunManifest m;
  m.suite = suite;
  m.config_hash = cfg.hash();
  m.seed = cfg.seed;
  m.questions_total = static_cast<int>(total);
  m.degenerate_filtered = static_cast<int>(total - valid);
  m.surveyed = static_cast<int>(valid);
  return m;
}

}  // namespace

SurveyResult run_lld_survey(const ExperimentConfig& cfg,
                            const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Prepared prep = prepare(cfg, "survey");

  SurveyResult result;
  result.manifest =
      make_manifest(cfg, "survey", prep.all_groups.size(), prep.valid.size());

  dump_groups(out_dir, "survey_groups.csv", prep.all_groups,
              cfg.variance_mode());
  CsvWriter probes_csv(csv_path(out_dir, "survey_probes.csv"), kProbeColumns);

  for (const RolloutGroup& group : prep.valid) {
    ProbeSet probes =
        probe_question(prep.params, group, cfg,
                       {cfg.update_config(Variant::Grpo),
                        cfg.update_config(Variant::PosOnly)});
    append_probe_rows(probes_csv, group, probes);
    SurveyRow row;
    row.question = group.question;
    row.p = group.p;
    row.lr = probes.lr;
    row.delta_grpo = probes.reports[0].delta;
    row.delta_pos_only = probes.reports[1].delta;
    row.lld_flag = probes.reports[0].lld_flag;
    result.rows.push_back(row);
  }

  std::sort(result.rows.begin(), result.rows.end(),
            [](const SurveyRow& a, const SurveyRow& b) {
              if (a.delta_grpo != b.delta_grpo)
                return a.delta_grpo < b.delta_grpo;
              return a.question < b.question;
            });

  const std::vector<std::string> cols = {"question", "p",          "lr",
                                         "delta_grpo", "delta_pos_only",
                                         "lld_flag"};
  CsvWriter csv(csv_path(out_dir, "survey.csv"), cols);
  for (const SurveyRow& r : result.rows)
    csv.row({std::to_string(r.question), fmt_double(r.p), fmt_double(r.lr),
             fmt_double(r.delta_grpo), fmt_double(r.delta_pos_only),
             r.lld_flag ? "1" : "0"});

  result.manifest.files = {"survey.csv", "survey_probes.csv",
                           "survey_groups.csv"};
  finalize_run(out_dir, result.manifest,
               {{"survey.csv", cols},
                {"survey_probes.csv", kProbeColumns},
                {"survey_groups.csv", kGroupColumns}});
  return result;
}

MitigationResult run_mitigation(const ExperimentConfig& cfg,
                                const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Prepared prep = prepare(cfg, "mitigate");

  MitigationResult result;
  result.manifest =
      make_manifest(cfg, "mitigate", prep.all_groups.size(), prep.valid.size());

  dump_groups(out_dir, "mitigate_groups.csv", prep.all_groups,
              cfg.variance_mode());
  CsvWriter probes_csv(csv_path(out_dir, "mitigate_probes.csv"), kProbeColumns);

  const std::vector<std::string> token_cols = {"question", "response",
                                               "position", "token", "s_minus",
                                               "selected"};
  const std::vector<std::string> question_cols = {"question", "beta", "eta",
                                                  "tau"};
  const std::vector<std::string> positive_cols = {"question", "response",
                                                  "sbar_plus"};
  CsvWriter tokens_csv(csv_path(out_dir, "mitigate_nthr_tokens.csv"),
                       token_cols);
  CsvWriter questions_csv(csv_path(out_dir, "mitigate_nthr_questions.csv"),
                          question_cols);
  CsvWriter positives_csv(csv_path(out_dir, "mitigate_nthr_positives.csv"),
                          positive_cols);

  for (const RolloutGroup& group : prep.valid) {
    RolloutGroup g = group;
    compute_advantages(g, cfg.variance_mode());

    ProbeSet probes = probe_question(prep.params, g, cfg,
                                     {cfg.update_config(Variant::Grpo),
                                      cfg.update_config(Variant::Random),
                                      cfg.update_config(Variant::Nthr)});
    append_probe_rows(probes_csv, g, probes);

    // token-level dump of the report the NTHR / RANDOM masks were built from
    NthrReport report = build_nthr_report(prep.params, g, cfg.beta);
    report.eta = resolve_eta(cfg.update_config(Variant::Nthr), g.p);
    questions_csv.row({std::to_string(g.question), fmt_double(report.beta),
                       fmt_double(report.eta), fmt_double(report.tau)});
    for (std::size_t ip = 0; ip < report.positive_response.size(); ++ip)
      positives_csv.row({std::to_string(g.question),
                         std::to_string(report.positive_response[ip]),
                         fmt_double(report.sbar_plus[ip])});
    for (std::size_t j = 0; j < report.negative_response.size(); ++j) {
      const int resp = report.negative_response[j];
      for (std::size_t kp = 0; kp < report.s_minus[j].size(); ++kp) {
        bool sel = std::find(report.selected[j].begin(),
                             report.selected[j].end(),
                             static_cast<int>(kp)) != report.selected[j].end();
        tokens_csv.row({std::to_string(g.question), std::to_string(resp),
                        std::to_string(kp),
                        std::to_string(g.responses[resp].tokens[kp]),
                        fmt_double(report.s_minus[j][kp]), sel ? "1" : "0"});
      }
    }

    MitigationRow row;
    row.question = g.question;
    row.p = g.p;
    row.lr = probes.lr;
    row.delta_grpo = probes.reports[0].delta;
    row.delta_random = probes.reports[1].delta;
    row.delta_nthr = probes.reports[2].delta;
    row.lld_flag = probes.reports[0].lld_flag;
    row.selected_total = report.selected_total();
    result.rows.push_back(row);
  }

  std::sort(result.rows.begin(), result.rows.end(),
            [](const MitigationRow& a, const MitigationRow& b) {
              if (a.delta_grpo != b.delta_grpo)
                return a.delta_grpo < b.delta_grpo;
              return a.question < b.question;
            });

  const std::vector<std::string> cols = {
      "question", "p", "lr", "delta_grpo", "delta_random", "delta_nthr",
      "lld_flag", "selected_total"};
  CsvWriter csv(csv_path(out_dir, "mitigate.csv"), cols);
  for (const MitigationRow& r : result.rows)
    csv.row({std::to_string(r.question), fmt_double(r.p), fmt_double(r.lr),
             fmt_double(r.delta_grpo), fmt_double(r.delta_random),
             fmt_double(r.delta_nthr), r.lld_flag ? "1" : "0",
             std::to_string(r.selected_total)});

  result.manifest.files = {"mitigate.csv",
                           "mitigate_probes.csv",
                           "mitigate_groups.csv",
                           "mitigate_nthr_tokens.csv",
                           "mitigate_nthr_questions.csv",
                           "mitigate_nthr_positives.csv"};
  finalize_run(out_dir, result.manifest,
               {{"mitigate.csv", cols},
                {"mitigate_probes.csv", kProbeColumns},
                {"mitigate_groups.csv", kGroupColumns},
                {"mitigate_nthr_tokens.csv", token_cols},
                {"mitigate_nthr_questions.csv", question_cols},
                {"mitigate_nthr_positives.csv", positive_cols}});
  return result;
}

OverlapResult run_overlap(const ExperimentConfig& cfg,
                          const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Prepared prep = prepare(cfg, "overlap");

  OverlapResult result;
  result.manifest =
      make_manifest(cfg, "overlap", prep.all_groups.size(), prep.valid.size());

  const int n = static_cast<int>(prep.valid.size());
  for (int k : cfg.k_list)
    if (n < 2 * k)
      throw EmptySurveyError("overlap: need at least " + std::to_string(2 * k) +
                             " valid questions for K=" + std::to_string(k) +
                             ", got " + std::to_string(n));

  dump_groups(out_dir, "overlap_groups.csv", prep.all_groups,
              cfg.variance_mode());
  CsvWriter probes_csv(csv_path(out_dir, "overlap_probes.csv"), kProbeColumns);

  for (const RolloutGroup& group : prep.valid) {
    ProbeSet probes = probe_question(prep.params, group, cfg,
                                     {cfg.update_config(Variant::Grpo)});
    append_probe_rows(probes_csv, group, probes);
    OverlapQuestionRow row;
    row.question = group.question;
    row.p = group.p;
    row.gwhes = probes.reports[0].gwhes;
    row.delta_grpo = probes.reports[0].delta;
    result.questions.push_back(row);
  }

  // descending GWHES (laziest first) vs ascending likelihood change
  RankingPair pair;
  {
    std::vector<OverlapQuestionRow> by_gwhes = result.questions;
    std::sort(by_gwhes.begin(), by_gwhes.end(),
              [](const auto& a, const auto& b) {
                if (a.gwhes != b.gwhes) return a.gwhes > b.gwhes;
                return a.question < b.question;
              });
    std::vector<OverlapQuestionRow> by_delta = result.questions;
    std::sort(by_delta.begin(), by_delta.end(),
              [](const auto& a, const auto& b) {
                if (a.delta_grpo != b.delta_grpo)
                  return a.delta_grpo < b.delta_grpo;
                return a.question < b.question;
              });
    for (const auto& r : by_gwhes) pair.first.push_back(r.question);
    for (const auto& r : by_delta) pair.second.push_back(r.question);
  }

  for (int k : cfg.k_list) {
    OverlapRow row;
    row.k = k;
    row.n = n;
    row.overlap = topk_overlap(pair, k);
    row.random_baseline = static_cast<double>(k) / n;
    result.rows.push_back(row);
  }

  const std::vector<std::string> cols = {"k", "n", "overlap",
                                         "random_baseline"};
  CsvWriter csv(csv_path(out_dir, "overlap.csv"), cols);
  for (const OverlapRow& r : result.rows)
    csv.row({std::to_string(r.k), std::to_string(r.n), fmt_double(r.overlap),
             fmt_double(r.random_baseline)});

  const std::vector<std::string> qcols = {"question", "p", "gwhes",
                                          "delta_grpo"};
  CsvWriter qcsv(csv_path(out_dir, "overlap_questions.csv"), qcols);
  for (const OverlapQuestionRow& r : result.questions)
    qcsv.row({std::to_string(r.question), fmt_double(r.p), fmt_double(r.gwhes),
              fmt_double(r.delta_grpo)});

  result.manifest.files = {"overlap.csv", "overlap_questions.csv",
                           "overlap_probes.csv", "overlap_groups.csv"};
  finalize_run(out_dir, result.manifest,
               {{"overlap.csv", cols},
                {"overlap_questions.csv", qcols},
                {"overlap_probes.csv", kProbeColumns},
                {"overlap_groups.csv", kGroupColumns}});
  return result;
}

AblationResult run_ablation(const ExperimentConfig& cfg,
                            const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Prepared prep = prepare(cfg, "ablate");

  AblationResult result;
  result.manifest =
      make_manifest(cfg, "ablate", prep.all_groups.size(), prep.valid.size());

  dump_groups(out_dir, "ablate_groups.csv", prep.all_groups,
              cfg.variance_mode());

  const std::vector<std::string> cols = {
      "beta",        "eta",        "n_valid",
      "n_flagged",   "mean_delta_grpo", "mean_delta_nthr",
      "frac_improved_flagged"};
  CsvWriter csv(csv_path(out_dir, "ablate.csv"), cols);

  for (double beta : cfg.beta_list) {
    for (const std::string& eta : cfg.eta_list) {
      double sum_grpo = 0.0, sum_nthr = 0.0;
      int flagged = 0, improved = 0;
      for (const RolloutGroup& group : prep.valid) {
        ProbeSet probes = probe_question(
            prep.params, group, cfg,
            {cfg.update_config(Variant::Grpo),
             cfg.update_config(Variant::Nthr, beta, eta)});
        sum_grpo += probes.reports[0].delta;
        sum_nthr += probes.reports[1].delta;
        if (probes.reports[0].lld_flag) {
          ++flagged;
          if (probes.reports[1].delta >= probes.reports[0].delta) ++improved;
        }
      }
      AblationRow row;
      row.beta = beta;
      row.eta = eta;
      row.n_valid = static_cast<int>(prep.valid.size());
      row.n_flagged = flagged;
      row.mean_delta_grpo = sum_grpo / row.n_valid;
      row.mean_delta_nthr = sum_nthr / row.n_valid;
      row.frac_improved_flagged =
          flagged > 0 ? static_cast<double>(improved) / flagged
                      : std::numeric_limits<double>::quiet_NaN();
      result.rows.push_back(row);
      csv.row({fmt_double(row.beta), row.eta, std::to_string(row.n_valid),
               std::to_string(row.n_flagged), fmt_double(row.mean_delta_grpo),
               fmt_double(row.mean_delta_nthr),
               fmt_double(row.frac_improved_flagged)});
    }
  }

  result.manifest.files = {"ablate.csv", "ablate_groups.csv"};
  finalize_run(out_dir, result.manifest,
               {{"ablate.csv", cols}, {"ablate_groups.csv", kGroupColumns}});
  return result;
}

}  // namespace lld
