// Command-line front end: seeded experiment suites plus the identity-check
// runner. Every subcommand writes CSV outputs (with a schema sidecar and a
// manifest) under --out and prints a short deterministic summary.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lld/csv.hpp"
#include "lld/harness.hpp"
#include "lld/validate.hpp"

namespace {

int exit_code_for(lld::ErrorCategory category) {
  switch (category) {
    case lld::ErrorCategory::Usage: return 64;
    case lld::ErrorCategory::Config: return 65;
    case lld::ErrorCategory::Io: return 66;
    case lld::ErrorCategory::MissingContext:
    case lld::ErrorCategory::DegenerateGroup:
    case lld::ErrorCategory::AssumptionViolated:
    case lld::ErrorCategory::EmptySurvey: return 69;
    case lld::ErrorCategory::Validation: return 1;
    case lld::ErrorCategory::Internal: return 70;
  }
  return 70;
}

void report_error(lld::ErrorCategory category, const std::string& message) {
  std::cerr << "{\"error\":\"" << lld::category_name(category)
            << "\",\"message\":\"" << message << "\"}\n";
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string k_flag;
  std::string beta_flag;
  std::string eta_flag;
};

lld::ExperimentConfig load_config(const CommonOpts& opts) {
  lld::ExperimentConfig cfg;
  if (!opts.config_path.empty())
    cfg = lld::ExperimentConfig::from_file(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  if (!opts.k_flag.empty()) cfg.set("k_list", opts.k_flag);
  if (!opts.beta_flag.empty()) cfg.set("beta_list", opts.beta_flag);
  if (!opts.eta_flag.empty()) {
    cfg.set("eta", opts.eta_flag);
    cfg.set("eta_list", opts.eta_flag);  // ablate grids collapse to the flag
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_out = true) {
  cmd->add_option("--config", opts.config_path, "flat key=value config file");
  cmd->add_option("--seed", opts.seed, "master seed override")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  if (with_out)
    cmd->add_option("--out", opts.out_dir, "output directory (default: out)");
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale group-relative policy optimization laboratory"};
  app.require_subcommand(1);

  CommonOpts opts;

  CLI::App* survey = app.add_subcommand(
      "survey", "probe each question with GRPO and POS_ONLY updates");
  add_common(survey, opts);

  CLI::App* mitigate = app.add_subcommand(
      "mitigate", "probe each question with GRPO, RANDOM and NTHR updates");
  add_common(mitigate, opts);

  CLI::App* overlap = app.add_subcommand(
      "overlap", "rank questions by embedding score vs likelihood change");
  add_common(overlap, opts);
  overlap->add_option("--k", opts.k_flag, "comma-separated top-K list");

  CLI::App* ablate = app.add_subcommand(
      "ablate", "mitigation sweep over the beta and eta grids");
  add_common(ablate, opts);
  ablate->add_option("--beta", opts.beta_flag,
                     "comma-separated beta grid (-inf/inf allowed)");
  ablate->add_option("--eta", opts.eta_flag,
                     "eta policy: number, p, 1-p or 2|0.5-p|");

  CLI::App* validate = app.add_subcommand(
      "validate", "run the cross-module identity suites");
  add_common(validate, opts, /*with_out=*/false);

  CLI::App* dump = app.add_subcommand(
      "dump-config", "print the effective configuration");
  add_common(dump, opts, /*with_out=*/false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    report_error(lld::ErrorCategory::Usage, e.what());
    return 64;
  }

  try {
    if (survey->parsed()) {
      lld::ExperimentConfig cfg = load_config(opts);
      lld::SurveyResult result = lld::run_lld_survey(cfg, opts.out_dir);
      std::vector<double> grpo, pos_only;
      int flagged = 0;
      for (const auto& row : result.rows) {
        grpo.push_back(row.delta_grpo);
        pos_only.push_back(row.delta_pos_only);
        flagged += row.lld_flag ? 1 : 0;
      }
      std::cout << "survey: questions=" << result.manifest.questions_total
                << " filtered=" << result.manifest.degenerate_filtered
                << " surveyed=" << result.manifest.surveyed
                << " flagged=" << flagged << "\n";
      std::cout << "survey: mean_delta_grpo=" << lld::fmt_double(mean_of(grpo))
                << " mean_delta_pos_only="
                << lld::fmt_double(mean_of(pos_only)) << "\n";
    } else if (mitigate->parsed()) {
      lld::ExperimentConfig cfg = load_config(opts);
      lld::MitigationResult result = lld::run_mitigation(cfg, opts.out_dir);
      std::vector<double> grpo, random_v, nthr;
      int flagged = 0;
      for (const auto& row : result.rows) {
        grpo.push_back(row.delta_grpo);
        random_v.push_back(row.delta_random);
        nthr.push_back(row.delta_nthr);
        flagged += row.lld_flag ? 1 : 0;
      }
      std::cout << "mitigate: questions=" << result.manifest.questions_total
                << " filtered=" << result.manifest.degenerate_filtered
                << " surveyed=" << result.manifest.surveyed
                << " flagged=" << flagged << "\n";
      std::cout << "mitigate: mean_delta_grpo="
                << lld::fmt_double(mean_of(grpo)) << " mean_delta_random="
                << lld::fmt_double(mean_of(random_v)) << " mean_delta_nthr="
                << lld::fmt_double(mean_of(nthr)) << "\n";
    } else if (overlap->parsed()) {
      lld::ExperimentConfig cfg = load_config(opts);
      lld::OverlapResult result = lld::run_overlap(cfg, opts.out_dir);
      for (const auto& row : result.rows)
        std::cout << "overlap: k=" << row.k << " n=" << row.n
                  << " overlap=" << lld::fmt_double(row.overlap)
                  << " baseline=" << lld::fmt_double(row.random_baseline)
                  << "\n";
    } else if (ablate->parsed()) {
      lld::ExperimentConfig cfg = load_config(opts);
      lld::AblationResult result = lld::run_ablation(cfg, opts.out_dir);
      for (const auto& row : result.rows)
        std::cout << "ablate: beta=" << lld::fmt_double(row.beta)
                  << " eta=" << row.eta << " mean_delta_grpo="
                  << lld::fmt_double(row.mean_delta_grpo)
                  << " mean_delta_nthr="
                  << lld::fmt_double(row.mean_delta_nthr)
                  << " frac_improved_flagged="
                  << lld::fmt_double(row.frac_improved_flagged) << "\n";
    } else if (validate->parsed()) {
      lld::ExperimentConfig cfg = load_config(opts);
      int failures = 0;
      for (const lld::CheckResult& check : lld::run_all_checks(cfg.seed)) {
        std::cout << "check " << check.name << ": "
                  << (check.pass ? "PASS" : "FAIL") << " (" << check.detail
                  << ")\n";
        failures += check.pass ? 0 : 1;
      }
      if (failures > 0) {
        report_error(lld::ErrorCategory::Validation,
                     std::to_string(failures) + " checks failed");
        return exit_code_for(lld::ErrorCategory::Validation);
      }
    } else if (dump->parsed()) {
      lld::ExperimentConfig cfg = load_config(opts);
      std::cout << cfg.canonical();
    }
  } catch (const lld::Error& e) {
    report_error(e.category(), e.what());
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    report_error(lld::ErrorCategory::Internal, e.what());
    return 70;
  }
  return 0;
}
