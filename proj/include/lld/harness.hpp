#pragma once

#include <string>
#include <vector>

#include "lld/config.hpp"
#include "lld/dynamics.hpp"

namespace lld {

inline constexpr const char* kArtifactVersion = "1.0.0";

// Ties every output file of one run to the config and seed that produced it.
struct RunManifest {
  std::string artifact_version = kArtifactVersion;
  std::string suite;
  std::string config_hash;
  std::uint64_t seed = 0;
  int questions_total = 0;
  int degenerate_filtered = 0;
  int surveyed = 0;
  std::vector<std::string> files;
};

// Deterministic per-question answer span (content tokens only). With
// span_pick=random the span is drawn from the question's seed stream; with
// span_pick=greedy it follows the policy's modal content path, which makes
// moderate-to-high success rates and shared partially-correct prefixes the
// typical case.
TaskOracle task_for_question(const ExperimentConfig& cfg, PolicyParams& params,
                             int question);

PolicyParams base_params(const ExperimentConfig& cfg);

// samples and scores one group per question; degenerate groups included
std::vector<RolloutGroup> generate_groups(const ExperimentConfig& cfg,
                                          PolicyParams& params);

// One question probed under several update configs with a shared step size.
// The step is halved (up to 60 times) until every variant's measured change
// matches its first-order prediction within 5%, so that the probes track the
// gradient-flow direction rather than step-size artifacts.
struct ProbeSet {
  double lr = 0.0;
  std::vector<UpdateReport> reports;       // one per requested config
  std::vector<int> selected_total;         // NTHR selections, -1 when unused
};

ProbeSet probe_question(const PolicyParams& full_params,
                        const RolloutGroup& group, const ExperimentConfig& cfg,
                        const std::vector<UpdateConfig>& variants);

struct SurveyRow {
  int question = 0;
  double p = 0.0;
  double lr = 0.0;
  double delta_grpo = 0.0;
  double delta_pos_only = 0.0;
  bool lld_flag = false;
};
struct SurveyResult {
  RunManifest manifest;
  std::vector<SurveyRow> rows;  // sorted by delta_grpo ascending
};
SurveyResult run_lld_survey(const ExperimentConfig& cfg,
                            const std::string& out_dir);

struct MitigationRow {
  int question = 0;
  double p = 0.0;
  double lr = 0.0;
  double delta_grpo = 0.0;
  double delta_random = 0.0;
  double delta_nthr = 0.0;
  bool lld_flag = false;
  int selected_total = 0;
};
struct MitigationResult {
  RunManifest manifest;
  std::vector<MitigationRow> rows;  // sorted by delta_grpo ascending
};
MitigationResult run_mitigation(const ExperimentConfig& cfg,
                                const std::string& out_dir);

struct OverlapRow {
  int k = 0;
  int n = 0;
  double overlap = 0.0;
  double random_baseline = 0.0;  // K / n
};
struct OverlapQuestionRow {
  int question = 0;
  double p = 0.0;
  double gwhes = 0.0;
  double delta_grpo = 0.0;
};
struct OverlapResult {
  RunManifest manifest;
  std::vector<OverlapRow> rows;
  std::vector<OverlapQuestionRow> questions;
};
OverlapResult run_overlap(const ExperimentConfig& cfg,
                          const std::string& out_dir);

struct AblationRow {
  double beta = 0.0;
  std::string eta;
  int n_valid = 0;
  int n_flagged = 0;
  double mean_delta_grpo = 0.0;
  double mean_delta_nthr = 0.0;
  double frac_improved_flagged = 0.0;  // NaN when nothing is flagged
};
struct AblationResult {
  RunManifest manifest;
  std::vector<AblationRow> rows;
};
AblationResult run_ablation(const ExperimentConfig& cfg,
                            const std::string& out_dir);

}  // namespace lld
