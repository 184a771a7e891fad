#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lld/objective.hpp"
#include "lld/rollout.hpp"

namespace lld {

// Flat key=value experiment configuration. Unknown keys are hard errors so
// that a typo cannot silently change an ablation.
struct ExperimentConfig {
  // model
  int vocab = 32;
  int dim = 16;
  // rollout
  int group_size = 8;
  int max_len = 24;
  int questions = 100;
  std::string task = "span_match";
  int span_len = 1;
  std::string span_pick = "random";     // or "greedy" (policy's modal path)
  std::string variance = "population";  // or "sample"
  // update / probes
  double learning_rate = 0.5;
  double clip_epsilon = 0.2;
  bool length_normalize = true;
  double eps_lld = 0.0;
  // selection
  double beta = 1.0;
  std::string eta = "0";  // number, or "p" / "1-p" / "2|0.5-p|"
  // suite grids
  std::vector<int> k_list = {10, 15};
  std::vector<double> beta_list;          // default -inf,0,0.1,1
  std::vector<std::string> eta_list = {"0"};
  std::uint64_t seed = 1;

  ExperimentConfig();

  static ExperimentConfig from_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void validate() const;

  // canonical key-sorted text form; basis of the config hash
  std::string canonical() const;
  std::string hash() const;  // 16 hex digits (FNV-1a over canonical())

  VarianceMode variance_mode() const;
  UpdateConfig update_config(Variant variant) const;
  // update config with an explicit (beta, eta) grid point
  UpdateConfig update_config(Variant variant, double beta_override,
                             const std::string& eta_override) const;
};

// parses "number | p | 1-p | 2|0.5-p|" into the config fields
void apply_eta_string(UpdateConfig& cfg, const std::string& eta);

std::vector<std::string> split_list(const std::string& s);
double parse_double(const std::string& s);  // accepts inf / -inf

}  // namespace lld
