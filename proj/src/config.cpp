#include "lld/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "lld/csv.hpp"

namespace lld {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

int parse_int(const std::string& s) {
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected integer, got '" + s + "'");
  }
  if (pos != s.size()) throw ConfigError("expected integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true/false, got '" + s + "'");
}

std::uint64_t parse_u64(const std::string& s) {
  std::size_t pos = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected unsigned integer, got '" + s + "'");
  }
  if (pos != s.size())
    throw ConfigError("expected unsigned integer, got '" + s + "'");
  return v;
}

bool is_number(const std::string& s) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    (void)std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

void check_eta_string(const std::string& eta) {
  if (eta == "p" || eta == "1-p" || eta == "2|0.5-p|") return;
  if (!is_number(eta))
    throw ConfigError("eta must be a number, 'p', '1-p', or '2|0.5-p|'; got '" +
                      eta + "'");
  double v = parse_double(eta);
  if (v < 0.0 || v > 1.0) throw ConfigError("fixed eta must lie in [0, 1]");
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ',';
    out += parts[i];
  }
  return out;
}

std::string fmt_beta(double b) {
  if (std::isinf(b)) return b > 0 ? "inf" : "-inf";
  return fmt_double(b);
}

}  // namespace

double parse_double(const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("expected number, got '" + s + "'");
  }
  if (pos != s.size()) throw ConfigError("expected number, got '" + s + "'");
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

void apply_eta_string(UpdateConfig& cfg, const std::string& eta) {
  if (eta == "p") {
    cfg.eta_policy = EtaPolicy::SuccessRate;
  } else if (eta == "1-p") {
    cfg.eta_policy = EtaPolicy::FailureRate;
  } else if (eta == "2|0.5-p|") {
    cfg.eta_policy = EtaPolicy::CenteredAbs;
  } else {
    cfg.eta_policy = EtaPolicy::Fixed;
    cfg.eta_value = parse_double(eta);
  }
}

ExperimentConfig::ExperimentConfig() {
  beta_list = {-std::numeric_limits<double>::infinity(), 0.0, 0.1, 1.0};
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  ExperimentConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);  // inline comments
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return cfg;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "vocab") vocab = parse_int(value);
  else if (key == "dim") dim = parse_int(value);
  else if (key == "group_size") group_size = parse_int(value);
  else if (key == "max_len") max_len = parse_int(value);
  else if (key == "questions") questions = parse_int(value);
  else if (key == "task") task = value;
  else if (key == "span_len") span_len = parse_int(value);
  else if (key == "span_pick") span_pick = value;
  else if (key == "variance") variance = value;
  else if (key == "learning_rate") learning_rate = parse_double(value);
  else if (key == "clip_epsilon") clip_epsilon = parse_double(value);
  else if (key == "length_normalize") length_normalize = parse_bool(value);
  else if (key == "eps_lld") eps_lld = parse_double(value);
  else if (key == "beta") beta = parse_double(value);
  else if (key == "eta") eta = value;
  else if (key == "seed") seed = parse_u64(value);
  else if (key == "k_list") {
    k_list.clear();
    for (const std::string& item : split_list(value))
      k_list.push_back(parse_int(item));
  } else if (key == "beta_list") {
    beta_list.clear();
    for (const std::string& item : split_list(value))
      beta_list.push_back(parse_double(item));
  } else if (key == "eta_list") {
    eta_list = split_list(value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void ExperimentConfig::validate() const {
  if (vocab < 2) throw ConfigError("vocab must be >= 2");
  if (dim < 1) throw ConfigError("dim must be >= 1");
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (questions < 1) throw ConfigError("questions must be >= 1");
  if (task != "span_match") throw ConfigError("unknown task '" + task + "'");
  if (span_len < 1 || span_len > max_len)
    throw ConfigError("span_len must lie in [1, max_len]");
  if (span_len > vocab - 1)
    throw ConfigError("span_len must be expressible with content tokens");
  if (span_pick != "random" && span_pick != "greedy")
    throw ConfigError("span_pick must be random or greedy");
  if (variance != "population" && variance != "sample")
    throw ConfigError("variance must be population or sample");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (clip_epsilon <= 0.0) throw ConfigError("clip_epsilon must be > 0");
  if (eps_lld < 0.0) throw ConfigError("eps_lld must be >= 0");
  check_eta_string(eta);
  for (const std::string& e : eta_list) check_eta_string(e);
  if (k_list.empty()) throw ConfigError("k_list must not be empty");
  for (int k : k_list)
    if (k < 1) throw ConfigError("k values must be >= 1");
  if (beta_list.empty()) throw ConfigError("beta_list must not be empty");
  if (eta_list.empty()) throw ConfigError("eta_list must not be empty");
}

std::string ExperimentConfig::canonical() const {
  std::vector<std::string> beta_items;
  for (double b : beta_list) beta_items.push_back(fmt_beta(b));
  std::vector<std::string> k_items;
  for (int k : k_list) k_items.push_back(std::to_string(k));

  std::ostringstream out;
  out << "beta=" << fmt_beta(beta) << "\n";
  out << "beta_list=" << join(beta_items) << "\n";
  out << "clip_epsilon=" << fmt_double(clip_epsilon) << "\n";
  out << "dim=" << dim << "\n";
  out << "eps_lld=" << fmt_double(eps_lld) << "\n";
  out << "eta=" << eta << "\n";
  out << "eta_list=" << join(eta_list) << "\n";
  out << "group_size=" << group_size << "\n";
  out << "k_list=" << join(k_items) << "\n";
  out << "learning_rate=" << fmt_double(learning_rate) << "\n";
  out << "length_normalize=" << (length_normalize ? "true" : "false") << "\n";
  out << "max_len=" << max_len << "\n";
  out << "questions=" << questions << "\n";
  out << "seed=" << seed << "\n";
  out << "span_len=" << span_len << "\n";
  out << "span_pick=" << span_pick << "\n";
  out << "task=" << task << "\n";
  out << "variance=" << variance << "\n";
  out << "vocab=" << vocab << "\n";
  return out.str();
}

std::string ExperimentConfig::hash() const {
  const std::string text = canonical();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

VarianceMode ExperimentConfig::variance_mode() const {
  return variance == "sample" ? VarianceMode::Sample
                              : VarianceMode::Population;
}

UpdateConfig ExperimentConfig::update_config(Variant variant) const {
  return update_config(variant, beta, eta);
}

UpdateConfig ExperimentConfig::update_config(
    Variant variant, double beta_override,
    const std::string& eta_override) const {
  UpdateConfig cfg;
  cfg.clip_epsilon = clip_epsilon;
  cfg.learning_rate = learning_rate;
  cfg.variant = variant;
  cfg.length_normalize = length_normalize;
  cfg.beta = beta_override;
  cfg.variance = variance_mode();
  apply_eta_string(cfg, eta_override);
  return cfg;
}

}  // namespace lld
