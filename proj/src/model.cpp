#include "lld/model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "lld/rng.hpp"

namespace lld {

namespace {

std::uint64_t context_seed(std::uint64_t init_seed, const ContextKey& key) {
  std::uint64_t s = derive_seed(init_seed, {0x48ULL /* 'H' */,
                                            static_cast<std::uint64_t>(key.question),
                                            static_cast<std::uint64_t>(key.prefix.size())});
  for (Token t : key.prefix) {
    s ^= static_cast<std::uint64_t>(t) + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    (void)splitmix64(s);
  }
  return splitmix64(s);
}

std::string describe(const ContextKey& key) {
  std::ostringstream os;
  os << "q" << key.question << "[";
  for (std::size_t i = 0; i < key.prefix.size(); ++i) {
    if (i) os << " ";
    os << key.prefix[i];
  }
  os << "]";
  return os.str();
}

}  // namespace

PolicyParams PolicyParams::init(int vocab, int dim, std::uint64_t seed) {
  if (vocab < 1) throw ConfigError("vocabulary size must be >= 1");
  if (dim < 1) throw ConfigError("embedding dimension must be >= 1");
  PolicyParams p;
  p.vocab_ = vocab;
  p.dim_ = dim;
  p.init_seed_ = seed;
  p.w_ = Matrix(vocab, dim);
  Rng rng(derive_seed(seed, {0x57ULL /* 'W' */}));
  const double sigma = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& v : p.w_.data) v = sigma * rng.gaussian();
  return p;
}

bool PolicyParams::has_context(const ContextKey& key) const {
  return table_.find(key) != table_.end();
}

const Vec& PolicyParams::context_embedding(const ContextKey& key) const {
  auto it = table_.find(key);
  if (it == table_.end())
    throw MissingContextError("unknown context " + describe(key));
  return it->second;
}

Vec& PolicyParams::ensure_context(const ContextKey& key) {
  auto it = table_.find(key);
  if (it != table_.end()) return it->second;
  Rng rng(context_seed(init_seed_, key));
  Vec h(dim_);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (double& v : h) v = sigma * rng.gaussian();
  order_.push_back(key);
  return table_.emplace(key, std::move(h)).first->second;
}

Vec& PolicyParams::context_embedding_mut(const ContextKey& key) {
  auto it = table_.find(key);
  if (it == table_.end())
    throw MissingContextError("unknown context " + describe(key));
  return it->second;
}

Distribution next_token_distribution(const PolicyParams& params,
                                     const ContextKey& ctx) {
  const Vec& h = params.context_embedding(ctx);
  const Matrix& w = params.unembedding();
  Distribution probs(params.vocab());
  double max_logit = -HUGE_VAL;
  for (int z = 0; z < params.vocab(); ++z) {
    const double* wz = w.row(z);
    double logit = 0.0;
    for (int c = 0; c < params.dim(); ++c) logit += wz[c] * h[c];
    probs[z] = logit;
    max_logit = std::max(max_logit, logit);
  }
  double total = 0.0;
  for (double& v : probs) {
    v = std::exp(v - max_logit);
    total += v;
  }
  for (double& v : probs) v /= total;
  return probs;
}

double step_log_prob(const PolicyParams& params, const ContextKey& ctx,
                     Token token) {
  const Vec& h = params.context_embedding(ctx);
  const Matrix& w = params.unembedding();
  double max_logit = -HUGE_VAL;
  std::vector<double> logits(params.vocab());
  for (int z = 0; z < params.vocab(); ++z) {
    const double* wz = w.row(z);
    double logit = 0.0;
    for (int c = 0; c < params.dim(); ++c) logit += wz[c] * h[c];
    logits[z] = logit;
    max_logit = std::max(max_logit, logit);
  }
  double total = 0.0;
  for (double v : logits) total += std::exp(v - max_logit);
  return logits[token] - max_logit - std::log(total);
}

double sequence_log_likelihood(const PolicyParams& params, int question,
                               const std::vector<Token>& tokens) {
  double ll = 0.0;
  ContextKey ctx{question, {}};
  ctx.prefix.reserve(tokens.size());
  for (Token t : tokens) {
    ll += step_log_prob(params, ctx, t);
    ctx.prefix.push_back(t);
  }
  return ll;
}

ParamGradient ParamGradient::zeros_like(const PolicyParams& params) {
  ParamGradient g;
  g.d_unembedding = Matrix(params.vocab(), params.dim());
  return g;
}

void ParamGradient::add_scaled(const ParamGradient& other, double s) {
  for (std::size_t i = 0; i < d_unembedding.data.size(); ++i)
    d_unembedding.data[i] += s * other.d_unembedding.data[i];
  for (const auto& [key, vec] : other.d_contexts) {
    auto it = d_contexts.find(key);
    if (it == d_contexts.end()) {
      Vec v(vec.size(), 0.0);
      for (std::size_t i = 0; i < vec.size(); ++i) v[i] = s * vec[i];
      d_contexts.emplace(key, std::move(v));
    } else {
      for (std::size_t i = 0; i < vec.size(); ++i) it->second[i] += s * vec[i];
    }
  }
}

void ParamGradient::scale(double s) {
  for (double& v : d_unembedding.data) v *= s;
  for (auto& [key, vec] : d_contexts)
    for (double& v : vec) v *= s;
}

bool ParamGradient::finite() const {
  for (double v : d_unembedding.data)
    if (!std::isfinite(v)) return false;
  for (const auto& [key, vec] : d_contexts)
    for (double v : vec)
      if (!std::isfinite(v)) return false;
  return true;
}

double param_dot(const ParamGradient& a, const ParamGradient& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.d_unembedding.data.size(); ++i)
    acc += a.d_unembedding.data[i] * b.d_unembedding.data[i];
  // iterate the smaller table
  const auto& small = a.d_contexts.size() <= b.d_contexts.size() ? a.d_contexts
                                                                 : b.d_contexts;
  const auto& large = a.d_contexts.size() <= b.d_contexts.size() ? b.d_contexts
                                                                 : a.d_contexts;
  for (const auto& [key, vec] : small) {
    auto it = large.find(key);
    if (it == large.end()) continue;
    for (std::size_t i = 0; i < vec.size(); ++i) acc += vec[i] * it->second[i];
  }
  return acc;
}

void accumulate_step_grad(const PolicyParams& params, const ContextKey& ctx,
                          Token token, double scale, ParamGradient& grad) {
  const Vec& h = params.context_embedding(ctx);
  Distribution probs = next_token_distribution(params, ctx);
  const Matrix& w = params.unembedding();
  const int dim = params.dim();

  // dW_z += scale * ((z == token) - pi_z) * h
  for (int z = 0; z < params.vocab(); ++z) {
    double coeff = scale * ((z == token ? 1.0 : 0.0) - probs[z]);
    double* dwz = grad.d_unembedding.row(z);
    for (int c = 0; c < dim; ++c) dwz[c] += coeff * h[c];
  }

  // dH[ctx] += scale * (w_token - sum_z pi_z w_z)
  auto it = grad.d_contexts.find(ctx);
  if (it == grad.d_contexts.end())
    it = grad.d_contexts.emplace(ctx, Vec(dim, 0.0)).first;
  Vec& dh = it->second;
  const double* wt = w.row(token);
  for (int c = 0; c < dim; ++c) dh[c] += scale * wt[c];
  for (int z = 0; z < params.vocab(); ++z) {
    const double* wz = w.row(z);
    double coeff = scale * probs[z];
    for (int c = 0; c < dim; ++c) dh[c] -= coeff * wz[c];
  }
}

ParamGradient grad_log_likelihood(const PolicyParams& params, int question,
                                  const std::vector<Token>& tokens) {
  ParamGradient grad = ParamGradient::zeros_like(params);
  ContextKey ctx{question, {}};
  ctx.prefix.reserve(tokens.size());
  for (Token t : tokens) {
    accumulate_step_grad(params, ctx, t, 1.0, grad);
    ctx.prefix.push_back(t);
  }
  return grad;
}

namespace {
constexpr char kMagic[] = "lldlab-params";
constexpr int kFormatVersion = 1;
}  // namespace

void PolicyParams::save(std::ostream& out) const {
  out.precision(17);
  out << kMagic << " " << kFormatVersion << "\n";
  out << vocab_ << " " << dim_ << " " << order_.size() << " " << init_seed_
      << "\n";
  for (int r = 0; r < w_.rows; ++r) {
    const double* row = w_.row(r);
    for (int c = 0; c < w_.cols; ++c) out << (c ? " " : "") << row[c];
    out << "\n";
  }
  for (const ContextKey& key : order_) {
    const Vec& h = table_.at(key);
    out << key.question << " " << key.prefix.size();
    for (Token t : key.prefix) out << " " << t;
    for (double v : h) out << " " << v;
    out << "\n";
  }
}

PolicyParams PolicyParams::load(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic)
    throw IoError("not a parameter snapshot");
  if (version != kFormatVersion)
    throw IoError("unsupported snapshot version " + std::to_string(version));
  int vocab = 0, dim = 0;
  std::size_t contexts = 0;
  std::uint64_t seed = 0;
  if (!(in >> vocab >> dim >> contexts >> seed))
    throw IoError("truncated snapshot header");
  PolicyParams p;
  p.vocab_ = vocab;
  p.dim_ = dim;
  p.init_seed_ = seed;
  p.w_ = Matrix(vocab, dim);
  for (double& v : p.w_.data)
    if (!(in >> v)) throw IoError("truncated unembedding block");
  for (std::size_t i = 0; i < contexts; ++i) {
    ContextKey key;
    std::size_t plen = 0;
    if (!(in >> key.question >> plen)) throw IoError("truncated context block");
    key.prefix.resize(plen);
    for (Token& t : key.prefix)
      if (!(in >> t)) throw IoError("truncated context prefix");
    Vec h(dim);
    for (double& v : h)
      if (!(in >> v)) throw IoError("truncated context embedding");
    p.order_.push_back(key);
    p.table_.emplace(std::move(key), std::move(h));
  }
  return p;
}

}  // namespace lld
