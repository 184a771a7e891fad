#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "lld/errors.hpp"

namespace lld {

using Token = int;
using Vec = std::vector<double>;

// Token id space; ids are dense 0..size-1 and the end-of-sequence token is
// reserved as id size-1 by the rollout layer.
struct Vocabulary {
  int size = 0;
  std::vector<std::string> labels;  // optional, same length as size when set

  Token end_token() const { return size - 1; }
};

// Identifies the hidden state reached after emitting `prefix` for question
// `question`. Two responses with a common prefix map to the same key and
// therefore share one embedding.
struct ContextKey {
  int question = 0;
  std::vector<Token> prefix;

  bool operator==(const ContextKey& o) const {
    return question == o.question && prefix == o.prefix;
  }
};

struct ContextKeyHash {
  std::size_t operator()(const ContextKey& k) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ULL;
    };
    mix(static_cast<std::uint64_t>(k.question));
    for (Token t : k.prefix) mix(static_cast<std::uint64_t>(t) + 0x9e37ULL);
    return static_cast<std::size_t>(h);
  }
};

// Dense row-major matrix, sized |V| x d for unembeddings and gradients.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const {
    return data.data() + static_cast<std::size_t>(r) * cols;
  }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
};

// next-token probabilities; entries >= 0 and sum to 1 (renormalized after the
// max-subtracted softmax)
using Distribution = std::vector<double>;

// The free-parameter policy: a shared unembedding matrix W (|V| x d) plus one
// unconstrained embedding per visited context. Context embeddings are created
// lazily on first touch, drawn N(0, 1/d) per coordinate from a seed derived
// from (init_seed, question, prefix), so creation order never matters.
class PolicyParams {
 public:
  PolicyParams() = default;
  static PolicyParams init(int vocab, int dim, std::uint64_t seed);

  int vocab() const { return vocab_; }
  int dim() const { return dim_; }
  std::uint64_t init_seed() const { return init_seed_; }

  Matrix& unembedding() { return w_; }
  const Matrix& unembedding() const { return w_; }

  bool has_context(const ContextKey& key) const;
  // read path; throws MissingContextError when the context was never touched
  const Vec& context_embedding(const ContextKey& key) const;
  // write path; inserts the deterministic lazy Gaussian embedding if missing
  Vec& ensure_context(const ContextKey& key);
  // mutable access to an existing embedding (update step)
  Vec& context_embedding_mut(const ContextKey& key);

  std::size_t context_count() const { return table_.size(); }
  const std::vector<ContextKey>& context_order() const { return order_; }

  void save(std::ostream& out) const;
  static PolicyParams load(std::istream& in);

 private:
  int vocab_ = 0;
  int dim_ = 0;
  std::uint64_t init_seed_ = 0;
  Matrix w_;
  std::unordered_map<ContextKey, Vec, ContextKeyHash> table_;
  std::vector<ContextKey> order_;  // insertion order, for stable serialization
};

// Gradient with the same shape as the parameters it was computed from: a
// dense dW plus one vector per touched context.
struct ParamGradient {
  Matrix d_unembedding;
  std::unordered_map<ContextKey, Vec, ContextKeyHash> d_contexts;

  static ParamGradient zeros_like(const PolicyParams& params);
  void add_scaled(const ParamGradient& other, double scale);
  void scale(double s);
  bool finite() const;
};

// Frobenius inner product over dW plus the sum of context-wise dot products
// (missing keys contribute zero).
double param_dot(const ParamGradient& a, const ParamGradient& b);

Distribution next_token_distribution(const PolicyParams& params,
                                     const ContextKey& ctx);

// ln softmax(W h)_token for one step
double step_log_prob(const PolicyParams& params, const ContextKey& ctx,
                     Token token);

double sequence_log_likelihood(const PolicyParams& params, int question,
                               const std::vector<Token>& tokens);

ParamGradient grad_log_likelihood(const PolicyParams& params, int question,
                                  const std::vector<Token>& tokens);

// accumulate scale * grad ln pi(token | ctx) into an existing gradient
void accumulate_step_grad(const PolicyParams& params, const ContextKey& ctx,
                          Token token, double scale, ParamGradient& grad);

}  // namespace lld
