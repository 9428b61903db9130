#include <algorithm>
#include <cmath>
#include <numeric>

#include "serprank/error.hpp"
#include "serprank/random.hpp"
#include "serprank/rankers.hpp"

namespace serprank {

namespace {

std::span<const double> row(const std::vector<double>& table, std::size_t vocab, std::size_t dim,
                            TokenId t) {
  static const std::vector<double> zeros(1024, 0.0);
  if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
    return std::span<const double>(zeros).first(std::min(dim, zeros.size()));
  }
  return std::span<const double>(table).subspan(static_cast<std::size_t>(t) * dim, dim);
}

bool in_vocab(TokenId t, std::size_t vocab) { return t >= 0 && static_cast<std::size_t>(t) < vocab; }

/// Mean of the token rows; out-of-table tokens count as zero vectors.
std::vector<double> mean_vector(const std::vector<double>& table, std::size_t vocab,
                                std::size_t dim, std::span<const TokenId> tokens) {
  std::vector<double> v(dim, 0.0);
  if (tokens.empty()) return v;
  for (TokenId t : tokens) {
    if (!in_vocab(t, vocab)) continue;
    const double* r = &table[static_cast<std::size_t>(t) * dim];
    for (std::size_t k = 0; k < dim; ++k) v[k] += r[k];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& x : v) x *= inv;
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Cosine {
  std::vector<double> q, p;
  double nq = 0.0, np = 0.0, value = 0.0;

  /// d cos / d q and d cos / d p, scaled by `scale`; zero at a zero vector.
  void grad(double scale, std::vector<double>& gq, std::vector<double>& gp) const {
    gq.assign(q.size(), 0.0);
    gp.assign(p.size(), 0.0);
    if (nq == 0.0 || np == 0.0) return;
    const double inv = 1.0 / (nq * np);
    for (std::size_t k = 0; k < q.size(); ++k) {
      gq[k] = scale * (p[k] * inv - value * q[k] / (nq * nq));
      gp[k] = scale * (q[k] * inv - value * p[k] / (np * np));
    }
  }
};

Cosine cosine(std::vector<double> q, std::vector<double> p) {
  Cosine c;
  c.q = std::move(q);
  c.p = std::move(p);
  c.nq = std::sqrt(dot(c.q, c.q));
  c.np = std::sqrt(dot(c.p, c.p));
  if (c.nq > 0.0 && c.np > 0.0) c.value = dot(c.q, c.p) / (c.nq * c.np);
  return c;
}

/// Adds scale * g / |tokens| to each token row (a mean's chain rule).
void scatter(std::vector<double>& table, std::size_t vocab, std::size_t dim,
             std::span<const TokenId> tokens, const std::vector<double>& g, double scale) {
  if (tokens.empty()) return;
  const double s = scale / static_cast<double>(tokens.size());
  for (TokenId t : tokens) {
    if (!in_vocab(t, vocab)) continue;
    double* r = &table[static_cast<std::size_t>(t) * dim];
    for (std::size_t k = 0; k < dim; ++k) r[k] += s * g[k];
  }
}

void validate(const DmmHyperparams& hp) {
  if (hp.dim < 1 || hp.dim > 1024 || !(hp.learning_rate > 0) || hp.epochs < 0 || hp.init_range < 0 ||
      hp.decay_steps < 0) {
    throw UsageError("invalid embedding model hyperparameters");
  }
}

/// Accumulates the pair's loss gradient into `out` with weight `scale`.
void pair_gradient(const EmbeddingModel& m, const MatchPair& pair, double scale,
                   EmbeddingModel& out) {
  const auto q = mean_vector(m.query_table, m.query_vocab, m.dim, pair.query);
  const Cosine w = cosine(q, mean_vector(m.product_table, m.product_vocab, m.dim, pair.winner));
  const Cosine l = cosine(q, mean_vector(m.product_table, m.product_vocab, m.dim, pair.loser));
  // d softplus(-(s_w - s_l)) / d s_w = -sigmoid(-(s_w - s_l))
  const double a = sigmoid(-(w.value - l.value));
  std::vector<double> gq_w, gp_w, gq_l, gp_l;
  w.grad(-a, gq_w, gp_w);
  l.grad(a, gq_l, gp_l);
  for (std::size_t k = 0; k < m.dim; ++k) gq_w[k] += gq_l[k];
  scatter(out.query_table, m.query_vocab, m.dim, pair.query, gq_w, scale);
  scatter(out.product_table, m.product_vocab, m.dim, pair.winner, gp_w, scale);
  scatter(out.product_table, m.product_vocab, m.dim, pair.loser, gp_l, scale);
}

}  // namespace

std::span<const double> EmbeddingModel::query_vector(TokenId t) const {
  return row(query_table, query_vocab, dim, t);
}

std::span<const double> EmbeddingModel::product_vector(TokenId t) const {
  return row(product_table, product_vocab, dim, t);
}

std::vector<MatchPair> build_match_pairs(std::span<const LabeledInstance* const> instances,
                                         std::span<const PairInstance> pairs) {
  std::vector<MatchPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto& w = *instances[p.winner];
    const auto& l = *instances[p.loser];
    out.push_back({w.query_tokens, w.item_tokens, l.item_tokens});
  }
  return out;
}

EmbeddingModel init_dmm(std::span<const MatchPair> pairs, const DmmHyperparams& hp) {
  validate(hp);
  EmbeddingModel m;
  m.dim = static_cast<std::size_t>(hp.dim);
  TokenId max_q = -1, max_p = -1;
  for (const auto& p : pairs) {
    for (TokenId t : p.query) max_q = std::max(max_q, t);
    for (TokenId t : p.winner) max_p = std::max(max_p, t);
    for (TokenId t : p.loser) max_p = std::max(max_p, t);
  }
  m.query_vocab = static_cast<std::size_t>(max_q + 1);
  m.product_vocab = static_cast<std::size_t>(max_p + 1);
  m.query_table.assign(m.query_vocab * m.dim, 0.0);
  m.product_table.assign(m.product_vocab * m.dim, 0.0);

  std::vector<char> seen_q(m.query_vocab, 0), seen_p(m.product_vocab, 0);
  for (const auto& p : pairs) {
    for (TokenId t : p.query) if (t >= 0) seen_q[static_cast<std::size_t>(t)] = 1;
    for (TokenId t : p.winner) if (t >= 0) seen_p[static_cast<std::size_t>(t)] = 1;
    for (TokenId t : p.loser) if (t >= 0) seen_p[static_cast<std::size_t>(t)] = 1;
  }
  // Rows are drawn in token order so the table does not depend on pair order.
  Rng rng(derive_seed(hp.seed, 0xd33));
  auto fill = [&](std::vector<double>& table, const std::vector<char>& seen) {
    for (std::size_t t = 0; t < seen.size(); ++t) {
      if (!seen[t]) continue;
      for (std::size_t k = 0; k < m.dim; ++k) {
        table[t * m.dim + k] = rng.uniform(-hp.init_range, hp.init_range);
      }
    }
  };
  fill(m.query_table, seen_q);
  fill(m.product_table, seen_p);
  return m;
}

EmbeddingModel train_dmm(std::span<const MatchPair> pairs, const DmmHyperparams& hp,
                         TrainTrace* trace) {
  if (pairs.empty()) throw EmptyTrainingSet("embedding model needs preference pairs");
  EmbeddingModel m = init_dmm(pairs, hp);
  const std::size_t n = pairs.size();
  const double decay_steps = hp.decay_steps > 0 ? hp.decay_steps : static_cast<double>(n);
  Rng rng(derive_seed(hp.seed, 0xd34));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t t = 0;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t idx : order) {
      const double eta = hp.learning_rate / (1.0 + static_cast<double>(t++) / decay_steps);
      pair_gradient(m, pairs[idx], -eta, m);
    }
    if (trace) trace->objective.push_back(dmm_loss(m, pairs));
  }
  return m;
}

double score(const EmbeddingModel& m, std::span<const TokenId> query,
             std::span<const TokenId> product) {
  return cosine(mean_vector(m.query_table, m.query_vocab, m.dim, query),
                mean_vector(m.product_table, m.product_vocab, m.dim, product))
      .value;
}

double dmm_pair_loss(const EmbeddingModel& m, const MatchPair& pair) {
  return softplus(-(score(m, pair.query, pair.winner) - score(m, pair.query, pair.loser)));
}

double dmm_loss(const EmbeddingModel& m, std::span<const MatchPair> pairs) {
  if (pairs.empty()) throw EmptyTrainingSet("loss over no pairs");
  double s = 0.0;
  for (const auto& p : pairs) s += dmm_pair_loss(m, p);
  return s / static_cast<double>(pairs.size());
}

EmbeddingModel dmm_gradient(const EmbeddingModel& m, std::span<const MatchPair> pairs) {
  if (pairs.empty()) throw EmptyTrainingSet("gradient over no pairs");
  EmbeddingModel g = m;
  std::fill(g.query_table.begin(), g.query_table.end(), 0.0);
  std::fill(g.product_table.begin(), g.product_table.end(), 0.0);
  const double scale = 1.0 / static_cast<double>(pairs.size());
  for (const auto& p : pairs) pair_gradient(m, p, scale, g);
  return g;
}

}  // namespace serprank
