#include <algorithm>
#include <cmath>
#include <numeric>

#include "serprank/error.hpp"
#include "serprank/random.hpp"
#include "serprank/rankers.hpp"

namespace serprank {

namespace {

constexpr double kMinScale = 1e-9;

std::vector<char> active_mask(std::size_t dim, std::span<const IndexRange> active) {
  std::vector<char> mask(dim, active.empty() ? 1 : 0);
  for (const auto& r : active) {
    for (std::size_t i = r.begin; i < std::min(r.end, dim); ++i) mask[i] = 1;
  }
  return mask;
}

void check_dims(std::span<const LabeledInstance* const> instances, std::size_t dim) {
  for (const auto* inst : instances) {
    if (inst->features.min_dim() > dim) {
      throw DimensionMismatch("feature index " + std::to_string(inst->features.min_dim() - 1) +
                              " outside model dimension " + std::to_string(dim));
    }
  }
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double raw_dot(std::span<const double> w, const FeatureVector& x, const std::vector<char>& mask) {
  double s = 0.0;
  for (const auto& e : x.entries()) {
    if (mask[e.index]) s += w[e.index] * static_cast<double>(e.value);
  }
  return s;
}

double masked_dot(const LinearModel& m, const FeatureVector& x, const std::vector<char>& mask) {
  return raw_dot(m.weights, x, mask);
}

double step_size(double lr, double decay_steps, std::size_t t) {
  return lr / (1.0 + static_cast<double>(t) / decay_steps);
}

double regularizer(const LinearModel& m, const SgdHyperparams& hp) {
  double l2 = 0.0, l1 = 0.0;
  for (double w : m.weights) {
    l2 += w * w;
    l1 += std::abs(w);
  }
  return 0.5 * hp.l2 * l2 + hp.l1 * l1;
}

/// Sparse difference x_winner - x_loser.
void pair_difference(const FeatureVector& a, const FeatureVector& b, const std::vector<char>& mask,
                     std::vector<std::pair<std::uint32_t, double>>& out) {
  out.clear();
  auto ia = a.entries().begin(), ea = a.entries().end();
  auto ib = b.entries().begin(), eb = b.entries().end();
  while (ia != ea || ib != eb) {
    std::uint32_t idx;
    double v;
    if (ib == eb || (ia != ea && ia->index < ib->index)) {
      idx = ia->index;
      v = ia->value;
      ++ia;
    } else if (ia == ea || ib->index < ia->index) {
      idx = ib->index;
      v = -static_cast<double>(ib->value);
      ++ib;
    } else {
      idx = ia->index;
      v = static_cast<double>(ia->value) - static_cast<double>(ib->value);
      ++ia;
      ++ib;
    }
    if (mask[idx] && v != 0.0) out.emplace_back(idx, v);
  }
}

/// Weights stored as scale * v so L2 decay is O(1) per step.
class ScaledWeights {
 public:
  explicit ScaledWeights(std::size_t dim) : v_(dim, 0.0) {}

  double get(std::size_t i) const { return scale_ * v_[i]; }
  void add(std::size_t i, double delta) { v_[i] += delta / scale_; }
  void set(std::size_t i, double w) { v_[i] = w / scale_; }

  void decay(double factor) {
    scale_ *= factor;
    if (scale_ < kMinScale) {
      for (double& x : v_) x *= scale_;
      scale_ = 1.0;
    }
  }

  std::vector<double> materialize() const {
    std::vector<double> w(v_.size());
    for (std::size_t i = 0; i < v_.size(); ++i) w[i] = scale_ * v_[i];
    return w;
  }

 private:
  std::vector<double> v_;
  double scale_ = 1.0;
};

void validate_sgd(const SgdHyperparams& hp) {
  if (!(hp.learning_rate > 0) || hp.epochs < 0 || hp.l1 < 0 || hp.l2 < 0 || hp.decay_steps < 0) {
    throw UsageError("invalid SGD hyperparameters");
  }
  if (hp.learning_rate * hp.l2 >= 1.0) {
    throw UsageError("learning_rate * l2 must be < 1 for stable decay");
  }
}

}  // namespace

LinearModel LinearModel::zeros(LinearObjective objective, std::size_t dim) {
  LinearModel m;
  m.objective = objective;
  m.dim = dim;
  m.weights.assign(dim, 0.0);
  return m;
}

// --- Logistic regression ---------------------------------------------------------------

LinearModel train_logistic(std::span<const LabeledInstance* const> instances,
                           const SgdHyperparams& hp, std::size_t dim,
                           std::span<const IndexRange> active, TrainTrace* trace) {
  if (instances.empty()) throw EmptyTrainingSet("logistic regression needs instances");
  validate_sgd(hp);
  check_dims(instances, dim);
  LinearModel m = LinearModel::zeros(LinearObjective::Logistic, dim);
  m.active.assign(active.begin(), active.end());
  if (hp.epochs == 0) return m;

  const auto mask = active_mask(dim, active);
  const std::size_t n = instances.size();
  const double decay_steps = hp.decay_steps > 0 ? hp.decay_steps : static_cast<double>(n);
  Rng rng(derive_seed(hp.seed, 0x109));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  ScaledWeights w(dim);
  std::vector<double> applied_l1;  // per-coordinate cumulative L1 already applied
  if (hp.l1 > 0) applied_l1.assign(dim, 0.0);
  double total_l1 = 0.0;
  std::size_t t = 0;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t idx : order) {
      const LabeledInstance& inst = *instances[idx];
      const double eta = step_size(hp.learning_rate, decay_steps, t++);
      double z = m.bias;
      for (const auto& e : inst.features.entries()) {
        if (mask[e.index]) z += w.get(e.index) * static_cast<double>(e.value);
      }
      const double residual = sigmoid(z) - (inst.grade >= 1 ? 1.0 : 0.0);

      if (hp.l2 > 0) w.decay(1.0 - eta * hp.l2);
      for (const auto& e : inst.features.entries()) {
        if (mask[e.index]) w.add(e.index, -eta * residual * static_cast<double>(e.value));
      }
      m.bias -= eta * residual;

      if (hp.l1 > 0) {
        // Cumulative-penalty clipping: each touched coordinate receives the
        // L1 shrinkage accrued since it was last touched, without crossing 0.
        total_l1 += eta * hp.l1;
        for (const auto& e : inst.features.entries()) {
          if (!mask[e.index]) continue;
          const double before = w.get(e.index);
          double after = before;
          if (before > 0) {
            after = std::max(0.0, before - (total_l1 + applied_l1[e.index]));
          } else if (before < 0) {
            after = std::min(0.0, before + (total_l1 - applied_l1[e.index]));
          }
          applied_l1[e.index] += after - before;
          w.set(e.index, after);
        }
      }
    }
    if (trace) {
      m.weights = w.materialize();
      trace->objective.push_back(logistic_objective(m, instances, hp));
    }
  }
  m.weights = w.materialize();
  return m;
}

double logistic_objective(const LinearModel& m, std::span<const LabeledInstance* const> instances,
                          const SgdHyperparams& hp) {
  if (instances.empty()) throw EmptyTrainingSet("objective over no instances");
  const auto mask = active_mask(m.dim, m.active);
  double loss = 0.0;
  for (const auto* inst : instances) {
    const double z = masked_dot(m, inst->features, mask) + m.bias;
    const double y = inst->grade >= 1 ? 1.0 : 0.0;
    loss += softplus(z) - y * z;
  }
  return loss / static_cast<double>(instances.size()) + regularizer(m, hp);
}

std::vector<double> logistic_gradient(const LinearModel& m,
                                      std::span<const LabeledInstance* const> instances,
                                      const SgdHyperparams& hp) {
  if (instances.empty()) throw EmptyTrainingSet("gradient over no instances");
  const auto mask = active_mask(m.dim, m.active);
  std::vector<double> g(m.dim + 1, 0.0);
  const double inv_n = 1.0 / static_cast<double>(instances.size());
  for (const auto* inst : instances) {
    const double z = masked_dot(m, inst->features, mask) + m.bias;
    const double r = sigmoid(z) - (inst->grade >= 1 ? 1.0 : 0.0);
    for (const auto& e : inst->features.entries()) {
      if (mask[e.index]) g[e.index] += inv_n * r * static_cast<double>(e.value);
    }
    g[m.dim] += inv_n * r;
  }
  for (std::size_t i = 0; i < m.dim; ++i) {
    const double w = m.weights[i];
    g[i] += hp.l2 * w + hp.l1 * (w > 0 ? 1.0 : w < 0 ? -1.0 : 0.0);
  }
  return g;
}

// --- RankSVM -------------------------------------------------------------------------

LinearModel train_ranksvm(std::span<const LabeledInstance* const> instances,
                          std::span<const PairInstance> pairs, const SgdHyperparams& hp,
                          std::size_t dim, std::span<const IndexRange> active, TrainTrace* trace) {
  if (pairs.empty()) throw EmptyTrainingSet("RankSVM needs preference pairs");
  validate_sgd(hp);
  check_dims(instances, dim);
  LinearModel m = LinearModel::zeros(LinearObjective::RankSvm, dim);
  m.active.assign(active.begin(), active.end());
  if (hp.epochs == 0) return m;

  const auto mask = active_mask(dim, active);
  const std::size_t n = pairs.size();
  const double decay_steps = hp.decay_steps > 0 ? hp.decay_steps : static_cast<double>(n);
  Rng rng(derive_seed(hp.seed, 0x5a4));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  ScaledWeights w(dim);
  std::vector<std::pair<std::uint32_t, double>> diff;
  std::size_t t = 0;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (std::size_t idx : order) {
      const PairInstance& p = pairs[idx];
      const double eta = step_size(hp.learning_rate, decay_steps, t++);
      pair_difference(instances[p.winner]->features, instances[p.loser]->features, mask, diff);
      double margin = 0.0;
      for (const auto& [i, d] : diff) margin += w.get(i) * d;
      if (hp.l2 > 0) w.decay(1.0 - eta * hp.l2);
      if (margin < 1.0) {
        for (const auto& [i, d] : diff) w.add(i, eta * d);
      }
    }
    if (trace) {
      m.weights = w.materialize();
      trace->objective.push_back(ranksvm_objective(m, instances, pairs, hp));
    }
  }
  m.weights = w.materialize();
  return m;
}

double ranksvm_objective(const LinearModel& m, std::span<const LabeledInstance* const> instances,
                         std::span<const PairInstance> pairs, const SgdHyperparams& hp) {
  if (pairs.empty()) throw EmptyTrainingSet("objective over no pairs");
  const auto mask = active_mask(m.dim, m.active);
  double loss = 0.0;
  for (const auto& p : pairs) {
    const double margin = masked_dot(m, instances[p.winner]->features, mask) -
                          masked_dot(m, instances[p.loser]->features, mask);
    loss += std::max(0.0, 1.0 - margin);
  }
  double l2 = 0.0;
  for (double w : m.weights) l2 += w * w;
  return loss / static_cast<double>(pairs.size()) + 0.5 * hp.l2 * l2;
}

std::vector<double> ranksvm_gradient(const LinearModel& m,
                                     std::span<const LabeledInstance* const> instances,
                                     std::span<const PairInstance> pairs,
                                     const SgdHyperparams& hp) {
  if (pairs.empty()) throw EmptyTrainingSet("gradient over no pairs");
  const auto mask = active_mask(m.dim, m.active);
  std::vector<double> g(m.dim + 1, 0.0);
  std::vector<std::pair<std::uint32_t, double>> diff;
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  for (const auto& p : pairs) {
    pair_difference(instances[p.winner]->features, instances[p.loser]->features, mask, diff);
    double margin = 0.0;
    for (const auto& [i, d] : diff) margin += m.weights[i] * d;
    if (margin < 1.0) {
      for (const auto& [i, d] : diff) g[i] -= inv_n * d;
    }
  }
  for (std::size_t i = 0; i < m.dim; ++i) g[i] += hp.l2 * m.weights[i];
  return g;
}

}  // namespace serprank
