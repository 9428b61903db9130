#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "serprank/error.hpp"
#include "serprank/random.hpp"
#include "serprank/rankers.hpp"

namespace serprank {

double RegressionTree::predict(const FeatureVector& x) const {
  if (nodes.empty()) return 0.0;
  std::size_t k = 0;
  while (!nodes[k].is_leaf()) {
    const auto& n = nodes[k];
    k = static_cast<std::size_t>(
        x.value(static_cast<std::size_t>(n.feature)) <= n.threshold ? n.left : n.right);
  }
  return nodes[k].value;
}

int RegressionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k].is_leaf()) continue;
    for (auto child : {nodes[k].left, nodes[k].right}) {
      d[static_cast<std::size_t>(child)] = d[k] + 1;
      best = std::max(best, d[k] + 1);
    }
  }
  return best;
}

namespace {

constexpr double kMinGain = 1e-12;

struct Split {
  double gain = kMinGain;
  std::int64_t feature = -1;
  double threshold = 0.0;
};

struct NodeStats {
  double sum = 0.0;
  std::size_t count = 0;
};

/// Offers the split between a left block (sum_l, n_l) and the rest of `node`.
void offer(Split& best, const NodeStats& node, double sum_l, std::size_t n_l, std::size_t min_leaf,
           std::int64_t feature, double lo, double hi) {
  const std::size_t n_r = node.count - n_l;
  if (n_l < min_leaf || n_r < min_leaf) return;
  const double sum_r = node.sum - sum_l;
  const double gain = sum_l * sum_l / static_cast<double>(n_l) +
                      sum_r * sum_r / static_cast<double>(n_r) -
                      node.sum * node.sum / static_cast<double>(node.count);
  if (gain > best.gain) {
    best.gain = gain;
    best.feature = feature;
    best.threshold = 0.5 * (lo + hi);
  }
}

double mse(std::span<const double> targets, const std::vector<double>& pred) {
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = targets[i] - pred[i];
    s += d * d;
  }
  return s / static_cast<double>(targets.size());
}

class TreeBuilder {
 public:
  TreeBuilder(std::span<const FeatureVector* const> rows, const GbdtColumns& columns,
              std::size_t min_leaf)
      : rows_(rows), n_(rows.size()), dense_(columns.dense), min_leaf_(min_leaf) {
    const std::size_t d = dense_.end - dense_.begin;
    x_.assign(d * n_, 0.0f);
    std::vector<std::tuple<std::uint32_t, std::uint32_t, float>> sparse;
    for (std::size_t r = 0; r < n_; ++r) {
      for (const auto& e : rows_[r]->entries()) {
        if (dense_.contains(e.index)) {
          x_[(e.index - dense_.begin) * n_ + r] = e.value;
          continue;
        }
        for (const auto& range : columns.sparse) {
          if (range.contains(e.index) && e.value != 0.0f) {
            sparse.emplace_back(e.index, static_cast<std::uint32_t>(r), e.value);
            break;
          }
        }
      }
    }
    sorted_.resize(d);
    for (std::size_t c = 0; c < d; ++c) {
      auto& order = sorted_[c];
      order.resize(n_);
      std::iota(order.begin(), order.end(), 0u);
      const float* col = &x_[c * n_];
      std::stable_sort(order.begin(), order.end(),
                       [col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    }
    std::sort(sparse.begin(), sparse.end());
    for (std::size_t i = 0; i < sparse.size();) {
      const std::uint32_t col = std::get<0>(sparse[i]);
      sparse_ids_.push_back(col);
      sparse_cols_.emplace_back();
      for (; i < sparse.size() && std::get<0>(sparse[i]) == col; ++i) {
        sparse_cols_.back().emplace_back(std::get<1>(sparse[i]), std::get<2>(sparse[i]));
      }
    }
  }

  std::size_t sparse_column_count() const { return sparse_ids_.size(); }

  /// Grows one tree on `residual`; leaves node_of_ at each row's leaf.
  RegressionTree grow(const std::vector<double>& residual, int max_depth,
                      const std::vector<std::size_t>& sparse_candidates) {
    RegressionTree tree;
    tree.nodes.push_back(TreeNode{});
    node_of_.assign(n_, 0);
    std::vector<std::int32_t> frontier = {0};

    for (int depth = 0; depth < max_depth && !frontier.empty(); ++depth) {
      // Frontier position of every node; -1 for settled nodes.
      std::vector<std::int32_t> pos_of(tree.nodes.size(), -1);
      for (std::size_t p = 0; p < frontier.size(); ++p) {
        pos_of[static_cast<std::size_t>(frontier[p])] = static_cast<std::int32_t>(p);
      }
      std::vector<NodeStats> stats(frontier.size());
      for (std::size_t r = 0; r < n_; ++r) {
        const auto p = pos_of[static_cast<std::size_t>(node_of_[r])];
        if (p < 0) continue;
        stats[static_cast<std::size_t>(p)].sum += residual[r];
        ++stats[static_cast<std::size_t>(p)].count;
      }
      std::vector<Split> best(frontier.size());

      // Dense columns: one sweep over the presorted order serves every node.
      std::vector<double> sum_l(frontier.size());
      std::vector<std::size_t> n_l(frontier.size());
      std::vector<float> last(frontier.size());
      for (std::size_t c = 0; c < sorted_.size(); ++c) {
        std::fill(sum_l.begin(), sum_l.end(), 0.0);
        std::fill(n_l.begin(), n_l.end(), 0);
        const float* col = &x_[c * n_];
        const auto feature = static_cast<std::int64_t>(dense_.begin + c);
        for (std::uint32_t r : sorted_[c]) {
          const auto ps = pos_of[static_cast<std::size_t>(node_of_[r])];
          if (ps < 0) continue;
          const auto p = static_cast<std::size_t>(ps);
          const float v = col[r];
          if (n_l[p] > 0 && v != last[p]) {
            offer(best[p], stats[p], sum_l[p], n_l[p], min_leaf_, feature, last[p], v);
          }
          sum_l[p] += residual[r];
          ++n_l[p];
          last[p] = v;
        }
      }

      // Sampled sparse columns: explicit nonzeros plus one implicit zero block.
      std::vector<std::tuple<std::int32_t, float, double>> cell;
      for (std::size_t s : sparse_candidates) {
        cell.clear();
        for (const auto& [r, v] : sparse_cols_[s]) {
          const auto p = pos_of[static_cast<std::size_t>(node_of_[r])];
          if (p >= 0) cell.emplace_back(p, v, residual[r]);
        }
        std::sort(cell.begin(), cell.end());
        const auto feature = static_cast<std::int64_t>(sparse_ids_[s]);
        for (std::size_t i = 0; i < cell.size();) {
          const auto p = static_cast<std::size_t>(std::get<0>(cell[i]));
          std::size_t j = i;
          double nz_sum = 0.0;
          while (j < cell.size() && static_cast<std::size_t>(std::get<0>(cell[j])) == p) {
            nz_sum += std::get<2>(cell[j]);
            ++j;
          }
          // Groups of equal value in ascending order, zero block included.
          struct Group {
            double value;
            double sum;
            std::size_t count;
          };
          std::vector<Group> groups;
          const std::size_t zeros = stats[p].count - (j - i);
          bool zero_placed = zeros == 0;
          const double zero_sum = stats[p].sum - nz_sum;
          for (std::size_t k = i; k < j; ++k) {
            const double v = std::get<1>(cell[k]);
            if (!zero_placed && v > 0.0) {
              groups.push_back({0.0, zero_sum, zeros});
              zero_placed = true;
            }
            if (!groups.empty() && groups.back().value == v) {
              groups.back().sum += std::get<2>(cell[k]);
              ++groups.back().count;
            } else {
              groups.push_back({v, std::get<2>(cell[k]), 1});
            }
          }
          if (!zero_placed) groups.push_back({0.0, zero_sum, zeros});
          double acc_sum = 0.0;
          std::size_t acc_n = 0;
          for (std::size_t g = 0; g + 1 < groups.size(); ++g) {
            acc_sum += groups[g].sum;
            acc_n += groups[g].count;
            offer(best[p], stats[p], acc_sum, acc_n, min_leaf_, feature, groups[g].value,
                  groups[g + 1].value);
          }
          i = j;
        }
      }

      std::vector<std::int32_t> next;
      std::vector<char> split_node(tree.nodes.size(), 0);
      for (std::size_t p = 0; p < frontier.size(); ++p) {
        if (best[p].feature < 0) continue;
        const auto k = static_cast<std::size_t>(frontier[p]);
        const auto left = static_cast<std::int32_t>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{});
        tree.nodes.push_back(TreeNode{});
        tree.nodes[k].feature = best[p].feature;
        tree.nodes[k].threshold = best[p].threshold;
        tree.nodes[k].left = left;
        tree.nodes[k].right = left + 1;
        split_node[k] = 1;
        next.push_back(left);
        next.push_back(left + 1);
      }
      for (std::size_t r = 0; r < n_; ++r) {
        const auto k = static_cast<std::size_t>(node_of_[r]);
        if (!split_node[k]) continue;
        const auto& node = tree.nodes[k];
        const auto f = static_cast<std::size_t>(node.feature);
        const double v = dense_.contains(f) ? static_cast<double>(x_[(f - dense_.begin) * n_ + r])
                                             : rows_[r]->value(f);
        node_of_[r] = v <= node.threshold ? node.left : node.right;
      }
      frontier = std::move(next);
    }

    std::vector<NodeStats> leaf(tree.nodes.size());
    for (std::size_t r = 0; r < n_; ++r) {
      auto& s = leaf[static_cast<std::size_t>(node_of_[r])];
      s.sum += residual[r];
      ++s.count;
    }
    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
      if (tree.nodes[k].is_leaf() && leaf[k].count > 0) {
        tree.nodes[k].value = leaf[k].sum / static_cast<double>(leaf[k].count);
      }
    }
    return tree;
  }

  const std::vector<std::int32_t>& node_of() const { return node_of_; }

 private:
  std::span<const FeatureVector* const> rows_;
  std::size_t n_;
  IndexRange dense_;
  std::size_t min_leaf_;
  std::vector<float> x_;  // column-major dense block
  std::vector<std::vector<std::uint32_t>> sorted_;
  std::vector<std::uint32_t> sparse_ids_;
  std::vector<std::vector<std::pair<std::uint32_t, float>>> sparse_cols_;
  std::vector<std::int32_t> node_of_;
};

}  // namespace

TreeEnsembleModel train_gbdt(std::span<const FeatureVector* const> rows,
                             std::span<const double> targets, const GbdtHyperparams& hp,
                             std::size_t dim, const GbdtColumns& columns, TrainTrace* trace) {
  if (rows.empty()) throw EmptyTrainingSet("GBDT needs instances");
  if (rows.size() != targets.size()) throw DimensionMismatch("rows and targets differ in length");
  if (hp.n_trees < 0 || hp.max_depth < 1 || !(hp.shrinkage > 0.0 && hp.shrinkage <= 1.0) ||
      hp.min_leaf < 1 || hp.sparse_columns < 0) {
    throw UsageError("invalid GBDT hyperparameters");
  }
  if (columns.dense.end > dim || columns.dense.begin > columns.dense.end) {
    throw DimensionMismatch("dense column range outside model dimension");
  }
  for (const auto* r : rows) {
    if (r->min_dim() > dim) throw DimensionMismatch("feature index outside model dimension");
  }

  TreeEnsembleModel model;
  model.dim = dim;
  model.shrinkage = hp.shrinkage;
  model.max_depth = hp.max_depth;
  const std::size_t n = rows.size();
  model.base_score =
      std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(n);

  std::vector<double> pred(n, model.base_score);
  if (trace) trace->objective.push_back(mse(targets, pred));
  if (hp.n_trees == 0) return model;

  TreeBuilder builder(rows, columns, static_cast<std::size_t>(hp.min_leaf));
  Rng rng(derive_seed(hp.seed, 0x96d7));
  std::vector<std::size_t> all_sparse(builder.sparse_column_count());
  std::iota(all_sparse.begin(), all_sparse.end(), 0);
  std::vector<double> residual(n);

  for (int t = 0; t < hp.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = targets[i] - pred[i];
    std::vector<std::size_t> candidates;
    const auto k = static_cast<std::size_t>(hp.sparse_columns);
    if (all_sparse.size() <= k) {
      candidates = all_sparse;
    } else {
      std::vector<std::size_t> pool = all_sparse;
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
      }
      candidates.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(candidates.begin(), candidates.end());
    }
    RegressionTree tree = builder.grow(residual, hp.max_depth, candidates);
    const auto& leaf_of = builder.node_of();
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] += hp.shrinkage * tree.nodes[static_cast<std::size_t>(leaf_of[i])].value;
    }
    model.trees.push_back(std::move(tree));
    if (trace) trace->objective.push_back(mse(targets, pred));
  }
  return model;
}

TreeEnsembleModel train_gbdt(std::span<const LabeledInstance* const> instances,
                             const GbdtHyperparams& hp, std::size_t dim,
                             const GbdtColumns& columns, TrainTrace* trace) {
  std::vector<const FeatureVector*> rows;
  std::vector<double> targets;
  rows.reserve(instances.size());
  targets.reserve(instances.size());
  for (const auto* inst : instances) {
    rows.push_back(&inst->features);
    targets.push_back(static_cast<double>(inst->grade));
  }
  return train_gbdt(rows, targets, hp, dim, columns, trace);
}

}  // namespace serprank
