#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gridnas/costmodel.hpp"
#include "gridnas/enumeration.hpp"
#include "gridnas/rng.hpp"
#include "gridnas/supergrid.hpp"
#include "gridnas/toymodel.hpp"

namespace gridnas {

// ---------------------------------------------------------------------------
// Analytic loss-table generators (all describable in config files).

// base + scale * (number of bits differing from `target`). Multilinear in
// the mask, uniquely minimised at the target.
inline LossTable hamming_table(const MaskBits& target, double base, double scale) {
  const std::size_t bits = target.size();
  check_enumeration_bits(bits);
  const std::size_t n = std::size_t{1} << bits;
  std::vector<double> values(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const MaskBits m = index_mask(i, bits);
    int dist = 0;
    for (std::size_t b = 0; b < bits; ++b) dist += m[b] != target[b];
    values[i] = base + scale * dist;
  }
  return LossTable(bits, std::move(values));
}

// base + sum_b coeff_b * a_b.
inline LossTable linear_table(std::size_t bits, double base,
                              const std::vector<double>& coeffs) {
  check_enumeration_bits(bits);
  if (coeffs.size() != bits) {
    throw std::invalid_argument("linear_table: coefficient count mismatch");
  }
  const std::size_t n = std::size_t{1} << bits;
  std::vector<double> values(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = base;
    for (std::size_t b = 0; b < bits; ++b) {
      if ((i >> b) & 1) acc += coeffs[b];
    }
    values[i] = acc;
  }
  return LossTable(bits, std::move(values));
}

inline LossTable sum_bits_table(std::size_t bits, double base = 0.0,
                                double scale = 1.0) {
  return linear_table(bits, base, std::vector<double>(bits, scale));
}

// Independent uniform values in [lo, hi).
inline LossTable random_table(std::size_t bits, std::uint64_t seed, double lo,
                              double hi) {
  check_enumeration_bits(bits);
  Rng rng(seed);
  std::vector<double> values(std::size_t{1} << bits);
  for (auto& v : values) v = rng.uniform(lo, hi);
  return LossTable(bits, std::move(values));
}

// ---------------------------------------------------------------------------
// Evaluation backends. The search loop talks to tasks exclusively through
// this interface: one `evaluate` per architecture sample (one forward
// tick) and one backward tick per reverse pass, whether the losses come
// from data or tables. Losses always include the shared cost hinge.

struct CostConfig {
  double lambda = 1.0;
  double target = 0.5;
};

struct TaskGrad {
  std::vector<double> grad_w;     // empty when the backend has no weights
  std::vector<double> grad_mask;  // per searchable bit
};

class LossBackend {
 public:
  struct Eval {
    MaskBits searchable;
    std::vector<double> losses;  // per task, cost hinge folded in
    std::vector<int> batch;
    std::shared_ptr<const ForwardCache> cache;  // differentiable backends only
  };

  virtual ~LossBackend() = default;
  virtual int num_tasks() const = 0;
  virtual int num_searchable() const = 0;
  virtual std::size_t num_weights() const = 0;
  virtual int dataset_size() const { return 0; }
  virtual std::vector<double> init_weights(Rng&) const { return {}; }
  virtual std::vector<std::string> task_names() const = 0;

  virtual Eval evaluate(const MaskBits& searchable, const std::vector<double>& weights,
                        std::span<const int> batch, Counters* counters) const = 0;
  // Gradients of one task's loss w.r.t. weights and (searchable) mask bits.
  virtual TaskGrad backward_task(const Eval& eval, int task,
                                 const std::vector<double>& weights,
                                 Counters* counters) const = 0;
  // Weight gradient of sum_t coeff_t * loss_t in a single reverse pass.
  virtual std::vector<double> backward_weighted(const Eval& eval,
                                                std::span<const double> coeffs,
                                                const std::vector<double>& weights,
                                                Counters* counters) const = 0;
};

// Table-backed tasks. The mask "gradient" is the discrete difference of
// the full objective (table value plus cost hinge) across each bit — the
// multilinear-extension partial derivative, which makes the expected
// straight-through update equal the exact gradient of the expected loss
// for any table.
class AnalyticBackend final : public LossBackend {
 public:
  AnalyticBackend(const SupernetGrid& grid, std::vector<std::string> names,
                  std::vector<LossTable> tables, CostConfig cost)
      : grid_(grid), names_(std::move(names)), tables_(std::move(tables)),
        costs_(grid.costs()), cost_(cost) {
    if (tables_.empty()) throw std::invalid_argument("analytic backend needs tasks");
    if (names_.size() != tables_.size()) {
      throw std::invalid_argument("analytic backend: name/table count mismatch");
    }
    for (const auto& t : tables_) {
      if (t.bits() != static_cast<std::size_t>(grid.num_searchable())) {
        throw std::invalid_argument(
            "analytic table bit-count must equal the grid's searchable block count");
      }
    }
  }

  int num_tasks() const override { return static_cast<int>(tables_.size()); }
  int num_searchable() const override { return grid_.num_searchable(); }
  std::size_t num_weights() const override { return 0; }
  std::vector<std::string> task_names() const override { return names_; }

  double folded_loss(int task, const MaskBits& searchable) const {
    const MaskBits full = grid_.expand_mask(searchable);
    return tables_[static_cast<std::size_t>(task)].value(searchable) +
           cost_reg(full, costs_, cost_.lambda, cost_.target);
  }

  Eval evaluate(const MaskBits& searchable, const std::vector<double>&,
                std::span<const int>, Counters* counters) const override {
    Eval e;
    e.searchable = searchable;
    e.losses.resize(tables_.size());
    for (std::size_t t = 0; t < tables_.size(); ++t) {
      e.losses[t] = folded_loss(static_cast<int>(t), searchable);
    }
    if (counters) counters->forwards += 1;
    return e;
  }

  TaskGrad backward_task(const Eval& eval, int task, const std::vector<double>&,
                         Counters* counters) const override {
    TaskGrad g;
    g.grad_mask.resize(eval.searchable.size());
    MaskBits m = eval.searchable;
    for (std::size_t b = 0; b < m.size(); ++b) {
      m[b] = 1;
      const double up = folded_loss(task, m);
      m[b] = 0;
      const double down = folded_loss(task, m);
      m[b] = eval.searchable[b];
      g.grad_mask[b] = up - down;
    }
    if (counters) counters->backwards += 1;
    return g;
  }

  std::vector<double> backward_weighted(const Eval&, std::span<const double>,
                                        const std::vector<double>&,
                                        Counters* counters) const override {
    if (counters) counters->backwards += 1;
    return {};
  }

  const LossTable& table(int task) const {
    return tables_[static_cast<std::size_t>(task)];
  }
  const CostConfig& cost_config() const { return cost_; }

 private:
  const SupernetGrid& grid_;
  std::vector<std::string> names_;
  std::vector<LossTable> tables_;
  std::vector<double> costs_;
  CostConfig cost_;
};

// Data-backed tasks over the toy supernet.
class DiffBackend final : public LossBackend {
 public:
  DiffBackend(const SupernetGrid& grid, std::vector<std::string> names,
              std::shared_ptr<const SyntheticDataset> data, CostConfig cost)
      : grid_(grid), names_(std::move(names)), data_(std::move(data)),
        costs_(grid.costs()), cost_(cost) {
    if (!data_) throw std::invalid_argument("differentiable backend needs a dataset");
    if (names_.size() != static_cast<std::size_t>(data_->num_tasks())) {
      throw std::invalid_argument("differentiable backend: name/task count mismatch");
    }
    for (const auto& t : data_->tasks()) head_paths_.push_back(t.head_path);
    weight_count_ = ToyWeights(grid_, head_paths_).size();
  }

  int num_tasks() const override { return data_->num_tasks(); }
  int num_searchable() const override { return grid_.num_searchable(); }
  std::size_t num_weights() const override { return weight_count_; }
  int dataset_size() const override { return data_->size(); }
  std::vector<std::string> task_names() const override { return names_; }

  std::vector<double> init_weights(Rng& rng) const override {
    return ToyWeights::init(grid_, head_paths_, rng).values;
  }

  Eval evaluate(const MaskBits& searchable, const std::vector<double>& weights,
                std::span<const int> batch, Counters* counters) const override {
    const ToyWeights tw = materialize(weights);
    const MaskBits full = grid_.expand_mask(searchable);
    Eval e;
    e.searchable = searchable;
    e.batch.assign(batch.begin(), batch.end());
    auto cache = std::make_shared<ForwardCache>(
        toy_forward(grid_, tw, *data_, batch, full, counters));
    const double hinge = cost_reg(full, costs_, cost_.lambda, cost_.target);
    e.losses.resize(static_cast<std::size_t>(num_tasks()));
    for (int t = 0; t < num_tasks(); ++t) {
      e.losses[static_cast<std::size_t>(t)] = toy_mse(*cache, *data_, batch, t) + hinge;
    }
    e.cache = std::move(cache);
    return e;
  }

  TaskGrad backward_task(const Eval& eval, int task,
                         const std::vector<double>& weights,
                         Counters* counters) const override {
    const ToyWeights tw = materialize(weights);
    std::vector<double> coeffs(static_cast<std::size_t>(num_tasks()), 0.0);
    coeffs[static_cast<std::size_t>(task)] = 1.0;
    ToyBackward bw = toy_backward(grid_, tw, *data_, eval.batch, *eval.cache, coeffs,
                                  counters);
    TaskGrad g;
    g.grad_w = std::move(bw.grad_w);
    const MaskBits full = grid_.expand_mask(eval.searchable);
    const std::vector<double> hinge_grad =
        cost_reg_mask_grad(full, costs_, cost_.lambda, cost_.target);
    const auto idx = grid_.searchable_indices();
    g.grad_mask.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto bi = static_cast<std::size_t>(idx[i]);
      g.grad_mask[i] = bw.grad_gates[bi] + hinge_grad[bi];
    }
    return g;
  }

  std::vector<double> backward_weighted(const Eval& eval,
                                        std::span<const double> coeffs,
                                        const std::vector<double>& weights,
                                        Counters* counters) const override {
    const ToyWeights tw = materialize(weights);
    ToyBackward bw =
        toy_backward(grid_, tw, *data_, eval.batch, *eval.cache, coeffs, counters);
    return std::move(bw.grad_w);
  }

  const SyntheticDataset& dataset() const { return *data_; }

 private:
  ToyWeights materialize(const std::vector<double>& weights) const {
    ToyWeights tw(grid_, head_paths_);
    if (weights.size() != tw.size()) {
      throw std::invalid_argument("weight vector does not match model layout");
    }
    tw.values = weights;
    return tw;
  }

  const SupernetGrid& grid_;
  std::vector<std::string> names_;
  std::shared_ptr<const SyntheticDataset> data_;
  std::vector<int> head_paths_;
  std::vector<double> costs_;
  CostConfig cost_;
  std::size_t weight_count_ = 0;
};

}  // namespace gridnas
