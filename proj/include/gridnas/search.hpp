#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridnas/archdist.hpp"
#include "gridnas/rng.hpp"
#include "gridnas/supergrid.hpp"
#include "gridnas/tasks.hpp"

namespace gridnas {

// ---------------------------------------------------------------------------
// Configuration. The reference schedule decays the learning rate once at
// one third of the run and keeps the architecture distributions frozen
// for the first two thirds, so distribution updates always run at the
// decayed rate.

struct SearchConfig {
  int algorithm = 4;        // 1..4, see SearchDriver
  long total_steps = 9375;  // 90 epochs at the reference batch count
  long lr_decay_step = 3125;
  long warmup_steps = 6250;  // architecture frozen before this step
  double lr = 0.96;
  double lr_decay_factor = 0.1;
  double lr_arch_ratio = 0.01;  // architecture lr = weight lr * ratio
  double momentum = 0.9;        // weight SGD momentum
  double init_prob = 0.5;
  int workers = 16;
  int batch_size = 32;
  int loss_window = 200;
  bool loss_normalize = true;
  bool self_normalize = true;   // normalize importance weights across workers
  bool signed_score = true;     // false: broken magnitude-only variant (demo)
  bool corrected_is_coeff = true;  // false: normalize(gamma*loss) listing variant
  long snapshot_every = 100;
  std::uint64_t seed = 1;
  // Optional per-task sampling seeds; tasks with equal seeds draw identical
  // architecture samples under per-task sampling. Default derives one per
  // task from `seed`.
  std::vector<std::uint64_t> task_seeds;
};

inline double lr_at(const SearchConfig& cfg, long step) {
  return step < cfg.lr_decay_step ? cfg.lr : cfg.lr * cfg.lr_decay_factor;
}

inline double arch_lr_at(const SearchConfig& cfg, long step) {
  return lr_at(cfg, step) * cfg.lr_arch_ratio;
}

// Deterministic rounding of each marginal: bit = 1 iff prob > 1/2, so the
// result is the most probable mask of the product distribution.
inline MaskBits sample_final(const BernoulliDist& dist) {
  MaskBits m(dist.size(), 0);
  for (std::size_t b = 0; b < dist.size(); ++b) m[b] = dist.probs()[b] > 0.5 ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Windowed loss statistics for cross-task normalization. A value is
// normalized against the window *before* being pushed into it, so the
// first normalization of a fresh window returns 0.

class LossStats {
 public:
  explicit LossStats(int window) : window_(window) {
    if (window <= 0) throw std::invalid_argument("loss window must be positive");
  }

  double normalize(double value) const {
    if (values_.empty()) return 0.0;
    const double m = mean();
    return (value - m) / std::max(stddev(m), kSigmaFloor);
  }

  void push(double value) {
    values_.push_back(value);
    if (values_.size() > static_cast<std::size_t>(window_)) values_.pop_front();
  }

  std::size_t count() const { return values_.size(); }

  double mean() const {
    if (values_.empty()) return 0.0;
    return std::accumulate(values_.begin(), values_.end(), 0.0) /
           static_cast<double>(values_.size());
  }

  // Population standard deviation over the window.
  double stddev(double m) const {
    if (values_.empty()) return 0.0;
    double acc = 0.0;
    for (double v : values_) acc += (v - m) * (v - m);
    return std::sqrt(acc / static_cast<double>(values_.size()));
  }

  static constexpr double kSigmaFloor = 1e-8;

 private:
  int window_;
  std::deque<double> values_;
};

// ---------------------------------------------------------------------------
// Search state and per-step records.

struct SearchState {
  long step = 0;
  std::vector<double> weights;
  std::vector<double> weight_momentum;
  std::vector<BernoulliDist> pi;                   // one distribution per task
  std::vector<std::vector<double>> pi_momentum;    // reserved (momentum 0 for pi)
  std::vector<LossStats> stats;
  Counters totals;
};

struct MetricRecord {
  long step = 0;
  int task = 0;
  double loss_raw = 0.0;
  double loss_norm = 0.0;
  std::uint64_t forwards = 0;   // cumulative over the run, all workers
  std::uint64_t backwards = 0;
};

struct PiSnapshot {
  long step = 0;
  int task = 0;
  std::vector<double> probs;
};

struct RunResult {
  std::vector<MetricRecord> metrics;
  std::vector<PiSnapshot> snapshots;
  std::vector<MaskBits> final_masks;   // full-length, one per task
  std::vector<double> final_losses;    // folded loss of each task's final mask
  Counters totals;
};

// One iteration's estimator output, before learning rates are applied.
struct StepComputation {
  std::vector<double> weight_grad;               // empty for weightless backends
  std::vector<std::vector<double>> pi_updates;   // [task][searchable bit]
  std::vector<double> raw_losses;                // per task, mean over workers
  std::vector<double> norm_losses;               // per task, window-normalized
  std::vector<double> stats_values;              // per task, pushed after the step
  Counters counters;                             // this iteration, all workers
};

// ---------------------------------------------------------------------------
// The four one-run search algorithms over a shared two-phase iteration:
//
//   1  single task, sample from its own distribution, straight-through
//      mask gradients update pi directly (1 forward / 1 backward per worker)
//   2  multitask, each task samples its own architecture (T fwd / T bwd)
//   3  multitask, one shared sample per worker from the mixture proxy,
//      importance-weighted straight-through (1 fwd / T bwd)
//   4  multitask, shared sample, importance-weighted score-function
//      updates for pi and a single weighted backward for the weights
//      (1 fwd / 1 bwd)
//
// Phase 1 runs every worker's sampling and forward evaluation; the
// importance-weight coefficients are then fixed across workers (this is
// where self-normalization couples them); phase 2 runs the backward
// passes and merges updates in worker-index order. Workers execute
// sequentially — the phase split keeps the estimator identical to a
// parallel deployment, which matters because self-normalized weights
// depend on the whole worker batch.

class SearchDriver {
 public:
  SearchDriver(const SupernetGrid& grid, LossBackend& backend, SearchConfig cfg)
      : grid_(grid), backend_(backend), cfg_(cfg) {
    if (cfg_.algorithm < 1 || cfg_.algorithm > 4) {
      throw std::invalid_argument("algorithm must be 1..4");
    }
    if (cfg_.workers <= 0) throw std::invalid_argument("workers must be positive");
    if (cfg_.algorithm == 1 && backend_.num_tasks() != 1) {
      throw std::invalid_argument("algorithm 1 is single-task");
    }
    if (backend_.num_searchable() != grid_.num_searchable()) {
      throw std::invalid_argument("backend/grid searchable size mismatch");
    }
    const int T = backend_.num_tasks();
    if (!cfg_.task_seeds.empty() &&
        cfg_.task_seeds.size() != static_cast<std::size_t>(T)) {
      throw std::invalid_argument("task_seeds must have one entry per task");
    }
    Rng winit(derive_seed(cfg_.seed, stream::kWeightInit));
    state_.weights = backend_.init_weights(winit);
    state_.weight_momentum.assign(state_.weights.size(), 0.0);
    const auto n = static_cast<std::size_t>(grid_.num_searchable());
    for (int t = 0; t < T; ++t) {
      BernoulliDist d = BernoulliDist::constant(n, cfg_.init_prob);
      d.clamp();
      state_.pi.push_back(std::move(d));
      state_.stats.emplace_back(cfg_.loss_window);
      const std::uint64_t ts = cfg_.task_seeds.empty()
                                   ? derive_seed(cfg_.seed, stream::kTaskSeed,
                                                 static_cast<std::uint64_t>(t))
                                   : cfg_.task_seeds[static_cast<std::size_t>(t)];
      auto& row = task_rngs_.emplace_back();
      for (int k = 0; k < cfg_.workers; ++k) {
        row.emplace_back(derive_seed(ts, stream::kTaskSample,
                                     static_cast<std::uint64_t>(k)));
      }
    }
    for (int k = 0; k < cfg_.workers; ++k) {
      proxy_rngs_.emplace_back(derive_seed(cfg_.seed, stream::kProxySample,
                                           static_cast<std::uint64_t>(k)));
    }
    batch_rng_.emplace(derive_seed(cfg_.seed, stream::kBatch));
  }

  const SearchConfig& config() const { return cfg_; }
  SearchState& state() { return state_; }
  const SearchState& state() const { return state_; }
  const SupernetGrid& grid() const { return grid_; }
  LossBackend& backend() { return backend_; }

  StepComputation compute_step() {
    switch (cfg_.algorithm) {
      case 1:
      case 2:
        return step_per_task();
      case 3:
        return step_shared_ste();
      default:
        return step_shared_score();
    }
  }

  // SGD on weights, update + clamp on pi (after warmup), push loss stats.
  void apply_step(const StepComputation& comp) {
    const double wlr = lr_at(cfg_, state_.step);
    const double alr = arch_lr_at(cfg_, state_.step);
    if (!comp.weight_grad.empty()) {
      for (std::size_t i = 0; i < state_.weights.size(); ++i) {
        state_.weight_momentum[i] =
            cfg_.momentum * state_.weight_momentum[i] + comp.weight_grad[i];
        state_.weights[i] -= wlr * state_.weight_momentum[i];
      }
    }
    if (state_.step >= cfg_.warmup_steps) {
      for (std::size_t t = 0; t < state_.pi.size(); ++t) {
        auto& dist = state_.pi[t];
        for (std::size_t b = 0; b < dist.size(); ++b) {
          dist.set_prob(b, dist.probs()[b] - alr * comp.pi_updates[t][b]);
        }
        dist.clamp();
      }
    }
    for (std::size_t t = 0; t < state_.stats.size(); ++t) {
      state_.stats[t].push(comp.stats_values[t]);
    }
    state_.totals += comp.counters;
    state_.step += 1;
  }

  void step() { apply_step(compute_step()); }

  RunResult run() {
    RunResult out;
    for (long s = 0; s < cfg_.total_steps; ++s) {
      if (cfg_.snapshot_every > 0 && s % cfg_.snapshot_every == 0) {
        record_snapshot(out);
      }
      StepComputation comp = compute_step();
      apply_step(comp);
      for (int t = 0; t < backend_.num_tasks(); ++t) {
        const auto ti = static_cast<std::size_t>(t);
        out.metrics.push_back(MetricRecord{state_.step, t, comp.raw_losses[ti],
                                           comp.norm_losses[ti],
                                           state_.totals.forwards,
                                           state_.totals.backwards});
      }
    }
    record_snapshot(out);
    out.final_masks = final_masks();
    out.final_losses.resize(static_cast<std::size_t>(backend_.num_tasks()));
    std::vector<int> eval_batch(static_cast<std::size_t>(
        std::max(backend_.dataset_size(), 0)));
    std::iota(eval_batch.begin(), eval_batch.end(), 0);
    for (int t = 0; t < backend_.num_tasks(); ++t) {
      const auto ti = static_cast<std::size_t>(t);
      // Final evaluation is reporting, not search work: no counter ticks.
      auto eval = backend_.evaluate(grid_.searchable_part(out.final_masks[ti]),
                                    state_.weights, eval_batch, nullptr);
      out.final_losses[ti] = eval.losses[ti];
    }
    out.totals = state_.totals;
    return out;
  }

  std::vector<MaskBits> final_masks() const {
    std::vector<MaskBits> masks;
    for (const auto& dist : state_.pi) {
      masks.push_back(grid_.expand_mask(sample_final(dist)));
    }
    return masks;
  }

 private:
  void record_snapshot(RunResult& out) const {
    for (int t = 0; t < backend_.num_tasks(); ++t) {
      out.snapshots.push_back(
          PiSnapshot{state_.step, t, state_.pi[static_cast<std::size_t>(t)].probs()});
    }
  }

  std::vector<int> sample_batch() {
    const int n = backend_.dataset_size();
    if (n <= 0) return {};
    std::vector<int> batch(static_cast<std::size_t>(cfg_.batch_size));
    for (auto& i : batch) i = batch_rng_->uniform_int(n);
    return batch;
  }

  void accumulate(std::vector<double>& into, const std::vector<double>& g,
                  double scale) const {
    if (into.empty()) into.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) into[i] += scale * g[i];
  }

  // Algorithms 1 and 2: every task draws its own architecture from its own
  // distribution; straight-through mask gradients estimate d E[loss] / d pi.
  StepComputation step_per_task() {
    const int T = backend_.num_tasks();
    const int K = cfg_.workers;
    const std::vector<int> batch = sample_batch();
    StepComputation comp;
    comp.pi_updates.assign(static_cast<std::size_t>(T), {});
    comp.raw_losses.assign(static_cast<std::size_t>(T), 0.0);
    const double inv_k = 1.0 / static_cast<double>(K);

    // Phase 1: one sample and one forward per (task, worker).
    std::vector<std::vector<LossBackend::Eval>> evals(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      for (int k = 0; k < K; ++k) {
        const MaskBits a = state_.pi[ti].sample(task_rngs_[ti][static_cast<std::size_t>(k)]);
        evals[ti].push_back(
            backend_.evaluate(a, state_.weights, batch, &comp.counters));
        comp.raw_losses[ti] += evals[ti].back().losses[ti] * inv_k;
      }
    }
    // Phase 2: per-task backward passes, merged in worker-index order.
    for (int t = 0; t < T; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      comp.pi_updates[ti].assign(evals[ti][0].searchable.size(), 0.0);
      for (int k = 0; k < K; ++k) {
        TaskGrad g = backend_.backward_task(evals[ti][static_cast<std::size_t>(k)], t,
                                            state_.weights, &comp.counters);
        accumulate(comp.weight_grad, g.grad_w, inv_k);
        accumulate(comp.pi_updates[ti], g.grad_mask, inv_k);
      }
    }
    finalize_logging(comp);
    return comp;
  }

  struct SharedPhase1 {
    std::vector<LossBackend::Eval> evals;              // per worker
    std::vector<std::vector<double>> coeffs;           // [task][worker]
    std::vector<std::vector<double>> raw_weights;      // [task][worker] p_t/q
    std::vector<double> raw_losses;                    // per task, IS estimate
  };

  // Shared-sample phase 1 for algorithms 3 and 4: each worker draws one
  // architecture from the mixture proxy q = (1/T) sum_t p_t; importance
  // weights p_t/q are fixed across the worker batch before any backward.
  // The per-task loss summary is the importance-weighted estimate of
  // E_{p_t}[loss]: the plain mean across workers estimates the *mixture*
  // loss instead, and once the task distributions separate, using it as a
  // normalization baseline flips the advantage sign of every own-task
  // sample near convergence.
  SharedPhase1 shared_phase1(const std::vector<int>& batch, Counters& counters) {
    const int T = backend_.num_tasks();
    const int K = cfg_.workers;
    const ProxyMixture proxy(state_.pi);
    SharedPhase1 ph;
    ph.raw_losses.assign(static_cast<std::size_t>(T), 0.0);
    ph.raw_weights.assign(static_cast<std::size_t>(T),
                          std::vector<double>(static_cast<std::size_t>(K), 0.0));
    const double inv_k = 1.0 / static_cast<double>(K);
    for (int k = 0; k < K; ++k) {
      const MaskBits a = proxy.sample(proxy_rngs_[static_cast<std::size_t>(k)]);
      ph.evals.push_back(backend_.evaluate(a, state_.weights, batch, &counters));
      for (int t = 0; t < T; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        ph.raw_weights[ti][static_cast<std::size_t>(k)] = proxy.importance_weight(t, a);
      }
    }
    ph.coeffs.resize(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      if (cfg_.self_normalize) {
        ph.coeffs[ti] = self_normalize(ph.raw_weights[ti]);
      } else {
        ph.coeffs[ti] = ph.raw_weights[ti];
        for (auto& c : ph.coeffs[ti]) c *= inv_k;
      }
      for (int k = 0; k < K; ++k) {
        const auto ki = static_cast<std::size_t>(k);
        ph.raw_losses[ti] += ph.coeffs[ti][ki] * ph.evals[ki].losses[ti];
      }
    }
    return ph;
  }

  // Algorithm 3: importance-weighted straight-through. pi_t gets the
  // task's mask gradient scaled by its coefficient; weights get every
  // task's contribution from the same T backward passes.
  StepComputation step_shared_ste() {
    const int T = backend_.num_tasks();
    const int K = cfg_.workers;
    const std::vector<int> batch = sample_batch();
    StepComputation comp;
    SharedPhase1 ph = shared_phase1(batch, comp.counters);
    comp.raw_losses = ph.raw_losses;
    comp.pi_updates.assign(
        static_cast<std::size_t>(T),
        std::vector<double>(static_cast<std::size_t>(backend_.num_searchable()), 0.0));
    for (int k = 0; k < K; ++k) {
      const auto ki = static_cast<std::size_t>(k);
      for (int t = 0; t < T; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        TaskGrad g = backend_.backward_task(ph.evals[ki], t, state_.weights,
                                            &comp.counters);
        accumulate(comp.weight_grad, g.grad_w, ph.coeffs[ti][ki]);
        accumulate(comp.pi_updates[ti], g.grad_mask, ph.coeffs[ti][ki]);
      }
    }
    finalize_logging(comp);
    return comp;
  }

  // Algorithm 4: importance-weighted score-function (log-derivative)
  // updates for pi and a single coefficient-weighted backward for the
  // weights. The default coefficient is gamma * normalize(loss); the
  // listing variant normalize(gamma * loss) entangles the importance
  // ratio with the baseline statistics and is biased — kept only for
  // comparison behind corrected_is_coeff = false.
  StepComputation step_shared_score() {
    const int T = backend_.num_tasks();
    const int K = cfg_.workers;
    const std::vector<int> batch = sample_batch();
    StepComputation comp;
    SharedPhase1 ph = shared_phase1(batch, comp.counters);
    comp.raw_losses = ph.raw_losses;
    comp.pi_updates.assign(
        static_cast<std::size_t>(T),
        std::vector<double>(static_cast<std::size_t>(backend_.num_searchable()), 0.0));
    const double inv_k = 1.0 / static_cast<double>(K);

    // The corrected coefficient weights the normalized advantage by the
    // task's importance coefficient, with the window fed by the IS loss
    // estimate. The listing variant normalizes gamma*loss directly.
    std::vector<double> stats_values = ph.raw_losses;
    for (int t = 0; t < T; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      if (!cfg_.corrected_is_coeff) stats_values[ti] = 0.0;
      for (int k = 0; k < K; ++k) {
        const auto ki = static_cast<std::size_t>(k);
        const double loss = ph.evals[ki].losses[ti];
        const std::vector<double> sc =
            state_.pi[ti].score(ph.evals[ki].searchable, cfg_.signed_score);
        double coeff = 0.0;
        if (cfg_.corrected_is_coeff) {
          const double n =
              cfg_.loss_normalize ? state_.stats[ti].normalize(loss) : loss;
          coeff = ph.coeffs[ti][ki] * n;
        } else {
          const double v = ph.raw_weights[ti][ki] * loss;
          const double n = cfg_.loss_normalize ? state_.stats[ti].normalize(v) : v;
          coeff = inv_k * n;
          stats_values[ti] += v * inv_k;
        }
        for (std::size_t b = 0; b < sc.size(); ++b) {
          comp.pi_updates[ti][b] += coeff * sc[b];
        }
      }
    }
    // One weighted backward per worker covers all tasks' weight gradients.
    for (int k = 0; k < K; ++k) {
      const auto ki = static_cast<std::size_t>(k);
      std::vector<double> wcoeffs(static_cast<std::size_t>(T), 0.0);
      for (int t = 0; t < T; ++t) {
        wcoeffs[static_cast<std::size_t>(t)] =
            ph.coeffs[static_cast<std::size_t>(t)][ki];
      }
      std::vector<double> g = backend_.backward_weighted(ph.evals[ki], wcoeffs,
                                                         state_.weights,
                                                         &comp.counters);
      accumulate(comp.weight_grad, g, 1.0);
    }
    finalize_logging(comp);
    comp.stats_values = std::move(stats_values);
    return comp;
  }

  // Logged normalized loss and default stats feed; the score-function
  // variant overrides stats_values with whatever its baseline tracks.
  void finalize_logging(StepComputation& comp) const {
    comp.norm_losses.resize(comp.raw_losses.size());
    for (std::size_t t = 0; t < comp.raw_losses.size(); ++t) {
      comp.norm_losses[t] = state_.stats[t].normalize(comp.raw_losses[t]);
    }
    comp.stats_values = comp.raw_losses;
  }

  const SupernetGrid& grid_;
  LossBackend& backend_;
  SearchConfig cfg_;
  SearchState state_;
  std::vector<std::vector<Rng>> task_rngs_;  // [task][worker]
  std::vector<Rng> proxy_rngs_;              // [worker]
  std::optional<Rng> batch_rng_;
};

}  // namespace gridnas
