#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "gridnas/fusion.hpp"
#include "gridnas/rng.hpp"
#include "gridnas/supergrid.hpp"

namespace gridnas {

// Instrumentation for the per-iteration pass-count contract. Workers keep
// private counters that the coordinator merges, so no atomics are needed.
struct Counters {
  std::uint64_t forwards = 0;
  std::uint64_t backwards = 0;

  Counters& operator+=(const Counters& o) {
    forwards += o.forwards;
    backwards += o.backwards;
    return *this;
  }
};

// Desk-scale differentiable supernet. Every block applies
// f(x) = tanh(W x + b) at its path's channel width and is gated by its
// mask bit: y = g * f(x) + (1 - g) * x. Spatial extent is collapsed to a
// single cell (no searched quantity depends on it), so cross-path fusion
// reduces to the channel map. Task heads are linear readouts of a
// designated path's final-stage feature.
//
// Parameters live in one flat vector laid out block by block
// ([W row-major, b] per block, ascending index) followed by one
// [h, c] segment per task head. Flat storage keeps SGD, momentum and
// finite-difference probes trivial.
class ToyWeights {
 public:
  ToyWeights(const SupernetGrid& grid, std::vector<int> head_paths)
      : head_paths_(std::move(head_paths)) {
    const int S = grid.stages();
    std::size_t off = 0;
    block_offset_.reserve(static_cast<std::size_t>(grid.num_blocks()));
    block_width_.reserve(static_cast<std::size_t>(grid.num_blocks()));
    for (int i = 0; i < grid.num_blocks(); ++i) {
      const int w = grid.block(i).channels;
      block_offset_.push_back(off);
      block_width_.push_back(w);
      off += static_cast<std::size_t>(w) * w + w;
    }
    for (int p : head_paths_) {
      if (p < 0 || p >= grid.paths()) {
        throw std::invalid_argument("head path out of range");
      }
      head_offset_.push_back(off);
      head_width_.push_back(grid.block(S - 1, p).channels);
      off += static_cast<std::size_t>(head_width_.back()) + 1;
    }
    values.assign(off, 0.0);
  }

  // Uniform [-1/sqrt(w), 1/sqrt(w)] per segment, drawn in storage order.
  static ToyWeights init(const SupernetGrid& grid, std::vector<int> head_paths,
                         Rng& rng) {
    ToyWeights w(grid, std::move(head_paths));
    for (std::size_t i = 0; i < w.block_offset_.size(); ++i) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.block_width_[i]));
      const std::size_t n = static_cast<std::size_t>(w.block_width_[i]) * w.block_width_[i] +
                            w.block_width_[i];
      for (std::size_t k = 0; k < n; ++k) {
        w.values[w.block_offset_[i] + k] = rng.uniform(-bound, bound);
      }
    }
    for (std::size_t t = 0; t < w.head_offset_.size(); ++t) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.head_width_[t]));
      for (std::size_t k = 0; k <= static_cast<std::size_t>(w.head_width_[t]); ++k) {
        w.values[w.head_offset_[t] + k] = rng.uniform(-bound, bound);
      }
    }
    return w;
  }

  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  int num_tasks() const { return static_cast<int>(head_paths_.size()); }
  const std::vector<int>& head_paths() const { return head_paths_; }
  int block_width(int block) const { return block_width_[static_cast<std::size_t>(block)]; }
  int head_width(int task) const { return head_width_[static_cast<std::size_t>(task)]; }

  const double* block_w(int block) const {
    return values.data() + block_offset_[static_cast<std::size_t>(block)];
  }
  const double* block_b(int block) const {
    const auto i = static_cast<std::size_t>(block);
    return values.data() + block_offset_[i] +
           static_cast<std::size_t>(block_width_[i]) * block_width_[i];
  }
  const double* head(int task) const {
    return values.data() + head_offset_[static_cast<std::size_t>(task)];
  }
  std::size_t block_w_offset(int block) const {
    return block_offset_[static_cast<std::size_t>(block)];
  }
  std::size_t head_seg_offset(int task) const {
    return head_offset_[static_cast<std::size_t>(task)];
  }

 private:
  std::vector<int> head_paths_;
  std::vector<std::size_t> block_offset_;
  std::vector<int> block_width_;
  std::vector<std::size_t> head_offset_;
  std::vector<int> head_width_;
};

// Forward activations kept for the reverse pass. Matrices are row-major
// n x width, indexed by block.
struct ForwardCache {
  MaskBits topo_full;           // binary topology (fusion edges follow it)
  std::vector<double> gates;    // per-block gate coefficients
  int n = 0;
  std::vector<std::vector<double>> in;
  std::vector<std::vector<double>> fout;
  std::vector<std::vector<double>> out;
  std::vector<std::vector<double>> head_pred;  // [task][sample]
};

namespace detail {

// Cross-stage edge rule shared by forward and backward: same-path
// connections always exist; cross-path edges need both endpoints active.
inline bool fusion_edge(const MaskBits& topo, const SupernetGrid& grid, int stage_src,
                        int p_src, int p_dst) {
  if (p_src == p_dst) return true;
  return topo[static_cast<std::size_t>(grid.block_index(stage_src, p_src))] &&
         topo[static_cast<std::size_t>(grid.block_index(stage_src + 1, p_dst))];
}

}  // namespace detail

// Core forward over pre-gathered inputs (row-major n x input_width, where
// input_width is path 0's channel count). `gates` supplies the Eq-style
// gate coefficient per block; topology (hence fusion edges) follows the
// binary mask. With evaluate_skipped, f is computed even for gate-0 blocks
// so d(loss)/d(gate) is exact at sampled masks; without it skipped blocks
// short-circuit to pass-through (used to show the gate arithmetic is
// exact).
inline ForwardCache toy_forward_inputs(const SupernetGrid& grid, const ToyWeights& w,
                                       const std::vector<double>& inputs, int n,
                                       const MaskBits& topo_full,
                                       std::span<const double> gates,
                                       Counters* counters,
                                       bool evaluate_skipped = true) {
  grid.validate_mask(topo_full);
  if (gates.size() != static_cast<std::size_t>(grid.num_blocks())) {
    throw std::invalid_argument("toy_forward: gate vector length mismatch");
  }
  const int P = grid.paths();
  const int S = grid.stages();
  const int w0 = grid.block(0, 0).channels;
  if (inputs.size() != static_cast<std::size_t>(n) * w0) {
    throw std::invalid_argument("toy_forward: input matrix shape mismatch");
  }

  ForwardCache cache;
  cache.topo_full = topo_full;
  cache.gates.assign(gates.begin(), gates.end());
  cache.n = n;
  cache.in.resize(static_cast<std::size_t>(grid.num_blocks()));
  cache.fout.resize(static_cast<std::size_t>(grid.num_blocks()));
  cache.out.resize(static_cast<std::size_t>(grid.num_blocks()));

  const auto run_block = [&](int block) {
    const int width = w.block_width(block);
    const double g = cache.gates[static_cast<std::size_t>(block)];
    const auto& x = cache.in[static_cast<std::size_t>(block)];
    auto& f = cache.fout[static_cast<std::size_t>(block)];
    auto& y = cache.out[static_cast<std::size_t>(block)];
    f.assign(static_cast<std::size_t>(n) * width, 0.0);
    y.assign(static_cast<std::size_t>(n) * width, 0.0);
    if (!evaluate_skipped && g == 0.0) {
      y = x;  // pass-through shortcut; f left zero (gradients unavailable)
      return;
    }
    const double* W = w.block_w(block);
    const double* b = w.block_b(block);
    for (int i = 0; i < n; ++i) {
      const double* xi = x.data() + static_cast<std::size_t>(i) * width;
      double* fi = f.data() + static_cast<std::size_t>(i) * width;
      double* yi = y.data() + static_cast<std::size_t>(i) * width;
      for (int r = 0; r < width; ++r) {
        double z = b[r];
        const double* Wr = W + static_cast<std::size_t>(r) * width;
        for (int c = 0; c < width; ++c) z += Wr[c] * xi[c];
        fi[r] = std::tanh(z);
        yi[r] = g * fi[r] + (1.0 - g) * xi[r];
      }
    }
  };

  // Stage 0: backbone chain along ascending path index.
  cache.in[0].assign(inputs.begin(), inputs.end());
  run_block(grid.block_index(0, 0));
  for (int p = 1; p < P; ++p) {
    const int prev = grid.block_index(0, p - 1);
    const int cur = grid.block_index(0, p);
    const int w_prev = w.block_width(prev);
    const int w_cur = w.block_width(cur);
    auto& dst = cache.in[static_cast<std::size_t>(cur)];
    dst.assign(static_cast<std::size_t>(n) * w_cur, 0.0);
    const auto& src = cache.out[static_cast<std::size_t>(prev)];
    for (int i = 0; i < n; ++i) {
      channel_fuse({src.data() + static_cast<std::size_t>(i) * w_prev,
                    static_cast<std::size_t>(w_prev)},
                   {dst.data() + static_cast<std::size_t>(i) * w_cur,
                    static_cast<std::size_t>(w_cur)});
    }
    run_block(cur);
  }

  // Later stages: fuse admissible edges, summing per destination.
  std::vector<double> tmp;
  for (int s = 1; s < S; ++s) {
    for (int p = 0; p < P; ++p) {
      const int cur = grid.block_index(s, p);
      const int w_cur = w.block_width(cur);
      auto& dst = cache.in[static_cast<std::size_t>(cur)];
      dst.assign(static_cast<std::size_t>(n) * w_cur, 0.0);
      tmp.assign(static_cast<std::size_t>(w_cur), 0.0);
      for (int ps = 0; ps < P; ++ps) {
        if (!detail::fusion_edge(topo_full, grid, s - 1, ps, p)) continue;
        const int src_block = grid.block_index(s - 1, ps);
        const int w_src = w.block_width(src_block);
        const auto& src = cache.out[static_cast<std::size_t>(src_block)];
        for (int i = 0; i < n; ++i) {
          channel_fuse({src.data() + static_cast<std::size_t>(i) * w_src,
                        static_cast<std::size_t>(w_src)},
                       {tmp.data(), static_cast<std::size_t>(w_cur)});
          double* di = dst.data() + static_cast<std::size_t>(i) * w_cur;
          for (int c = 0; c < w_cur; ++c) di[c] += tmp[c];
        }
      }
      run_block(cur);
    }
  }

  // Linear heads on the final stage.
  cache.head_pred.resize(static_cast<std::size_t>(w.num_tasks()));
  for (int t = 0; t < w.num_tasks(); ++t) {
    const int hp = w.head_paths()[static_cast<std::size_t>(t)];
    const int block = grid.block_index(S - 1, hp);
    const int width = w.block_width(block);
    const double* h = w.head(t);
    const double bias = h[width];
    const auto& feat = cache.out[static_cast<std::size_t>(block)];
    auto& pred = cache.head_pred[static_cast<std::size_t>(t)];
    pred.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
      double acc = bias;
      const double* fi = feat.data() + static_cast<std::size_t>(i) * width;
      for (int c = 0; c < width; ++c) acc += h[c] * fi[c];
      pred[static_cast<std::size_t>(i)] = acc;
    }
  }

  if (counters) counters->forwards += 1;
  return cache;
}

// ---------------------------------------------------------------------------
// Synthetic multitask regression data. Task t's targets come from a frozen
// teacher pass (weights drawn from the dataset seed) over that task's
// designated architecture, read at its head. The teacher architecture
// therefore fits its own task with exactly zero loss and generically no
// other mask does, giving each task a distinct known-optimal architecture.

struct TeacherTask {
  int head_path = 0;
  MaskBits teacher_mask;  // full-length
};

class SyntheticDataset {
 public:
  // teacher_gain scales the teacher's weights after initialization:
  // gains above ~2 push its tanh blocks into their nonlinear range, so
  // the targets genuinely depend on which teacher blocks are active.
  SyntheticDataset(const SupernetGrid& grid, std::vector<TeacherTask> tasks, int size,
                   std::uint64_t seed, double teacher_gain = 1.0)
      : tasks_(std::move(tasks)), size_(size),
        input_width_(grid.block(0, 0).channels) {
    if (size_ <= 0) throw std::invalid_argument("dataset size must be positive");
    if (tasks_.empty()) throw std::invalid_argument("dataset needs at least one task");
    std::vector<int> head_paths;
    for (const auto& t : tasks_) {
      grid.validate_mask(t.teacher_mask);
      head_paths.push_back(t.head_path);
    }
    for (std::size_t a = 0; a < tasks_.size(); ++a) {
      for (std::size_t b = a + 1; b < tasks_.size(); ++b) {
        if (tasks_[a].teacher_mask == tasks_[b].teacher_mask &&
            tasks_[a].head_path == tasks_[b].head_path) {
          throw std::invalid_argument("tasks must have distinct teacher architectures");
        }
      }
    }

    Rng teacher_rng(derive_seed(seed, stream::kWeightInit));
    teacher_ = std::make_unique<ToyWeights>(
        ToyWeights::init(grid, head_paths, teacher_rng));
    for (auto& v : teacher_->values) v *= teacher_gain;

    Rng input_rng(derive_seed(seed, stream::kDataset));
    inputs_.resize(static_cast<std::size_t>(size_) * input_width_);
    for (auto& v : inputs_) v = input_rng.uniform(-1.0, 1.0);

    targets_.resize(tasks_.size());
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      std::vector<double> gates(tasks_[t].teacher_mask.begin(),
                                tasks_[t].teacher_mask.end());
      // Teacher passes are data generation, not supernet evaluations:
      // instrumentation counters are not involved.
      ForwardCache cache = toy_forward_inputs(grid, *teacher_, inputs_, size_,
                                              tasks_[t].teacher_mask, gates,
                                              /*counters=*/nullptr);
      targets_[t] = cache.head_pred[t];
    }
  }

  int size() const { return size_; }
  int num_tasks() const { return static_cast<int>(tasks_.size()); }
  int input_width() const { return input_width_; }
  const std::vector<TeacherTask>& tasks() const { return tasks_; }
  const ToyWeights& teacher_weights() const { return *teacher_; }

  std::span<const double> input(int i) const {
    return {inputs_.data() + static_cast<std::size_t>(i) * input_width_,
            static_cast<std::size_t>(input_width_)};
  }
  double target(int task, int i) const {
    return targets_[static_cast<std::size_t>(task)][static_cast<std::size_t>(i)];
  }

 private:
  std::vector<TeacherTask> tasks_;
  int size_;
  int input_width_;
  std::unique_ptr<ToyWeights> teacher_;
  std::vector<double> inputs_;
  std::vector<std::vector<double>> targets_;
};

// Dataset-indexed forward: gathers the batch rows then runs the core pass.
inline ForwardCache toy_forward(const SupernetGrid& grid, const ToyWeights& w,
                                const SyntheticDataset& data,
                                std::span<const int> batch, const MaskBits& topo_full,
                                std::span<const double> gates, Counters* counters,
                                bool evaluate_skipped = true) {
  const int n = static_cast<int>(batch.size());
  std::vector<double> rows(static_cast<std::size_t>(n) * data.input_width());
  for (int i = 0; i < n; ++i) {
    const auto row = data.input(batch[static_cast<std::size_t>(i)]);
    std::copy(row.begin(), row.end(),
              rows.begin() + static_cast<std::size_t>(i) * data.input_width());
  }
  return toy_forward_inputs(grid, w, rows, n, topo_full, gates, counters,
                            evaluate_skipped);
}

inline ForwardCache toy_forward(const SupernetGrid& grid, const ToyWeights& w,
                                const SyntheticDataset& data,
                                std::span<const int> batch, const MaskBits& full_mask,
                                Counters* counters) {
  std::vector<double> gates(full_mask.begin(), full_mask.end());
  return toy_forward(grid, w, data, batch, full_mask, gates, counters);
}

// Mean squared error of one task's head over the cached batch.
inline double toy_mse(const ForwardCache& cache, const SyntheticDataset& data,
                      std::span<const int> batch, int task) {
  const auto& pred = cache.head_pred[static_cast<std::size_t>(task)];
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - data.target(task, batch[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

struct ToyBackward {
  std::vector<double> grad_w;      // ToyWeights layout
  std::vector<double> grad_gates;  // per block: d(loss)/d(gate)
};

// Reverse pass for loss = sum_t coeff_t * mse_t over the cached batch.
// Gradients flow through both gate branches (y = g f + (1-g) x) and the
// gate gradient <dL/dy, f(x) - x> is exact for every block, active or
// skipped, because the forward evaluated f everywhere. The cost hinge is
// mask-only and handled by callers.
inline ToyBackward toy_backward(const SupernetGrid& grid, const ToyWeights& w,
                                const SyntheticDataset& data,
                                std::span<const int> batch, const ForwardCache& cache,
                                std::span<const double> task_coeffs,
                                Counters* counters) {
  if (task_coeffs.size() != static_cast<std::size_t>(w.num_tasks())) {
    throw std::invalid_argument("toy_backward: coefficient count mismatch");
  }
  const int P = grid.paths();
  const int S = grid.stages();
  const int n = cache.n;

  ToyBackward result;
  result.grad_w.assign(w.size(), 0.0);
  result.grad_gates.assign(static_cast<std::size_t>(grid.num_blocks()), 0.0);

  std::vector<std::vector<double>> g_out(static_cast<std::size_t>(grid.num_blocks()));
  for (int i = 0; i < grid.num_blocks(); ++i) {
    g_out[static_cast<std::size_t>(i)].assign(
        static_cast<std::size_t>(n) * w.block_width(i), 0.0);
  }

  // Head seeds.
  for (int t = 0; t < w.num_tasks(); ++t) {
    const double coeff = task_coeffs[static_cast<std::size_t>(t)];
    if (coeff == 0.0) continue;
    const int hp = w.head_paths()[static_cast<std::size_t>(t)];
    const int block = grid.block_index(S - 1, hp);
    const int width = w.block_width(block);
    const double* h = w.head(t);
    const auto& feat = cache.out[static_cast<std::size_t>(block)];
    const auto& pred = cache.head_pred[static_cast<std::size_t>(t)];
    double* grad_h = result.grad_w.data() + w.head_seg_offset(t);
    auto& go = g_out[static_cast<std::size_t>(block)];
    for (int i = 0; i < n; ++i) {
      const double dpred = coeff * 2.0 *
                           (pred[static_cast<std::size_t>(i)] -
                            data.target(t, batch[static_cast<std::size_t>(i)])) /
                           static_cast<double>(n);
      const double* fi = feat.data() + static_cast<std::size_t>(i) * width;
      double* gi = go.data() + static_cast<std::size_t>(i) * width;
      for (int c = 0; c < width; ++c) {
        grad_h[c] += dpred * fi[c];
        gi[c] += dpred * h[c];
      }
      grad_h[width] += dpred;  // bias
    }
  }

  std::vector<double> g_in;
  std::vector<double> adj;
  // Stages in reverse; within stage 0 paths must also run in reverse since
  // the backbone chains them.
  for (int s = S - 1; s >= 0; --s) {
    for (int p = P - 1; p >= 0; --p) {
      const int block = grid.block_index(s, p);
      const int width = w.block_width(block);
      const double g = cache.gates[static_cast<std::size_t>(block)];
      const auto& x = cache.in[static_cast<std::size_t>(block)];
      const auto& f = cache.fout[static_cast<std::size_t>(block)];
      const auto& go = g_out[static_cast<std::size_t>(block)];
      const double* W = w.block_w(block);
      double* grad_W = result.grad_w.data() + w.block_w_offset(block);
      double* grad_b = grad_W + static_cast<std::size_t>(width) * width;

      g_in.assign(static_cast<std::size_t>(n) * width, 0.0);
      double gate_grad = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* xi = x.data() + static_cast<std::size_t>(i) * width;
        const double* fi = f.data() + static_cast<std::size_t>(i) * width;
        const double* goi = go.data() + static_cast<std::size_t>(i) * width;
        double* gii = g_in.data() + static_cast<std::size_t>(i) * width;
        for (int r = 0; r < width; ++r) {
          gate_grad += goi[r] * (fi[r] - xi[r]);
          const double delta = goi[r] * (1.0 - fi[r] * fi[r]);
          const double gd = g * delta;
          const double* Wr = W + static_cast<std::size_t>(r) * width;
          double* grad_Wr = grad_W + static_cast<std::size_t>(r) * width;
          for (int c = 0; c < width; ++c) {
            grad_Wr[c] += gd * xi[c];
            gii[c] += gd * Wr[c];
          }
          grad_b[r] += gd;
          gii[r] += (1.0 - g) * goi[r];
        }
      }
      result.grad_gates[static_cast<std::size_t>(block)] = gate_grad;

      // Route input gradients to this block's sources.
      if (s == 0) {
        if (p == 0) continue;  // gradient w.r.t. raw inputs is not needed
        const int prev = grid.block_index(0, p - 1);
        const int w_prev = w.block_width(prev);
        auto& gprev = g_out[static_cast<std::size_t>(prev)];
        adj.assign(static_cast<std::size_t>(w_prev), 0.0);
        for (int i = 0; i < n; ++i) {
          channel_fuse_adjoint({g_in.data() + static_cast<std::size_t>(i) * width,
                                static_cast<std::size_t>(width)},
                               {adj.data(), static_cast<std::size_t>(w_prev)});
          double* gp = gprev.data() + static_cast<std::size_t>(i) * w_prev;
          for (int c = 0; c < w_prev; ++c) gp[c] += adj[c];
        }
      } else {
        for (int ps = 0; ps < P; ++ps) {
          if (!detail::fusion_edge(cache.topo_full, grid, s - 1, ps, p)) continue;
          const int src_block = grid.block_index(s - 1, ps);
          const int w_src = w.block_width(src_block);
          auto& gsrc = g_out[static_cast<std::size_t>(src_block)];
          adj.assign(static_cast<std::size_t>(w_src), 0.0);
          for (int i = 0; i < n; ++i) {
            channel_fuse_adjoint({g_in.data() + static_cast<std::size_t>(i) * width,
                                  static_cast<std::size_t>(width)},
                                 {adj.data(), static_cast<std::size_t>(w_src)});
            double* gs = gsrc.data() + static_cast<std::size_t>(i) * w_src;
            for (int c = 0; c < w_src; ++c) gs[c] += adj[c];
          }
        }
      }
    }
  }

  if (counters) counters->backwards += 1;
  return result;
}

}  // namespace gridnas
