#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gridnas {

// Binary architecture vector. Two lengths appear throughout: "full" masks
// cover every grid block (stage-major then path order), "searchable" masks
// cover only the blocks a search may toggle.
using MaskBits = std::vector<std::uint8_t>;

inline std::string mask_to_string(const MaskBits& m) {
  std::string s(m.size(), '0');
  for (std::size_t i = 0; i < m.size(); ++i) s[i] = m[i] ? '1' : '0';
  return s;
}

inline MaskBits mask_from_string(const std::string& s) {
  MaskBits m(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '0' && s[i] != '1') {
      throw std::invalid_argument("mask string must contain only 0/1: " + s);
    }
    m[i] = s[i] == '1';
  }
  return m;
}

// One selectable unit of the grid: the cell at (stage, path).
struct BlockSpec {
  int stage = 0;
  int path = 0;
  int channels = 0;
  int resolution_divisor = 1;
  double cost = 0.0;
};

// Rectangular supernet: `paths` parallel resolution levels kept alive
// through `stages` sequential groups. Stage 0 is the backbone chain that
// feeds every path; its blocks are only searchable when searchable_stage0
// is set. Block order everywhere is stage-major then path:
// index = stage * paths + path.
class SupernetGrid {
 public:
  SupernetGrid(int paths, int stages, bool searchable_stage0,
               std::vector<BlockSpec> blocks)
      : paths_(paths), stages_(stages), searchable_stage0_(searchable_stage0) {
    if (paths <= 0 || stages <= 0) {
      throw std::invalid_argument("grid dims must be positive");
    }
    const std::size_t n = static_cast<std::size_t>(paths) * stages;
    if (blocks.size() != n) {
      throw std::invalid_argument("grid expects exactly paths*stages blocks");
    }
    blocks_.resize(n);
    std::vector<bool> seen(n, false);
    for (auto& b : blocks) {
      if (b.stage < 0 || b.stage >= stages || b.path < 0 || b.path >= paths) {
        throw std::invalid_argument("block cell out of range");
      }
      if (b.channels <= 0) throw std::invalid_argument("block channels must be positive");
      if (b.resolution_divisor <= 0) {
        throw std::invalid_argument("block resolution_divisor must be positive");
      }
      if (b.cost < 0.0) throw std::invalid_argument("block cost must be non-negative");
      const std::size_t idx = static_cast<std::size_t>(b.stage) * paths + b.path;
      if (seen[idx]) throw std::invalid_argument("duplicate block cell");
      seen[idx] = true;
      blocks_[idx] = b;
    }
    // Channel width and divisor are per-path properties; divisors must grow
    // strictly with path index (each path is a coarser resolution level).
    for (int p = 0; p < paths_; ++p) {
      for (int s = 1; s < stages_; ++s) {
        if (block(s, p).channels != block(0, p).channels) {
          throw std::invalid_argument("channels must be constant along a path");
        }
        if (block(s, p).resolution_divisor != block(0, p).resolution_divisor) {
          throw std::invalid_argument("resolution_divisor must be constant along a path");
        }
      }
    }
    for (int p = 1; p < paths_; ++p) {
      if (block(0, p).resolution_divisor <= block(0, p - 1).resolution_divisor) {
        throw std::invalid_argument(
            "resolution_divisor must strictly increase with path index");
      }
    }
  }

  // Uniform convenience grid: per-path channels/divisors, one cost per path
  // applied to every stage.
  static SupernetGrid uniform(int paths, int stages, bool searchable_stage0,
                              const std::vector<int>& path_channels,
                              const std::vector<int>& path_divisors,
                              const std::vector<double>& path_costs) {
    if (static_cast<int>(path_channels.size()) != paths ||
        static_cast<int>(path_divisors.size()) != paths ||
        static_cast<int>(path_costs.size()) != paths) {
      throw std::invalid_argument("uniform grid: per-path vectors must have `paths` entries");
    }
    std::vector<BlockSpec> blocks;
    blocks.reserve(static_cast<std::size_t>(paths) * stages);
    for (int s = 0; s < stages; ++s) {
      for (int p = 0; p < paths; ++p) {
        blocks.push_back(BlockSpec{s, p, path_channels[p], path_divisors[p],
                                   path_costs[p]});
      }
    }
    return SupernetGrid(paths, stages, searchable_stage0, std::move(blocks));
  }

  int paths() const { return paths_; }
  int stages() const { return stages_; }
  bool searchable_stage0() const { return searchable_stage0_; }
  int num_blocks() const { return paths_ * stages_; }

  int block_index(int stage, int path) const { return stage * paths_ + path; }
  const BlockSpec& block(int stage, int path) const {
    return blocks_[static_cast<std::size_t>(block_index(stage, path))];
  }
  const BlockSpec& block(int index) const {
    return blocks_[static_cast<std::size_t>(index)];
  }
  const std::vector<BlockSpec>& blocks() const { return blocks_; }

  std::vector<double> costs() const {
    std::vector<double> c(blocks_.size());
    for (std::size_t i = 0; i < blocks_.size(); ++i) c[i] = blocks_[i].cost;
    return c;
  }

  int num_searchable() const {
    return searchable_stage0_ ? num_blocks() : (stages_ - 1) * paths_;
  }

  // Block indices a search may toggle, ascending.
  std::vector<int> searchable_indices() const {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(num_searchable()));
    const int first = searchable_stage0_ ? 0 : paths_;
    for (int i = first; i < num_blocks(); ++i) idx.push_back(i);
    return idx;
  }

  // Expands a searchable bit-vector into a full mask; non-searchable
  // (stage-0) blocks are always selected.
  MaskBits expand_mask(const MaskBits& searchable) const {
    if (static_cast<int>(searchable.size()) != num_searchable()) {
      throw std::invalid_argument("expand_mask: searchable length mismatch");
    }
    MaskBits full(static_cast<std::size_t>(num_blocks()), 1);
    const int first = searchable_stage0_ ? 0 : paths_;
    for (std::size_t i = 0; i < searchable.size(); ++i) {
      full[first + i] = searchable[i];
    }
    return full;
  }

  MaskBits searchable_part(const MaskBits& full) const {
    validate_mask(full);
    const int first = searchable_stage0_ ? 0 : paths_;
    return MaskBits(full.begin() + first, full.end());
  }

  // A full mask is valid when it has one bit per block and keeps every
  // non-searchable stage-0 block selected.
  void validate_mask(const MaskBits& full) const {
    if (static_cast<int>(full.size()) != num_blocks()) {
      throw std::invalid_argument("mask length must equal block count");
    }
    if (!searchable_stage0_) {
      for (int p = 0; p < paths_; ++p) {
        if (!full[static_cast<std::size_t>(p)]) {
          throw std::invalid_argument("stage-0 blocks are fixed-selected in this grid");
        }
      }
    }
  }

 private:
  int paths_;
  int stages_;
  bool searchable_stage0_;
  std::vector<BlockSpec> blocks_;
};

// Mask-selected computation graph. fusion_edges hold (src, dst) block
// index pairs between consecutive stages. Removal rule: a cross-path edge
// needs both endpoints active; the same-path connection at every boundary
// is always kept, so each path stays an unbroken chain (skipped blocks act
// as identity pass-throughs on their own path).
struct PrunedGraph {
  std::vector<int> active_blocks;
  std::vector<std::pair<int, int>> fusion_edges;
};

inline PrunedGraph apply_mask(const SupernetGrid& grid, const MaskBits& full) {
  grid.validate_mask(full);
  PrunedGraph g;
  for (int i = 0; i < grid.num_blocks(); ++i) {
    if (full[static_cast<std::size_t>(i)]) g.active_blocks.push_back(i);
  }
  for (int s = 0; s + 1 < grid.stages(); ++s) {
    for (int src_p = 0; src_p < grid.paths(); ++src_p) {
      for (int dst_p = 0; dst_p < grid.paths(); ++dst_p) {
        const int src = grid.block_index(s, src_p);
        const int dst = grid.block_index(s + 1, dst_p);
        const bool same_path = src_p == dst_p;
        const bool both_active =
            full[static_cast<std::size_t>(src)] && full[static_cast<std::size_t>(dst)];
        if (same_path || both_active) g.fusion_edges.emplace_back(src, dst);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Canonical hand-designed topologies expressible in the grid.

enum class Topology { kLinear, kUnet, kFpn, kPanet, kBifpn };

inline Topology topology_from_string(const std::string& name) {
  if (name == "linear") return Topology::kLinear;
  if (name == "unet") return Topology::kUnet;
  if (name == "fpn") return Topology::kFpn;
  if (name == "panet") return Topology::kPanet;
  if (name == "bifpn") return Topology::kBifpn;
  throw std::invalid_argument("unknown topology: " + name);
}

inline std::string topology_name(Topology t) {
  switch (t) {
    case Topology::kLinear: return "linear";
    case Topology::kUnet: return "unet";
    case Topology::kFpn: return "fpn";
    case Topology::kPanet: return "panet";
    case Topology::kBifpn: return "bifpn";
  }
  return "?";
}

namespace detail {

// Cell lists (stage, path) selected at stages >= 1. These encodings are
// fixed constants of this library; the *predicates* below are the
// behavioural contract.
inline std::vector<std::pair<int, int>> topology_cells(Topology t, int paths,
                                                       int stages) {
  std::vector<std::pair<int, int>> cells;
  const auto need = [&](int max_stage, const char* what) {
    if (max_stage > stages - 1) {
      throw std::invalid_argument(std::string(what) +
                                  " pattern does not fit within the stage count");
    }
  };
  switch (t) {
    case Topology::kLinear:
      break;
    case Topology::kUnet:
      // Descend to the coarsest path, then ascend back to path 0, one
      // single-block stage at a time.
      need(2 * paths - 2, "unet");
      for (int s = 1; s <= paths - 1; ++s) cells.emplace_back(s, s);
      for (int i = 1; i <= paths - 1; ++i) {
        cells.emplace_back(paths - 1 + i, paths - 1 - i);
      }
      break;
    case Topology::kFpn:
      // One top-down pass: exactly one block per path, coarsest first.
      need(paths, "fpn");
      for (int i = 0; i < paths; ++i) cells.emplace_back(1 + i, paths - 1 - i);
      break;
    case Topology::kPanet:
    case Topology::kBifpn:
      // Top-down pass plus a second bottom-up pass. The bifpn variant of
      // the pattern differs from panet only by an extra cross-scale edge
      // that mask space cannot express, so both share this cell list.
      need(2 * paths - 1, "panet");
      for (int i = 0; i < paths; ++i) cells.emplace_back(1 + i, paths - 1 - i);
      for (int i = 1; i <= paths - 1; ++i) cells.emplace_back(paths + i, i);
      break;
  }
  return cells;
}

// Selected (stage, path) cells at stages >= 1, sorted by stage.
inline std::vector<std::pair<int, int>> selected_upper_cells(
    const SupernetGrid& grid, const MaskBits& full) {
  grid.validate_mask(full);
  std::vector<std::pair<int, int>> cells;
  for (int s = 1; s < grid.stages(); ++s) {
    for (int p = 0; p < grid.paths(); ++p) {
      if (full[static_cast<std::size_t>(grid.block_index(s, p))]) {
        cells.emplace_back(s, p);
      }
    }
  }
  return cells;
}

// True when `cells` holds exactly one block per stage for the contiguous
// stage range [1, 1 + cells.size()).
inline bool one_block_per_stage_from_one(
    const std::vector<std::pair<int, int>>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].first != static_cast<int>(i) + 1) return false;
  }
  return true;
}

}  // namespace detail

// Emits the full mask (stage-0 blocks selected) for a canonical topology.
// Throws when the pattern does not fit in `stages`.
inline MaskBits canonical_mask(const SupernetGrid& grid, Topology t) {
  const auto cells = detail::topology_cells(t, grid.paths(), grid.stages());
  MaskBits full(static_cast<std::size_t>(grid.num_blocks()), 0);
  for (int p = 0; p < grid.paths(); ++p) full[static_cast<std::size_t>(p)] = 1;
  for (const auto& [s, p] : cells) {
    full[static_cast<std::size_t>(grid.block_index(s, p))] = 1;
  }
  return full;
}

// Structural predicates — the behavioural contract for canonical masks.

// No stage>=1 block selected: the graph is just the stage-0 backbone.
inline bool is_linear_topology(const SupernetGrid& grid, const MaskBits& full) {
  return detail::selected_upper_cells(grid, full).empty();
}

// Single-block stages whose path indices rise to the coarsest path and then
// decrease monotonically down to path 0 (read stage by stage from the
// bottleneck, resolution only increases).
inline bool is_unet_topology(const SupernetGrid& grid, const MaskBits& full) {
  const auto cells = detail::selected_upper_cells(grid, full);
  const int P = grid.paths();
  if (static_cast<int>(cells.size()) != 2 * (P - 1)) return false;
  if (!detail::one_block_per_stage_from_one(cells)) return false;
  int peak = -1;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].second == P - 1) { peak = static_cast<int>(i); break; }
  }
  if (peak < 0) return false;
  for (int i = 1; i <= peak; ++i) {
    if (cells[i].second <= cells[i - 1].second) return false;
  }
  for (std::size_t i = peak + 1; i < cells.size(); ++i) {
    if (cells[i].second >= cells[i - 1].second) return false;
  }
  return cells.back().second == 0;
}

// Exactly one block per path after stage 0, visited coarsest-to-finest
// (the top-down pass).
inline bool is_fpn_topology(const SupernetGrid& grid, const MaskBits& full) {
  const auto cells = detail::selected_upper_cells(grid, full);
  const int P = grid.paths();
  if (static_cast<int>(cells.size()) != P) return false;
  if (!detail::one_block_per_stage_from_one(cells)) return false;
  for (int i = 0; i < P; ++i) {
    if (cells[static_cast<std::size_t>(i)].second != P - 1 - i) return false;
  }
  return true;
}

// Top-down pass followed by a bottom-up pass over paths 1..P-1.
inline bool is_panet_topology(const SupernetGrid& grid, const MaskBits& full) {
  const auto cells = detail::selected_upper_cells(grid, full);
  const int P = grid.paths();
  if (static_cast<int>(cells.size()) != 2 * P - 1) return false;
  if (!detail::one_block_per_stage_from_one(cells)) return false;
  for (int i = 0; i < P; ++i) {
    if (cells[static_cast<std::size_t>(i)].second != P - 1 - i) return false;
  }
  for (int i = 1; i <= P - 1; ++i) {
    if (cells[static_cast<std::size_t>(P - 1 + i)].second != i) return false;
  }
  return true;
}

// Mask space cannot express the extra cross-scale edge that separates the
// two bidirectional patterns, so the predicate coincides with panet.
inline bool is_bifpn_topology(const SupernetGrid& grid, const MaskBits& full) {
  return is_panet_topology(grid, full);
}

inline bool matches_topology(const SupernetGrid& grid, const MaskBits& full,
                             Topology t) {
  switch (t) {
    case Topology::kLinear: return is_linear_topology(grid, full);
    case Topology::kUnet: return is_unet_topology(grid, full);
    case Topology::kFpn: return is_fpn_topology(grid, full);
    case Topology::kPanet: return is_panet_topology(grid, full);
    case Topology::kBifpn: return is_bifpn_topology(grid, full);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Mask file format: first non-comment line is the mask, one character per
// block in stage-major-then-path order. Lines starting with '#' are
// metadata and ignored by readers.

inline void write_mask_file(const std::string& path, const MaskBits& mask,
                            const std::string& comment = "") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open mask file for writing: " + path);
  out << mask_to_string(mask) << "\n";
  if (!comment.empty()) out << "# " << comment << "\n";
}

inline MaskBits read_mask_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mask file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    return mask_from_string(line);
  }
  throw std::runtime_error("mask file has no mask line: " + path);
}

}  // namespace gridnas
