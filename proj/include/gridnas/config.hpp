#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gridnas/search.hpp"
#include "gridnas/supergrid.hpp"
#include "gridnas/tasks.hpp"
#include "gridnas/toymodel.hpp"

namespace gridnas {

// Raised for malformed or inconsistent experiment descriptions; the CLI
// maps it to exit code 2 (usage error) rather than 1 (check failure).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& j,
                                         const std::string& key,
                                         const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw ConfigError(where + ": missing required key '" + key + "'");
  }
  return j.at(key);
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("key '" + key + "' has the wrong type");
  }
}

template <typename T>
T get_req(const nlohmann::json& j, const std::string& key,
          const std::string& where) {
  try {
    return require_key(j, key, where).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": key '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

// FNV-1a over the canonical (sorted-key) serialization; embedded in every
// artifact so outputs can be traced back to the exact configuration.
inline std::string config_hash(const nlohmann::json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Grid: either {"file": "grid.json"} or an inline description with
// per-path channels/divisors and costs given per path or per block.

inline SupernetGrid grid_from_json(const nlohmann::json& spec,
                                   const std::filesystem::path& base_dir) {
  nlohmann::json j = spec;
  if (j.is_object() && j.contains("file")) {
    j = load_json_file(base_dir / j.at("file").get<std::string>());
  }
  const int paths = detail::get_req<int>(j, "paths", "grid");
  const int stages = detail::get_req<int>(j, "stages", "grid");
  const bool s0 = detail::get_or<bool>(j, "searchable_stage0", false);
  const auto channels =
      detail::get_req<std::vector<int>>(j, "path_channels", "grid");
  const auto divisors =
      detail::get_req<std::vector<int>>(j, "path_divisors", "grid");
  if (channels.size() != static_cast<std::size_t>(paths) ||
      divisors.size() != static_cast<std::size_t>(paths)) {
    throw ConfigError("grid: path_channels/path_divisors need one entry per path");
  }
  std::vector<double> block_costs;
  if (j.contains("block_costs")) {
    block_costs = detail::get_req<std::vector<double>>(j, "block_costs", "grid");
    if (block_costs.size() != static_cast<std::size_t>(paths * stages)) {
      throw ConfigError("grid: block_costs needs stages*paths entries");
    }
  } else {
    const auto path_costs = detail::get_or<std::vector<double>>(
        j, "path_costs", std::vector<double>(static_cast<std::size_t>(paths), 1.0));
    if (path_costs.size() != static_cast<std::size_t>(paths)) {
      throw ConfigError("grid: path_costs needs one entry per path");
    }
    block_costs.resize(static_cast<std::size_t>(paths * stages));
    for (int s = 0; s < stages; ++s) {
      for (int p = 0; p < paths; ++p) {
        block_costs[static_cast<std::size_t>(s * paths + p)] =
            path_costs[static_cast<std::size_t>(p)];
      }
    }
  }
  std::vector<BlockSpec> blocks;
  for (int s = 0; s < stages; ++s) {
    for (int p = 0; p < paths; ++p) {
      blocks.push_back(BlockSpec{s, p, channels[static_cast<std::size_t>(p)],
                                 divisors[static_cast<std::size_t>(p)],
                                 block_costs[static_cast<std::size_t>(s * paths + p)]});
    }
  }
  try {
    return SupernetGrid(paths, stages, s0, std::move(blocks));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Analytic loss tables. Masks in configs always address searchable bits.

inline LossTable table_from_json(const nlohmann::json& j, std::size_t bits,
                                 const std::filesystem::path& base_dir) {
  const std::string kind = detail::get_req<std::string>(j, "kind", "loss");
  try {
    if (kind == "hamming") {
      const MaskBits target =
          mask_from_string(detail::get_req<std::string>(j, "target", "loss"));
      if (target.size() != bits) {
        throw ConfigError("hamming target length must equal searchable bit count");
      }
      return hamming_table(target, detail::get_or<double>(j, "base", 0.0),
                           detail::get_or<double>(j, "scale", 1.0));
    }
    if (kind == "sum_bits") {
      return sum_bits_table(bits, detail::get_or<double>(j, "base", 0.0),
                            detail::get_or<double>(j, "scale", 1.0));
    }
    if (kind == "linear") {
      return linear_table(bits, detail::get_or<double>(j, "base", 0.0),
                          detail::get_req<std::vector<double>>(j, "coeffs", "loss"));
    }
    if (kind == "random") {
      return random_table(bits, detail::get_req<std::uint64_t>(j, "seed", "loss"),
                          detail::get_or<double>(j, "lo", 0.0),
                          detail::get_or<double>(j, "hi", 1.0));
    }
    if (kind == "table") {
      std::vector<std::pair<std::string, double>> entries;
      if (j.contains("file")) {
        const auto path = base_dir / j.at("file").get<std::string>();
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open table file: " + path.string());
        std::string mask;
        double value = 0.0;
        while (in >> mask) {
          if (mask[0] == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
          }
          if (!(in >> value)) throw ConfigError("table file: mask without value");
          entries.emplace_back(mask, value);
        }
      } else {
        const auto& ej = detail::require_key(j, "entries", "loss 'table'");
        if (ej.is_object()) {
          for (const auto& [mask, value] : ej.items()) {
            entries.emplace_back(mask, value.get<double>());
          }
        } else {
          for (const auto& e : ej) {
            entries.emplace_back(e.at(0).get<std::string>(),
                                 e.at(1).get<double>());
          }
        }
      }
      return LossTable::from_entries(bits, entries);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("loss '") + kind + "': " + e.what());
  }
  throw ConfigError("unknown loss kind: " + kind);
}

// ---------------------------------------------------------------------------
// Search and cost sections (all keys optional, defaults above).

inline SearchConfig search_from_json(const nlohmann::json& j) {
  SearchConfig c;
  c.algorithm = detail::get_or<int>(j, "algorithm", c.algorithm);
  c.total_steps = detail::get_or<long>(j, "total_steps", c.total_steps);
  c.lr_decay_step = detail::get_or<long>(j, "lr_decay_step", c.lr_decay_step);
  c.warmup_steps = detail::get_or<long>(j, "warmup_steps", c.warmup_steps);
  c.lr = detail::get_or<double>(j, "lr", c.lr);
  c.lr_decay_factor = detail::get_or<double>(j, "lr_decay_factor", c.lr_decay_factor);
  c.lr_arch_ratio = detail::get_or<double>(j, "lr_arch_ratio", c.lr_arch_ratio);
  c.momentum = detail::get_or<double>(j, "momentum", c.momentum);
  c.init_prob = detail::get_or<double>(j, "init_prob", c.init_prob);
  c.workers = detail::get_or<int>(j, "workers", c.workers);
  c.batch_size = detail::get_or<int>(j, "batch_size", c.batch_size);
  c.loss_window = detail::get_or<int>(j, "loss_window", c.loss_window);
  c.loss_normalize = detail::get_or<bool>(j, "loss_normalize", c.loss_normalize);
  c.self_normalize = detail::get_or<bool>(j, "self_normalize", c.self_normalize);
  c.signed_score = detail::get_or<bool>(j, "signed_score", c.signed_score);
  c.corrected_is_coeff =
      detail::get_or<bool>(j, "corrected_is_coeff", c.corrected_is_coeff);
  c.snapshot_every = detail::get_or<long>(j, "snapshot_every", c.snapshot_every);
  c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
  c.task_seeds = detail::get_or<std::vector<std::uint64_t>>(j, "task_seeds",
                                                            c.task_seeds);
  return c;
}

inline CostConfig cost_from_json(const nlohmann::json& j) {
  CostConfig c;
  c.lambda = detail::get_or<double>(j, "lambda", c.lambda);
  c.target = detail::get_or<double>(j, "target", c.target);
  return c;
}

// ---------------------------------------------------------------------------
// A fully assembled experiment. The grid lives on the heap so backend
// references stay valid when the experiment moves.

struct Experiment {
  std::unique_ptr<SupernetGrid> grid;
  std::unique_ptr<LossBackend> backend;
  SearchConfig search;
  CostConfig cost;
  std::string hash;
  nlohmann::json raw;
};

inline Experiment build_experiment(const nlohmann::json& j,
                                   const std::filesystem::path& base_dir) {
  Experiment ex;
  ex.raw = j;
  ex.hash = config_hash(j);
  ex.grid = std::make_unique<SupernetGrid>(
      grid_from_json(detail::require_key(j, "grid", "config"), base_dir));
  ex.search = search_from_json(detail::get_or<nlohmann::json>(
      j, "search", nlohmann::json::object()));
  ex.cost = cost_from_json(detail::get_or<nlohmann::json>(
      j, "cost", nlohmann::json::object()));

  const std::string backend =
      detail::get_or<std::string>(j, "backend", "analytic");
  const auto& tasks_j = detail::require_key(j, "tasks", "config");
  if (!tasks_j.is_array() || tasks_j.empty()) {
    throw ConfigError("config: 'tasks' must be a non-empty array");
  }
  std::vector<std::string> names;
  for (std::size_t t = 0; t < tasks_j.size(); ++t) {
    names.push_back(detail::get_or<std::string>(tasks_j[t], "name",
                                                "task" + std::to_string(t)));
  }
  const auto bits = static_cast<std::size_t>(ex.grid->num_searchable());
  if (backend == "analytic") {
    std::vector<LossTable> tables;
    for (const auto& tj : tasks_j) {
      tables.push_back(
          table_from_json(detail::require_key(tj, "loss", "task"), bits, base_dir));
    }
    ex.backend = std::make_unique<AnalyticBackend>(*ex.grid, std::move(names),
                                                   std::move(tables), ex.cost);
  } else if (backend == "differentiable") {
    std::vector<TeacherTask> teachers;
    for (const auto& tj : tasks_j) {
      TeacherTask tt;
      tt.head_path = detail::get_req<int>(tj, "head_path", "task");
      const MaskBits searchable = mask_from_string(
          detail::get_req<std::string>(tj, "teacher_mask", "task"));
      if (searchable.size() != bits) {
        throw ConfigError("teacher_mask length must equal searchable bit count");
      }
      tt.teacher_mask = ex.grid->expand_mask(searchable);
      teachers.push_back(std::move(tt));
    }
    const auto& dj = detail::get_or<nlohmann::json>(j, "dataset",
                                                    nlohmann::json::object());
    const int size = detail::get_or<int>(dj, "size", 256);
    const std::uint64_t dseed = detail::get_or<std::uint64_t>(dj, "seed", 7);
    const double gain = detail::get_or<double>(dj, "teacher_gain", 3.0);
    std::shared_ptr<const SyntheticDataset> data;
    try {
      data = std::make_shared<SyntheticDataset>(*ex.grid, teachers, size, dseed, gain);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("dataset: ") + e.what());
    }
    ex.backend = std::make_unique<DiffBackend>(*ex.grid, std::move(names),
                                               std::move(data), ex.cost);
  } else {
    throw ConfigError("unknown backend: " + backend);
  }
  try {
    // Surface inconsistent search settings at build time, not mid-run.
    SearchDriver probe(*ex.grid, *ex.backend, ex.search);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("search: ") + e.what());
  }
  return ex;
}

inline Experiment load_experiment(const std::filesystem::path& config_path) {
  return build_experiment(load_json_file(config_path),
                          config_path.parent_path());
}

}  // namespace gridnas
