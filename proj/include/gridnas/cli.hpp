#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gridnas/config.hpp"
#include "gridnas/costmodel.hpp"
#include "gridnas/search.hpp"
#include "gridnas/supergrid.hpp"
#include "gridnas/validate.hpp"

namespace gridnas {

// Exit codes: 0 success, 1 check failure, 2 configuration/usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfigError = 2;

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string artifact_tag(const Experiment& ex) {
  return "config_hash=" + ex.hash + " seed=" + std::to_string(ex.search.seed);
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// search: run the configured algorithm and export masks, metrics,
// distribution snapshots, and a machine-readable summary. Outputs embed
// the config hash and seed, and depend on nothing else, so re-running an
// identical configuration reproduces them byte for byte.

inline int cmd_search(Experiment& ex, const std::filesystem::path& out_dir,
                      std::ostream& out) {
  std::filesystem::create_directories(out_dir);
  SearchDriver driver(*ex.grid, *ex.backend, ex.search);
  const RunResult res = driver.run();
  const std::string tag = detail::artifact_tag(ex);
  const auto names = ex.backend->task_names();
  const auto costs = ex.grid->costs();

  {
    std::string lines = "# " + tag + "\n# step task loss_raw loss_norm forwards backwards\n";
    for (const auto& m : res.metrics) {
      lines += std::to_string(m.step) + " " + std::to_string(m.task) + " " +
               detail::fmt(m.loss_raw) + " " + detail::fmt(m.loss_norm) + " " +
               std::to_string(m.forwards) + " " + std::to_string(m.backwards) + "\n";
    }
    detail::write_text_file(out_dir / "metrics.log", lines);
  }
  {
    std::string lines = "# " + tag + "\n# step task p_0 .. p_{B-1}\n";
    for (const auto& s : res.snapshots) {
      lines += std::to_string(s.step) + " " + std::to_string(s.task);
      for (double p : s.probs) lines += " " + detail::fmt(p);
      lines += "\n";
    }
    detail::write_text_file(out_dir / "pi_snapshots.log", lines);
  }

  nlohmann::json summary;
  summary["config_hash"] = ex.hash;
  summary["seed"] = ex.search.seed;
  summary["algorithm"] = ex.search.algorithm;
  summary["workers"] = ex.search.workers;
  summary["total_steps"] = ex.search.total_steps;
  summary["totals"] = {{"forwards", res.totals.forwards},
                       {"backwards", res.totals.backwards}};
  summary["tasks"] = nlohmann::json::array();
  for (std::size_t t = 0; t < res.final_masks.size(); ++t) {
    const MaskBits& mask = res.final_masks[t];
    const std::string mask_file = "mask_task" + std::to_string(t) + ".txt";
    const std::string probs_file = "pi_task" + std::to_string(t) + ".txt";
    write_mask_file((out_dir / mask_file).string(), mask,
                    tag + " task=" + names[t]);
    write_probs_file((out_dir / probs_file).string(),
                     driver.state().pi[t], tag + " task=" + names[t]);
    summary["tasks"].push_back(
        {{"name", names[t]},
         {"mask", mask_to_string(mask)},
         {"mask_file", mask_file},
         {"final_loss", res.final_losses[t]},
         {"arch_cost", arch_cost(mask, costs)},
         {"relative_cost", relative_cost(mask, costs)}});
  }
  detail::write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");

  out << "search complete: " << res.final_masks.size() << " task(s), "
      << ex.search.total_steps << " steps\n";
  for (std::size_t t = 0; t < res.final_masks.size(); ++t) {
    out << "  " << names[t] << ": mask " << mask_to_string(res.final_masks[t])
        << " loss " << res.final_losses[t] << "\n";
  }
  out << "  totals: forwards " << res.totals.forwards << ", backwards "
      << res.totals.backwards << "\n";
  out << "  artifacts in " << out_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// validate: run the estimator self-checks and report pass/fail per check
// with measured error against its tolerance.

inline int cmd_validate(const Experiment& ex, std::ostream& out) {
  const ValidationReport rep = run_validation(ex);
  int passed = 0;
  for (const auto& c : rep.checks) {
    out << (c.passed ? "[ PASS ] " : "[ FAIL ] ") << c.name;
    if (c.tolerance > 0.0) {
      out << " (error " << c.error << ", tolerance " << c.tolerance << ")";
    }
    if (!c.detail.empty()) out << " — " << c.detail;
    out << "\n";
    passed += c.passed;
  }
  out << "validation: " << passed << "/" << rep.checks.size()
      << " checks passed (config " << ex.hash << ", seed " << ex.search.seed
      << ")\n";
  return rep.all_passed() ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// cost: price a mask against a grid, or evaluate the standalone
// block/detector cost formulas.

inline int cmd_cost_mask(const SupernetGrid& grid, const MaskBits& mask_in,
                         double lambda, double target, std::ostream& out) {
  MaskBits mask = mask_in;
  if (mask.size() == static_cast<std::size_t>(grid.num_searchable()) &&
      grid.num_searchable() != grid.num_blocks()) {
    mask = grid.expand_mask(mask);
  }
  grid.validate_mask(mask);
  const auto costs = grid.costs();
  double fixed = 0.0;
  if (!grid.searchable_stage0()) {
    for (int p = 0; p < grid.paths(); ++p) {
      fixed += grid.block(0, p).cost;
    }
  }
  const double total = total_cost(costs);
  const double selected = arch_cost(mask, costs);
  out << "mask: " << mask_to_string(mask) << "\n";
  out << "blocks: " << grid.num_blocks() << " (searchable " << grid.num_searchable()
      << ")\n";
  out << "total_cost: " << detail::fmt(total) << "\n";
  out << "arch_cost: " << detail::fmt(selected) << "\n";
  out << "fixed_stage0_cost: " << detail::fmt(fixed) << "\n";
  out << "searchable_cost: " << detail::fmt(selected - fixed) << "\n";
  out << "relative_cost: " << detail::fmt(relative_cost(mask, costs)) << "\n";
  out << "cost_reg(lambda=" << lambda << ", target=" << target
      << "): " << detail::fmt(cost_reg(mask, costs, lambda, target)) << "\n";
  return kExitOk;
}

inline int cmd_cost_irb(const IrbSpec& spec, std::ostream& out) {
  const double expand = static_cast<double>(spec.height) * spec.width * spec.c_in *
                        (spec.expansion * spec.c_in);
  const double dw = static_cast<double>(spec.height / spec.stride) *
                    (spec.width / spec.stride) * (spec.expansion * spec.c_in) *
                    spec.kernel * spec.kernel;
  const double project = static_cast<double>(spec.height / spec.stride) *
                         (spec.width / spec.stride) * (spec.expansion * spec.c_in) *
                         spec.c_out;
  out << "expand: " << detail::fmt(expand) << "\n";
  out << "depthwise: " << detail::fmt(dw) << "\n";
  out << "project: " << detail::fmt(project) << "\n";
  out << "total_macs: " << detail::fmt(irb_flops(spec)) << "\n";
  return kExitOk;
}

inline int cmd_cost_avg_flops(double bb, double rpn, double roi, double ratio,
                              std::ostream& out) {
  out << "average_flops: " << detail::fmt(average_flops(bb, rpn, roi, ratio))
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// topology: emit a canonical mask (and its pruned-graph edge count) for a
// named connection pattern on a given grid size.

inline int cmd_topology(int paths, int stages, const std::string& name,
                        bool searchable_stage0,
                        const std::optional<std::filesystem::path>& out_file,
                        std::ostream& out) {
  std::vector<int> channels(static_cast<std::size_t>(paths), 8);
  std::vector<int> divisors(static_cast<std::size_t>(paths));
  for (int p = 0; p < paths; ++p) divisors[static_cast<std::size_t>(p)] = 1 << p;
  const SupernetGrid grid = SupernetGrid::uniform(
      paths, stages, searchable_stage0, channels, divisors,
      std::vector<double>(static_cast<std::size_t>(paths), 1.0));
  const Topology topo = topology_from_string(name);
  const MaskBits mask = canonical_mask(grid, topo);
  const PrunedGraph pruned = apply_mask(grid, mask);
  out << "topology: " << topology_name(topo) << "\n";
  out << "mask: " << mask_to_string(mask) << "\n";
  out << "active_blocks: " << pruned.active_blocks.size() << "\n";
  out << "fusion_edges: " << pruned.fusion_edges.size() << "\n";
  out << "matches_predicate: " << (matches_topology(grid, mask, topo) ? "yes" : "no")
      << "\n";
  if (out_file) {
    write_mask_file(out_file->string(), mask,
                    "topology=" + topology_name(topo) + " paths=" +
                        std::to_string(paths) + " stages=" + std::to_string(stages));
    out << "wrote " << out_file->string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument parsing. Flags override config fields *before* the experiment
// is assembled, so the config hash embedded in artifacts always reflects
// the effective configuration.

inline int run_cli(const std::vector<std::string>& args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"one-run multitask architecture search over a grid supernet"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed_flag;
  std::optional<int> algorithm_flag;
  std::optional<int> workers_flag;

  auto* search_cmd = app.add_subcommand("search", "run the configured search");
  search_cmd->add_option("--config", config_path, "experiment config (JSON)")
      ->required();
  search_cmd->add_option("--out", out_dir, "output directory");
  search_cmd->add_option("--seed", seed_flag, "override search.seed");
  search_cmd->add_option("--algorithm", algorithm_flag, "override search.algorithm");
  search_cmd->add_option("--workers", workers_flag, "override search.workers");

  bool unsigned_score = false;
  auto* validate_cmd =
      app.add_subcommand("validate", "run estimator self-checks");
  validate_cmd->add_option("--config", config_path, "experiment config (JSON)")
      ->required();
  validate_cmd->add_option("--seed", seed_flag, "override search.seed");
  validate_cmd->add_flag("--unsigned-score", unsigned_score,
                         "use the magnitude-only score variant (demonstrates "
                         "the broken zero-mean identity)");

  std::string mask_path;
  double lambda = 1.0;
  double target = 0.5;
  std::vector<long> irb_vals;
  std::vector<double> avg_vals;
  auto* cost_cmd = app.add_subcommand("cost", "price masks and blocks");
  cost_cmd->add_option("--config", config_path, "grid or experiment config (JSON)");
  cost_cmd->add_option("--mask", mask_path, "mask file to price");
  cost_cmd->add_option("--lambda", lambda, "cost penalty weight");
  cost_cmd->add_option("--target", target, "relative cost target");
  cost_cmd->add_option("--irb", irb_vals,
                       "block MACs: height width c_in c_out expansion kernel stride")
      ->expected(7);
  cost_cmd->add_option("--avg-flops", avg_vals,
                       "detector average: backbone rpn roi ratio")
      ->expected(4);

  int paths = 4;
  int stages = 7;
  std::string topo_name;
  std::string topo_out;
  bool topo_s0 = false;
  auto* topo_cmd = app.add_subcommand("topology", "emit canonical masks");
  topo_cmd->add_option("--paths", paths, "grid paths");
  topo_cmd->add_option("--stages", stages, "grid stages");
  topo_cmd->add_option("--name", topo_name, "linear|unet|fpn|panet|bifpn")
      ->required();
  topo_cmd->add_option("--out", topo_out, "write the mask to this file");
  topo_cmd->add_flag("--searchable-stage0", topo_s0,
                     "make stage-0 blocks searchable");

  // CLI11 parses argv-style reversed vectors.
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    auto load_with_overrides = [&]() {
      nlohmann::json j = load_json_file(config_path);
      if (!j.is_object()) throw ConfigError("config root must be a JSON object");
      if (seed_flag) j["search"]["seed"] = *seed_flag;
      if (algorithm_flag) j["search"]["algorithm"] = *algorithm_flag;
      if (workers_flag) j["search"]["workers"] = *workers_flag;
      if (unsigned_score) j["search"]["signed_score"] = false;
      return build_experiment(j, std::filesystem::path(config_path).parent_path());
    };

    if (search_cmd->parsed()) {
      Experiment ex = load_with_overrides();
      return cmd_search(ex, out_dir, out);
    }
    if (validate_cmd->parsed()) {
      const Experiment ex = load_with_overrides();
      return cmd_validate(ex, out);
    }
    if (cost_cmd->parsed()) {
      if (!irb_vals.empty()) {
        IrbSpec spec;
        spec.height = static_cast<int>(irb_vals[0]);
        spec.width = static_cast<int>(irb_vals[1]);
        spec.c_in = static_cast<int>(irb_vals[2]);
        spec.c_out = static_cast<int>(irb_vals[3]);
        spec.expansion = static_cast<int>(irb_vals[4]);
        spec.kernel = static_cast<int>(irb_vals[5]);
        spec.stride = static_cast<int>(irb_vals[6]);
        return cmd_cost_irb(spec, out);
      }
      if (!avg_vals.empty()) {
        return cmd_cost_avg_flops(avg_vals[0], avg_vals[1], avg_vals[2],
                                  avg_vals[3], out);
      }
      if (config_path.empty() || mask_path.empty()) {
        throw ConfigError("cost needs --config and --mask (or --irb / --avg-flops)");
      }
      nlohmann::json j = load_json_file(config_path);
      const nlohmann::json grid_j =
          j.is_object() && j.contains("grid") ? j.at("grid") : j;
      const SupernetGrid grid = grid_from_json(
          grid_j, std::filesystem::path(config_path).parent_path());
      return cmd_cost_mask(grid, read_mask_file(mask_path), lambda, target, out);
    }
    if (topo_cmd->parsed()) {
      std::optional<std::filesystem::path> out_file;
      if (!topo_out.empty()) out_file = topo_out;
      return cmd_topology(paths, stages, topo_name, topo_s0, out_file, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}

inline int run_cli_argv(int argc, char** argv, std::ostream& out,
                        std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace gridnas
