#include "gridnas/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gridnas/config.hpp"

namespace gridnas {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  ASSERT_TRUE(out) << path;
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  EXPECT_TRUE(in) << path;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Minimal single-task analytic experiment on a 2x2 grid (2 searchable bits).
nlohmann::json tiny_config() {
  return nlohmann::json{
      {"grid",
       {{"paths", 2},
        {"stages", 2},
        {"path_channels", {4, 4}},
        {"path_divisors", {1, 2}},
        {"path_costs", {1.0, 1.0}}}},
      {"backend", "analytic"},
      {"tasks",
       {{{"name", "solo"},
         {"loss",
          {{"kind", "hamming"}, {"target", "10"}, {"base", 1.0}, {"scale", 0.5}}}}}},
      {"cost", {{"lambda", 0.3}, {"target", 0.5}}},
      {"search",
       {{"algorithm", 4},
        {"total_steps", 6},
        {"lr_decay_step", 2},
        {"warmup_steps", 3},
        {"workers", 2},
        {"snapshot_every", 2},
        {"seed", 3}}}};
}

int cli(const std::vector<std::string>& args, std::string* stdout_text = nullptr,
        std::string* stderr_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (stdout_text) *stdout_text = out.str();
  if (stderr_text) *stderr_text = err.str();
  return code;
}

TEST(ConfigHash, CanonicalStableAndSensitive) {
  const auto a = nlohmann::json::parse(R"({"a": 1, "b": [2, 3]})");
  const auto b = nlohmann::json::parse(R"({"b": [2, 3], "a": 1})");
  const auto c = nlohmann::json::parse(R"({"a": 1, "b": [2, 4]})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 16u);
  EXPECT_EQ(config_hash(a).find_first_not_of("0123456789abcdef"), std::string::npos);
}

TEST(GridFromJson, InlinePerPathAndPerBlockCosts) {
  const fs::path dir = fresh_dir("grid_forms");
  const auto per_path = nlohmann::json{{"paths", 2},
                                       {"stages", 2},
                                       {"path_channels", {4, 8}},
                                       {"path_divisors", {1, 2}},
                                       {"path_costs", {0.5, 2.0}}};
  const SupernetGrid g1 = grid_from_json(per_path, dir);
  EXPECT_EQ(g1.paths(), 2);
  EXPECT_EQ(g1.stages(), 2);
  EXPECT_EQ(g1.num_searchable(), 2);
  EXPECT_DOUBLE_EQ(g1.block(0, 1).cost, 2.0);
  EXPECT_DOUBLE_EQ(g1.block(1, 0).cost, 0.5);
  EXPECT_EQ(g1.block(0, 1).channels, 8);

  auto per_block = per_path;
  per_block.erase("path_costs");
  per_block["block_costs"] = {0.1, 0.2, 0.3, 0.4};
  const SupernetGrid g2 = grid_from_json(per_block, dir);
  EXPECT_DOUBLE_EQ(g2.block(0, 0).cost, 0.1);
  EXPECT_DOUBLE_EQ(g2.block(1, 1).cost, 0.4);
}

TEST(GridFromJson, FileIndirectionResolvesAgainstTheConfigDirectory) {
  const fs::path dir = fresh_dir("grid_file");
  write_file(dir / "g.json",
             R"({"paths": 2, "stages": 3, "path_channels": [4, 6],
                 "path_divisors": [1, 2], "path_costs": [1.0, 1.5]})");
  const SupernetGrid g = grid_from_json(nlohmann::json{{"file", "g.json"}}, dir);
  EXPECT_EQ(g.stages(), 3);
  EXPECT_EQ(g.num_searchable(), 4);
  EXPECT_THROW(grid_from_json(nlohmann::json{{"file", "absent.json"}}, dir),
               ConfigError);
}

TEST(GridFromJson, MalformedDescriptionsAreConfigErrors) {
  const fs::path dir = fresh_dir("grid_bad");
  EXPECT_THROW(grid_from_json(nlohmann::json{{"stages", 2}}, dir), ConfigError);
  auto j = nlohmann::json{{"paths", 2},
                          {"stages", 2},
                          {"path_channels", {4}},
                          {"path_divisors", {1, 2}}};
  EXPECT_THROW(grid_from_json(j, dir), ConfigError);
  j["path_channels"] = {4, 8};
  j["block_costs"] = {1.0, 2.0, 3.0};  // needs 4 entries
  EXPECT_THROW(grid_from_json(j, dir), ConfigError);
  j.erase("block_costs");
  j["path_divisors"] = {2, 2};  // must strictly increase
  EXPECT_THROW(grid_from_json(j, dir), ConfigError);
}

TEST(TableFromJson, InlineEntriesAndFileForm) {
  const fs::path dir = fresh_dir("tables");
  // Entries may be given as an object keyed by mask...
  const auto inline_j = nlohmann::json{
      {"kind", "table"},
      {"entries", {{"00", 1.0}, {"01", 2.0}, {"10", 3.0}, {"11", 4.0}}}};
  ASSERT_TRUE(inline_j.at("entries").is_object());
  const LossTable t1 = table_from_json(inline_j, 2, dir);
  EXPECT_DOUBLE_EQ(t1.value(mask_from_string("10")), 3.0);

  // ...or as an array of [mask, value] pairs.
  auto pair_j = inline_j;
  pair_j["entries"] = nlohmann::json::array(
      {{"00", 1.0}, {"01", 2.0}, {"10", 3.0}, {"11", 4.0}});
  EXPECT_EQ(table_from_json(pair_j, 2, dir).values(), t1.values());

  write_file(dir / "t.txt", "# mask value\n00 1.0\n01 2.0\n10 3.0\n11 4.0\n");
  const LossTable t2 = table_from_json(
      nlohmann::json{{"kind", "table"}, {"file", "t.txt"}}, 2, dir);
  EXPECT_EQ(t1.values(), t2.values());

  EXPECT_THROW(table_from_json(nlohmann::json{{"kind", "mystery"}}, 2, dir),
               ConfigError);
  EXPECT_THROW(
      table_from_json(nlohmann::json{{"kind", "hamming"}, {"target", "101"}}, 2, dir),
      ConfigError);
  // Incomplete tables are rejected (mask "11" missing).
  EXPECT_THROW(table_from_json(
                   nlohmann::json{{"kind", "table"},
                                  {"entries", {{"00", 1.0}, {"01", 2.0}, {"10", 3.0}}}},
                   2, dir),
               ConfigError);
}

TEST(BuildExperiment, RejectsInconsistentConfigs) {
  const fs::path dir = fresh_dir("exp_bad");
  auto base = tiny_config();

  auto no_tasks = base;
  no_tasks["tasks"] = nlohmann::json::array();
  EXPECT_THROW(build_experiment(no_tasks, dir), ConfigError);

  auto bad_backend = base;
  bad_backend["backend"] = "quantum";
  EXPECT_THROW(build_experiment(bad_backend, dir), ConfigError);

  auto bad_alg = base;
  bad_alg["search"]["algorithm"] = 9;
  EXPECT_THROW(build_experiment(bad_alg, dir), ConfigError);

  auto bad_target = base;
  bad_target["tasks"][0]["loss"]["target"] = "1010";  // grid has 2 searchable bits
  EXPECT_THROW(build_experiment(bad_target, dir), ConfigError);

  auto diff_bad_mask = base;
  diff_bad_mask["backend"] = "differentiable";
  diff_bad_mask["tasks"] = {{{"name", "h"}, {"head_path", 0}, {"teacher_mask", "101"}}};
  EXPECT_THROW(build_experiment(diff_bad_mask, dir), ConfigError);
}

TEST(BuildExperiment, LoadsTheShippedDemoConfigs) {
  const Experiment analytic =
      load_experiment(fs::path(CONFIG_DIR) / "analytic_demo.json");
  EXPECT_EQ(analytic.grid->paths(), 4);
  EXPECT_EQ(analytic.grid->stages(), 3);
  EXPECT_EQ(analytic.grid->num_searchable(), 8);
  EXPECT_EQ(analytic.backend->num_tasks(), 3);
  EXPECT_EQ(analytic.backend->task_names(),
            (std::vector<std::string>{"alpha", "beta", "gamma"}));
  EXPECT_EQ(analytic.search.algorithm, 4);
  EXPECT_EQ(analytic.backend->num_weights(), 0u);

  const Experiment diff = load_experiment(fs::path(CONFIG_DIR) / "diff_demo.json");
  EXPECT_EQ(diff.backend->num_tasks(), 2);
  EXPECT_GT(diff.backend->num_weights(), 0u);
  EXPECT_EQ(diff.backend->dataset_size(), 128);

  // The shipped supernet description is a bare grid for the cost and
  // topology tools (too many searchable blocks for enumerated tables).
  const SupernetGrid supernet = grid_from_json(
      nlohmann::json{{"file", "supernet_a.json"}}, fs::path(CONFIG_DIR));
  EXPECT_EQ(supernet.paths(), 4);
  EXPECT_EQ(supernet.stages(), 7);
  EXPECT_EQ(supernet.num_searchable(), 24);
}

TEST(RunCli, SearchWritesTheFullArtifactSet) {
  const fs::path dir = fresh_dir("cli_search");
  const fs::path cfg = dir / "exp.json";
  write_file(cfg, tiny_config().dump(2));
  const fs::path out_dir = dir / "artifacts";

  std::string text;
  const int code = cli({"search", "--config", cfg.string(), "--out",
                        out_dir.string()},
                       &text);
  EXPECT_EQ(code, kExitOk);
  EXPECT_NE(text.find("search complete"), std::string::npos);

  for (const char* name : {"metrics.log", "pi_snapshots.log", "summary.json",
                           "mask_task0.txt", "pi_task0.txt"}) {
    EXPECT_TRUE(fs::exists(out_dir / name)) << name;
  }
  const auto summary = nlohmann::json::parse(read_file(out_dir / "summary.json"));
  EXPECT_EQ(summary.at("seed").get<std::uint64_t>(), 3u);
  EXPECT_EQ(summary.at("algorithm").get<int>(), 4);
  EXPECT_EQ(summary.at("tasks").size(), 1u);
  EXPECT_EQ(summary.at("tasks")[0].at("mask").get<std::string>().size(), 4u);
  // 6 steps x 2 workers, one forward and one backward each.
  EXPECT_EQ(summary.at("totals").at("forwards").get<std::uint64_t>(), 12u);
  EXPECT_EQ(summary.at("totals").at("backwards").get<std::uint64_t>(), 12u);
  // The metrics log carries the config hash tag.
  EXPECT_NE(read_file(out_dir / "metrics.log")
                .find(summary.at("config_hash").get<std::string>()),
            std::string::npos);
  // The exported mask file parses back to the summary's mask.
  EXPECT_EQ(mask_to_string(read_mask_file((out_dir / "mask_task0.txt").string())),
            summary.at("tasks")[0].at("mask").get<std::string>());
}

TEST(RunCli, FlagOverridesAreHashedIntoTheArtifacts) {
  const fs::path dir = fresh_dir("cli_override");
  const fs::path cfg = dir / "exp.json";
  write_file(cfg, tiny_config().dump(2));

  const fs::path out_a = dir / "a";
  const fs::path out_b = dir / "b";
  ASSERT_EQ(cli({"search", "--config", cfg.string(), "--out", out_a.string()}),
            kExitOk);
  ASSERT_EQ(cli({"search", "--config", cfg.string(), "--out", out_b.string(),
                 "--seed", "99", "--workers", "1"}),
            kExitOk);
  const auto sum_a = nlohmann::json::parse(read_file(out_a / "summary.json"));
  const auto sum_b = nlohmann::json::parse(read_file(out_b / "summary.json"));
  EXPECT_EQ(sum_b.at("seed").get<std::uint64_t>(), 99u);
  EXPECT_EQ(sum_b.at("workers").get<int>(), 1);
  EXPECT_NE(sum_a.at("config_hash").get<std::string>(),
            sum_b.at("config_hash").get<std::string>());
}

TEST(RunCli, ValidatePassesAndTheUnsignedVariantFailsOnlyTheZeroMeanCheck) {
  const fs::path dir = fresh_dir("cli_validate");
  const fs::path cfg = dir / "exp.json";
  write_file(cfg, tiny_config().dump(2));

  std::string text;
  EXPECT_EQ(cli({"validate", "--config", cfg.string()}, &text), kExitOk);
  EXPECT_EQ(text.find("[ FAIL ]"), std::string::npos);
  EXPECT_NE(text.find("checks passed"), std::string::npos);

  std::string broken;
  EXPECT_EQ(cli({"validate", "--config", cfg.string(), "--unsigned-score"},
                &broken),
            kExitCheckFailed);
  EXPECT_NE(broken.find("[ FAIL ] expected_score_zero"), std::string::npos);
  // Exactly one failing check: the deliberately broken identity.
  std::size_t fails = 0;
  for (std::size_t pos = broken.find("[ FAIL ]"); pos != std::string::npos;
       pos = broken.find("[ FAIL ]", pos + 1)) {
    ++fails;
  }
  EXPECT_EQ(fails, 1u);
}

TEST(RunCli, CostSubcommandPricesMasksAndFormulas) {
  const fs::path dir = fresh_dir("cli_cost");
  const fs::path cfg = dir / "exp.json";
  write_file(cfg, tiny_config().dump(2));
  const fs::path mask_path = dir / "m.txt";
  write_mask_file(mask_path.string(), mask_from_string("10"), "searchable form");

  std::string text;
  EXPECT_EQ(cli({"cost", "--config", cfg.string(), "--mask", mask_path.string()},
                &text),
            kExitOk);
  EXPECT_NE(text.find("mask: 1110"), std::string::npos);  // expanded over stage 0
  EXPECT_NE(text.find("arch_cost: 3"), std::string::npos);
  EXPECT_NE(text.find("relative_cost: 0.75"), std::string::npos);

  std::string irb;
  EXPECT_EQ(cli({"cost", "--irb", "8", "8", "16", "24", "4", "3", "2"}, &irb),
            kExitOk);
  EXPECT_NE(irb.find("total_macs: 99328"), std::string::npos);

  std::string avg;
  EXPECT_EQ(cli({"cost", "--avg-flops", "399", "152", "182", "1"}, &avg), kExitOk);
  EXPECT_NE(avg.find("average_flops: 733"), std::string::npos);

  EXPECT_EQ(cli({"cost"}), kExitConfigError);  // nothing to price
}

TEST(RunCli, TopologySubcommandEmitsCanonicalMasks) {
  std::string text;
  EXPECT_EQ(cli({"topology", "--name", "linear", "--paths", "4", "--stages", "3"},
                &text),
            kExitOk);
  EXPECT_NE(text.find("fusion_edges: 8"), std::string::npos);
  EXPECT_NE(text.find("matches_predicate: yes"), std::string::npos);

  const fs::path dir = fresh_dir("cli_topo");
  const fs::path mask_out = dir / "fpn.txt";
  EXPECT_EQ(cli({"topology", "--name", "fpn", "--paths", "4", "--stages", "7",
                 "--out", mask_out.string()}),
            kExitOk);
  const MaskBits mask = read_mask_file(mask_out.string());
  EXPECT_EQ(mask.size(), 28u);

  EXPECT_EQ(cli({"topology", "--name", "moebius"}), kExitConfigError);
}

TEST(RunCli, UsageAndConfigFailuresExitWithCodeTwo) {
  const fs::path dir = fresh_dir("cli_errors");
  EXPECT_EQ(cli({}), kExitConfigError);
  EXPECT_EQ(cli({"launch-the-missiles"}), kExitConfigError);
  EXPECT_EQ(cli({"search"}), kExitConfigError);  // missing --config
  EXPECT_EQ(cli({"search", "--config", (dir / "absent.json").string()}),
            kExitConfigError);

  const fs::path broken = dir / "broken.json";
  write_file(broken, "{ not json");
  EXPECT_EQ(cli({"search", "--config", broken.string()}), kExitConfigError);

  const fs::path incomplete = dir / "incomplete.json";
  write_file(incomplete, R"({"grid": {"paths": 2}})");
  EXPECT_EQ(cli({"validate", "--config", incomplete.string()}), kExitConfigError);

  std::string help;
  EXPECT_EQ(cli({"--help"}, &help), kExitOk);
  EXPECT_NE(help.find("search"), std::string::npos);
}

}  // namespace
}  // namespace gridnas
