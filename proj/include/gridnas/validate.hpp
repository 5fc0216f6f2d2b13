#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "gridnas/archdist.hpp"
#include "gridnas/config.hpp"
#include "gridnas/enumeration.hpp"
#include "gridnas/rng.hpp"
#include "gridnas/search.hpp"
#include "gridnas/supergrid.hpp"
#include "gridnas/tasks.hpp"

namespace gridnas {

// Self-contained consistency checks over the estimator stack, runnable
// against any experiment config. Each check re-derives its expected value
// by exhaustive enumeration (or exact arithmetic) at small bit counts, so
// a pass certifies the identity itself, not a recorded constant.

struct CheckResult {
  std::string name;
  bool passed = false;
  double error = 0.0;      // measured worst-case deviation
  double tolerance = 0.0;  // 0 for exact (integer/boolean) checks
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  std::set<std::string> covered;  // estimator operations exercised
  std::vector<std::string> required_coverage;

  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const CheckResult& c) { return c.passed; });
  }
};

namespace detail {

inline std::vector<double> random_probs(std::size_t bits, Rng& rng) {
  std::vector<double> p(bits);
  for (auto& v : p) v = rng.uniform(0.05, 0.95);
  return p;
}

inline CheckResult tolerance_check(std::string name, double err, double tol,
                                   std::string detail_text) {
  CheckResult c;
  c.name = std::move(name);
  c.error = err;
  c.tolerance = tol;
  c.passed = err <= tol;
  c.detail = std::move(detail_text);
  return c;
}

inline CheckResult exact_check(std::string name, bool ok, std::string detail_text) {
  CheckResult c;
  c.name = std::move(name);
  c.passed = ok;
  c.detail = std::move(detail_text);
  return c;
}

// Small analytic experiment used by the driver-level checks.
struct TinyExperiment {
  SupernetGrid grid;
  AnalyticBackend backend;

  TinyExperiment(int tasks, std::uint64_t seed, double lambda = 0.5)
      : grid(SupernetGrid::uniform(2, 2, false, {8, 8}, {1, 2}, {1.0, 1.0})),
        backend(grid, names(tasks), tables(tasks, seed),
                CostConfig{lambda, 0.5}) {}

  static std::vector<std::string> names(int tasks) {
    std::vector<std::string> out;
    for (int t = 0; t < tasks; ++t) out.push_back("t" + std::to_string(t));
    return out;
  }
  static std::vector<LossTable> tables(int tasks, std::uint64_t seed) {
    std::vector<LossTable> out;
    for (int t = 0; t < tasks; ++t) {
      out.push_back(random_table(2, seed + static_cast<std::uint64_t>(t), 0.0, 2.0));
    }
    return out;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------

inline ValidationReport run_validation(const Experiment& ex) {
  ValidationReport rep;
  rep.required_coverage = {"prob",        "sample",         "score",
                           "mixture_prob", "importance_weight", "self_normalize",
                           "step_alg1",   "step_alg2",      "step_alg3",
                           "step_alg4",   "loss_normalize", "sample_final"};
  Rng rng(derive_seed(ex.search.seed, 0xC0DE));
  char buf[160];

  if (ex.grid->num_searchable() > 12) {
    throw ConfigError("validation requires at most 12 searchable blocks");
  }

  // 1. Product densities sum to one over the whole mask space.
  {
    double worst = 0.0;
    for (std::size_t bits : {std::size_t{4}, std::size_t{8}, std::size_t{12}}) {
      for (int rep_i = 0; rep_i < 20; ++rep_i) {
        BernoulliDist d(detail::random_probs(bits, rng));
        double total = 0.0;
        for (std::size_t i = 0; i < (std::size_t{1} << bits); ++i) {
          total += d.prob(index_mask(i, bits));
        }
        worst = std::max(worst, std::abs(total - 1.0));
      }
    }
    rep.covered.insert("prob");
    std::snprintf(buf, sizeof buf, "max |sum p(a) - 1| = %.3g over 60 distributions",
                  worst);
    rep.checks.push_back(
        detail::tolerance_check("density_normalization", worst, 1e-12, buf));
  }

  // 2. The mixture proxy is itself a normalized distribution.
  {
    double worst = 0.0;
    const std::size_t bits = 6;
    for (int rep_i = 0; rep_i < 20; ++rep_i) {
      std::vector<BernoulliDist> comps;
      for (int t = 0; t < 3; ++t) comps.emplace_back(detail::random_probs(bits, rng));
      ProxyMixture q(comps);
      double total = 0.0;
      for (std::size_t i = 0; i < (std::size_t{1} << bits); ++i) {
        total += q.prob(index_mask(i, bits));
      }
      worst = std::max(worst, std::abs(total - 1.0));
    }
    rep.covered.insert("mixture_prob");
    std::snprintf(buf, sizeof buf, "max |sum q(a) - 1| = %.3g", worst);
    rep.checks.push_back(
        detail::tolerance_check("proxy_normalization", worst, 1e-12, buf));
  }

  // 3. Importance-weighted expectations under the proxy equal the
  //    per-task expectations (exhaustive, so exact up to rounding).
  {
    double worst = 0.0;
    for (int inst = 0; inst < 25; ++inst) {
      const std::size_t bits = 4 + static_cast<std::size_t>(rng.uniform_int(5));
      const int T = 2 + rng.uniform_int(3);
      std::vector<BernoulliDist> comps;
      for (int t = 0; t < T; ++t) comps.emplace_back(detail::random_probs(bits, rng));
      ProxyMixture q(comps);
      LossTable table = random_table(bits, rng.raw(), 0.0, 3.0);
      for (int t = 0; t < T; ++t) {
        double weighted = 0.0;
        double direct = 0.0;
        for (std::size_t i = 0; i < (std::size_t{1} << bits); ++i) {
          const MaskBits a = index_mask(i, bits);
          weighted += q.prob(a) * q.importance_weight(t, a) * table.value(a);
          direct += q.component(t).prob(a) * table.value(a);
        }
        worst = std::max(worst, std::abs(weighted - direct));
      }
    }
    rep.covered.insert("importance_weight");
    std::snprintf(buf, sizeof buf,
                  "max |E_q[gamma*loss] - E_p[loss]| = %.3g over 25 instances", worst);
    rep.checks.push_back(
        detail::tolerance_check("importance_unbiasedness", worst, 1e-10, buf));
  }

  // 4. Importance weights never exceed the task count.
  {
    double worst_excess = 0.0;
    const std::size_t bits = 6;
    for (int inst = 0; inst < 10; ++inst) {
      const int T = 2 + rng.uniform_int(4);
      std::vector<BernoulliDist> comps;
      for (int t = 0; t < T; ++t) comps.emplace_back(detail::random_probs(bits, rng));
      ProxyMixture q(comps);
      for (std::size_t i = 0; i < (std::size_t{1} << bits); ++i) {
        const MaskBits a = index_mask(i, bits);
        for (int t = 0; t < T; ++t) {
          worst_excess = std::max(
              worst_excess, q.importance_weight(t, a) - static_cast<double>(T));
        }
      }
    }
    std::snprintf(buf, sizeof buf, "max (gamma - T) = %.3g", worst_excess);
    rep.checks.push_back(
        detail::tolerance_check("importance_weight_bound", worst_excess, 1e-12, buf));
  }

  // 5. Self-normalized weights form a partition of unity.
  {
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      std::vector<double> raw(8);
      for (auto& r : raw) r = rng.uniform(0.01, 3.0);
      const auto c = self_normalize(raw);
      double total = 0.0;
      for (double v : c) total += v;
      worst = std::max(worst, std::abs(total - 1.0));
    }
    const auto frozen = self_normalize(std::vector<double>{3.0, 1.0});
    worst = std::max(worst, std::abs(frozen[0] - 0.75));
    worst = std::max(worst, std::abs(frozen[1] - 0.25));
    rep.covered.insert("self_normalize");
    std::snprintf(buf, sizeof buf, "max deviation %.3g (incl. frozen case 3,1)",
                  worst);
    rep.checks.push_back(
        detail::tolerance_check("self_normalize_partition", worst, 1e-12, buf));
  }

  // 6. The score function has zero mean under its own distribution —
  //    the identity that makes the score-function estimator unbiased.
  //    Running with signed_score=false demonstrates the broken
  //    magnitude-only variant: this check then fails by design.
  {
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
      const std::size_t bits = 1 + static_cast<std::size_t>(rng.uniform_int(8));
      BernoulliDist d(detail::random_probs(bits, rng));
      std::vector<double> mean(bits, 0.0);
      for (std::size_t i = 0; i < (std::size_t{1} << bits); ++i) {
        const MaskBits a = index_mask(i, bits);
        const double p = d.prob(a);
        const auto sc = d.score(a, ex.search.signed_score);
        for (std::size_t b = 0; b < bits; ++b) mean[b] += p * sc[b];
      }
      for (double m : mean) worst = std::max(worst, std::abs(m));
    }
    rep.covered.insert("score");
    std::snprintf(buf, sizeof buf, "max |E_p[score_b]| = %.3g (signed_score=%s)",
                  worst, ex.search.signed_score ? "true" : "false");
    rep.checks.push_back(
        detail::tolerance_check("expected_score_zero", worst, 1e-10, buf));
  }

  // 7. Score-function gradient identity: E_p[loss * score] equals the
  //    exact gradient of E_p[loss] in every coordinate.
  {
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      const std::size_t bits = 5;
      BernoulliDist d(detail::random_probs(bits, rng));
      LossTable table = random_table(bits, rng.raw(), -1.0, 2.0);
      const auto loss = [&](const MaskBits& a) { return table.value(a); };
      const auto grad = enumerate_grad_pi(d, loss);
      std::vector<double> est(bits, 0.0);
      for (std::size_t i = 0; i < (std::size_t{1} << bits); ++i) {
        const MaskBits a = index_mask(i, bits);
        const double w = d.prob(a) * table.value(a);
        const auto sc = d.score(a, true);
        for (std::size_t b = 0; b < bits; ++b) est[b] += w * sc[b];
      }
      for (std::size_t b = 0; b < bits; ++b) {
        worst = std::max(worst, std::abs(est[b] - grad[b]));
      }
    }
    std::snprintf(buf, sizeof buf, "max |E[l*score] - grad| = %.3g", worst);
    rep.checks.push_back(
        detail::tolerance_check("score_gradient_identity", worst, 1e-10, buf));
  }

  // 8. The straight-through update's expectation equals the exact
  //    gradient: discrete per-bit differences are the multilinear
  //    partials, so E_p[diff] = d E_p[loss] / d pi for any table.
  {
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
      const std::size_t bits = 5;
      BernoulliDist d(detail::random_probs(bits, rng));
      LossTable table = random_table(bits, rng.raw(), 0.0, 2.0);
      const auto loss = [&](const MaskBits& a) { return table.value(a); };
      const auto grad = enumerate_grad_pi(d, loss);
      std::vector<double> est(bits, 0.0);
      for (std::size_t i = 0; i < (std::size_t{1} << bits); ++i) {
        MaskBits a = index_mask(i, bits);
        const double p = d.prob(a);
        for (std::size_t b = 0; b < bits; ++b) {
          a[b] = 1;
          const double up = table.value(a);
          a[b] = 0;
          const double down = table.value(a);
          a[b] = index_mask(i, bits)[b];
          est[b] += p * (up - down);
        }
      }
      for (std::size_t b = 0; b < bits; ++b) {
        worst = std::max(worst, std::abs(est[b] - grad[b]));
      }
    }
    std::snprintf(buf, sizeof buf, "max |E[ste] - grad| = %.3g", worst);
    rep.checks.push_back(detail::tolerance_check(
        "ste_expected_update_is_gradient", worst, 1e-10, buf));
  }

  // 9. Cross-algorithm agreement, exact form: per-task sampling (alg 2),
  //    proxy-weighted straight-through (alg 3) and proxy-weighted
  //    score-function (alg 4) updates all have the same expectation —
  //    the true gradient — when loss/weight normalization is off.
  {
    double worst = 0.0;
    const std::size_t bits = 5;
    const int T = 3;
    std::vector<BernoulliDist> comps;
    std::vector<LossTable> tables;
    for (int t = 0; t < T; ++t) {
      comps.emplace_back(detail::random_probs(bits, rng));
      tables.push_back(random_table(bits, rng.raw(), 0.0, 2.0));
    }
    ProxyMixture q(comps);
    for (int t = 0; t < T; ++t) {
      const auto& table = tables[static_cast<std::size_t>(t)];
      const auto loss = [&](const MaskBits& a) { return table.value(a); };
      const auto grad = enumerate_grad_pi(comps[static_cast<std::size_t>(t)], loss);
      std::vector<double> alg2(bits, 0.0), alg3(bits, 0.0), alg4(bits, 0.0);
      for (std::size_t i = 0; i < (std::size_t{1} << bits); ++i) {
        MaskBits a = index_mask(i, bits);
        const double pt = comps[static_cast<std::size_t>(t)].prob(a);
        const double qa = q.prob(a);
        const double gamma = q.importance_weight(t, a);
        std::vector<double> diff(bits, 0.0);
        for (std::size_t b = 0; b < bits; ++b) {
          a[b] = 1;
          const double up = table.value(a);
          a[b] = 0;
          const double down = table.value(a);
          a[b] = index_mask(i, bits)[b];
          diff[b] = up - down;
        }
        const auto sc = comps[static_cast<std::size_t>(t)].score(a, true);
        for (std::size_t b = 0; b < bits; ++b) {
          alg2[b] += pt * diff[b];
          alg3[b] += qa * gamma * diff[b];
          alg4[b] += qa * gamma * table.value(a) * sc[b];
        }
      }
      for (std::size_t b = 0; b < bits; ++b) {
        worst = std::max(worst, std::abs(alg2[b] - grad[b]));
        worst = std::max(worst, std::abs(alg3[b] - grad[b]));
        worst = std::max(worst, std::abs(alg4[b] - grad[b]));
      }
    }
    std::snprintf(buf, sizeof buf,
                  "max deviation of any algorithm's expected update from the "
                  "gradient = %.3g",
                  worst);
    rep.checks.push_back(
        detail::tolerance_check("estimator_agreement_exact", worst, 1e-10, buf));
  }

  // 10. Per-iteration cost contract: forward/backward passes per worker
  //     per iteration are (1,1), (T,T), (1,T), (1,1) for algorithms 1-4.
  {
    bool ok = true;
    std::string detail_text;
    const int K = 3;
    const long steps = 2;
    for (int alg = 1; alg <= 4; ++alg) {
      for (int T : {1, 2, 3, 5}) {
        if (alg == 1 && T != 1) continue;
        detail::TinyExperiment tiny(T, 91 + static_cast<std::uint64_t>(alg));
        SearchConfig cfg;
        cfg.algorithm = alg;
        cfg.workers = K;
        cfg.total_steps = steps;
        cfg.warmup_steps = 0;
        cfg.snapshot_every = 0;
        cfg.seed = 17;
        SearchDriver driver(tiny.grid, tiny.backend, cfg);
        for (long s = 0; s < steps; ++s) driver.step();
        const std::uint64_t fwd_expect =
            static_cast<std::uint64_t>((alg == 2 ? T : 1) * K * steps);
        const std::uint64_t bwd_expect =
            static_cast<std::uint64_t>(((alg == 2 || alg == 3) ? T : 1) * K * steps);
        const auto& tot = driver.state().totals;
        if (tot.forwards != fwd_expect || tot.backwards != bwd_expect) {
          ok = false;
          detail_text += "alg " + std::to_string(alg) + " T=" + std::to_string(T) +
                         " got (" + std::to_string(tot.forwards) + "," +
                         std::to_string(tot.backwards) + "); ";
        }
        rep.covered.insert("step_alg" + std::to_string(alg));
      }
    }
    rep.covered.insert("sample");
    if (ok) detail_text = "(1,1)/(T,T)/(1,T)/(1,1) per worker-iteration, T in {1,2,3,5}";
    rep.checks.push_back(
        detail::exact_check("iteration_cost_contract", ok, detail_text));
  }

  // 11. Probabilities stay inside the clamp band under aggressive updates.
  {
    detail::TinyExperiment tiny(2, 311);
    SearchConfig cfg;
    cfg.algorithm = 3;
    cfg.workers = 2;
    cfg.total_steps = 20;
    cfg.warmup_steps = 0;
    cfg.lr = 50.0;
    cfg.lr_arch_ratio = 1.0;
    cfg.lr_decay_step = 1000;
    cfg.snapshot_every = 0;
    cfg.seed = 29;
    SearchDriver driver(tiny.grid, tiny.backend, cfg);
    for (long s = 0; s < cfg.total_steps; ++s) driver.step();
    double lo = 1.0, hi = 0.0;
    bool saturated = false;
    for (const auto& d : driver.state().pi) {
      for (double p : d.probs()) {
        lo = std::min(lo, p);
        hi = std::max(hi, p);
        if (p == kProbClamp || p == 1.0 - kProbClamp) saturated = true;
      }
    }
    const bool ok = lo >= kProbClamp && hi <= 1.0 - kProbClamp && saturated;
    std::snprintf(buf, sizeof buf,
                  "pi range [%.4g, %.4g], clamp band [%g, %g], saturation hit: %s",
                  lo, hi, kProbClamp, 1.0 - kProbClamp, saturated ? "yes" : "no");
    rep.checks.push_back(detail::exact_check("probability_clamp", ok, buf));
  }

  // 12. Architecture distributions are frozen before warmup_steps and the
  //     learning rate drops by exactly the decay factor at the decay step.
  {
    detail::TinyExperiment tiny(2, 427);
    SearchConfig cfg;
    cfg.algorithm = 4;
    cfg.workers = 2;
    cfg.total_steps = 8;
    cfg.warmup_steps = 4;
    cfg.lr_decay_step = 6;
    cfg.snapshot_every = 1;
    cfg.loss_normalize = false;
    cfg.seed = 5;
    SearchDriver driver(tiny.grid, tiny.backend, cfg);
    RunResult res = driver.run();
    bool frozen_ok = true;
    bool moved = false;
    for (const auto& snap : res.snapshots) {
      const bool at_init =
          std::all_of(snap.probs.begin(), snap.probs.end(),
                      [&](double p) { return p == cfg.init_prob; });
      if (snap.step <= cfg.warmup_steps && !at_init) frozen_ok = false;
      if (snap.step > cfg.warmup_steps && !at_init) moved = true;
    }
    const double ratio = lr_at(cfg, cfg.lr_decay_step - 1) / lr_at(cfg, cfg.lr_decay_step);
    const bool decay_ok = std::abs(ratio - 1.0 / cfg.lr_decay_factor) < 1e-12;
    rep.covered.insert("loss_normalize");
    std::snprintf(buf, sizeof buf,
                  "frozen through warmup: %s, moved after: %s, lr drop factor %.6g",
                  frozen_ok ? "yes" : "no", moved ? "yes" : "no", ratio);
    rep.checks.push_back(
        detail::exact_check("warmup_and_decay", frozen_ok && moved && decay_ok, buf));
  }

  // 13. The exported mask is the most probable one: deterministic
  //     rounding matches the enumerated argmax of the product density.
  {
    bool ok = true;
    for (int inst = 0; inst < 50; ++inst) {
      const std::size_t bits = 6;
      std::vector<double> p(bits);
      for (auto& v : p) {
        do {
          v = rng.uniform(0.05, 0.95);
        } while (std::abs(v - 0.5) < 0.05);  // keep the argmax unique
      }
      BernoulliDist d(p);
      const MaskBits rounded = sample_final(d);
      double best = -1.0;
      MaskBits best_mask;
      for (std::size_t i = 0; i < (std::size_t{1} << bits); ++i) {
        const MaskBits a = index_mask(i, bits);
        const double pr = d.prob(a);
        if (pr > best) {
          best = pr;
          best_mask = a;
        }
      }
      if (rounded != best_mask) ok = false;
    }
    rep.covered.insert("sample_final");
    rep.checks.push_back(detail::exact_check(
        "final_mask_most_probable", ok,
        "rounded marginals match the enumerated argmax on 50 instances"));
  }

  // Coverage: every estimator operation above must have been exercised.
  {
    std::string missing;
    for (const auto& op : rep.required_coverage) {
      if (!rep.covered.count(op)) missing += op + " ";
    }
    rep.checks.push_back(detail::exact_check(
        "estimator_coverage", missing.empty(),
        missing.empty() ? std::to_string(rep.required_coverage.size()) +
                              " operations exercised"
                        : "missing: " + missing));
  }

  return rep;
}

}  // namespace gridnas
