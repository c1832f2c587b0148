// Copyright 2026 The zsclab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Criteria 8 and 9 train real runs and take
// several minutes each.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "synthetic.hpp"
#include "zsc/diversity.hpp"
#include "zsc/evalkit.hpp"
#include "zsc/holdout.hpp"
#include "zsc/pipeline.hpp"
#include "zsc/ppo.hpp"

using namespace zsc;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ActionId random_action(Rng& rng) { return ActionId{uniform_int(rng, 0, kNumActions - 1)}; }

Verdict reward_accounting() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  long episodes = 0;
  for (Task task : {Task::kSetTable, Task::kTidyHouse, Task::kPrepareGroceries}) {
    Rng rng(1);
    for (int ep = 0; ep < 1000; ++ep) {
      const auto env = Environment::create(task, train_layout_seed(1, ep), WorldConfig{});
      auto [state, obs] = env.reset(static_cast<std::uint64_t>(ep));
      double total = 0.0;
      int events = 0;
      while (!state.done) {
        const auto out = env.step_joint(state, {random_action(rng), random_action(rng)});
        total += out.reward;
        events += static_cast<int>(out.events.size());
      }
      const double expected = 10.0 * state.success + 0.5 * events - 0.01 * state.tick;
      worst = std::max(worst, std::abs(total - expected));
      ++episodes;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0,
          std::to_string(episodes) + " episodes, max |error| " + fmt("%.3g", worst) + ", " +
              fmt("%.1f s", secs)};
}

// PPO surrogate + value + entropy on a small policy, plus alpha times the
// discriminator cross-entropy (the negated diversity term) on a small
// discriminator, checked jointly over both parameter vectors.
Verdict gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0.0;
  Eigen::Index params = 0;
  const double alpha = 0.5;
  for (int trial = 0; trial < 10; ++trial) {
    PolicyShape s;
    s.obs_dim = 3;
    s.latent_dim = 2;
    s.hidden = 6;
    s.recurrent = 4;
    s.num_actions = 5;
    s.heads = 2;
    const auto p = init_policy<double>(s, rng, 0.8);
    const DiscriminatorShape ds{3, 6, 2};
    const auto d = init_discriminator<double>(ds, rng);
    const Eigen::Index np = p.values.size(), nd = d.values.size();
    params = np + nd;
    const int n = 6;
    const Mat<double> x = Mat<double>::Random(s.input_dim(), n);
    const Mat<double> h = Mat<double>::Random(s.recurrent, n) * 0.5;
    const Mat<double> windows = Mat<double>::Random(ds.input_dim(), n);
    std::vector<int> actions(n), labels(n);
    Eigen::VectorXd lp(n), adv(n), ret(n);
    const Mat<double> logp = log_softmax(forward_batch<double>(p, x, h, 1).logits);
    for (int j = 0; j < n; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      actions[sj] = uniform_int(rng, 0, s.num_actions - 1);
      labels[sj] = uniform_int(rng, 0, ds.num_latents - 1);
      // Ratios stay clear of the clip boundary, where the loss has a kink.
      lp[j] = logp(actions[sj], j) + (uniform01(rng) < 0.5 ? 0.05 : 0.6);
      adv[j] = uniform01(rng) * 2 - 1;
      ret[j] = uniform01(rng) * 2 - 1;
    }
    const LossFn loss = [&](const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
      PolicyParams<double> q = p;
      q.values = v.head(np);
      DiscriminatorParams<double> e = d;
      e.values = v.tail(nd);
      Vec<double> gp = Vec<double>::Zero(np), gd = Vec<double>::Zero(nd);
      const double a = ppo_loss<double>(q, x, h, actions, lp, adv, ret, 1, 0.2, 0.5, 0.01, n,
                                        grad ? &gp : nullptr);
      const double b = disc_cross_entropy<double>(e, windows, labels, grad ? &gd : nullptr);
      if (grad) {
        grad->resize(v.size());
        *grad << gp, alpha * gd;
      }
      return a + alpha * b;
    };
    Eigen::VectorXd v(params);
    v << p.values, d.values;
    worst = std::max(worst, finite_diff_check(v, loss, 1e-6));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && params <= 500 && secs < 30.0,
          "10 trials, " + std::to_string(params) + " params, max rel error " +
              fmt("%.3g", worst) + ", " + fmt("%.1f s", secs)};
}

Verdict gae_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(3);
  double worst = 0.0;
  int terminals = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 50;
    Eigen::VectorXd r(n), v(n);
    std::vector<bool> done(n);
    for (int t = 0; t < n; ++t) {
      r[t] = uniform01(rng) * 2 - 1;
      v[t] = uniform01(rng) * 4 - 2;
      done[static_cast<std::size_t>(t)] = uniform01(rng) < 0.1;
      terminals += done[static_cast<std::size_t>(t)];
    }
    const double boot = uniform01(rng) * 2 - 1, g = 0.99, lam = 0.95;
    const auto adv = compute_gae(r, v, done, boot, g, lam).first;
    for (int t = 0; t < n; ++t) {
      double a = 0.0, coef = 1.0;
      for (int k = t; k < n; ++k) {
        const double next = k + 1 < n ? v[k + 1] : boot;
        const bool end = done[static_cast<std::size_t>(k)];
        a += coef * (r[k] + (end ? 0.0 : g * next) - v[k]);
        if (end) break;
        coef *= g * lam;
      }
      worst = std::max(worst, std::abs(a - adv[t]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && terminals > 0 && secs < 1.0,
          "100 sequences, " + std::to_string(terminals) + " terminals, max |error| " +
              fmt("%.3g", worst) + ", " + fmt("%.2f s", secs)};
}

Eigen::VectorXd random_dist(int n, Rng& rng) {
  Eigen::VectorXd p(n);
  for (int i = 0; i < n; ++i) p[i] = -std::log(1.0 - uniform01(rng));
  return p / p.sum();
}

Verdict jsd_properties() {
  Rng rng(4);
  double identical = 0.0, below = 0.0, above = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = uniform_int(rng, 2, 6);
    const auto same = random_dist(kNumActions, rng);
    identical = std::max(identical,
                         std::abs(trajedi_jsd(std::vector<Eigen::VectorXd>(
                             static_cast<std::size_t>(k), same))));
    std::vector<Eigen::VectorXd> ds;
    for (int i = 0; i < k; ++i) {
      auto p = random_dist(kNumActions, rng);
      // Some inputs are sharp, to push towards the upper bound.
      if (trial % 3 == 0) p = (p.array() * 40.0).exp().matrix(), p /= p.sum();
      ds.push_back(p);
    }
    const double j = trajedi_jsd(ds);
    below = std::max(below, -j);
    above = std::max(above, j - std::log(static_cast<double>(k)));
  }
  Eigen::VectorXd a = Eigen::VectorXd::Zero(3), b = Eigen::VectorXd::Zero(3);
  a[0] = 1.0;
  b[2] = 1.0;
  const double disjoint = std::abs(trajedi_jsd({a, b}) - std::log(2.0));
  const bool pass = identical <= 1e-9 && below <= 1e-12 && above <= 1e-12 && disjoint <= 1e-9;
  return {pass, "identical " + fmt("%.2g", identical) + ", bound excess " +
                    fmt("%.2g", std::max(below, above)) + ", disjoint error " +
                    fmt("%.2g", disjoint)};
}

Verdict discriminator_behavior() {
  const auto t0 = std::chrono::steady_clock::now();
  const DiscriminatorShape shape;  // window 40, hidden 128, K = 4
  const int k = shape.num_latents;
  DiscUpdateConfig cfg;
  Mat<Real> x;
  std::vector<int> y;

  Rng rng(5);
  auto sep = init_discriminator<Real>(shape, rng);
  AdamState<Real> adam;
  DiscBuffer buffer(shape.input_dim());
  testing::fill_walks(buffer, 20000, k, shape.window, false, rng);
  testing::walk_batch(2000, k, shape.window, false, rng, x, y);
  int reached = -1;
  double acc = 0.0;
  for (int u = 1; u <= 2000 && reached < 0; ++u) {
    disc_update(sep, adam, buffer, cfg, rng);
    if (u % 50 == 0) {
      acc = disc_accuracy(sep, x, y);
      if (acc >= 0.95) reached = u;
    }
  }

  auto shuf = init_discriminator<Real>(shape, rng);
  AdamState<Real> adam2;
  DiscBuffer noise(shape.input_dim());
  testing::fill_walks(noise, 20000, k, shape.window, true, rng);
  for (int u = 0; u < 2000; ++u) disc_update(shuf, adam2, noise, cfg, rng);
  testing::walk_batch(4000, k, shape.window, true, rng, x, y);
  const double chance = disc_accuracy(shuf, x, y);

  DiscBuffer fifo(3, 100000);
  for (int i = 0; i < 100005; ++i) fifo.push(Eigen::VectorXd::Constant(3, i), i % k);
  const bool fifo_ok = DiscBuffer(3).capacity() == 100000 && fifo.size() == 100000 &&
                       fifo.window(0)[0] == 5.0f && fifo.window(99999)[0] == 100004.0f;

  // The gate: zero for every tick below 10% of the horizon, live from there.
  bool gate_ok = true;
  const auto win = testing::latent_walk(0, k, shape.window, rng);
  for (int horizon : {15, 50, 200, 333, 750}) {
    const int gate = diversity_gate(horizon);
    gate_ok = gate_ok && gate == static_cast<int>(std::ceil(0.1 * horizon));
    for (int t = 0; t < gate; ++t) gate_ok = gate_ok && diversity_reward(sep, win, 1, t, horizon) == 0.0;
    gate_ok = gate_ok && diversity_reward(sep, win, 1, gate, horizon) != 0.0;
  }

  const double secs = seconds_since(t0);
  const bool pass = reached > 0 && std::abs(chance - 1.0 / k) <= 0.05 && fifo_ok && gate_ok &&
                    secs < 120.0;
  return {pass, "95% at update " + (reached > 0 ? std::to_string(reached) : "never") +
                    ", shuffled accuracy " + fmt("%.3f", chance) + ", fifo " +
                    (fifo_ok ? "ok" : "BAD") + ", gate " + (gate_ok ? "ok" : "BAD") + ", " +
                    fmt("%.1f s", secs)};
}

int run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_command(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Verdict determinism(const fs::path& scratch) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = scratch / "determinism";
  fs::remove_all(root);
  std::vector<fs::path> dirs;
  for (const char* name : {"a", "b"}) {
    const std::vector<std::string> args = {
        "train", "--algo", "bdp", "--seed", "17", "--out", (root / name).string(),
        "--set", "run.stage1_ticks=2000", "--set", "run.stage2_ticks=2000", "--deterministic"};
    if (run_cli(args) != 0) return {false, "train exited non-zero"};
    dirs.push_back(root / name / "bdp_tidy_house_s17");
  }
  std::set<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
    const auto rel = fs::relative(e.path(), dirs[0]).generic_string();
    if (e.is_regular_file() && (rel.find("_final.ckpt") != std::string::npos ||
                                rel.rfind("logs/", 0) == 0))
      files.insert(rel);
  }
  int differ = 0;
  for (const auto& f : files)
    if (!fs::exists(dirs[1] / f) || slurp(dirs[0] / f) != slurp(dirs[1] / f)) ++differ;
  const double secs = seconds_since(t0);
  return {files.size() >= 5 && differ == 0 && secs < 120.0,
          std::to_string(files.size()) + " files compared, " + std::to_string(differ) +
              " differ, " + fmt("%.1f s", secs)};
}

// Plays until `want` collision-free episodes; returns (successes, attempts).
std::pair<int, int> scripted_runs(ScriptedRole a, ScriptedRole b, int want) {
  int ok = 0, clean = 0, attempts = 0;
  Rng rng(7);
  while (clean < want && attempts < 20 * want) {
    const auto env =
        Environment::create(Task::kTidyHouse, eval_layout_seed(7, attempts), WorldConfig{});
    ScriptedController ca(a), cb(b);
    const auto r = run_episode(env, ca, cb, static_cast<std::uint64_t>(attempts), rng);
    ++attempts;
    if (r.collision) continue;
    ++clean;
    ok += r.success;
  }
  return {clean == want ? ok : -1, attempts};
}

Verdict scripted_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto [pair_ok, pair_tries] = scripted_runs(ScriptedRole::kObject0, ScriptedRole::kObject1, 100);
  const auto [solo_ok, solo_tries] = scripted_runs(ScriptedRole::kFullTask, ScriptedRole::kNoOp, 100);
  const double secs = seconds_since(t0);
  return {pair_ok == 100 && solo_ok == 100 && secs < 30.0,
          "complementary pair " + std::to_string(pair_ok) + "/100 (" + std::to_string(pair_tries) +
              " episodes played), full task + no-op " + std::to_string(solo_ok) + "/100 (" +
              std::to_string(solo_tries) + " played), " + fmt("%.1f s", secs)};
}

RunConfig desk_run(Algo algo, std::uint64_t seed, const fs::path& out) {
  RunConfig cfg;
  cfg.algo = algo;
  cfg.task = Task::kTidyHouse;
  cfg.seed = seed;
  cfg.world.width = cfg.world.height = 7;
  cfg.stage1_ticks = 2'000'000;
  cfg.stage2 = false;
  cfg.population.size = 4;
  cfg.disc.num_latents = 4;
  cfg.deterministic = true;
  cfg.out = out;
  return cfg;
}

Verdict learning_smoke(const fs::path& scratch) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = scratch / "learning";
  fs::remove_all(root);
  std::string detail;
  bool pass = true;
  double sum = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto cfg = desk_run(Algo::kGtCoord, seed, root);
    const auto r = run_training(cfg);
    const double s = r.stage1.final_success;
    sum += s;
    pass = pass && s >= 0.70;
    detail += "seed " + std::to_string(seed) + " " + fmt("%.3f", s) + ", ";
  }
  const double secs = seconds_since(t0);
  return {pass && secs <= 1200.0,
          detail + "mean " + fmt("%.3f", sum / 3) + " (need >= 0.70 per seed at 2M ticks), " +
              fmt("%.0f s", secs)};
}

Verdict diversity_direction(const fs::path& scratch) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = scratch / "diversity";
  fs::remove_all(root);
  const auto cfg = desk_run(Algo::kBdp, 1, root);
  const auto r = run_training(cfg);
  const double acc = heldout_disc_accuracy(cfg, r.stage1, 100'000);
  const auto rates = latent_event_rates(cfg, r.stage1, 200);
  double tv = 0.0;
  for (std::size_t a = 0; a < rates.size(); ++a)
    for (std::size_t b = a + 1; b < rates.size(); ++b) tv = std::max(tv, event_rate_tv(rates[a], rates[b]));
  const double secs = seconds_since(t0);
  return {acc >= 0.5 && tv >= 0.2 && secs <= 1800.0,
          "held-out accuracy " + fmt("%.3f", acc) + " (need >= 0.5), max latent TV " +
              fmt("%.3f", tv) + " (need >= 0.2), " + fmt("%.0f s", secs)};
}

Verdict metric_arithmetic(const fs::path& scratch) {
  const bool gains = efficiency_gain(100.0, 80.0) == 20.0 && efficiency_gain(70.0, 70.0) == 0.0 &&
                     efficiency_gain(100.0, 113.0) == -13.0;
  const auto rec = [](const std::string& id, const std::string& kind, int s, int n) {
    PartnerRecord r;
    r.partner = id;
    r.kind = kind;
    r.successes = s;
    r.episodes = n;
    r.success_rate = static_cast<double>(s) / n;
    return r;
  };
  EvalReport report;
  report.method = "bdp";
  report.zsc = {rec("scripted_noop", "scripted", 45, 50), rec("scripted_object0", "scripted", 5, 10),
                rec("learned_s101_a0", "learned", 30, 100)};
  const double pooled = *EvalReport::pooled_success(report.zsc);
  const bool pooled_ok = std::abs(pooled - 80.0 / 160.0) < 1e-12;
  const fs::path out = scratch / "metrics";
  fs::remove_all(out);
  emit_report({report}, {}, out);
  const std::string csv = slurp(out / "summary.csv");
  const bool split = csv.find("zsc_scripted,zsc_learned") != std::string::npos &&
                     csv.find("bdp,missing,0.5000,0.8333,0.3000,") != std::string::npos;
  return {gains && pooled_ok && split,
          std::string("gains ") + (gains ? "exact" : "WRONG") + ", pooled " + fmt("%.4f", pooled) +
              ", summary split " + (split ? "present" : "MISSING")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  fs::path scratch = fs::temp_directory_path() / "zsc_acceptance";
  std::vector<int> only;
  app.add_option("--scratch", scratch, "Directory for training runs");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(scratch);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"reward accounting", reward_accounting},
      {"gradient correctness", gradient_check},
      {"advantage oracle", gae_oracle},
      {"divergence properties", jsd_properties},
      {"discriminator behavior", discriminator_behavior},
      {"determinism", [&] { return determinism(scratch); }},
      {"scripted environment oracle", scripted_oracle},
      {"learning smoke", [&] { return learning_smoke(scratch); }},
      {"diversity direction", [&] { return diversity_direction(scratch); }},
      {"metric arithmetic", [&] { return metric_arithmetic(scratch); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first
              << "): " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
