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

#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "zsc/checkpoint.hpp"
#include "zsc/evalkit.hpp"
#include "zsc/holdout.hpp"
#include "zsc/pipeline.hpp"

namespace zsc::cli {

namespace fs = std::filesystem;

namespace {

// Bad input that the user can fix (exit 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path default_out() {
  const char* env = std::getenv("ZSCLAB_OUT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

struct TrainArgs {
  std::string algo, task, config, out, name;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  int threads = 0;
  bool deterministic = false;
  bool resume = false;
};

RunConfig resolve_config(const TrainArgs& a) {
  Config c;
  if (!a.config.empty()) c = Config::load(a.config);
  if (!a.algo.empty()) c.set("run.algo", a.algo);
  if (!a.task.empty()) c.set("run.task", a.task);
  if (a.seed) c.set("run.seed", std::to_string(*a.seed));
  if (!a.name.empty()) c.set("run.name", a.name);
  if (a.threads > 0) c.set("run.threads", std::to_string(a.threads));
  if (a.deterministic) c.set("run.deterministic", "true");
  for (const auto& o : a.overrides) c.apply_override(o);
  RunConfig cfg = run_config_from(c);
  cfg.out = a.out.empty() ? default_out() : fs::path(a.out);
  return cfg;
}

RunConfig load_run_config(const fs::path& run_dir) {
  const auto path = run_dir / "config.ini";
  if (!fs::exists(path)) throw UsageError(run_dir.string() + " is not a run directory (no config.ini)");
  RunConfig cfg = run_config_from(Config::load(path));
  cfg.out = run_dir.parent_path();
  return cfg;
}

std::shared_ptr<const PolicyParams<Real>> share(PolicyParams<Real> p) {
  return std::make_shared<const PolicyParams<Real>>(std::move(p));
}

// The agent evaluated for coordination: the stage-2 agent, or seat 0 of a
// jointly trained pair.
std::shared_ptr<const PolicyParams<Real>> coordination_policy(const fs::path& run_dir,
                                                              const RunConfig& cfg) {
  if (is_joint(cfg.algo)) return share(load_stage(run_dir, "stage1", 2).params[0]);
  return share(load_stage(run_dir, "stage2", 1).params[0]);
}

EvalSettings eval_settings(const RunConfig& cfg, int episodes, std::uint64_t eval_seed,
                           int threads) {
  EvalSettings s;
  s.task = cfg.task;
  s.world = cfg.world_config();
  s.episodes = episodes > 0 ? episodes : cfg.eval_episodes;
  s.seed = eval_seed;
  s.threads = threads > 0 ? threads : (cfg.deterministic ? 1 : cfg.threads);
  return s;
}

ControllerFactory policy_factory(std::shared_ptr<const PolicyParams<Real>> p, int member = 0,
                                 std::optional<int> latent = std::nullopt) {
  return [p, member, latent] { return std::make_unique<PolicyController>(p, member, latent); };
}

ControllerFactory holdout_factory(const HoldoutAgent& agent) {
  if (agent.kind == HoldoutAgent::Kind::kScripted) {
    const ScriptedRole role = agent.role;
    return [role] { return std::make_unique<ScriptedController>(role); };
  }
  return policy_factory(share(load_policy(agent.checkpoint)));
}

std::vector<HoldoutAgent> load_holdouts(const fs::path& registry, Task task) {
  if (!fs::exists(registry)) throw UsageError("holdout registry not found: " + registry.string());
  auto agents = read_registry(registry);
  std::vector<HoldoutAgent> out;
  for (auto& a : agents)
    if (a.task == task) out.push_back(std::move(a));
  if (out.empty())
    throw UsageError("registry " + registry.string() + " has no agents for task " +
                     std::string(task_name(task)));
  return out;
}

// Replaces the named part of <dir>/report.json (creating it if needed).
void merge_into_report(const fs::path& dir, const std::string& method,
                       const std::optional<std::vector<PartnerRecord>>& train_pop,
                       const std::optional<std::vector<PartnerRecord>>& zsc,
                       const std::optional<SubgoalMatrix>& matrix) {
  LoadedReport report;
  if (fs::exists(dir / "report.json")) report = load_report(dir / "report.json");
  EvalReport* target = nullptr;
  for (auto& r : report.reports)
    if (r.method == method) target = &r;
  if (!target) {
    report.reports.push_back(EvalReport{method, {}, {}});
    target = &report.reports.back();
  }
  if (train_pop) target->train_pop = *train_pop;
  if (zsc) target->zsc = *zsc;
  if (matrix) {
    auto it = std::find_if(report.matrices.begin(), report.matrices.end(),
                           [&](const SubgoalMatrix& m) { return m.name == matrix->name; });
    if (it != report.matrices.end())
      *it = *matrix;
    else
      report.matrices.push_back(*matrix);
  }
  emit_report(report.reports, report.matrices, dir);
}

void print_records(std::ostream& out, const std::vector<PartnerRecord>& records) {
  out << std::left << std::setw(24) << "partner" << std::setw(10) << "kind" << std::setw(10)
      << "success" << std::setw(10) << "collide" << "efficiency\n";
  for (const auto& r : records) {
    std::ostringstream eff;
    if (r.efficiency_gain)
      eff << std::fixed << std::setprecision(1) << *r.efficiency_gain << "%";
    else
      eff << "missing";
    out << std::left << std::setw(24) << r.partner << std::setw(10) << r.kind << std::setw(10)
        << std::fixed << std::setprecision(3) << r.success_rate << std::setw(10)
        << r.collision_rate << eff.str() << "\n";
  }
}

std::string method_name(const fs::path& run_dir) {
  return fs::absolute(run_dir).lexically_normal().filename().string();
}

// ---------------------------------------------------------------------------

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(a);
  const RunResult result = run_training(cfg, a.resume, &err);
  out << "run directory: " << cfg.run_dir().string() << "\n";
  out << "stage1 final success " << result.stage1.final_success << "\n";
  if (result.stage2) out << "stage2 final success " << result.stage2->final_success << "\n";
  return kExitOk;
}

int cmd_holdouts(const TrainArgs& base, const std::vector<std::uint64_t>& seeds,
                 std::ostream& out, std::ostream& err) {
  TrainArgs a = base;
  if (a.algo.empty()) a.algo = "gtcoord";
  const RunConfig probe = resolve_config(a);
  if (!is_joint(probe.algo))
    throw UsageError("holdout agents come from jointly trained pairs (gtcoord or gtcoord_state)");
  const fs::path root = probe.out / ("holdouts_" + std::string(task_name(probe.task)));
  std::vector<fs::path> runs;
  for (const auto seed : seeds) {
    TrainArgs s = a;
    s.seed = seed;
    s.name = "gt_s" + std::to_string(seed);
    s.out = root.string();
    RunConfig cfg = resolve_config(s);
    const bool done = fs::exists(cfg.run_dir() / "checkpoints" / "stage1" / "set1_final.ckpt");
    if (!done) run_training(cfg, a.resume || fs::exists(cfg.run_dir() / "config.ini"), &err);
    runs.push_back(cfg.run_dir());
  }
  auto agents = build_scripted_holdouts(probe.task);
  for (auto& l : build_learned_holdouts(probe.task, seeds, runs)) agents.push_back(std::move(l));
  const fs::path registry = root / "registry.txt";
  write_registry(registry, agents);
  out << "registry: " << registry.string() << " (" << agents.size() << " agents)\n";
  return kExitOk;
}

struct EvalArgs {
  std::string coord, holdouts, out, method;
  int episodes = 0;
  int threads = 0;
  std::uint64_t eval_seed = 7919;
  int log_episodes = 0;
};

fs::path eval_dir(const EvalArgs& a, const char* sub) {
  return a.out.empty() ? fs::path(a.coord) / sub : fs::path(a.out);
}

void log_episodes(const fs::path& dir, const std::string& partner_id, const RunConfig& cfg,
                  const ControllerFactory& coord, const ControllerFactory& partner, int count,
                  std::uint64_t eval_seed) {
  fs::create_directories(dir);
  Rng rng(mix_seed(eval_seed, 0x109));
  for (int i = 0; i < count; ++i) {
    const auto env = Environment::create(cfg.task, eval_layout_seed(eval_seed, i), cfg.world_config());
    const auto c = coord();
    const auto p = partner();
    const auto path = dir / (partner_id + "_" + std::to_string(i) + ".log");
    std::ofstream f(path);
    ReplayWriter writer(f, env, mix_seed(eval_seed, static_cast<std::uint64_t>(i)));
    run_episode(env, *c, *p, mix_seed(eval_seed, static_cast<std::uint64_t>(i)), rng, &writer);
    if (!f) throw std::runtime_error("cannot write " + path.string());
  }
}

int cmd_eval_zsc(const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(a.coord);
  const auto coord = policy_factory(coordination_policy(a.coord, cfg));
  const auto holdouts = load_holdouts(a.holdouts, cfg.task);
  const EvalSettings settings = eval_settings(cfg, a.episodes, a.eval_seed, a.threads);
  std::vector<PartnerRecord> records;
  const fs::path dir = eval_dir(a, "eval");
  for (const auto& h : holdouts) {
    const auto partner = holdout_factory(h);
    records.push_back(
        evaluate_pairing(coord, partner, h.id, std::string(kind_name(h.kind)), settings));
    if (a.log_episodes > 0)
      log_episodes(dir / "episodes", h.id, cfg, coord, partner, a.log_episodes, a.eval_seed);
  }
  const std::string method = a.method.empty() ? method_name(a.coord) : a.method;
  merge_into_report(dir, method, std::nullopt, records, subgoal_matrix("zsc_" + method, records));
  print_records(out, records);
  const auto pooled = EvalReport::pooled_success(records);
  out << "zsc success " << std::fixed << std::setprecision(4) << pooled.value_or(0.0) << "\n";
  out << "report: " << (dir / "report.json").string() << "\n";
  return kExitOk;
}

int cmd_eval_trainpop(const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(a.coord);
  const EvalSettings settings = eval_settings(cfg, a.episodes, a.eval_seed, a.threads);
  std::vector<PartnerRecord> records;
  const auto stage1 = load_stage(a.coord, "stage1", -1);
  if (is_joint(cfg.algo)) {
    const auto coord = policy_factory(share(stage1.params.at(0)));
    const auto partner = policy_factory(share(stage1.params.at(1)));
    records.push_back(evaluate_pairing(coord, partner, "trained_partner", "train", settings));
  } else {
    const auto coord = policy_factory(coordination_policy(a.coord, cfg));
    PopulationSpec spec = cfg.population;
    spec.algo = cfg.algo;
    const TrainerWiring wiring = wiring_for(spec);
    auto pop = std::make_shared<const std::vector<PolicyParams<Real>>>(stage1.params);
    for (int id = 0; id < wiring.members; ++id) {
      const Seat s = seat_for(wiring, *pop, id, false);
      // Alias into the shared population so the pointer stays valid.
      std::shared_ptr<const PolicyParams<Real>> p(pop, s.policy);
      records.push_back(evaluate_pairing(coord, policy_factory(p, s.member, s.latent),
                                         "member" + std::to_string(id), "train", settings));
    }
  }
  const std::string method = a.method.empty() ? method_name(a.coord) : a.method;
  merge_into_report(eval_dir(a, "eval"), method, records, std::nullopt, std::nullopt);
  print_records(out, records);
  out << "train-pop success " << std::fixed << std::setprecision(4)
      << EvalReport::pooled_success(records).value_or(0.0) << "\n";
  return kExitOk;
}

int cmd_analyze_subgoals(const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(a.coord);
  const auto coord = policy_factory(coordination_policy(a.coord, cfg));
  EvalSettings settings = eval_settings(cfg, a.episodes, a.eval_seed, a.threads);
  settings.efficiency = false;
  std::vector<PartnerRecord> records;
  for (const auto& h : load_holdouts(a.holdouts, cfg.task))
    records.push_back(evaluate_pairing(coord, holdout_factory(h), h.id,
                                       std::string(kind_name(h.kind)), settings));
  const std::string method = a.method.empty() ? method_name(a.coord) : a.method;
  const SubgoalMatrix m = subgoal_matrix("subgoals_" + method, records);
  const fs::path dir = eval_dir(a, "analysis");
  fs::create_directories(dir);
  std::ofstream svg(dir / ("heatmap_" + m.name + ".svg"));
  write_heatmap_svg(svg, m);
  if (!svg) throw std::runtime_error("cannot write heatmap in " + dir.string());

  std::ofstream csv(dir / ("subgoals_" + method + ".csv"));
  csv << "event";
  for (const auto& p : m.partners) csv << "," << p;
  csv << "\n";
  out << std::left << std::setw(20) << "event";
  for (const auto& p : m.partners) out << std::setw(22) << p;
  out << "\n";
  for (int e = 0; e < kNumEventIds; ++e) {
    csv << event_name(e);
    out << std::setw(20) << event_name(e);
    for (const auto& col : m.columns) {
      csv << "," << col[static_cast<std::size_t>(e)];
      out << std::setw(22) << std::fixed << std::setprecision(2) << col[static_cast<std::size_t>(e)];
    }
    csv << "\n";
    out << "\n";
  }
  out << "written to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_replay(const std::string& log_path, bool quiet, std::ostream& out) {
  std::ifstream in(log_path);
  if (!in) throw UsageError("cannot read episode log " + log_path);
  std::string header;
  std::getline(in, header);
  std::map<std::string, std::string> fields;
  {
    std::istringstream h(header);
    std::string tok;
    while (h >> tok) {
      const auto eq = tok.find('=');
      if (eq != std::string::npos) fields[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  const auto need = [&](const char* k) {
    auto it = fields.find(k);
    if (it == fields.end()) throw UsageError(log_path + ": header lacks " + k);
    return it->second;
  };
  if (header.rfind("# zsc-replay v1", 0) != 0) throw UsageError(log_path + ": not an episode log");
  const auto task = parse_task(need("task"));
  if (!task) throw UsageError(log_path + ": unknown task in header");
  WorldConfig world;
  world.width = std::stoi(need("width"));
  world.height = std::stoi(need("height"));
  world.horizon = std::stoi(need("horizon"));
  world.wall_segments = std::stoi(need("wall_segments"));
  const auto env = Environment::create(*task, std::stoull(need("layout_seed")), world);
  const std::uint64_t episode_seed = std::stoull(need("episode_seed"));

  auto [state, obs] = env.reset(episode_seed);
  std::ostringstream regenerated;
  ReplayWriter writer(regenerated, env, episode_seed);
  regenerated.str("");
  if (!quiet) out << render_ascii(state) << "\n";
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields_in(line);
    int tick = 0, x0, y0, x1, y1, a0, a1;
    if (!(fields_in >> tick >> x0 >> y0 >> x1 >> y1 >> a0 >> a1))
      throw UsageError(log_path + ":" + std::to_string(lineno) + ": malformed line");
    if (state.done)
      throw std::runtime_error(log_path + ":" + std::to_string(lineno) +
                               ": log continues after the episode ended");
    const auto outcome = env.step_joint(state, {ActionId{a0}, ActionId{a1}});
    regenerated.str("");
    writer.write(state, outcome);
    std::string expect = regenerated.str();
    if (!expect.empty() && expect.back() == '\n') expect.pop_back();
    if (expect != line)
      throw std::runtime_error(log_path + ":" + std::to_string(lineno) +
                               ": replay diverged\n  log:    " + line + "\n  replay: " + expect);
    if (!quiet) out << "> " << line << "\n" << render_ascii(state) << "\n";
  }
  out << "replay verified: " << state.tick << " ticks, "
      << (state.success ? "success" : (state.collision ? "collision" : "no success")) << "\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out_dir,
               std::ostream& out) {
  std::vector<EvalReport> reports;
  std::vector<SubgoalMatrix> matrices;
  for (const auto& r : runs) {
    fs::path path = r;
    if (fs::is_directory(path)) {
      if (fs::exists(path / "eval" / "report.json"))
        path = path / "eval" / "report.json";
      else
        path = path / "report.json";
    }
    if (!fs::exists(path)) throw UsageError("no evaluation report under " + r);
    auto loaded = load_report(path);
    for (auto& m : loaded.reports) reports.push_back(std::move(m));
    for (auto& m : loaded.matrices) matrices.push_back(std::move(m));
  }
  const fs::path dir = out_dir.empty() ? default_out() / "report" : fs::path(out_dir);
  emit_report(reports, matrices, dir);
  std::ifstream csv(dir / "summary.csv");
  out << csv.rdbuf();
  return kExitOk;
}

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--algo", a.algo, "Training method: " + algo_choices());
  cmd->add_option("--task", a.task, "set_table, tidy_house or prepare_groceries");
  cmd->add_option("--seed", a.seed, "Run seed");
  cmd->add_option("--config", a.config, "Config file (key = value with [section] headers)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", a.out, "Output root (default $ZSCLAB_OUT or ./runs)");
  cmd->add_option("--name", a.name, "Run directory name");
  cmd->add_option("--set", a.overrides, "Override a config key, e.g. --set ppo.lr=1e-4");
  cmd->add_option("--threads", a.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", a.deterministic, "Single-threaded, bit-reproducible run");
  cmd->add_flag("--resume", a.resume, "Continue an interrupted run");
}

void add_eval_options(CLI::App* cmd, EvalArgs& a, bool holdouts) {
  cmd->add_option("--episodes", a.episodes, "Episodes per partner (default from run config)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--threads", a.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--eval-seed", a.eval_seed, "Seed for evaluation layouts");
  cmd->add_option("--method", a.method, "Method label in reports (default run name)");
  cmd->add_option("--out", a.out, "Output directory");
  if (holdouts)
    cmd->add_option("--holdouts", a.holdouts, "Holdout registry file")->required();
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"zsclab: cooperative gridworld training and zero-shot coordination evaluation",
               "zsclab"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a method (stage 1, then stage 2)");
  add_train_options(train, train_args);

  TrainArgs holdout_args;
  std::vector<std::uint64_t> holdout_seeds{101, 102, 103, 104};
  auto* holdouts = app.add_subcommand("holdouts", "Train learned holdout pairs and write the registry");
  add_train_options(holdouts, holdout_args);
  holdouts->add_option("--seeds", holdout_seeds, "Seeds of the jointly trained pairs")
      ->delimiter(',');

  EvalArgs zsc_args;
  auto* eval_zsc = app.add_subcommand("eval-zsc", "Evaluate a coordination agent with holdout partners");
  eval_zsc->add_option("--coord", zsc_args.coord, "Run directory of the coordination agent")
      ->required();
  add_eval_options(eval_zsc, zsc_args, true);
  eval_zsc->add_option("--log-episodes", zsc_args.log_episodes,
                       "Write replay logs for the first N episodes per partner");

  EvalArgs pop_args;
  auto* eval_pop = app.add_subcommand("eval-trainpop", "Evaluate against the training population");
  eval_pop->add_option("--run,--coord", pop_args.coord, "Run directory")->required();
  add_eval_options(eval_pop, pop_args, false);

  EvalArgs sub_args;
  auto* analyze = app.add_subcommand("analyze-subgoals", "Per-partner sub-goal completion rates");
  analyze->add_option("--coord", sub_args.coord, "Run directory of the coordination agent")
      ->required();
  add_eval_options(analyze, sub_args, true);

  std::string episode_log;
  bool quiet = false;
  auto* replay = app.add_subcommand("replay", "Re-simulate and verify an episode log");
  replay->add_option("--episode-log", episode_log, "Episode log file")->required();
  replay->add_flag("--quiet", quiet, "Only verify, do not print frames");

  std::vector<std::string> report_runs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Merge evaluation reports into one summary");
  report->add_option("--runs", report_runs, "Run or evaluation directories")->required();
  report->add_option("--out", report_out, "Output directory (default $ZSCLAB_OUT/report)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_args, out, err);
    if (*holdouts) return cmd_holdouts(holdout_args, holdout_seeds, out, err);
    if (*eval_zsc) return cmd_eval_zsc(zsc_args, out);
    if (*eval_pop) return cmd_eval_trainpop(pop_args, out);
    if (*analyze) return cmd_analyze_subgoals(sub_args, out);
    if (*replay) return cmd_replay(episode_log, quiet, out);
    if (*report) return cmd_report(report_runs, report_out, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace zsc::cli
