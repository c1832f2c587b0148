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

#include "zsc/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "zsc/checkpoint.hpp"
#include "zsc/evalkit.hpp"
#include "zsc/holdout.hpp"

namespace zsc {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

std::filesystem::path RunConfig::run_dir() const {
  const std::string n = name.empty() ? std::string(algo_name(algo)) + "_" +
                                           std::string(task_name(task)) + "_s" +
                                           std::to_string(seed)
                                     : name;
  return out / n;
}

long RunConfig::updates_for(long ticks) const {
  const long per = static_cast<long>(ppo.envs_per_update) * ppo.ticks_per_update;
  return ticks <= 0 ? 0 : (ticks + per - 1) / per;
}

WorldConfig RunConfig::world_config() const {
  WorldConfig w = world;
  w.oracle_predicates = uses_oracle_state(algo);
  return w;
}

void RunConfig::validate() const {
  ppo.validate();
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what + " out of range");
  };
  require(world.width >= 5 && world.height >= 5, "world.width/height (min 5)");
  require(world.horizon > 0, "world.horizon");
  require(population.size > 0, "population.size");
  require(population.alpha >= 0, "population.alpha");
  require(population.jsd_alpha >= 0, "population.jsd_alpha");
  require(population.latent_resample_period > 0, "population.latent_resample_period");
  require(stage1_ticks >= 0 && stage2_ticks >= 0, "run.stage*_ticks");
  require(layout_pool > 0, "run.layout_pool");
  require(hidden > 0 && recurrent > 0, "policy.hidden/recurrent");
  require(disc.window > 0 && disc.hidden > 0, "discriminator.window/hidden");
  require(disc_batch > 0 && disc_steps >= 0 && disc_lr > 0, "discriminator batch/steps/lr");
  require(disc_eval_every > 0 && checkpoint_every > 0, "run.checkpoint_every / discriminator.eval_every");
  require(eval_episodes > 0, "run.eval_episodes");
  require(threads > 0, "run.threads");
}

std::set<std::string> known_config_keys() {
  return {"run.task",           "run.algo",          "run.seed",
          "run.name",           "run.stage1_ticks",  "run.stage2_ticks",
          "run.stage2",         "run.layout_pool",   "run.eval_episodes",
          "run.checkpoint_every", "run.threads",     "run.deterministic",
          "world.width",        "world.height",      "world.horizon",
          "world.wall_segments", "world.local_patch", "ppo.lr",
          "ppo.epochs",         "ppo.minibatches",   "ppo.clip",
          "ppo.entropy_coef",   "ppo.value_coef",    "ppo.gamma",
          "ppo.gae_lambda",     "ppo.grad_clip",     "ppo.envs_per_update",
          "ppo.ticks_per_update", "policy.hidden",   "policy.recurrent",
          "population.size",    "population.alpha",  "population.jsd_alpha",
          "population.latent_resample_period", "discriminator.window",
          "discriminator.hidden", "discriminator.batch", "discriminator.steps_per_update",
          "discriminator.lr",   "discriminator.eval_every"};
}

RunConfig run_config_from(const Config& c) {
  c.check_known(known_config_keys());
  RunConfig r;
  const std::string task = c.get_string("run.task", std::string(task_name(r.task)));
  const auto t = parse_task(task);
  if (!t)
    throw ConfigError("unknown task '" + task +
                      "' (choose from set_table, tidy_house, prepare_groceries)");
  r.task = *t;
  const std::string algo = c.get_string("run.algo", std::string(algo_name(r.algo)));
  const auto a = parse_algo(algo);
  if (!a) throw ConfigError("unknown algo '" + algo + "' (choose from " + algo_choices() + ")");
  r.algo = *a;
  const std::string seed = c.get_string("run.seed", "1");
  try {
    std::size_t used = 0;
    if (seed.empty() || !std::isdigit(static_cast<unsigned char>(seed[0])))
      throw std::invalid_argument(seed);
    r.seed = std::stoull(seed, &used);
    if (used != seed.size()) throw std::invalid_argument(seed);
  } catch (const std::exception&) {
    throw ConfigError("run.seed: expected a non-negative integer, got '" + seed + "'");
  }
  r.name = c.get_string("run.name", "");
  r.stage1_ticks = c.get_int("run.stage1_ticks", r.stage1_ticks);
  r.stage2_ticks = c.get_int("run.stage2_ticks", r.stage2_ticks);
  r.stage2 = c.get_bool("run.stage2", r.stage2);
  r.layout_pool = static_cast<int>(c.get_int("run.layout_pool", r.layout_pool));
  r.eval_episodes = static_cast<int>(c.get_int("run.eval_episodes", r.eval_episodes));
  r.checkpoint_every = static_cast<int>(c.get_int("run.checkpoint_every", r.checkpoint_every));
  r.threads = static_cast<int>(c.get_int("run.threads", r.threads));
  r.deterministic = c.get_bool("run.deterministic", r.deterministic);
  r.world.width = static_cast<int>(c.get_int("world.width", r.world.width));
  r.world.height = static_cast<int>(c.get_int("world.height", r.world.height));
  r.world.horizon = static_cast<int>(c.get_int("world.horizon", r.world.horizon));
  r.world.wall_segments = static_cast<int>(c.get_int("world.wall_segments", r.world.wall_segments));
  r.world.local_patch = c.get_bool("world.local_patch", r.world.local_patch);
  auto& p = r.ppo;
  p.lr = c.get_double("ppo.lr", p.lr);
  p.epochs = static_cast<int>(c.get_int("ppo.epochs", p.epochs));
  p.minibatches = static_cast<int>(c.get_int("ppo.minibatches", p.minibatches));
  p.clip = c.get_double("ppo.clip", p.clip);
  p.entropy_coef = c.get_double("ppo.entropy_coef", p.entropy_coef);
  p.value_coef = c.get_double("ppo.value_coef", p.value_coef);
  p.gamma = c.get_double("ppo.gamma", p.gamma);
  p.gae_lambda = c.get_double("ppo.gae_lambda", p.gae_lambda);
  p.grad_clip = c.get_double("ppo.grad_clip", p.grad_clip);
  p.envs_per_update = static_cast<int>(c.get_int("ppo.envs_per_update", p.envs_per_update));
  p.ticks_per_update = static_cast<int>(c.get_int("ppo.ticks_per_update", p.ticks_per_update));
  r.hidden = static_cast<int>(c.get_int("policy.hidden", r.hidden));
  r.recurrent = static_cast<int>(c.get_int("policy.recurrent", r.recurrent));
  auto& pop = r.population;
  pop.algo = r.algo;
  pop.size = static_cast<int>(c.get_int("population.size", pop.size));
  pop.alpha = c.get_double("population.alpha", pop.alpha);
  pop.jsd_alpha = c.get_double("population.jsd_alpha", pop.jsd_alpha);
  pop.latent_resample_period =
      static_cast<int>(c.get_int("population.latent_resample_period", pop.latent_resample_period));
  r.disc.window = static_cast<int>(c.get_int("discriminator.window", r.disc.window));
  r.disc.hidden = static_cast<int>(c.get_int("discriminator.hidden", r.disc.hidden));
  r.disc.num_latents = pop.size;
  r.disc_batch = static_cast<int>(c.get_int("discriminator.batch", r.disc_batch));
  r.disc_steps = static_cast<int>(c.get_int("discriminator.steps_per_update", r.disc_steps));
  r.disc_lr = c.get_double("discriminator.lr", r.disc_lr);
  r.disc_eval_every = static_cast<int>(c.get_int("discriminator.eval_every", r.disc_eval_every));
  r.validate();
  return r;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string flag(bool v) { return v ? "true" : "false"; }

}  // namespace

std::string config_text(const RunConfig& r) {
  std::ostringstream o;
  o << "[run]\n"
    << "task = " << task_name(r.task) << "\n"
    << "algo = " << algo_name(r.algo) << "\n"
    << "seed = " << r.seed << "\n";
  if (!r.name.empty()) o << "name = " << r.name << "\n";
  o << "stage1_ticks = " << r.stage1_ticks << "    # full scale: 100000000\n"
    << "stage2_ticks = " << r.stage2_ticks << "    # full scale: 100000000\n"
    << "stage2 = " << flag(r.stage2) << "\n"
    << "layout_pool = " << r.layout_pool << "\n"
    << "eval_episodes = " << r.eval_episodes << "    # full scale: 100\n"
    << "checkpoint_every = " << r.checkpoint_every << "\n"
    << "threads = " << r.threads << "\n"
    << "deterministic = " << flag(r.deterministic) << "\n\n"
    << "[world]\n"
    << "width = " << r.world.width << "\n"
    << "height = " << r.world.height << "\n"
    << "horizon = " << r.world.horizon << "\n"
    << "wall_segments = " << r.world.wall_segments << "\n"
    << "local_patch = " << flag(r.world.local_patch) << "\n\n"
    << "[ppo]\n"
    << "lr = " << num(r.ppo.lr) << "    # full scale: 0.0003\n"
    << "epochs = " << r.ppo.epochs << "    # full scale: 2\n"
    << "minibatches = " << r.ppo.minibatches << "    # full scale: 2\n"
    << "clip = " << num(r.ppo.clip) << "    # full scale: 0.2\n"
    << "entropy_coef = " << num(r.ppo.entropy_coef) << "    # full scale: 0.001\n"
    << "value_coef = " << num(r.ppo.value_coef) << "\n"
    << "gamma = " << num(r.ppo.gamma) << "    # full scale: 0.99\n"
    << "gae_lambda = " << num(r.ppo.gae_lambda) << "    # full scale: 0.95\n"
    << "grad_clip = " << num(r.ppo.grad_clip) << "    # full scale: 0.2\n"
    << "envs_per_update = " << r.ppo.envs_per_update << "\n"
    << "ticks_per_update = " << r.ppo.ticks_per_update << "\n\n"
    << "[policy]\n"
    << "hidden = " << r.hidden << "\n"
    << "recurrent = " << r.recurrent << "\n\n"
    << "[population]\n"
    << "size = " << r.population.size << "    # full scale: 8\n"
    << "alpha = " << num(r.population.alpha) << "    # full scale: 0.01\n"
    << "jsd_alpha = " << num(r.population.jsd_alpha) << "\n"
    << "latent_resample_period = " << r.population.latent_resample_period
    << "    # full scale: 10\n\n"
    << "[discriminator]\n"
    << "window = " << r.disc.window << "    # full scale: 40\n"
    << "hidden = " << r.disc.hidden << "    # full scale: 512\n"
    << "batch = " << r.disc_batch << "\n"
    << "steps_per_update = " << r.disc_steps << "\n"
    << "lr = " << num(r.disc_lr) << "    # full scale: 0.0003\n"
    << "eval_every = " << r.disc_eval_every << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Run directory

RunDirectory::RunDirectory(std::filesystem::path root, bool resume) : root_(std::move(root)) {
  fs::create_directories(root_);
  if (!resume && fs::exists(root_ / "config.ini"))
    throw std::runtime_error(root_.string() +
                             " already holds a run; pass --resume or choose another --out");
  lock_ = root_ / "run.lock";
  FILE* f = std::fopen(lock_.c_str(), "wx");
  if (!f)
    throw std::runtime_error("run directory " + root_.string() +
                             " is locked by another command (remove run.lock if stale)");
  std::fclose(f);
  fs::create_directories(root_ / "checkpoints");
  fs::create_directories(root_ / "logs");
}

RunDirectory::~RunDirectory() {
  std::error_code ec;
  fs::remove(lock_, ec);
}

void RunDirectory::write_manifest() const {
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root_)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root_).generic_string();
    if (rel == "manifest.txt" || rel == "run.lock") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  std::ofstream out(root_ / "manifest.txt");
  for (const auto& f : files) out << f << '\n';
  if (!out) throw std::runtime_error("cannot write manifest in " + root_.string());
}

// ---------------------------------------------------------------------------
// Training

std::vector<Environment> training_layouts(const RunConfig& cfg) {
  std::vector<Environment> pool;
  pool.reserve(static_cast<std::size_t>(cfg.layout_pool));
  const WorldConfig world = cfg.world_config();
  for (int i = 0; i < cfg.layout_pool; ++i)
    pool.push_back(Environment::create(cfg.task, train_layout_seed(cfg.seed, i), world));
  return pool;
}

namespace {

class CsvLog {
 public:
  // Append-only: a resumed stage adds rows and never rewrites old ones.
  CsvLog(const fs::path& path, const std::string& header)
      : out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open " + path.string());
    if (fs::file_size(path) == 0) out_ << header << '\n';
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::string cell(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

int obs_dim_for(const RunConfig& cfg) {
  return Environment::create(cfg.task, train_layout_seed(cfg.seed, 0), cfg.world_config())
      .observation_size();
}

PolicyShape shape_for(const RunConfig& cfg, const TrainerWiring& w, int obs_dim) {
  PolicyShape s;
  s.obs_dim = obs_dim;
  s.latent_dim = w.latent_dim;
  s.hidden = cfg.hidden;
  s.recurrent = cfg.recurrent;
  s.num_actions = kNumActions;
  s.cores = w.cores;
  s.heads = w.heads;
  return s;
}

fs::path final_path(const fs::path& stage_dir, int set) {
  return stage_dir / ("set" + std::to_string(set) + "_final.ckpt");
}

// One PPO stage: a set of learners, a per-update pairing choice and, for the
// diversity variants, a discriminator trained alongside.
class StageTrainer {
 public:
  StageTrainer(const RunConfig& cfg, const RunDirectory& dir, std::string stage,
               std::uint64_t tag, std::ostream* progress)
      : cfg_(cfg), dir_(dir), stage_(std::move(stage)), tag_(tag), progress_(progress) {}

  std::vector<PolicyParams<Real>> learners;
  std::optional<DiscriminatorParams<Real>> disc;
  std::function<void(long, Rng&)> choose;
  PairingFn pairing;
  RolloutHooks hooks;
  long updates = 0;

  StageArtifacts run(bool resume);

 private:
  void save_set_checkpoints(const std::string& suffix, long update, const Rng& rng) const;
  void save_resume(long update, const Rng& rng) const;
  [[noreturn]] void dump_nonfinite(long update, int learner, const std::string& what) const;

  const RunConfig& cfg_;
  const RunDirectory& dir_;
  std::string stage_;
  std::uint64_t tag_;
  std::ostream* progress_;
};

void StageTrainer::save_set_checkpoints(const std::string& suffix, long update,
                                        const Rng& rng) const {
  const fs::path stage_dir = dir_.root() / "checkpoints" / stage_;
  for (std::size_t i = 0; i < learners.size(); ++i)
    save_checkpoint(stage_dir / ("set" + std::to_string(i) + "_" + suffix + ".ckpt"),
                    policy_checkpoint(learners[i], update, rng));
}

void StageTrainer::save_resume(long update, const Rng& rng) const {
  const fs::path resume_dir = dir_.root() / "checkpoints" / "resume";
  fs::create_directories(resume_dir);
  for (std::size_t i = 0; i < learners.size(); ++i)
    save_checkpoint(resume_dir / (stage_ + "_set" + std::to_string(i) + ".ckpt"),
                    policy_checkpoint(learners[i], update, rng));
  if (disc)
    save_checkpoint(resume_dir / (stage_ + "_discriminator.ckpt"),
                    discriminator_checkpoint(*disc, update, rng));
}

void StageTrainer::dump_nonfinite(long update, int learner, const std::string& what) const {
  const fs::path dump = dir_.root() / "logs" / (stage_ + "_nonfinite.txt");
  std::ofstream out(dump);
  out << "stage " << stage_ << "\nupdate " << update << "\nlearner " << learner << "\nerror "
      << what << "\n";
  if (learner >= 0 && learner < static_cast<int>(learners.size())) {
    const auto& p = learners[static_cast<std::size_t>(learner)];
    for (const auto& l : p.layout.layers)
      out << "layer " << l.name << " norm " << p.matrix(l.name).norm() << " finite "
          << (p.matrix(l.name).allFinite() ? "yes" : "no") << "\n";
  }
  throw std::runtime_error("non-finite loss in " + stage_ + " at update " +
                           std::to_string(update) + ": " + what + " (details in " +
                           dump.string() + ")");
}

StageArtifacts StageTrainer::run(bool resume) {
  const fs::path stage_dir = dir_.root() / "checkpoints" / stage_;
  const fs::path resume_dir = dir_.root() / "checkpoints" / "resume";
  fs::create_directories(stage_dir);
  StageArtifacts art;
  art.stage = stage_;
  art.dir = stage_dir;
  art.log = dir_.root() / "logs" / (stage_ + ".csv");
  art.updates = updates;
  art.ticks = updates * cfg_.ppo.envs_per_update * cfg_.ppo.ticks_per_update;
  for (std::size_t i = 0; i < learners.size(); ++i)
    art.finals.push_back(final_path(stage_dir, static_cast<int>(i)));

  Rng rng(mix_seed(cfg_.seed, tag_));
  long start = 0;
  bool finished = resume;
  for (const auto& f : art.finals) finished = finished && fs::exists(f);
  if (finished) {
    for (std::size_t i = 0; i < learners.size(); ++i) learners[i] = load_policy(art.finals[i]);
    if (disc) {
      disc = discriminator_from_checkpoint(load_checkpoint(stage_dir / "discriminator_final.ckpt"));
      art.disc_log = dir_.root() / "logs" / "disc.csv";
    }
    art.params = learners;
    art.disc = disc;
    return art;
  }
  if (resume && fs::exists(resume_dir / (stage_ + "_set0.ckpt"))) {
    for (std::size_t i = 0; i < learners.size(); ++i) {
      const auto ckpt = load_checkpoint(resume_dir / (stage_ + "_set" + std::to_string(i) + ".ckpt"),
                                        learners[i].layout);
      learners[i] = policy_from_checkpoint(ckpt);
      if (i == 0) {
        start = ckpt.update;
        rng = deserialize_rng(ckpt.rng_state);
      }
    }
    if (disc)
      disc = discriminator_from_checkpoint(
          load_checkpoint(resume_dir / (stage_ + "_discriminator.ckpt"), disc->layout));
    if (progress_) *progress_ << stage_ << ": resuming at update " << start << "\n";
  }

  std::vector<AdamState<Real>> adam(learners.size());
  AdamState<Real> disc_adam;
  DiscUpdateConfig disc_cfg;
  disc_cfg.batch_size = cfg_.disc_batch;
  disc_cfg.adam.lr = cfg_.disc_lr;
  std::optional<DiscBuffer> buffer;
  std::optional<CsvLog> disc_log;
  if (disc) {
    buffer.emplace(disc->shape.input_dim());
    hooks.disc = &*disc;
    hooks.buffer = &*buffer;
    art.disc_log = dir_.root() / "logs" / "disc.csv";
    disc_log.emplace(*art.disc_log, "update,cross_entropy,heldout_accuracy,buffer_size");
  }
  CsvLog log(art.log,
             "update,ticks,episodes,mean_return,success_rate,collision_rate,policy_loss,"
             "value_loss,entropy,clip_frac,grad_norm,diversity_mean");

  const int threads = cfg_.deterministic ? 1 : cfg_.threads;
  RolloutRunner runner(training_layouts(cfg_), cfg_.ppo.envs_per_update,
                       mix_seed(cfg_.seed, tag_ * 1000003ULL + static_cast<std::uint64_t>(start)),
                       threads);
  const long start_ticks = start * cfg_.ppo.envs_per_update * cfg_.ppo.ticks_per_update;
  const long half = updates / 2;
  if (start == 0) {
    save_set_checkpoints("p000", 0, rng);
    if (half == 0) save_set_checkpoints("p050", 0, rng);
  }

  std::deque<std::pair<int, int>> recent;  // (successes, episodes) per update
  const std::size_t recent_window = static_cast<std::size_t>(std::max<long>(1, updates / 20));
  for (long u = start; u < updates; ++u) {
    choose(u, rng);
    RolloutBatch batch = runner.collect(pairing, hooks, cfg_.ppo);

    std::vector<std::vector<const Transition*>> per(learners.size());
    for (const auto& stream : batch.streams)
      for (const auto& t : stream) per[static_cast<std::size_t>(t.learner)].push_back(&t);
    PpoStats agg;
    double weight = 0.0;
    for (std::size_t i = 0; i < learners.size(); ++i) {
      if (per[i].empty()) continue;
      PpoStats s;
      try {
        s = ppo_update(learners[i], adam[i], per[i], cfg_.ppo, rng);
      } catch (const NonFiniteGradient& ex) {
        dump_nonfinite(u, static_cast<int>(i), ex.what());
      }
      const double w = static_cast<double>(s.samples);
      agg.policy_loss += w * s.policy_loss;
      agg.value_loss += w * s.value_loss;
      agg.entropy += w * s.entropy;
      agg.clip_frac += w * s.clip_frac;
      agg.grad_norm += w * s.grad_norm;
      weight += w;
    }
    if (weight > 0) {
      agg.policy_loss /= weight;
      agg.value_loss /= weight;
      agg.entropy /= weight;
      agg.clip_frac /= weight;
      agg.grad_norm /= weight;
    }

    if (disc && buffer->size() > 0) {
      double heldout = std::nan("");
      if ((u + 1) % cfg_.disc_eval_every == 0 || u + 1 == updates) {
        // Windows from this update's rollouts have not been trained on yet.
        const int fresh = static_cast<int>(std::min<long>(batch.diversity_count, 4096));
        if (fresh > 0) {
          Mat<Real> windows(disc->shape.input_dim(), fresh);
          std::vector<int> labels(static_cast<std::size_t>(fresh));
          for (int j = 0; j < fresh; ++j) {
            const int idx = buffer->size() - fresh + j;
            windows.col(j) = buffer->window(idx);
            labels[static_cast<std::size_t>(j)] = buffer->label(idx);
          }
          heldout = disc_accuracy(*disc, windows, labels);
          art.disc_heldout_accuracy = heldout;
        }
      }
      double ce = 0.0;
      for (int k = 0; k < cfg_.disc_steps; ++k) {
        try {
          ce += disc_update(*disc, disc_adam, *buffer, disc_cfg, rng);
        } catch (const NonFiniteGradient& ex) {
          dump_nonfinite(u, -1, std::string("discriminator: ") + ex.what());
        }
        ++art.disc_updates;
      }
      if (cfg_.disc_steps > 0) ce /= cfg_.disc_steps;
      art.disc_buffer_max = std::max(art.disc_buffer_max, buffer->size());
      disc_log->row({std::to_string(u + 1), cell(ce), cell(heldout), std::to_string(buffer->size())});
    }

    int successes = 0, collisions = 0;
    double returns = 0.0;
    for (const auto& ep : batch.episodes) {
      successes += ep.success ? 1 : 0;
      collisions += ep.collision ? 1 : 0;
      returns += ep.task_return;
    }
    const int episodes = static_cast<int>(batch.episodes.size());
    recent.emplace_back(successes, episodes);
    while (recent.size() > recent_window) recent.pop_front();
    const double ne = episodes > 0 ? episodes : std::nan("");
    log.row({std::to_string(u + 1), std::to_string(start_ticks + runner.total_ticks()),
             std::to_string(episodes), cell(returns / ne), cell(successes / ne),
             cell(collisions / ne), cell(agg.policy_loss), cell(agg.value_loss),
             cell(agg.entropy), cell(agg.clip_frac), cell(agg.grad_norm),
             cell(batch.diversity_count > 0 ? batch.diversity_sum / batch.diversity_count
                                            : std::nan(""))});

    const long completed = u + 1;
    if (completed == half) save_set_checkpoints("p050", completed, rng);
    if (completed % cfg_.checkpoint_every == 0 && completed < updates) save_resume(completed, rng);
    if (progress_ && (completed % 25 == 0 || completed == updates)) {
      *progress_ << stage_ << " update " << completed << "/" << updates << " ticks "
                 << runner.total_ticks() << " success " << cell(successes / ne) << " return "
                 << cell(returns / ne) << "\n";
      progress_->flush();
    }
  }

  save_set_checkpoints("p100", updates, rng);
  save_set_checkpoints("final", updates, rng);
  if (disc) {
    save_checkpoint(stage_dir / "discriminator_final.ckpt",
                    discriminator_checkpoint(*disc, updates, rng));
  }
  int s = 0, e = 0;
  for (const auto& [succ, eps] : recent) {
    s += succ;
    e += eps;
  }
  art.final_success = e > 0 ? static_cast<double>(s) / e : 0.0;
  art.params = learners;
  art.disc = disc;
  return art;
}

}  // namespace

StageArtifacts train_stage1(const RunConfig& cfg, const RunDirectory& dir, bool resume,
                            std::ostream* progress) {
  cfg.validate();
  const TrainerWiring wiring = wiring_for(cfg.population.algo == cfg.algo
                                              ? cfg.population
                                              : PopulationSpec{cfg.algo, cfg.population.size,
                                                               cfg.population.alpha,
                                                               cfg.population.jsd_alpha,
                                                               cfg.population.latent_resample_period});
  PopulationSpec spec = cfg.population;
  spec.algo = cfg.algo;
  StageTrainer trainer(cfg, dir, "stage1", 1, progress);
  const PolicyShape shape = shape_for(cfg, wiring, obs_dim_for(cfg));
  for (int i = 0; i < wiring.parameter_sets; ++i) {
    Rng init(mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(i)));
    trainer.learners.push_back(init_policy<Real>(shape, init));
  }
  if (wiring.discriminator) {
    DiscriminatorShape ds = cfg.disc;
    ds.num_latents = wiring.disc_classes;
    Rng init(mix_seed(cfg.seed, 150));
    trainer.disc = init_discriminator<Real>(ds, init);
  }
  trainer.updates = cfg.updates_for(cfg.stage1_ticks);

  auto schedule = std::make_shared<PairingSchedule>(spec);
  auto current = std::make_shared<PairingDraw>();
  trainer.choose = [schedule, current](long u, Rng& rng) { *current = schedule->draw(rng, u); };
  const auto* learners = &trainer.learners;
  trainer.pairing = [wiring, current, learners](int) {
    return Pairing{seat_for(wiring, *learners, current->left, true),
                   seat_for(wiring, *learners, current->right, true)};
  };
  trainer.hooks.alpha = wiring.alpha;
  if (wiring.jsd_bonus) {
    for (const auto& p : trainer.learners) trainer.hooks.jsd_members.push_back(&p);
    trainer.hooks.jsd_alpha = spec.jsd_alpha;
  }
  return trainer.run(resume);
}

StageArtifacts train_gt_coord(const RunConfig& cfg, const RunDirectory& dir, bool resume,
                              std::ostream* progress) {
  if (!is_joint(cfg.algo))
    throw std::invalid_argument("train_gt_coord needs algo gtcoord or gtcoord_state");
  return train_stage1(cfg, dir, resume, progress);
}

StageArtifacts train_stage2(const RunConfig& cfg, const RunDirectory& dir,
                            const StageArtifacts& stage1, bool resume, std::ostream* progress) {
  cfg.validate();
  if (is_joint(cfg.algo)) throw std::invalid_argument("jointly trained pairs have no second stage");
  if (stage1.params.empty()) throw std::runtime_error("stage 1 artifacts are missing");
  PopulationSpec spec = cfg.population;
  spec.algo = cfg.algo;
  const TrainerWiring wiring = wiring_for(spec);

  // Frozen partners: (pool entry, seat template).
  auto pool = std::make_shared<std::vector<PolicyParams<Real>>>();
  std::vector<Seat> partners;
  if (cfg.algo == Algo::kFcp) {
    *pool = fcp_checkpoint_set(stage1.dir, spec.size);
    for (const auto& p : *pool) {
      Seat s;
      s.policy = &p;
      partners.push_back(s);
    }
  } else {
    *pool = stage1.params;
    for (int id = 0; id < wiring.members; ++id) partners.push_back(seat_for(wiring, *pool, id, false));
  }

  StageTrainer trainer(cfg, dir, "stage2", 2, progress);
  TrainerWiring coord_wiring;
  const PolicyShape shape = shape_for(cfg, coord_wiring, pool->front().shape.obs_dim);
  Rng init(mix_seed(cfg.seed, 200));
  trainer.learners.push_back(init_policy<Real>(shape, init));
  trainer.updates = cfg.updates_for(cfg.stage2_ticks);

  const bool blocked_draws = is_bdp(cfg.algo);
  const int period = spec.latent_resample_period;
  auto current = std::make_shared<int>(0);
  const int count = static_cast<int>(partners.size());
  trainer.choose = [current, count, blocked_draws, period](long u, Rng& rng) {
    if (!blocked_draws || u % period == 0) *current = uniform_int(rng, 0, count - 1);
  };
  const auto* learners = &trainer.learners;
  trainer.pairing = [current, partners, learners, pool](int) {
    Seat coord;
    coord.policy = &learners->front();
    coord.learner = 0;
    return Pairing{coord, partners[static_cast<std::size_t>(*current)]};
  };
  return trainer.run(resume);
}

StageArtifacts load_stage(const std::filesystem::path& run_dir, const std::string& stage,
                          int sets) {
  StageArtifacts art;
  art.stage = stage;
  art.dir = run_dir / "checkpoints" / stage;
  art.log = run_dir / "logs" / (stage + ".csv");
  if (sets <= 0) {
    sets = 0;
    while (fs::exists(final_path(art.dir, sets))) ++sets;
  }
  if (sets == 0) throw std::runtime_error("no final checkpoints under " + art.dir.string());
  for (int i = 0; i < sets; ++i) {
    const auto path = final_path(art.dir, i);
    if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
    art.finals.push_back(path);
    art.params.push_back(load_policy(path));
  }
  const auto disc_path = art.dir / "discriminator_final.ckpt";
  if (fs::exists(disc_path)) art.disc = discriminator_from_checkpoint(load_checkpoint(disc_path));
  return art;
}

namespace {

nlohmann::json stage_json(const StageArtifacts& s) {
  nlohmann::json j;
  j["stage"] = s.stage;
  j["updates"] = s.updates;
  j["ticks"] = s.ticks;
  j["final_success"] = s.final_success;
  j["disc_updates"] = s.disc_updates;
  j["disc_buffer_max"] = s.disc_buffer_max;
  j["disc_heldout_accuracy"] =
      s.disc_heldout_accuracy ? nlohmann::json(*s.disc_heldout_accuracy) : nlohmann::json(nullptr);
  j["param_hashes"] = nlohmann::json::array();
  for (const auto& p : s.params) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(param_hash(p.values.cast<float>())));
    j["param_hashes"].push_back(buf);
  }
  return j;
}

}  // namespace

RunResult run_training(const RunConfig& cfg, bool resume, std::ostream* progress) {
  cfg.validate();
  RunDirectory dir(cfg.run_dir(), resume);
  const fs::path snapshot = dir.root() / "config.ini";
  const std::string text = config_text(cfg);
  if (resume && fs::exists(snapshot)) {
    const RunConfig previous = run_config_from(Config::load(snapshot));
    if (config_text(previous) != text)
      throw std::runtime_error("config differs from the snapshot in " + snapshot.string());
  } else {
    std::ofstream out(snapshot);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + snapshot.string());
  }

  RunResult result;
  result.stage1 = is_joint(cfg.algo) ? train_gt_coord(cfg, dir, resume, progress)
                                     : train_stage1(cfg, dir, resume, progress);
  if (!is_joint(cfg.algo) && cfg.stage2 && cfg.stage2_ticks > 0)
    result.stage2 = train_stage2(cfg, dir, result.stage1, resume, progress);

  nlohmann::json report;
  report["schema_version"] = 1;
  report["algo"] = algo_name(cfg.algo);
  report["task"] = task_name(cfg.task);
  report["seed"] = cfg.seed;
  report["stages"] = nlohmann::json::array();
  report["stages"].push_back(stage_json(result.stage1));
  if (result.stage2) report["stages"].push_back(stage_json(*result.stage2));
  std::ofstream out(dir.root() / "report.json");
  out << report.dump(2) << '\n';
  out.close();
  dir.write_manifest();
  return result;
}

// ---------------------------------------------------------------------------
// Behavior analysis

namespace {

std::vector<Environment> eval_layouts(const RunConfig& cfg, int count, std::uint64_t salt) {
  std::vector<Environment> pool;
  for (int i = 0; i < count; ++i)
    pool.push_back(Environment::create(cfg.task, eval_layout_seed(cfg.seed ^ salt, i),
                                       cfg.world_config()));
  return pool;
}

std::shared_ptr<const PolicyParams<Real>> borrow(const PolicyParams<Real>& p) {
  return {&p, [](const PolicyParams<Real>*) {}};
}

}  // namespace

double heldout_disc_accuracy(const RunConfig& cfg, const StageArtifacts& stage1, long ticks) {
  if (!stage1.disc) throw std::invalid_argument("stage 1 has no discriminator");
  PopulationSpec spec = cfg.population;
  spec.algo = cfg.algo;
  const TrainerWiring wiring = wiring_for(spec);
  PpoConfig ppo = cfg.ppo;
  ppo.ticks_per_update = static_cast<int>(std::max<long>(1, ticks / ppo.envs_per_update));
  RolloutRunner runner(eval_layouts(cfg, 16, 0xd15c), ppo.envs_per_update,
                       mix_seed(cfg.seed, 0xd15c), 1);
  Rng rng(mix_seed(cfg.seed, 0xd15d));
  const auto& params = stage1.params;
  const PairingFn pairing = [&](int) {
    const int a = uniform_int(rng, 0, wiring.members - 1);
    const int b = uniform_int(rng, 0, wiring.members - 1);
    return Pairing{seat_for(wiring, params, a, true), seat_for(wiring, params, b, true)};
  };
  DiscBuffer buffer(stage1.disc->shape.input_dim(),
                    static_cast<int>(std::max<long>(1, 2 * ticks)));
  RolloutHooks hooks;
  hooks.disc = &*stage1.disc;
  hooks.alpha = 0.0;
  hooks.buffer = &buffer;
  runner.collect(pairing, hooks, ppo);
  if (buffer.size() == 0) return 0.0;
  Mat<Real> windows(stage1.disc->shape.input_dim(), buffer.size());
  std::vector<int> labels(static_cast<std::size_t>(buffer.size()));
  for (int i = 0; i < buffer.size(); ++i) {
    windows.col(i) = buffer.window(i);
    labels[static_cast<std::size_t>(i)] = buffer.label(i);
  }
  return disc_accuracy(*stage1.disc, windows, labels);
}

std::vector<std::array<double, kNumEventIds>> latent_event_rates(const RunConfig& cfg,
                                                                 const StageArtifacts& stage1,
                                                                 int episodes) {
  PopulationSpec spec = cfg.population;
  spec.algo = cfg.algo;
  const TrainerWiring wiring = wiring_for(spec);
  std::vector<std::array<double, kNumEventIds>> rates(static_cast<std::size_t>(wiring.members));
  Rng rng(mix_seed(cfg.seed, 0xe7e7));
  for (int z = 0; z < wiring.members; ++z) {
    auto& r = rates[static_cast<std::size_t>(z)];
    r.fill(0.0);
    for (int ep = 0; ep < episodes; ++ep) {
      const auto env = Environment::create(cfg.task, eval_layout_seed(cfg.seed ^ 0xe7, ep),
                                           cfg.world_config());
      const int other = uniform_int(rng, 0, wiring.members - 1);
      const Seat a = seat_for(wiring, stage1.params, z, false);
      const Seat b = seat_for(wiring, stage1.params, other, false);
      PolicyController ca(borrow(*a.policy), a.member, a.latent);
      PolicyController cb(borrow(*b.policy), b.member, b.latent);
      const auto res = run_episode(env, ca, cb, mix_seed(cfg.seed + 5, static_cast<std::uint64_t>(ep)), rng);
      for (int e = 0; e < kNumEventIds; ++e)
        if (res.event_agent[static_cast<std::size_t>(e)] == 0) r[static_cast<std::size_t>(e)] += 1.0;
    }
    for (auto& v : r) v /= episodes;
  }
  return rates;
}

double event_rate_tv(const std::array<double, kNumEventIds>& a,
                     const std::array<double, kNumEventIds>& b) {
  double sa = 0.0, sb = 0.0;
  for (int e = 0; e < kNumEventIds; ++e) {
    sa += a[static_cast<std::size_t>(e)];
    sb += b[static_cast<std::size_t>(e)];
  }
  double tv = 0.0;
  for (int e = 0; e < kNumEventIds; ++e) {
    const double pa = sa > 0 ? a[static_cast<std::size_t>(e)] / sa : 0.0;
    const double pb = sb > 0 ? b[static_cast<std::size_t>(e)] / sb : 0.0;
    tv += std::abs(pa - pb);
  }
  return 0.5 * tv;
}

}  // namespace zsc
