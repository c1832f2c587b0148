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

#include "zsc/evalkit.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "zsc/ppo.hpp"

namespace zsc {

namespace {
constexpr std::uint64_t kEvalBit = 1ULL << 62;
constexpr std::uint64_t kSeedMask = kEvalBit - 1;
}  // namespace

std::uint64_t train_layout_seed(std::uint64_t run_seed, int index) {
  return mix_seed(run_seed, static_cast<std::uint64_t>(index)) & kSeedMask;
}

std::uint64_t eval_layout_seed(std::uint64_t eval_seed, int episode) {
  return kEvalBit | (mix_seed(eval_seed ^ 0x5eed, static_cast<std::uint64_t>(episode)) & kSeedMask);
}

EpisodeResult run_episode(const Environment& env, Controller& coord, Controller& partner,
                          std::uint64_t episode_seed, Rng& rng, ReplayWriter* replay) {
  auto [state, obs] = env.reset(episode_seed);
  coord.reset();
  partner.reset();
  Controller* seats[kNumAgents] = {&coord, &partner};
  std::array<bool, kNumAgents> deciding{true, true};
  std::array<ActionId, kNumAgents> actions{};
  EpisodeResult result;
  result.event_agent.fill(-1);
  while (!state.done) {
    for (int i = 0; i < kNumAgents; ++i)
      if (deciding[static_cast<std::size_t>(i)])
        actions[static_cast<std::size_t>(i)] =
            seats[i]->act(state, obs[static_cast<std::size_t>(i)], i, rng);
    StepOutcome out = env.step_joint(state, actions);
    if (replay) replay->write(state, out);
    result.task_return += out.reward;
    for (const auto& ev : out.events) result.event_agent[static_cast<std::size_t>(ev.id())] = ev.agent;
    deciding = out.decision_flags;
    obs = std::move(out.obs);
  }
  result.success = state.success;
  result.collision = state.collision;
  result.ticks = state.tick;
  return result;
}

namespace {

void check_obs(const Controller& c, const Environment& env, const char* who) {
  const auto dim = c.obs_dim();
  if (dim && *dim != env.observation_size())
    throw std::invalid_argument(std::string(who) + " expects " + std::to_string(*dim) +
                                " observation features but the env provides " +
                                std::to_string(env.observation_size()) +
                                " (standard vs predicate observations?)");
}

std::vector<EpisodeResult> run_many(const ControllerFactory& coord,
                                    const ControllerFactory& partner,
                                    const EvalSettings& settings) {
  std::vector<EpisodeResult> results(static_cast<std::size_t>(settings.episodes));
  parallel_for(settings.episodes, settings.threads, [&](int ep) {
    const auto env = Environment::create(
        settings.task, eval_layout_seed(settings.seed, ep), settings.world);
    auto c = coord();
    auto p = partner();
    check_obs(*c, env, "coordination agent");
    check_obs(*p, env, "partner");
    Rng rng(mix_seed(settings.seed, static_cast<std::uint64_t>(ep) + 7919));
    results[static_cast<std::size_t>(ep)] =
        run_episode(env, *c, *p, mix_seed(settings.seed + 1, static_cast<std::uint64_t>(ep)), rng);
  });
  return results;
}

std::optional<double> mean_success_ticks(const std::vector<EpisodeResult>& results) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : results)
    if (r.success) {
      sum += r.ticks;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace

PartnerRecord evaluate_pairing(const ControllerFactory& coord, const ControllerFactory& partner,
                               const std::string& partner_id, const std::string& kind,
                               const EvalSettings& settings) {
  if (settings.episodes <= 0) throw std::invalid_argument("episodes must be positive");
  const auto results = run_many(coord, partner, settings);
  PartnerRecord rec;
  rec.partner = partner_id;
  rec.kind = kind;
  rec.episodes = settings.episodes;
  for (const auto& r : results) {
    rec.successes += r.success ? 1 : 0;
    rec.collisions += r.collision ? 1 : 0;
    for (int e = 0; e < kNumEventIds; ++e)
      if (r.event_agent[static_cast<std::size_t>(e)] == 0) rec.coord_event_rate[static_cast<std::size_t>(e)] += 1.0;
  }
  const double n = rec.episodes;
  rec.success_rate = rec.successes / n;
  rec.collision_rate = rec.collisions / n;
  for (auto& v : rec.coord_event_rate) v /= n;
  rec.mean_steps_success = mean_success_ticks(results);
  if (settings.efficiency) {
    const ControllerFactory noop = [] {
      return std::make_unique<ScriptedController>(ScriptedRole::kNoOp);
    };
    rec.solo_steps = mean_success_ticks(run_many(noop, partner, settings));
    rec.efficiency_gain = efficiency_gain(rec.solo_steps, rec.mean_steps_success);
  }
  return rec;
}

double efficiency_gain(double t_solo, double t_pair) {
  if (!(t_solo > 0.0)) throw std::invalid_argument("solo steps must be positive");
  return 100.0 * (t_solo - t_pair) / t_solo;
}

std::optional<double> efficiency_gain(std::optional<double> t_solo,
                                      std::optional<double> t_pair) {
  if (!t_solo || !t_pair || *t_solo <= 0.0) return std::nullopt;
  return efficiency_gain(*t_solo, *t_pair);
}

SubgoalMatrix subgoal_matrix(const std::string& name, const std::vector<PartnerRecord>& records) {
  SubgoalMatrix m;
  m.name = name;
  for (const auto& r : records) {
    m.partners.push_back(r.partner);
    m.columns.push_back(r.coord_event_rate);
  }
  return m;
}

std::optional<double> EvalReport::pooled_success(const std::vector<PartnerRecord>& records,
                                                 const std::string& kind) {
  long successes = 0, episodes = 0;
  for (const auto& r : records) {
    if (!kind.empty() && r.kind != kind) continue;
    successes += r.successes;
    episodes += r.episodes;
  }
  if (episodes == 0) return std::nullopt;
  return static_cast<double>(successes) / static_cast<double>(episodes);
}

std::optional<double> EvalReport::mean_efficiency() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : zsc)
    if (r.efficiency_gain) {
      sum += *r.efficiency_gain;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json record_json(const PartnerRecord& r) {
  nlohmann::json events = nlohmann::json::object();
  for (int e = 0; e < kNumEventIds; ++e) events[event_name(e)] = r.coord_event_rate[static_cast<std::size_t>(e)];
  return {{"partner", r.partner},
          {"kind", r.kind},
          {"episodes", r.episodes},
          {"successes", r.successes},
          {"collisions", r.collisions},
          {"success_rate", r.success_rate},
          {"mean_steps_success", opt(r.mean_steps_success)},
          {"collision_rate", r.collision_rate},
          {"solo_steps", opt(r.solo_steps)},
          {"efficiency_gain", opt(r.efficiency_gain)},
          {"coord_event_rate", events}};
}

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

PartnerRecord record_from_json(const nlohmann::json& j) {
  PartnerRecord r;
  r.partner = j.at("partner").get<std::string>();
  r.kind = j.at("kind").get<std::string>();
  r.episodes = j.at("episodes").get<int>();
  r.successes = j.at("successes").get<int>();
  r.collisions = j.at("collisions").get<int>();
  r.success_rate = j.at("success_rate").get<double>();
  r.mean_steps_success = opt_from(j.at("mean_steps_success"));
  r.collision_rate = j.at("collision_rate").get<double>();
  r.solo_steps = opt_from(j.at("solo_steps"));
  r.efficiency_gain = opt_from(j.at("efficiency_gain"));
  const auto& events = j.at("coord_event_rate");
  for (int e = 0; e < kNumEventIds; ++e)
    r.coord_event_rate[static_cast<std::size_t>(e)] = events.at(std::string(event_name(e))).get<double>();
  return r;
}

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "missing";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

void write_heatmap_svg(std::ostream& out, const SubgoalMatrix& m) {
  constexpr int kCell = 48, kLeft = 110, kTop = 90;
  const int cols = static_cast<int>(m.partners.size());
  const int width = kLeft + cols * kCell + 20;
  const int height = kTop + kNumEventIds * kCell + 20;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<text x=\"4\" y=\"14\" font-size=\"13\">" << m.name << "</text>\n";
  for (int c = 0; c < cols; ++c) {
    const int x = kLeft + c * kCell + kCell / 2;
    out << "<text transform=\"translate(" << x << "," << kTop - 6
        << ") rotate(-45)\">" << m.partners[static_cast<std::size_t>(c)] << "</text>\n";
  }
  char buf[256];
  for (int e = 0; e < kNumEventIds; ++e) {
    const int y = kTop + e * kCell;
    out << "<text x=\"4\" y=\"" << y + kCell / 2 + 4 << "\">" << event_name(e) << "</text>\n";
    for (int c = 0; c < cols; ++c) {
      const double v = m.columns[static_cast<std::size_t>(c)][static_cast<std::size_t>(e)];
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"rgb(%d,%d,255)\" "
                    "stroke=\"#888\"/>\n<text x=\"%d\" y=\"%d\" text-anchor=\"middle\">%.2f</text>\n",
                    kLeft + c * kCell, y, kCell, kCell, shade, shade, kLeft + c * kCell + kCell / 2,
                    y + kCell / 2 + 4, v);
      out << buf;
    }
  }
  out << "</svg>\n";
}

void emit_report(const std::vector<EvalReport>& reports,
                 const std::vector<SubgoalMatrix>& matrices, const std::filesystem::path& out_dir) {
  if (reports.empty()) throw std::invalid_argument("no reports to emit");
  for (const auto& r : reports)
    if (r.zsc.empty() && r.train_pop.empty())
      throw std::invalid_argument("report for " + r.method + " has no partners");
  for (const auto& m : matrices)
    if (m.partners.empty()) throw std::invalid_argument("matrix " + m.name + " has no partners");

  nlohmann::json root;
  root["schema_version"] = 1;
  root["methods"] = nlohmann::json::array();
  std::string csv = "method,train_pop_success,zsc_success,zsc_scripted,zsc_learned,efficiency_gain\n";
  for (const auto& r : reports) {
    nlohmann::json j;
    j["method"] = r.method;
    j["train_pop_success"] = opt(EvalReport::pooled_success(r.train_pop));
    j["zsc_success"] = opt(EvalReport::pooled_success(r.zsc));
    j["zsc_scripted"] = opt(EvalReport::pooled_success(r.zsc, "scripted"));
    j["zsc_learned"] = opt(EvalReport::pooled_success(r.zsc, "learned"));
    j["efficiency_gain"] = opt(r.mean_efficiency());
    j["train_pop"] = nlohmann::json::array();
    for (const auto& p : r.train_pop) j["train_pop"].push_back(record_json(p));
    j["zsc"] = nlohmann::json::array();
    for (const auto& p : r.zsc) j["zsc"].push_back(record_json(p));
    root["methods"].push_back(std::move(j));
    csv += r.method + "," + csv_cell(EvalReport::pooled_success(r.train_pop)) + "," +
           csv_cell(EvalReport::pooled_success(r.zsc)) + "," +
           csv_cell(EvalReport::pooled_success(r.zsc, "scripted")) + "," +
           csv_cell(EvalReport::pooled_success(r.zsc, "learned")) + "," +
           csv_cell(r.mean_efficiency()) + "\n";
  }
  root["subgoal_matrices"] = nlohmann::json::array();
  for (const auto& m : matrices) {
    nlohmann::json jm;
    jm["name"] = m.name;
    jm["partners"] = m.partners;
    jm["events"] = nlohmann::json::array();
    for (int e = 0; e < kNumEventIds; ++e) jm["events"].push_back(event_name(e));
    jm["cells"] = nlohmann::json::array();
    for (int e = 0; e < kNumEventIds; ++e) {
      nlohmann::json row = nlohmann::json::array();
      for (const auto& col : m.columns) row.push_back(col[static_cast<std::size_t>(e)]);
      jm["cells"].push_back(std::move(row));
    }
    root["subgoal_matrices"].push_back(std::move(jm));
  }

  std::filesystem::create_directories(out_dir);
  write_file(out_dir / "report.json", root.dump(2) + "\n");
  write_file(out_dir / "summary.csv", csv);
  for (const auto& m : matrices) {
    std::ostringstream svg;
    write_heatmap_svg(svg, m);
    write_file(out_dir / ("heatmap_" + m.name + ".svg"), svg.str());
  }
}

LoadedReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  LoadedReport out;
  try {
    const auto root = nlohmann::json::parse(in);
    if (root.at("schema_version").get<int>() != 1)
      throw std::runtime_error("unsupported report schema in " + path.string());
    for (const auto& jm : root.at("methods")) {
      EvalReport r;
      r.method = jm.at("method").get<std::string>();
      for (const auto& p : jm.at("train_pop")) r.train_pop.push_back(record_from_json(p));
      for (const auto& p : jm.at("zsc")) r.zsc.push_back(record_from_json(p));
      out.reports.push_back(std::move(r));
    }
    for (const auto& jm : root.at("subgoal_matrices")) {
      SubgoalMatrix m;
      m.name = jm.at("name").get<std::string>();
      m.partners = jm.at("partners").get<std::vector<std::string>>();
      m.columns.assign(m.partners.size(), {});
      const auto& cells = jm.at("cells");
      for (int e = 0; e < kNumEventIds; ++e)
        for (std::size_t c = 0; c < m.partners.size(); ++c)
          m.columns[c][static_cast<std::size_t>(e)] = cells.at(static_cast<std::size_t>(e)).at(c).get<double>();
      out.matrices.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw std::runtime_error("malformed report " + path.string() + ": " + ex.what());
  }
  return out;
}

}  // namespace zsc
