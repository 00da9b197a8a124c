#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "mdg/binary_io.hpp"
#include "mdg/checkpoint.hpp"
#include "mdg/config.hpp"
#include "mdg/errors.hpp"
#include "mdg/evalmetrics.hpp"
#include "mdg/inference.hpp"
#include "mdg/training.hpp"

namespace fs = std::filesystem;

namespace mdg::cli {

namespace {

std::string file_hash(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

std::string text_hash(const std::string& s) { return hex64(fnv1a64(s)); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed for " + path.string());
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

// Output directory with its resolved config snapshot and provenance record.
class RunDir {
 public:
  RunDir(const std::string& command, const std::string& dir) : command_(command), dir_(dir) {
    fs::create_directories(dir_);
    config_.set("cli.command", command);
  }

  const fs::path& path() const { return dir_; }
  KeyValueConfig& config() { return config_; }
  void input(const std::string& name, const std::string& path) { inputs_.emplace_back(name, path); }
  void output(const std::string& name) { outputs_.push_back(name); }

  void finish() {
    const std::string snapshot = config_.to_text();
    write_text(dir_ / "config.txt", snapshot);
    std::ostringstream os;
    os << "command=" << command_ << '\n';
    os << "config.fnv1a64=" << text_hash(snapshot) << '\n';
    os << "generator=" << world::kGeneratorVersion << '\n';
    for (const auto& [name, p] : inputs_) {
      os << "input." << name << ".path=" << p << '\n';
      os << "input." << name << ".fnv1a64=" << file_hash(p) << '\n';
    }
    for (const std::string& name : outputs_) {
      os << "output." << name << ".fnv1a64=" << file_hash((dir_ / name).string()) << '\n';
    }
    write_text(dir_ / "provenance.txt", os.str());
  }

 private:
  std::string command_;
  fs::path dir_;
  KeyValueConfig config_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::string> outputs_;
};

world::MapKind kind_or_usage(const std::string& s) {
  for (world::MapKind k : world::all_map_kinds()) {
    if (s == world::to_string(k)) return k;
  }
  std::string valid;
  for (world::MapKind k : world::all_map_kinds()) valid += std::string(valid.empty() ? "" : ", ") + world::to_string(k);
  throw ContractViolation("unknown map kind '" + s + "'; valid kinds: " + valid);
}

void check_dataset_fits(const std::vector<world::Scenario>& data, const ModelConfig& mc, std::size_t min_future) {
  for (const world::Scenario& s : data) {
    if (s.history_steps() != mc.history) {
      throw DataError("scenario " + std::to_string(s.id) + " has " + std::to_string(s.history_steps()) +
                      " history steps, model.history is " + std::to_string(mc.history));
    }
    if (s.future_steps() < min_future) {
      throw DataError("scenario " + std::to_string(s.id) + " has " + std::to_string(s.future_steps()) +
                      " future steps, need " + std::to_string(min_future));
    }
    if (s.agents.size() > mc.max_agents) {
      throw DataError("scenario " + std::to_string(s.id) + " has " + std::to_string(s.agents.size()) +
                      " agents, model.max_agents is " + std::to_string(mc.max_agents));
    }
  }
}

// Goals file: "scene,agent,x,y" header, one goal per line.
std::map<std::uint64_t, std::vector<Goal>> load_goals(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open goals file " + path);
  std::map<std::uint64_t, std::vector<Goal>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (lineno == 1 && line == "scene,agent,x,y") continue;
    const auto fields = split(line, ',');
    if (fields.size() != 4) throw DataError(path + ":" + std::to_string(lineno) + ": expected scene,agent,x,y");
    try {
      std::size_t used = 0;
      const std::uint64_t scene = std::stoull(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("scene");
      const std::size_t agent = std::stoul(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("agent");
      out[scene].push_back({agent, std::stod(fields[2]), std::stod(fields[3])});
    } catch (const std::logic_error&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed goal");
    }
  }
  return out;
}

std::vector<world::Scenario> take(std::vector<world::Scenario> data, std::size_t limit) {
  if (limit > 0 && limit < data.size()) data.resize(limit);
  return data;
}

void add_threads_option(CLI::App* sub, std::size_t& threads) {
  sub->add_option("--threads", threads, "worker cap (computation is single-threaded)")->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string out;
  std::string kinds;
  std::size_t count = 200;
  std::size_t agents = 8;
  std::size_t history = 10;
  std::size_t future = 40;
  double pedestrian_prob = 0.3;
  std::uint64_t seed = 7;
  std::size_t threads = 1;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
  world::WorldConfig wc;
  wc.agents = a.agents;
  wc.history = a.history;
  wc.future = a.future;
  wc.pedestrian_prob = a.pedestrian_prob;
  if (!a.kinds.empty()) {
    wc.kinds.clear();
    for (const std::string& k : split(a.kinds, ',')) wc.kinds.push_back(kind_or_usage(k));
    require(!wc.kinds.empty(), "--kinds lists no map kind");
  }
  require(a.agents >= 1, "--agents must be at least 1");
  require(a.history >= 2 && a.future >= 2, "--history and --future must be at least 2");
  if (a.count == 0) err << "warning: count=0, writing an empty dataset\n";

  RunDir run("gen-data", a.out);
  const auto data = world::generate_dataset(wc, a.count, a.seed);
  const fs::path file = run.path() / "dataset.bin";
  world::save_dataset(data, file.string(), a.seed);

  std::map<world::MapKind, std::size_t> per_kind;
  for (const world::Scenario& s : data) ++per_kind[s.kind];
  std::ostringstream manifest;
  manifest << "count=" << data.size() << "\nseed=" << a.seed << "\ngenerator=" << world::kGeneratorVersion
           << "\ndataset.fnv1a64=" << file_hash(file.string()) << '\n';
  for (world::MapKind k : world::all_map_kinds()) manifest << "kind." << world::to_string(k) << '=' << per_kind[k] << '\n';
  write_text(run.path() / "manifest.txt", manifest.str());

  KeyValueConfig& c = run.config();
  c.set("data.count", std::to_string(a.count));
  c.set("data.agents", std::to_string(a.agents));
  c.set("data.history", std::to_string(a.history));
  c.set("data.future", std::to_string(a.future));
  c.set("data.pedestrian_prob", fmt(a.pedestrian_prob));
  c.set("data.seed", std::to_string(a.seed));
  std::string kinds;
  for (world::MapKind k : wc.kinds) kinds += std::string(kinds.empty() ? "" : ",") + world::to_string(k);
  c.set("data.kinds", kinds);
  c.set("cli.threads", std::to_string(a.threads));
  run.output("dataset.bin");
  run.output("manifest.txt");
  run.finish();

  out << "wrote " << data.size() << " scenarios to " << file.string() << '\n';
  for (world::MapKind k : world::all_map_kinds()) out << "  " << world::to_string(k) << ' ' << per_kind[k] << '\n';
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::vector<std::string> sets;
  long long epochs = -1;
  long long seed = -1;
  std::size_t threads = 1;
};

KeyValueConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  KeyValueConfig kv = path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, "--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream&) {
  KeyValueConfig kv = resolve_config(a.config, a.sets);
  if (a.epochs >= 0) kv.set("train.epochs", std::to_string(a.epochs));
  if (a.seed >= 0) kv.set("train.seed", std::to_string(a.seed));
  const ModelConfig mc = ModelConfig::from_config(kv);
  const TrainConfig tc = TrainConfig::from_config(kv);
  mc.validate();
  tc.validate();

  world::DatasetManifest manifest;
  const auto data = world::load_dataset(a.data, &manifest);
  if (data.empty()) throw DataError("dataset " + a.data + " is empty");
  check_dataset_fits(data, mc, mc.future);
  std::vector<world::Scenario> trimmed = data;
  for (world::Scenario& s : trimmed) {
    for (world::Agent& ag : s.agents) ag.future.resize(mc.future);
  }

  RunDir run("train", a.out);
  run.input("data", a.data);
  KeyValueConfig& c = run.config();
  mc.write_to(c);
  tc.write_to(c);
  c.set("cli.threads", std::to_string(a.threads));

  SceneModel model(mc);
  std::ofstream log(run.path() / "train_log.csv", std::ios::binary);
  if (!log) throw DataError("cannot write the training log");
  log << kTrainLogHeader << '\n';
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const LossReport& r) {
    log << train_log_line(r) << '\n';
    epoch_sum += r.denoise;
    ++epoch_steps;
  };
  hooks.on_epoch_end = [&](std::size_t epoch) {
    out << "epoch " << epoch + 1 << '/' << tc.epochs << " mean L_d " << fmt(epoch_sum / std::max<std::size_t>(1, epoch_steps))
        << '\n';
    epoch_sum = 0.0;
    epoch_steps = 0;
    if (tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 && epoch + 1 < tc.epochs) {
      const std::string name = "model_epoch" + std::to_string(epoch + 1) + ".ckpt";
      save_checkpoint((run.path() / name).string(), model.to_checkpoint());
      run.output(name);
    }
  };
  train(model, trimmed, tc, hooks);
  log.close();
  save_checkpoint((run.path() / "model.ckpt").string(), model.to_checkpoint());
  run.output("train_log.csv");
  run.output("model.ckpt");
  run.finish();
  out << "wrote " << (run.path() / "model.ckpt").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  std::string mode = "one_step";
  std::size_t steps = 1;
  std::size_t samples = 1;
  std::uint64_t seed = 0;
  std::string guide;
  std::size_t scenes = 0;
  std::size_t threads = 1;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out, std::ostream&) {
  const noise::ScheduleMode mode = noise::parse_schedule_mode(a.mode);
  require(mode != noise::ScheduleMode::custom, "--mode must be one_step, temporal or agent");
  const SceneModel model = SceneModel::from_checkpoint(load_checkpoint(a.ckpt));
  const ModelConfig& mc = model.config();
  const auto data = take(world::load_dataset(a.data), a.scenes);
  check_dataset_fits(data, mc, 0);
  std::map<std::uint64_t, std::vector<Goal>> goals;
  if (!a.guide.empty()) goals = load_goals(a.guide);
  for (const auto& [scene, g] : goals) {
    const bool known = std::any_of(data.begin(), data.end(), [&](const world::Scenario& s) { return s.id == scene; });
    if (!known) throw DataError("goals file names scene " + std::to_string(scene) + ", which is not in the dataset");
  }

  RunDir run("generate", a.out);
  run.input("ckpt", a.ckpt);
  run.input("data", a.data);
  if (!a.guide.empty()) run.input("guide", a.guide);
  fs::create_directories(run.path() / "masks");

  Trace tr;
  tr.header = {{"command", "generate"},
               {"mode", noise::to_string(mode)},
               {"steps", std::to_string(a.steps)},
               {"samples", std::to_string(a.samples)},
               {"seed", std::to_string(a.seed)},
               {"ckpt", file_hash(a.ckpt)},
               {"data", file_hash(a.data)}};
  std::size_t calls = 0, samples = 0;
  for (const world::Scenario& s : data) {
    const SceneContext ctx = make_context(s, mc.use_route);
    GenerationRequest req;
    req.schedule = noise::build_schedule(mode, a.steps, ctx.num_agents(), mc.action_steps(), mc.max_level);
    req.num_samples = a.samples;
    req.seed = derive_seed(a.seed, {s.id});
    req.keep_trace = true;
    if (auto it = goals.find(s.id); it != goals.end()) req.goals = it->second;
    const GenerationResult res = generate(model, ctx, req);
    for (std::size_t k = 0; k < res.samples.size(); ++k) {
      append_rows(tr, "gen", s.id, k, s, to_global_rows(ctx, res.samples[k].states));
      calls += res.samples[k].denoiser_calls;
    }
    samples += res.samples.size();
    for (const Goal& g : req.goals) tr.records.push_back({"goal", s.id, 0, g.agent, 0, g.x, g.y, 0, 0, 0, 0, 0});

    noise::InferenceSchedule seen;
    seen.mode = mode;
    seen.max_level = mc.max_level;
    for (const TraceStep& st : res.samples.front().trace) seen.masks.push_back(st.mask);
    seen.masks.push_back(noise::NoiseMask::filled(ctx.num_agents(), mc.action_steps(), 0));
    const std::string name = "masks/scene_" + std::to_string(s.id) + ".txt";
    write_text(run.path() / name, noise::dump_schedule(seen));
  }
  save_trace((run.path() / "trace.csv").string(), tr);

  KeyValueConfig& c = run.config();
  mc.write_to(c);
  c.set("infer.mode", noise::to_string(mode));
  c.set("infer.steps", std::to_string(a.steps));
  c.set("infer.samples", std::to_string(a.samples));
  c.set("infer.seed", std::to_string(a.seed));
  c.set("infer.scenes", std::to_string(data.size()));
  c.set("infer.guided", a.guide.empty() ? "false" : "true");
  c.set("cli.threads", std::to_string(a.threads));
  run.output("trace.csv");
  run.finish();
  out << "scenes " << data.size() << " samples " << samples << " denoiser_calls " << calls << '\n';
  out << "wrote " << (run.path() / "trace.csv").string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------- rollout

struct RolloutArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  double replan_hz = 1.0;
  std::size_t horizon = 80;
  bool reuse = false;
  bool compare = false;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  std::size_t threads = 1;
};

int cmd_rollout(const RolloutArgs& a, std::ostream& out, std::ostream&) {
  require(!(a.reuse && a.compare), "--reuse and --compare are exclusive");
  const SceneModel model = SceneModel::from_checkpoint(load_checkpoint(a.ckpt));
  const ModelConfig& mc = model.config();
  require(a.replan_hz > 0.0, "--replan-hz must be positive");
  const double period = 1.0 / (a.replan_hz * mc.dt);
  const auto replan_every = static_cast<std::size_t>(std::llround(period));
  require(replan_every >= 1 && std::abs(period - static_cast<double>(replan_every)) < 1e-9,
          "--replan-hz must divide the " + fmt(1.0 / mc.dt) + " Hz base rate");
  const auto data = take(world::load_dataset(a.data), a.episodes);
  check_dataset_fits(data, mc, a.horizon);

  RunDir run("rollout", a.out);
  run.input("ckpt", a.ckpt);
  run.input("data", a.data);

  std::vector<bool> modes;
  if (a.compare) {
    modes = {false, true};
  } else {
    modes = {a.reuse};
  }
  Trace tr;
  tr.header = {{"command", "rollout"},
               {"replan_every", std::to_string(replan_every)},
               {"horizon", std::to_string(a.horizon)},
               {"reuse", a.compare ? "compare" : (a.reuse ? "true" : "false")},
               {"seed", std::to_string(a.seed)},
               {"ckpt", file_hash(a.ckpt)},
               {"data", file_hash(a.data)}};
  std::ostringstream summary;
  summary << "episode,reuse,consistency,denoiser_calls\n" << std::setprecision(10);
  std::vector<double> mean(modes.size(), 0.0);
  std::vector<std::vector<double>> per_episode(modes.size());
  for (const world::Scenario& ep : data) {
    for (std::size_t m = 0; m < modes.size(); ++m) {
      ClosedLoopConfig cfg;
      cfg.horizon = a.horizon;
      cfg.replan_every = replan_every;
      cfg.reuse = modes[m];
      cfg.seed = a.seed;
      const ClosedLoopResult r = closed_loop(model, ep, cfg);
      summary << ep.id << ',' << (modes[m] ? "true" : "false") << ',' << r.consistency << ',' << r.denoiser_calls << '\n';
      mean[m] += r.consistency;
      per_episode[m].push_back(r.consistency);
      // in compare mode the trace keeps the reuse run, step = replan index
      if (m + 1 == modes.size()) {
        append_rows(tr, "exec", ep.id, 0, ep, r.executed);
        for (std::size_t k = 0; k < r.plans.size(); ++k) append_rows(tr, "plan", ep.id, k, ep, r.plans[k]);
      }
    }
  }
  save_trace((run.path() / "trace.csv").string(), tr);
  write_text(run.path() / "summary.csv", summary.str());

  KeyValueConfig& c = run.config();
  mc.write_to(c);
  c.set("rollout.replan_hz", fmt(a.replan_hz));
  c.set("rollout.horizon", std::to_string(a.horizon));
  c.set("rollout.reuse", a.compare ? "compare" : (a.reuse ? "true" : "false"));
  c.set("rollout.seed", std::to_string(a.seed));
  c.set("rollout.episodes", std::to_string(data.size()));
  c.set("cli.threads", std::to_string(a.threads));
  run.output("trace.csv");
  run.output("summary.csv");
  run.finish();

  const double n = static_cast<double>(std::max<std::size_t>(1, data.size()));
  for (std::size_t m = 0; m < modes.size(); ++m) {
    out << "consistency " << (modes[m] ? "reuse" : "no_reuse") << ' ' << fmt(mean[m] / n) << '\n';
  }
  if (a.compare) {
    std::size_t wins = 0;
    for (std::size_t k = 0; k < data.size(); ++k) wins += per_episode[1][k] < per_episode[0][k];
    out << "reuse lower on " << wins << '/' << data.size() << " episodes\n";
  }
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string trace;
  std::string data;
  std::string metrics;
  std::string kind = "auto";
  std::string out;
  std::size_t threads = 1;
};

EvalBatch batch_from_trace(const Trace& tr, const std::vector<world::Scenario>& data, std::string kind) {
  if (kind == "auto") {
    const bool has_gen = std::any_of(tr.records.begin(), tr.records.end(), [](const TraceRecord& r) { return r.kind == "gen"; });
    kind = has_gen ? "gen" : "exec";
  }
  require(kind == "gen" || kind == "exec", "--kind must be auto, gen or exec");
  std::map<std::uint64_t, const world::Scenario*> by_id;
  for (const world::Scenario& s : data) by_id[s.id] = &s;

  // episode -> sample -> agent -> rows
  std::map<std::uint64_t, std::map<std::size_t, std::map<std::size_t, std::vector<TraceRecord>>>> grouped;
  std::map<std::uint64_t, std::map<std::size_t, geo::Vec2>> goals;
  for (const TraceRecord& r : tr.records) {
    if (r.kind == "goal") {
      goals[r.episode][r.agent] = {r.x, r.y};
    } else if (r.kind == kind) {
      grouped[r.episode][r.step][r.agent].push_back(r);
    }
  }
  if (grouped.empty()) throw DataError("trace has no '" + kind + "' records");

  EvalBatch batch;
  for (const auto& [episode, samples] : grouped) {
    const auto it = by_id.find(episode);
    if (it == by_id.end()) throw DataError("trace episode " + std::to_string(episode) + " is not in the dataset");
    const world::Scenario& s = *it->second;
    const std::size_t n = s.agents.size();
    EvalScene e;
    e.id = episode;
    e.drivable = drivable_area(s);
    std::size_t steps = 0;
    for (const auto& [k, agents] : samples) {
      if (agents.size() != n || agents.rbegin()->first != n - 1) {
        throw DataError("trace episode " + std::to_string(episode) + " sample " + std::to_string(k) + " has " +
                        std::to_string(agents.size()) + " agents, dataset scenario has " + std::to_string(n));
      }
      std::vector<AgentTrack> sample;
      for (const auto& [agent, recs] : agents) {
        AgentTrack t;
        t.length = recs.front().length;
        t.width = recs.front().width;
        for (std::size_t j = 0; j < recs.size(); ++j) {
          if (recs[j].t != j) throw DataError("trace episode " + std::to_string(episode) + " rows are out of order");
          t.rows.push_back({recs[j].x, recs[j].y, recs[j].theta, recs[j].vx, recs[j].vy});
        }
        if (steps == 0) steps = t.rows.size();
        if (t.rows.size() != steps) throw DataError("trace episode " + std::to_string(episode) + " has ragged rows");
        sample.push_back(std::move(t));
      }
      e.samples.push_back(std::move(sample));
    }
    if (s.future_steps() < steps) {
      throw DataError("scenario " + std::to_string(episode) + " records " + std::to_string(s.future_steps()) +
                      " future steps, trace has " + std::to_string(steps));
    }
    for (std::size_t i = 0; i < n; ++i) {
      e.gt.emplace_back(s.agents[i].future.begin(), s.agents[i].future.begin() + static_cast<long>(steps));
      e.modeled.push_back(kind == "gen" || i == s.ego);
      e.pedestrian.push_back(s.agents[i].type == world::AgentType::pedestrian);
      e.goals.emplace_back();
    }
    if (auto g = goals.find(episode); g != goals.end()) {
      for (const auto& [agent, p] : g->second) {
        if (agent >= n) throw DataError("goal names agent " + std::to_string(agent) + " of scene " + std::to_string(episode));
        e.goals[agent] = p;
      }
    }
    batch.push_back(std::move(e));
  }
  return batch;
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  const Trace tr = load_trace(a.trace);
  const std::string data_hash = file_hash(a.data);
  const std::string recorded = tr.header_value("data");
  if (!recorded.empty() && recorded != data_hash) {
    throw DataError("trace was produced from dataset " + recorded + ", but " + a.data + " hashes to " + data_hash);
  }
  const auto data = world::load_dataset(a.data);
  const EvalBatch batch = batch_from_trace(tr, data, a.kind);
  const MetricReport rep = evaluate(batch, split(a.metrics, ','));
  out << rep.to_table();
  if (!a.out.empty()) {
    RunDir run("eval", a.out);
    run.input("trace", a.trace);
    run.input("data", a.data);
    run.config().set("eval.metrics", a.metrics);
    run.config().set("eval.kind", a.kind);
    run.config().set("cli.threads", std::to_string(a.threads));
    write_text(run.path() / "report.csv", rep.to_csv());
    run.output("report.csv");
    run.finish();
  }
  return kOk;
}

// ---------------------------------------------------------------- schedule

struct ScheduleArgs {
  std::string mode = "temporal";
  std::size_t steps = 5;
  std::string dims = "2x20";
  int levels = 5;
};

int cmd_schedule(const ScheduleArgs& a, std::ostream& out, std::ostream&) {
  const auto x = a.dims.find('x');
  require(x != std::string::npos, "--dims expects AGENTSxSTEPS, e.g. 8x20");
  std::size_t agents = 0, steps = 0;
  try {
    agents = std::stoul(a.dims.substr(0, x));
    steps = std::stoul(a.dims.substr(x + 1));
  } catch (const std::logic_error&) {
    throw ContractViolation("--dims expects AGENTSxSTEPS, e.g. 8x20");
  }
  const auto s = noise::build_schedule(noise::parse_schedule_mode(a.mode), a.steps, agents, steps, a.levels);
  out << noise::dump_schedule(s);
  return kOk;
}

// ---------------------------------------------------------------- plot

struct PlotArgs {
  std::string trace;
  std::string data;
  std::string out;
  std::uint64_t scene = 0;
  std::size_t sample = 0;
};

int cmd_plot(const PlotArgs& a, std::ostream& out, std::ostream&) {
  const Trace tr = load_trace(a.trace);
  const auto data = world::load_dataset(a.data);
  const auto it = std::find_if(data.begin(), data.end(), [&](const world::Scenario& s) { return s.id == a.scene; });
  if (it == data.end()) throw DataError("scene " + std::to_string(a.scene) + " is not in the dataset");
  const world::Scenario& s = *it;

  std::map<std::size_t, std::vector<const TraceRecord*>> tracks;
  std::vector<const TraceRecord*> goal_recs;
  for (const TraceRecord& r : tr.records) {
    if (r.episode != a.scene) continue;
    if (r.kind == "goal") goal_recs.push_back(&r);
    if ((r.kind == "gen" && r.step == a.sample) || r.kind == "exec") tracks[r.agent].push_back(&r);
  }
  if (tracks.empty()) throw DataError("trace has no rows for scene " + std::to_string(a.scene));

  double lo_x = 1e300, lo_y = 1e300, hi_x = -1e300, hi_y = -1e300;
  auto grow = [&](double x, double y) {
    lo_x = std::min(lo_x, x);
    lo_y = std::min(lo_y, y);
    hi_x = std::max(hi_x, x);
    hi_y = std::max(hi_y, y);
  };
  for (const auto& [i, recs] : tracks) {
    for (const TraceRecord* r : recs) grow(r->x, r->y);
  }
  for (const world::Agent& ag : s.agents) {
    for (const auto& r : ag.history) grow(r.x, r.y);
  }
  const double pad = 15.0;
  lo_x -= pad;
  lo_y -= pad;
  hi_x += pad;
  hi_y += pad;

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(3);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"" << lo_x << ' ' << -hi_y << ' ' << hi_x - lo_x << ' '
      << hi_y - lo_y << "\" width=\"800\" height=\"" << 800.0 * (hi_y - lo_y) / (hi_x - lo_x) << "\">\n";
  svg << "<rect x=\"" << lo_x << "\" y=\"" << -hi_y << "\" width=\"" << hi_x - lo_x << "\" height=\"" << hi_y - lo_y
      << "\" fill=\"#ffffff\"/>\n<g transform=\"scale(1,-1)\">\n";
  auto polyline = [&](const std::vector<std::pair<double, double>>& pts, const std::string& style) {
    svg << "<polyline fill=\"none\" " << style << " points=\"";
    for (const auto& [x, y] : pts) svg << x << ',' << y << ' ';
    svg << "\"/>\n";
  };
  for (const world::Polyline& l : s.lanes) {
    std::vector<std::pair<double, double>> pts;
    for (const geo::Pose& p : l.points) pts.emplace_back(p.x, p.y);
    polyline(pts, "stroke=\"#e4e4e4\" stroke-width=\"" + fmt(world::kLaneWidth) + "\" stroke-linecap=\"round\"");
    polyline(pts, "stroke=\"#b0b0b0\" stroke-width=\"0.15\" stroke-dasharray=\"1,1\"");
  }
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  for (const auto& [i, recs] : tracks) {
    const std::string color = i == s.ego ? "#000000" : colors[i % 8];
    std::vector<std::pair<double, double>> hist, fut, gt;
    for (const auto& r : s.agents[i].history) hist.emplace_back(r.x, r.y);
    for (const TraceRecord* r : recs) fut.emplace_back(r->x, r->y);
    for (std::size_t t = 0; t < recs.size() && t < s.agents[i].future.size(); ++t) {
      gt.emplace_back(s.agents[i].future[t].x, s.agents[i].future[t].y);
    }
    polyline(hist, "stroke=\"" + color + "\" stroke-width=\"0.3\" stroke-opacity=\"0.5\"");
    polyline(gt, "stroke=\"" + color + "\" stroke-width=\"0.2\" stroke-dasharray=\"0.6,0.6\"");
    polyline(fut, "stroke=\"" + color + "\" stroke-width=\"0.35\"");
    const TraceRecord& last = *recs.back();
    const auto c = geo::corners({last.x, last.y, last.theta, last.length, last.width});
    svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.4\" points=\"";
    for (const geo::Vec2& p : c) svg << p.x << ',' << p.y << ' ';
    svg << "\"/>\n";
  }
  for (const TraceRecord* g : goal_recs) {
    svg << "<circle cx=\"" << g->x << "\" cy=\"" << g->y << "\" r=\"1\" fill=\"none\" stroke=\"#000000\" stroke-width=\"0.25\"/>\n";
  }
  svg << "</g>\n</svg>\n";
  fs::path path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, svg.str());
  out << "wrote " << a.out << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked denoising generation for multi-agent trajectories", "mdg"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* sub_gd = app.add_subcommand("gen-data", "generate a synthetic scenario dataset");
  sub_gd->add_option("--out", gd.out, "output directory")->required();
  sub_gd->add_option("--kinds", gd.kinds, "comma-separated map kinds (straight,curve,intersection,merge)");
  sub_gd->add_option("--count", gd.count, "number of scenarios");
  sub_gd->add_option("--agents", gd.agents, "agents per scenario");
  sub_gd->add_option("--history", gd.history, "observed steps including the current one");
  sub_gd->add_option("--future", gd.future, "future steps");
  sub_gd->add_option("--pedestrian-prob", gd.pedestrian_prob, "chance that a spawned agent is a pedestrian");
  sub_gd->add_option("--seed", gd.seed, "master seed");
  add_threads_option(sub_gd, gd.threads);

  TrainArgs ta;
  auto* sub_tr = app.add_subcommand("train", "train a model");
  sub_tr->add_option("--data", ta.data, "dataset file")->required();
  sub_tr->add_option("--config", ta.config, "key=value config file (model., train.)");
  sub_tr->add_option("--out", ta.out, "output directory")->required();
  sub_tr->add_option("--set", ta.sets, "config override key=value (repeatable)");
  sub_tr->add_option("--epochs", ta.epochs, "overrides train.epochs");
  sub_tr->add_option("--seed", ta.seed, "overrides train.seed");
  add_threads_option(sub_tr, ta.threads);

  GenerateArgs ge;
  auto* sub_ge = app.add_subcommand("generate", "sample joint futures");
  sub_ge->add_option("--ckpt", ge.ckpt, "model checkpoint")->required();
  sub_ge->add_option("--data", ge.data, "dataset file")->required();
  sub_ge->add_option("--out", ge.out, "output directory")->required();
  sub_ge->add_option("--mode", ge.mode, "one_step, temporal or agent");
  sub_ge->add_option("--steps", ge.steps, "denoising steps");
  sub_ge->add_option("--samples", ge.samples, "samples per scene");
  sub_ge->add_option("--seed", ge.seed, "sampling seed");
  sub_ge->add_option("--guide", ge.guide, "goals file (scene,agent,x,y) enabling guidance");
  sub_ge->add_option("--scenes", ge.scenes, "use only the first N scenes (0 = all)");
  add_threads_option(sub_ge, ge.threads);

  RolloutArgs ro;
  auto* sub_ro = app.add_subcommand("rollout", "closed-loop replanning episodes");
  sub_ro->add_option("--ckpt", ro.ckpt, "model checkpoint")->required();
  sub_ro->add_option("--data", ro.data, "episode dataset")->required();
  sub_ro->add_option("--out", ro.out, "output directory")->required();
  sub_ro->add_option("--replan-hz", ro.replan_hz, "replanning frequency");
  sub_ro->add_option("--horizon", ro.horizon, "executed base steps per episode");
  sub_ro->add_flag("--reuse", ro.reuse, "warm-start each plan from the previous one");
  sub_ro->add_flag("--compare", ro.compare, "run with and without reuse and compare");
  sub_ro->add_option("--seed", ro.seed, "sampling seed");
  sub_ro->add_option("--episodes", ro.episodes, "use only the first N episodes (0 = all)");
  add_threads_option(sub_ro, ro.threads);

  EvalArgs ev;
  auto* sub_ev = app.add_subcommand("eval", "score a trace against its dataset");
  sub_ev->add_option("--trace", ev.trace, "trace file")->required();
  sub_ev->add_option("--data", ev.data, "dataset file")->required();
  sub_ev->add_option("--metrics", ev.metrics, "comma-separated subset of cr,or,sade,minsade,gr");
  sub_ev->add_option("--kind", ev.kind, "trace rows to score: auto, gen or exec");
  sub_ev->add_option("--out", ev.out, "optional output directory for report.csv");
  add_threads_option(sub_ev, ev.threads);

  ScheduleArgs sc;
  auto* sub_sc = app.add_subcommand("schedule", "print an inference mask schedule");
  sub_sc->add_option("--mode", sc.mode, "one_step, temporal or agent");
  sub_sc->add_option("--steps", sc.steps, "denoising steps");
  sub_sc->add_option("--dims", sc.dims, "AGENTSxSTEPS");
  sub_sc->add_option("--levels", sc.levels, "number of noise levels K");

  PlotArgs pl;
  auto* sub_pl = app.add_subcommand("plot", "draw one scene of a trace as SVG");
  sub_pl->add_option("--trace", pl.trace, "trace file")->required();
  sub_pl->add_option("--data", pl.data, "dataset file")->required();
  sub_pl->add_option("--out", pl.out, "SVG path")->required();
  sub_pl->add_option("--scene", pl.scene, "scenario id");
  sub_pl->add_option("--sample", pl.sample, "sample index for generation traces");

  std::vector<std::string> storage = {"mdg"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (sub_gd->parsed()) return cmd_gen_data(gd, out, err);
    if (sub_tr->parsed()) return cmd_train(ta, out, err);
    if (sub_ge->parsed()) return cmd_generate(ge, out, err);
    if (sub_ro->parsed()) return cmd_rollout(ro, out, err);
    if (sub_ev->parsed()) return cmd_eval(ev, out, err);
    if (sub_sc->parsed()) return cmd_schedule(sc, out, err);
    if (sub_pl->parsed()) return cmd_plot(pl, out, err);
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericFailure& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const DomainError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace mdg::cli
