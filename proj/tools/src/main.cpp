#include <atomic>
#include <cinttypes>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evoloss/algorithms.hpp"
#include "evoloss/analysis.hpp"
#include "evoloss/env_grid.hpp"
#include "evoloss/evolve.hpp"
#include "evoloss/hashing.hpp"
#include "evoloss/pretty.hpp"
#include "evoloss/textio.hpp"
#include "evoloss/train.hpp"

namespace {

using evoloss::ConfigError;
using nlohmann::json;

std::atomic<bool> g_stop{false};

void on_sigint(int) { g_stop.store(true); }

std::string hex_digest(std::uint64_t d) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%016" PRIx64, d);
  return buf;
}

struct CommonOpts {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = ".";
  std::string config;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--seed", opts.seed, "root random seed");
  cmd->add_option("--workers", opts.workers, "worker thread count")
      ->envname("EVOLOSS_WORKERS");
  cmd->add_option("--out", opts.out, "output directory for run artifacts");
  cmd->add_option("--config", opts.config, "flat key=value config file; flags win")
      ->check(CLI::ExistingFile);
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line is not key=value: " + line);
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

// Layers a flat key=value file under the parsed command line: every key must
// name an option of the subcommand, and options given as flags keep their
// command-line value.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  for (const auto& [key, value] : read_kv_file(path)) {
    CLI::Option* op = cmd->get_option_no_throw("--" + key);
    if (op == nullptr || key == "config") {
      throw ConfigError("unknown config key '" + key + "' in " + path);
    }
    if (op->count() > 0) continue;
    op->add_result(value);
    op->run_callback();
  }
}

struct TrainOpts {
  CommonOpts common;
  std::string algo;
  std::string program;
  std::string env = "cartpole";
  int episodes = 0;
  long steps = 0;
  int hidden = 256;
  int batch = 32;
  int buffer = 10000;
  int target_sync = 100;
  double gamma = 0.99;
  double lr = 1e-4;
  long eps_decay = 0;
  long probe_interval = 0;
  bool mask_terminal = true;
  bool per_element_noise = true;
};

evoloss::TrainConfig to_train_config(const TrainOpts& o) {
  evoloss::TrainConfig tc;
  tc.episodes = o.episodes;
  tc.step_budget = o.steps;
  tc.hidden = o.hidden;
  tc.batch_size = o.batch;
  tc.buffer_capacity = o.buffer;
  tc.target_sync = o.target_sync;
  tc.gamma = o.gamma;
  tc.adam.lr = o.lr;
  tc.eps_decay_steps = o.eps_decay;
  tc.probe_interval = o.probe_interval;
  tc.mask_terminal_bootstrap = o.mask_terminal;
  tc.per_element_noise = o.per_element_noise;
  tc.seed = o.common.seed;
  return tc;
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : os_(path, std::ios::trunc) {
    if (!os_) throw ConfigError("cannot write metrics file: " + path);
  }
  void write(const json& record) {
    os_ << record.dump() << "\n";
    if (++count_ % 64 == 0) os_.flush();
  }

 private:
  std::ofstream os_;
  long count_ = 0;
};

// Ground-truth Q*(s0, 0) where an exact oracle exists (deterministic grids).
std::optional<double> oracle_q0(const std::string& env, double gamma) {
  if (env.rfind("grid:", 0) != 0) return std::nullopt;
  const evoloss::GridTask task = evoloss::parse_grid_task(env);
  if (!evoloss::grid_task_deterministic(task)) return std::nullopt;
  const evoloss::TabularModel model = evoloss::enumerate_gridworld(task, gamma);
  const Eigen::MatrixXd q = evoloss::q_star(model);
  return q(model.start, 0);
}

evoloss::LossProgram resolve_program(const std::string& algo, const std::string& file) {
  if (algo.empty() == file.empty()) {
    throw ConfigError("give exactly one of --algo or --program");
  }
  if (!algo.empty()) return evoloss::algorithm_by_name(algo);
  return evoloss::load_program_file(file);
}

void write_resolved_config(const TrainOpts& o, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  os << "# resolved run configuration\n";
  if (!o.algo.empty()) os << "algo=" << o.algo << "\n";
  if (!o.program.empty()) os << "program=" << o.program << "\n";
  os << "env=" << o.env << "\n"
     << "episodes=" << o.episodes << "\n"
     << "steps=" << o.steps << "\n"
     << "seed=" << o.common.seed << "\n"
     << "hidden=" << o.hidden << "\n"
     << "batch=" << o.batch << "\n"
     << "buffer=" << o.buffer << "\n"
     << "target-sync=" << o.target_sync << "\n"
     << "gamma=" << o.gamma << "\n"
     << "lr=" << o.lr << "\n"
     << "eps-decay=" << o.eps_decay << "\n"
     << "probe-interval=" << o.probe_interval << "\n"
     << "mask-terminal=" << (o.mask_terminal ? "true" : "false") << "\n"
     << "per-element-noise=" << (o.per_element_noise ? "true" : "false") << "\n";
}

int run_train(const TrainOpts& o) {
  const evoloss::LossProgram prog = resolve_program(o.algo, o.program);
  const evoloss::ValidationReport report = evoloss::validate_program(prog);
  if (!report.is_valid) {
    std::cerr << "program failed checks:\n" << report.describe() << "\n";
    return 2;
  }

  std::filesystem::create_directories(o.common.out);
  const std::string run_id =
      "train-" + o.env + "-s" + std::to_string(o.common.seed);
  MetricsWriter metrics(o.common.out + "/metrics.jsonl");
  write_resolved_config(o, o.common.out + "/config.cfg");

  const evoloss::TrainConfig tc = to_train_config(o);
  const evoloss::EvalResult res = evoloss::eval_algorithm(prog, o.env, tc);

  const auto env = evoloss::make_env(o.env);
  const evoloss::EnvSpec& spec = env->spec();
  const long decay = tc.eps_decay_steps > 0 ? tc.eps_decay_steps : spec.eps_decay_steps;
  long step_cursor = 0;
  for (std::size_t m = 0; m < res.episode_returns.size(); ++m) {
    step_cursor += res.episode_lengths[m];
    const double frac = std::min(1.0, static_cast<double>(step_cursor) / decay);
    metrics.write(json{{"run", run_id},
                       {"kind", "episode"},
                       {"index", m},
                       {"return", res.episode_returns[m]},
                       {"norm", evoloss::normalized_return(res.episode_returns[m], spec)},
                       {"steps", res.episode_lengths[m]},
                       {"eps", 1.0 + frac * (0.05 - 1.0)}});
  }
  const std::optional<double> oracle = oracle_q0(o.env, o.gamma);
  for (std::size_t i = 0; i < res.probe_steps.size(); ++i) {
    json rec{{"run", run_id},
             {"kind", "probe"},
             {"step", res.probe_steps[i]},
             {"q0", res.q_probe[i].empty() ? 0.0 : res.q_probe[i][0]}};
    if (oracle) {
      rec["oracle"] = *oracle;
    } else {
      rec["oracle"] = nullptr;
    }
    metrics.write(rec);
  }

  evoloss::save_params_file(res.params, o.common.out + "/params.bin");

  if (res.diverged) std::cout << "diverged true\n";
  std::printf("normalized_score %.6f\n", res.normalized_score);
  return 0;
}

struct EvolveOpts {
  CommonOpts common;
  std::string bootstrap = "dqn";
  int pop = 20;
  int tourney = 5;
  long cycles = 100;
  double mutate_prob = 0.95;
  int op_budget = 20;
  std::vector<std::string> envs{"cartpole", "grid:empty:5"};
  int seeds_per_env = 1;
  std::string hurdle_env = "cartpole";
  double alpha = 0.6;
  int hurdle_episodes = 0;
  long hurdle_steps = 0;
  int episodes = 0;  // suite budget overrides; 0 = env defaults
  long steps = 0;
  int hidden = 256;
  bool deterministic = false;
  bool hurdle_fail_zero = false;
  long checkpoint_every = 25;
  std::string resume;
};

int run_evolve(const EvolveOpts& o) {
  evoloss::EvoConfig ec;
  if (o.bootstrap == "dqn") {
    ec.bootstrap = evoloss::Bootstrap::Dqn;
  } else if (o.bootstrap == "scratch") {
    ec.bootstrap = evoloss::Bootstrap::Scratch;
  } else {
    throw ConfigError("unknown bootstrap mode '" + o.bootstrap + "' (dqn or scratch)");
  }
  ec.population = o.pop;
  ec.tournament = o.tourney;
  ec.cycles = o.cycles;
  ec.mutate_prob = o.mutate_prob;
  ec.op_budget = o.op_budget;
  ec.suite = o.envs;
  ec.seeds_per_env = o.seeds_per_env;
  ec.hurdle_env = o.hurdle_env;
  ec.hurdle_alpha = o.alpha;
  ec.hurdle_train.episodes = o.hurdle_episodes;
  ec.hurdle_train.step_budget = o.hurdle_steps;
  ec.hurdle_train.hidden = o.hidden;
  ec.suite_train.episodes = o.episodes;
  ec.suite_train.step_budget = o.steps;
  ec.suite_train.hidden = o.hidden;
  ec.seed = o.common.seed;
  ec.workers = o.common.workers;
  ec.deterministic = o.deterministic;
  ec.hurdle_fail_score_zero = o.hurdle_fail_zero;
  ec.checkpoint_every = o.checkpoint_every;
  ec.stop = &g_stop;

  std::filesystem::create_directories(o.common.out);
  ec.checkpoint_path = o.common.out + "/checkpoint.bin";
  const std::string run_id = "evolve-s" + std::to_string(o.common.seed);
  MetricsWriter metrics(o.common.out + "/metrics.jsonl");
  ec.on_cycle = [&](const evoloss::CycleRecord& rec) {
    metrics.write(json{{"run", run_id},
                       {"kind", "cycle"},
                       {"birth", rec.birth},
                       {"score", rec.score},
                       {"hash", hex_digest(rec.hash)},
                       {"duplicate", rec.duplicate},
                       {"check_fail", rec.check_failed},
                       {"hurdle", rec.hurdle_failed},
                       {"fault", rec.fault},
                       {"evals", rec.evals},
                       {"best", rec.best_score}});
  };

  std::signal(SIGINT, on_sigint);
  evoloss::EvoResult res;
  if (o.resume.empty()) {
    res = evoloss::run_evolution(ec);
  } else {
    res = evoloss::run_evolution(ec, evoloss::load_checkpoint(o.resume));
  }
  std::signal(SIGINT, SIG_DFL);

  const evoloss::EvoState& st = res.state;
  if (st.has_best) {
    evoloss::save_program_file(st.best.program, o.common.out + "/best.loss");
    std::cout << "best_score " << st.best.score << " (birth " << st.best.birth << ")\n"
              << "best_loss " << evoloss::pretty_print(st.best.program) << "\n";
  }
  std::cout << "cycles_done " << st.cycles_done << "\n"
            << "duplicate_fraction " << st.log.duplicate_fraction() << "\n"
            << "hurdle_cut_fraction " << st.log.hurdle_cut_fraction() << "\n"
            << "evals " << st.log.evals << " faults " << st.log.faults << "\n"
            << "checkpoint " << ec.checkpoint_path << "\n";
  if (res.interrupted) std::cout << "interrupted true\n";
  return 0;
}

int run_validate(const std::string& file) {
  const evoloss::LossProgram prog = evoloss::load_program_file(file);
  const evoloss::ValidationReport report = evoloss::validate_program(prog);
  if (report.is_valid) {
    std::cout << "valid\n";
    return 0;
  }
  std::cout << report.describe() << "\n";
  return 2;
}

int run_hash(const std::string& file) {
  const evoloss::LossProgram prog = evoloss::load_program_file(file);
  const std::uint64_t digest = evoloss::functional_hash(prog);
  std::cout << hex_digest(digest) << "\n";
  if (digest == evoloss::kInvalidDigest) {
    std::cerr << "note: program does not evaluate; digest is the invalid class\n";
  }
  return 0;
}

std::string kv_get(const std::map<std::string, std::string>& kv, const std::string& key,
                   const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

struct AnalyzeOpts {
  CommonOpts common;
  std::string run_dir;
  std::string kind;
};

int run_analyze(const AnalyzeOpts& o) {
  const auto kv = read_kv_file(o.run_dir + "/config.cfg");
  const std::string env = kv_get(kv, "env", "");
  if (env.empty()) throw ConfigError("run config lacks env=");
  const double gamma = std::stod(kv_get(kv, "gamma", "0.99"));
  const std::string out_dir = o.common.out == "." ? o.run_dir : o.common.out;
  std::filesystem::create_directories(out_dir);

  if (o.kind == "oracle") {
    const evoloss::TabularModel model = evoloss::enumerate_gridworld(env, gamma);
    const Eigen::MatrixXd q = evoloss::q_star(model);
    std::ofstream tsv(out_dir + "/oracle.tsv", std::ios::trunc);
    MetricsWriter jsonl(out_dir + "/oracle.jsonl");
    tsv << "state\taction\tq\n";
    for (int s = 0; s < q.rows(); ++s) {
      for (int a = 0; a < q.cols(); ++a) {
        tsv << s << "\t" << a << "\t" << q(s, a) << "\n";
        jsonl.write(json{{"kind", "oracle"}, {"state", s}, {"action", a}, {"q", q(s, a)}});
      }
    }
    std::cout << "states " << model.states.size() << " start " << model.start
              << " q_star(s0,0) " << q(model.start, 0) << "\n";
    return 0;
  }

  if (o.kind == "probe") {
    std::ifstream is(o.run_dir + "/metrics.jsonl");
    if (!is) throw ConfigError("no metrics.jsonl in " + o.run_dir);
    std::ofstream tsv(out_dir + "/probe.tsv", std::ios::trunc);
    tsv << "step\tq0\toracle\tgap\n";
    std::string line;
    long rows = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const json rec = json::parse(line);
      if (rec.value("kind", "") != "probe") continue;
      const double q0 = rec.value("q0", 0.0);
      const double oracle =
          rec["oracle"].is_null() ? std::nan("") : rec["oracle"].get<double>();
      tsv << rec.value("step", 0L) << "\t" << q0 << "\t" << oracle << "\t"
          << q0 - oracle << "\n";
      ++rows;
    }
    std::cout << "probe_rows " << rows << "\n";
    return 0;
  }

  if (o.kind == "cases") {
    const evoloss::ParameterStore<float> ps =
        evoloss::load_params_file(o.run_dir + "/params.bin");
    const int batch = std::stoi(kv_get(kv, "batch", "32"));
    const bool mask = kv_get(kv, "mask-terminal", "true") == "true";
    auto env_ptr = evoloss::make_env(env);

    // Roll transitions with the trained greedy policy (eps 0.05), then
    // sample minibatches exactly as training would.
    evoloss::ReplayBuffer buffer(4096);
    evoloss::Rng act_rng = evoloss::fork_stream(o.common.seed, "analyze-act");
    evoloss::Rng samp_rng = evoloss::fork_stream(o.common.seed, "analyze-sample");
    Eigen::VectorXd obs = env_ptr->reset(evoloss::mix_seed(o.common.seed, 0x616e6c7a));
    for (int t = 0; t < 2048; ++t) {
      const int a = evoloss::epsilon_greedy(evoloss::q_values(ps, obs), 0.05, act_rng);
      const evoloss::StepResult sr = env_ptr->step(a);
      evoloss::Transition tr;
      tr.s = obs.cast<float>();
      tr.s_next = sr.obs.cast<float>();
      tr.a = a;
      tr.r = static_cast<float>(sr.reward);
      tr.terminal = sr.done;
      buffer.push(std::move(tr));
      obs = sr.done ? env_ptr->reset() : sr.obs;
    }

    std::ofstream tsv(out_dir + "/cases.tsv", std::ios::trunc);
    tsv << "batch\tcase1\tcase2\tcase3\tcase4\n";
    evoloss::CaseActivity total;
    const int batches = 64;
    for (int b = 0; b < batches; ++b) {
      const auto bind = buffer.sample(batch, samp_rng, static_cast<float>(gamma), mask);
      const evoloss::CaseActivity act = evoloss::case_activity(bind, ps);
      tsv << b;
      for (int c = 0; c < 4; ++c) {
        tsv << "\t" << act.frac[c];
        total.frac[c] += act.frac[c] / batches;
      }
      tsv << "\n";
    }
    std::printf("case_fractions %.4f %.4f %.4f %.4f\n", total.frac[0], total.frac[1],
                total.frac[2], total.frac[3]);
    return 0;
  }

  throw ConfigError("unknown analysis kind '" + o.kind + "' (oracle, probe, cases)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meta-learning over RL loss programs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "0.1.0");

  TrainOpts train;
  CLI::App* cmd_train = app.add_subcommand("train", "train one agent with a loss program");
  add_common(cmd_train, train.common);
  cmd_train->add_option("--algo", train.algo, "named algorithm (dqn, ddqn, dqnclipped, dqnreg)");
  cmd_train->add_option("--program", train.program, "loss program file")
      ->check(CLI::ExistingFile);
  cmd_train->add_option("--env", train.env, "environment name");
  cmd_train->add_option("--episodes", train.episodes, "episode budget (0: env default)");
  cmd_train->add_option("--steps", train.steps, "env step budget (0: env default)");
  cmd_train->add_option("--hidden", train.hidden, "MLP hidden width");
  cmd_train->add_option("--batch", train.batch, "minibatch size");
  cmd_train->add_option("--buffer", train.buffer, "replay capacity");
  cmd_train->add_option("--target-sync", train.target_sync, "grad steps between target syncs");
  cmd_train->add_option("--gamma", train.gamma, "discount");
  cmd_train->add_option("--lr", train.lr, "Adam learning rate");
  cmd_train->add_option("--eps-decay", train.eps_decay, "epsilon decay steps (0: env default)");
  cmd_train->add_option("--probe-interval", train.probe_interval, "steps between Q(s0) probes");
  cmd_train->add_flag("--mask-terminal,!--no-mask-terminal", train.mask_terminal,
                      "zero the gamma input on terminal transitions");
  cmd_train->add_flag("--per-element-noise,!--shared-noise", train.per_element_noise,
                      "stochastic nodes draw per sample");

  EvolveOpts evolve;
  CLI::App* cmd_evolve = app.add_subcommand("evolve", "run regularized evolution");
  add_common(cmd_evolve, evolve.common);
  cmd_evolve->add_option("--bootstrap", evolve.bootstrap, "population seed: dqn or scratch");
  cmd_evolve->add_option("--pop", evolve.pop, "population size");
  cmd_evolve->add_option("--tourney", evolve.tourney, "tournament size");
  cmd_evolve->add_option("--cycles", evolve.cycles, "evolution cycles");
  cmd_evolve->add_option("--mutate-prob", evolve.mutate_prob, "mutation probability");
  cmd_evolve->add_option("--op-budget", evolve.op_budget, "op nodes per program");
  cmd_evolve->add_option("--envs", evolve.envs, "full-evaluation suite")->delimiter(',');
  cmd_evolve->add_option("--seeds-per-env", evolve.seeds_per_env, "seeds per suite env");
  cmd_evolve->add_option("--hurdle-env", evolve.hurdle_env, "early hurdle environment");
  cmd_evolve->add_option("--alpha", evolve.alpha, "hurdle threshold");
  cmd_evolve->add_option("--hurdle-episodes", evolve.hurdle_episodes,
                         "hurdle episode budget (0: env default)");
  cmd_evolve->add_option("--hurdle-steps", evolve.hurdle_steps,
                         "hurdle step budget (0: env default)");
  cmd_evolve->add_option("--episodes", evolve.episodes, "suite episode budget (0: env default)");
  cmd_evolve->add_option("--steps", evolve.steps, "suite step budget (0: env default)");
  cmd_evolve->add_option("--hidden", evolve.hidden, "MLP hidden width");
  cmd_evolve->add_flag("--deterministic", evolve.deterministic,
                       "schedule-independent runs (window-serialized results)");
  cmd_evolve->add_flag("--hurdle-fail-zero", evolve.hurdle_fail_zero,
                       "score hurdle failures 0 instead of the hurdle score");
  cmd_evolve->add_option("--checkpoint-every", evolve.checkpoint_every,
                         "cycles between checkpoints");
  cmd_evolve->add_option("--resume", evolve.resume, "checkpoint.bin to resume from")
      ->check(CLI::ExistingFile);

  std::string validate_file;
  CLI::App* cmd_validate = app.add_subcommand("validate", "check a loss program file");
  CommonOpts validate_common;
  add_common(cmd_validate, validate_common);
  cmd_validate->add_option("program", validate_file, "loss program file")
      ->required()
      ->check(CLI::ExistingFile);

  std::string hash_file;
  CLI::App* cmd_hash = app.add_subcommand("hash", "print a program's functional digest");
  CommonOpts hash_common;
  add_common(cmd_hash, hash_common);
  cmd_hash->add_option("program", hash_file, "loss program file")
      ->required()
      ->check(CLI::ExistingFile);

  AnalyzeOpts analyze;
  CLI::App* cmd_analyze = app.add_subcommand("analyze", "diagnostics over a train run dir");
  add_common(cmd_analyze, analyze.common);
  cmd_analyze->add_option("--run", analyze.run_dir, "train run directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  cmd_analyze->add_option("--kind", analyze.kind, "oracle | probe | cases")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*cmd_train) {
      if (!train.common.config.empty()) apply_config_file(cmd_train, train.common.config);
      return run_train(train);
    }
    if (*cmd_evolve) {
      if (!evolve.common.config.empty()) apply_config_file(cmd_evolve, evolve.common.config);
      return run_evolve(evolve);
    }
    if (*cmd_validate) return run_validate(validate_file);
    if (*cmd_hash) return run_hash(hash_file);
    if (*cmd_analyze) {
      if (!analyze.common.config.empty()) apply_config_file(cmd_analyze, analyze.common.config);
      return run_analyze(analyze);
    }
  } catch (const evoloss::ParseError& e) {
    std::cerr << "program parse error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
