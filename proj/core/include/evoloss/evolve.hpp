#pragma once

// Regularized evolution over loss programs: FIFO population, tournament
// parent selection, mutate-or-resample children, functional-hash dedup, a
// cart-pole hurdle before full-suite evaluation, and an optional worker pool.

#include <array>
#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "evoloss/hashing.hpp"
#include "evoloss/program.hpp"
#include "evoloss/train.hpp"

namespace evoloss {

struct Individual {
  LossProgram program;
  double score = 0.0;
  bool scored = false;
  std::uint64_t hash = kInvalidDigest;
  long birth = 0;
  long parent = -1;  // parent birth index, -1 for fresh samples and seeds
  bool duplicate = false;
  bool check_failed = false;
  bool hurdle_failed = false;
  bool diverged = false;
  bool fault = false;
  long evals = 0;  // inner-loop training runs this candidate cost
};

struct HistoryEntry {
  double score = 0.0;
  long first_seen = 0;
  std::string text;
};

// Append-only; a digest's score never changes once set. Ordered so that
// checkpoints serialize identically across runs.
using History = std::map<std::uint64_t, HistoryEntry>;

struct EvoLog {
  long proposals = 0;
  long duplicates = 0;
  long check_fails = 0;
  long hurdle_fails = 0;
  long faults = 0;
  long retries = 0;
  long evals = 0;
  std::vector<double> best_trace;  // best-ever score after each applied candidate

  double duplicate_fraction() const {
    return proposals > 0 ? static_cast<double>(duplicates) / proposals : 0.0;
  }
  double hurdle_cut_fraction() const {
    const long fresh = proposals - duplicates - check_fails;
    return fresh > 0 ? static_cast<double>(hurdle_fails) / fresh : 0.0;
  }
};

// Outcome of the expensive stage (hurdle + suite) for one candidate.
struct CandidateScore {
  double score = 0.0;
  bool hurdle_failed = false;
  bool diverged = false;
  bool fault = false;
  long evals = 0;
};

struct CycleRecord {
  long birth = 0;
  double score = 0.0;
  std::uint64_t hash = kInvalidDigest;
  bool duplicate = false;
  bool check_failed = false;
  bool hurdle_failed = false;
  bool fault = false;
  long evals = 0;
  double best_score = 0.0;
};

enum class Bootstrap { Scratch, Dqn };

struct EvoConfig {
  int population = 20;
  int tournament = 5;
  long cycles = 100;  // candidates proposed after the seed population
  double mutate_prob = 0.95;
  int op_budget = 20;

  std::string hurdle_env = "cartpole";
  double hurdle_alpha = 0.6;
  TrainConfig hurdle_train;  // per-candidate seed is filled in by the driver
  std::vector<std::string> suite;
  TrainConfig suite_train;
  int seeds_per_env = 1;

  Bootstrap bootstrap = Bootstrap::Dqn;
  std::uint64_t seed = 0;
  int workers = 1;
  // With several workers, results normally land in completion order, which
  // is timing-dependent. Deterministic mode issues candidate i only after
  // candidate i-workers is applied and applies results in birth order, so a
  // run is a pure function of its config.
  bool deterministic = false;
  bool hurdle_fail_score_zero = false;  // alternative scoring for hurdle failures

  std::string checkpoint_path;  // empty disables checkpointing
  long checkpoint_every = 0;    // cycles between checkpoints; 0: only at the end

  const std::atomic<bool>* stop = nullptr;  // cooperative interrupt

  // Test seam: replaces hurdle + suite for non-duplicate valid candidates.
  std::function<CandidateScore(const LossProgram&, long)> eval_override;
  std::function<void(const CycleRecord&)> on_cycle;
};

// Complete serializable search state; resuming from it in deterministic mode
// reproduces the uninterrupted run bit-exactly.
struct EvoState {
  std::uint64_t seed = 0;
  std::array<std::uint64_t, 4> rng_state{};
  long next_birth = 0;
  long cycles_done = 0;
  EvoLog log;
  Individual best;
  bool has_best = false;
  std::deque<Individual> population;
  History history;
};

struct EvoResult {
  EvoState state;
  bool interrupted = false;

  const Individual& best() const { return state.best; }
};

void save_checkpoint(const EvoState& state, const std::string& path);
EvoState load_checkpoint(const std::string& path);

EvoResult run_evolution(const EvoConfig& cfg);
EvoResult run_evolution(const EvoConfig& cfg, const EvoState& resume_from);

}  // namespace evoloss
