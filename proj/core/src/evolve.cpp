#include "evoloss/evolve.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>
#include <thread>

#include "evoloss/algorithms.hpp"
#include "evoloss/pretty.hpp"
#include "evoloss/sampler.hpp"
#include "evoloss/textio.hpp"

namespace evoloss {
namespace {

struct Job {
  long birth = 0;
  int attempt = 0;
  LossProgram prog;
};

struct Done {
  long birth = 0;
  int attempt = 0;
  CandidateScore score;
};

// Fixed thread pool with a completion queue; the eval function must not throw.
class WorkerPool {
 public:
  WorkerPool(int n, std::function<CandidateScore(const LossProgram&, long)> fn)
      : fn_(std::move(fn)) {
    for (int i = 0; i < n; ++i) {
      threads_.emplace_back([this] { run(); });
    }
  }

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      quit_ = true;
    }
    job_cv_.notify_all();
    for (std::thread& t : threads_) t.join();
  }

  void submit(Job j) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      jobs_.push_back(std::move(j));
    }
    job_cv_.notify_one();
  }

  Done wait_one() {
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return !done_.empty(); });
    Done d = std::move(done_.front());
    done_.pop_front();
    return d;
  }

 private:
  void run() {
    for (;;) {
      Job j;
      {
        std::unique_lock<std::mutex> lk(mu_);
        job_cv_.wait(lk, [this] { return quit_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        j = std::move(jobs_.front());
        jobs_.pop_front();
      }
      Done d;
      d.birth = j.birth;
      d.attempt = j.attempt;
      d.score = fn_(j.prog, j.birth);
      {
        std::lock_guard<std::mutex> lk(mu_);
        done_.push_back(std::move(d));
      }
      done_cv_.notify_one();
    }
  }

  std::function<CandidateScore(const LossProgram&, long)> fn_;
  std::mutex mu_;
  std::condition_variable job_cv_, done_cv_;
  std::deque<Job> jobs_;
  std::deque<Done> done_;
  bool quit_ = false;
  std::vector<std::thread> threads_;
};

void check_config(const EvoConfig& cfg) {
  if (cfg.population < 1) throw ConfigError("evolution: population must be >= 1");
  if (cfg.tournament < 1 || cfg.tournament > cfg.population) {
    throw ConfigError("evolution: tournament size must be in [1, population]");
  }
  if (cfg.mutate_prob < 0.0 || cfg.mutate_prob > 1.0) {
    throw ConfigError("evolution: mutation probability must be in [0, 1]");
  }
  if (cfg.cycles < 0) throw ConfigError("evolution: cycles must be >= 0");
  if (cfg.workers < 1) throw ConfigError("evolution: workers must be >= 1");
  if (cfg.op_budget < 1) throw ConfigError("evolution: op budget must be >= 1");
  if (cfg.seeds_per_env < 1) throw ConfigError("evolution: seeds_per_env must be >= 1");
  if (cfg.checkpoint_every < 0) throw ConfigError("evolution: checkpoint_every must be >= 0");
}

class Driver {
 public:
  explicit Driver(const EvoConfig& cfg) : cfg_(cfg), rng_(fork_stream(cfg.seed, "evolve")) {
    check_config(cfg);
    st_.seed = cfg.seed;
  }

  Driver(const EvoConfig& cfg, const EvoState& resume)
      : cfg_(cfg), rng_(0), st_(resume) {
    check_config(cfg);
    if (static_cast<int>(st_.population.size()) > cfg.population) {
      throw ConfigError("evolution: checkpoint population exceeds configured size");
    }
    rng_.set_state(st_.rng_state);
  }

  EvoResult run() {
    if (st_.next_birth < cfg_.population) {
      pipeline(cfg_.population - st_.next_birth, /*seed_phase=*/true);
      maybe_checkpoint();
    }
    while (st_.cycles_done < cfg_.cycles && !stopped()) {
      long chunk = cfg_.cycles - st_.cycles_done;
      if (cfg_.checkpoint_every > 0) {
        const long to_boundary =
            cfg_.checkpoint_every - st_.cycles_done % cfg_.checkpoint_every;
        chunk = std::min(chunk, to_boundary);
      }
      pipeline(chunk, /*seed_phase=*/false);
      maybe_checkpoint();
    }
    EvoResult res;
    res.interrupted = stopped() && st_.cycles_done < cfg_.cycles;
    st_.rng_state = rng_.state();
    res.state = std::move(st_);
    return res;
  }

 private:
  bool stopped() const { return cfg_.stop != nullptr && cfg_.stop->load(); }

  void maybe_checkpoint() {
    if (cfg_.checkpoint_path.empty()) return;
    st_.rng_state = rng_.state();
    save_checkpoint(st_, cfg_.checkpoint_path);
  }

  Individual make_seed() {
    Individual ind;
    ind.parent = -1;
    ind.program = cfg_.bootstrap == Bootstrap::Dqn
                      ? make_bootstrap_program(cfg_.op_budget, rng_)
                      : sample_program(cfg_.op_budget, rng_);
    return ind;
  }

  Individual make_child() {
    if (st_.population.empty()) throw ContractError("evolution: tournament over empty population");
    const Individual* parent = nullptr;
    for (int t = 0; t < cfg_.tournament; ++t) {
      const Individual& c = st_.population[rng_.index(st_.population.size())];
      if (parent == nullptr || c.score > parent->score ||
          (c.score == parent->score && c.birth < parent->birth)) {
        parent = &c;
      }
    }
    Individual ind;
    if (rng_.bernoulli(cfg_.mutate_prob)) {
      ind.program = mutate_program(parent->program, rng_);
      ind.parent = parent->birth;
    } else {
      ind.program = sample_program(cfg_.op_budget, rng_);
      ind.parent = -1;
    }
    return ind;
  }

  // Controller-side triage: invalid programs score 0 without evaluation;
  // digests already in History reuse the cached score with zero evals.
  void stage(Individual& ind) {
    st_.log.proposals += 1;
    ind.hash = functional_hash(ind.program);
    const ValidationReport report = validate_program(ind.program);
    if (!report.is_valid || ind.hash == kInvalidDigest) {
      ind.check_failed = true;
      ind.scored = true;
      ind.score = 0.0;
      st_.log.check_fails += 1;
      return;
    }
    const auto it = st_.history.find(ind.hash);
    if (it != st_.history.end()) {
      ind.duplicate = true;
      ind.scored = true;
      ind.score = it->second.score;
      st_.log.duplicates += 1;
    }
  }

  void finish(Individual& ind, const CandidateScore& cs) {
    ind.scored = true;
    if (cs.fault) {
      ind.fault = true;
      ind.score = 0.0;
      st_.log.faults += 1;
      return;
    }
    ind.score = cs.score;
    ind.hurdle_failed = cs.hurdle_failed;
    ind.diverged = cs.diverged;
    ind.evals = cs.evals;
    st_.log.evals += cs.evals;
    if (cs.hurdle_failed) st_.log.hurdle_fails += 1;
  }

  void apply(Individual ind, bool seed_phase) {
    if (ind.hash != kInvalidDigest && st_.history.find(ind.hash) == st_.history.end()) {
      st_.history.emplace(ind.hash,
                          HistoryEntry{ind.score, ind.birth, serialize_program(ind.program)});
    }
    if (!st_.has_best || ind.score > st_.best.score) {
      st_.best = ind;
      st_.has_best = true;
    }
    st_.log.best_trace.push_back(st_.best.score);
    if (!seed_phase) st_.cycles_done += 1;

    if (cfg_.on_cycle) {
      CycleRecord rec;
      rec.birth = ind.birth;
      rec.score = ind.score;
      rec.hash = ind.hash;
      rec.duplicate = ind.duplicate;
      rec.check_failed = ind.check_failed;
      rec.hurdle_failed = ind.hurdle_failed;
      rec.fault = ind.fault;
      rec.evals = ind.evals;
      rec.best_score = st_.best.score;
      cfg_.on_cycle(rec);
    }

    st_.population.push_back(std::move(ind));
    if (static_cast<int>(st_.population.size()) > cfg_.population) {
      auto oldest = st_.population.begin();
      for (auto it = st_.population.begin(); it != st_.population.end(); ++it) {
        if (it->birth < oldest->birth) oldest = it;
      }
      st_.population.erase(oldest);
    }
  }

  CandidateScore evaluate(const LossProgram& prog, long birth) const {
    try {
      if (cfg_.eval_override) return cfg_.eval_override(prog, birth);
      CandidateScore out;
      const std::uint64_t cand = mix_seed(cfg_.seed, static_cast<std::uint64_t>(birth));
      TrainConfig hurdle = cfg_.hurdle_train;
      hurdle.seed = mix_seed(cand, fnv1a64("hurdle"));
      hurdle.on_update = nullptr;
      const EvalResult r = eval_algorithm(prog, cfg_.hurdle_env, hurdle);
      out.evals += 1;
      out.diverged = r.diverged;
      if (r.normalized_score < cfg_.hurdle_alpha) {
        out.hurdle_failed = true;
        out.score = cfg_.hurdle_fail_score_zero ? 0.0 : r.normalized_score;
        return out;
      }
      if (cfg_.suite.empty()) {
        out.score = r.normalized_score;
        return out;
      }
      TrainConfig train = cfg_.suite_train;
      train.seed = mix_seed(cand, fnv1a64("suite"));
      train.on_update = nullptr;
      const SuiteScore suite = score_on_suite(prog, cfg_.suite, cfg_.seeds_per_env, train);
      out.evals += static_cast<long>(cfg_.suite.size()) * cfg_.seeds_per_env;
      out.score = suite.total;
      out.diverged = out.diverged || suite.any_diverged;
      return out;
    } catch (...) {
      CandidateScore fail;
      fail.fault = true;
      return fail;
    }
  }

  // Issues up to `count` candidates and applies their results. Deterministic
  // mode issues candidate i only after i-W is applied and applies in birth
  // order; otherwise results apply in completion order. Always drains before
  // returning, so checkpoints land on quiescent state.
  void pipeline(long count, bool seed_phase) {
    const long begin = st_.next_birth;
    const long end = begin + count;
    const int window = std::max(1, cfg_.workers);

    WorkerPool* pool = pool_.get();
    if (cfg_.workers > 1 && pool == nullptr) {
      pool_ = std::make_unique<WorkerPool>(
          cfg_.workers, [this](const LossProgram& p, long b) { return evaluate(p, b); });
      pool = pool_.get();
    }

    long issued = begin;
    long applied = 0;
    long outstanding = 0;
    std::map<long, Individual> inflight;  // dispatched, result pending
    std::map<long, Individual> ready;     // decided, waiting to be applied

    // The window bounds issued-but-unapplied work in both modes; modes differ
    // only in apply order below.
    const auto may_issue = [&] {
      if (issued >= end || stopped()) return false;
      return issued - (begin + applied) < window;
    };
    const auto may_apply = [&] {
      if (ready.empty()) return false;
      return !cfg_.deterministic || ready.begin()->first == begin + applied;
    };

    for (;;) {
      if (may_issue()) {
        Individual ind = seed_phase ? make_seed() : make_child();
        ind.birth = issued;
        stage(ind);
        if (ind.scored) {
          ready.emplace(issued, std::move(ind));
        } else if (pool != nullptr) {
          pool->submit({issued, 0, ind.program});
          outstanding += 1;
          inflight.emplace(issued, std::move(ind));
        } else {
          CandidateScore cs = evaluate(ind.program, issued);
          if (cs.fault) {
            st_.log.retries += 1;
            cs = evaluate(ind.program, issued);
          }
          finish(ind, cs);
          ready.emplace(issued, std::move(ind));
        }
        issued += 1;
        continue;
      }
      if (may_apply()) {
        auto node = ready.extract(ready.begin());
        apply(std::move(node.mapped()), seed_phase);
        applied += 1;
        continue;
      }
      if (outstanding == 0) break;  // nothing in flight, nothing to do
      Done d = pool->wait_one();
      outstanding -= 1;
      if (d.score.fault && d.attempt == 0) {
        st_.log.retries += 1;
        pool->submit({d.birth, 1, inflight.at(d.birth).program});
        outstanding += 1;
        continue;
      }
      auto node = inflight.extract(d.birth);
      finish(node.mapped(), d.score);
      ready.insert(std::move(node));
    }
    st_.next_birth = issued;
  }

  const EvoConfig& cfg_;
  Rng rng_;
  EvoState st_;
  std::unique_ptr<WorkerPool> pool_;
};

constexpr std::uint32_t kCheckpointMagic = 0x45564C43;  // "EVLC"
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& is) {
  char buf[sizeof(T)];
  is.read(buf, sizeof(T));
  if (!is) throw ConfigError("checkpoint file is truncated or unreadable");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void put_str(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ULL << 30)) throw ConfigError("checkpoint string length is implausible");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw ConfigError("checkpoint file is truncated or unreadable");
  return s;
}

std::uint8_t pack_flags(const Individual& ind) {
  std::uint8_t f = 0;
  if (ind.scored) f |= 1;
  if (ind.duplicate) f |= 2;
  if (ind.check_failed) f |= 4;
  if (ind.hurdle_failed) f |= 8;
  if (ind.diverged) f |= 16;
  if (ind.fault) f |= 32;
  return f;
}

void unpack_flags(Individual& ind, std::uint8_t f) {
  ind.scored = f & 1;
  ind.duplicate = f & 2;
  ind.check_failed = f & 4;
  ind.hurdle_failed = f & 8;
  ind.diverged = f & 16;
  ind.fault = f & 32;
}

void put_individual(std::ostream& os, const Individual& ind) {
  put<std::int64_t>(os, ind.birth);
  put<std::int64_t>(os, ind.parent);
  put<double>(os, ind.score);
  put<std::uint64_t>(os, ind.hash);
  put<std::uint8_t>(os, pack_flags(ind));
  put<std::int64_t>(os, ind.evals);
  put_str(os, serialize_program(ind.program));
}

Individual get_individual(std::istream& is) {
  Individual ind;
  ind.birth = get<std::int64_t>(is);
  ind.parent = get<std::int64_t>(is);
  ind.score = get<double>(is);
  ind.hash = get<std::uint64_t>(is);
  unpack_flags(ind, get<std::uint8_t>(is));
  ind.evals = get<std::int64_t>(is);
  ind.program = parse_program(get_str(is));
  return ind;
}

std::string manifest_path(const std::string& path) {
  const std::string suffix = ".bin";
  if (path.size() > suffix.size() &&
      path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return path.substr(0, path.size() - suffix.size()) + ".manifest";
  }
  return path + ".manifest";
}

}  // namespace

void save_checkpoint(const EvoState& st, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write checkpoint: " + path);
  put<std::uint32_t>(os, kCheckpointMagic);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, st.seed);
  for (const std::uint64_t w : st.rng_state) put<std::uint64_t>(os, w);
  put<std::int64_t>(os, st.next_birth);
  put<std::int64_t>(os, st.cycles_done);
  put<std::int64_t>(os, st.log.proposals);
  put<std::int64_t>(os, st.log.duplicates);
  put<std::int64_t>(os, st.log.check_fails);
  put<std::int64_t>(os, st.log.hurdle_fails);
  put<std::int64_t>(os, st.log.faults);
  put<std::int64_t>(os, st.log.retries);
  put<std::int64_t>(os, st.log.evals);
  put<std::uint64_t>(os, st.log.best_trace.size());
  for (const double v : st.log.best_trace) put<double>(os, v);
  put<std::uint8_t>(os, st.has_best ? 1 : 0);
  if (st.has_best) put_individual(os, st.best);
  put<std::uint64_t>(os, st.population.size());
  for (const Individual& ind : st.population) put_individual(os, ind);
  put<std::uint64_t>(os, st.history.size());
  for (const auto& [digest, entry] : st.history) {
    put<std::uint64_t>(os, digest);
    put<double>(os, entry.score);
    put<std::int64_t>(os, entry.first_seen);
    put_str(os, entry.text);
  }
  os.flush();
  if (!os) throw ConfigError("checkpoint write failed: " + path);

  std::ofstream mf(manifest_path(path), std::ios::trunc);
  mf << "evolution checkpoint v" << kCheckpointVersion << "\n"
     << "seed " << st.seed << "\n"
     << "cycles_done " << st.cycles_done << "\n"
     << "next_birth " << st.next_birth << "\n"
     << "population " << st.population.size() << "\n"
     << "history " << st.history.size() << "\n"
     << "proposals " << st.log.proposals << " duplicates " << st.log.duplicates
     << " check_fails " << st.log.check_fails << " hurdle_fails " << st.log.hurdle_fails
     << " faults " << st.log.faults << " evals " << st.log.evals << "\n";
  if (st.has_best) {
    mf << "best_score " << st.best.score << "\n"
       << "best_birth " << st.best.birth << "\n"
       << "best_loss " << pretty_print(st.best.program) << "\n";
  } else {
    mf << "best_score none\n";
  }
}

EvoState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read checkpoint: " + path);
  if (get<std::uint32_t>(is) != kCheckpointMagic) {
    throw ConfigError("not a checkpoint file: " + path);
  }
  if (get<std::uint32_t>(is) != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version in " + path);
  }
  EvoState st;
  st.seed = get<std::uint64_t>(is);
  for (std::uint64_t& w : st.rng_state) w = get<std::uint64_t>(is);
  st.next_birth = get<std::int64_t>(is);
  st.cycles_done = get<std::int64_t>(is);
  st.log.proposals = get<std::int64_t>(is);
  st.log.duplicates = get<std::int64_t>(is);
  st.log.check_fails = get<std::int64_t>(is);
  st.log.hurdle_fails = get<std::int64_t>(is);
  st.log.faults = get<std::int64_t>(is);
  st.log.retries = get<std::int64_t>(is);
  st.log.evals = get<std::int64_t>(is);
  st.log.best_trace.resize(get<std::uint64_t>(is));
  for (double& v : st.log.best_trace) v = get<double>(is);
  st.has_best = get<std::uint8_t>(is) != 0;
  if (st.has_best) st.best = get_individual(is);
  const auto pop_n = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < pop_n; ++i) st.population.push_back(get_individual(is));
  const auto hist_n = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < hist_n; ++i) {
    const auto digest = get<std::uint64_t>(is);
    HistoryEntry e;
    e.score = get<double>(is);
    e.first_seen = get<std::int64_t>(is);
    e.text = get_str(is);
    st.history.emplace(digest, std::move(e));
  }
  return st;
}

EvoResult run_evolution(const EvoConfig& cfg) { return Driver(cfg).run(); }

EvoResult run_evolution(const EvoConfig& cfg, const EvoState& resume_from) {
  return Driver(cfg, resume_from).run();
}

}  // namespace evoloss
