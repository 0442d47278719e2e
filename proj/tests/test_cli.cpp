#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "evoloss/algorithms.hpp"
#include "evoloss/hashing.hpp"
#include "evoloss/textio.hpp"

using namespace evoloss;

namespace {

struct Cmd {
  int rc = -1;
  std::string out;
};

// Runs the installed binary with the given arguments, merging stderr.
Cmd run_cli(const std::string& args) {
  const std::string full = std::string(EVOLOSS_BIN) + " " + args + " 2>&1";
  FILE* pipe = ::popen(full.c_str(), "r");
  REQUIRE(pipe != nullptr);
  Cmd r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.out += buf;
  const int status = ::pclose(pipe);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::filesystem::path fresh_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() / ("evoloss_cli_" + tag);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path write_program(const std::string& tag, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / ("evoloss_cli_" + tag + ".loss");
  std::ofstream out(p);
  out << text;
  return p;
}

// Short deterministic training command; ~200 env steps on the small grid.
std::string tiny_train(const std::filesystem::path& out, int seed) {
  return "train --algo dqn --env grid:empty:5 --steps 200 --hidden 8 --seed " +
         std::to_string(seed) + " --out " + out.string();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("train writes the run directory and reports a score") {
  const auto dir = fresh_dir("train");
  const Cmd r = run_cli(tiny_train(dir, 3));
  CHECK(r.rc == 0);
  CHECK(r.out.find("normalized_score") != std::string::npos);

  for (const char* f : {"config.cfg", "metrics.jsonl", "params.bin"}) {
    CAPTURE(f);
    CHECK(std::filesystem::exists(dir / f));
  }
  const std::string cfg = slurp(dir / "config.cfg");
  CHECK(cfg.find("env=grid:empty:5") != std::string::npos);
  CHECK(cfg.find("seed=3") != std::string::npos);

  std::ifstream metrics(dir / "metrics.jsonl");
  std::string line;
  int episodes = 0;
  while (std::getline(metrics, line)) {
    const auto j = nlohmann::json::parse(line);  // throws on malformed output
    REQUIRE(j.contains("kind"));
    if (j["kind"] == "episode") {
      ++episodes;
      CHECK(j["norm"].get<double>() >= 0.0);
      CHECK(j["norm"].get<double>() <= 1.0);
    }
  }
  CHECK(episodes >= 2);
}

TEST_CASE("train is reproducible for a fixed seed") {
  const auto a = fresh_dir("rep_a");
  const auto b = fresh_dir("rep_b");
  const Cmd ra = run_cli(tiny_train(a, 11));
  const Cmd rb = run_cli(tiny_train(b, 11));
  REQUIRE(ra.rc == 0);
  REQUIRE(rb.rc == 0);
  CHECK(ra.out == rb.out);
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
}

TEST_CASE("validate accepts a well-formed program and rejects broken ones") {
  const std::string dqn = serialize_program(make_dqn());
  const auto good = write_program("good", dqn);
  const Cmd ok = run_cli("validate " + good.string());
  CHECK(ok.rc == 0);
  CHECK(ok.out.find("valid") != std::string::npos);

  const auto garbage = write_program("garbage", "this is not a program\n");
  const Cmd bad = run_cli("validate " + garbage.string());
  CHECK(bad.rc == 2);
  CHECK(bad.out.find("parse error") != std::string::npos);

  // Structurally parseable but invalid: a one-parent add.
  const std::string body = dqn.substr(0, dqn.rfind("output"));
  const auto arity = write_program("arity", body + "n99 = add(r_t)\noutput = n99\n");
  const Cmd inv = run_cli("validate " + arity.string());
  CHECK(inv.rc == 2);
  CHECK(inv.out.find("ArityError") != std::string::npos);

  const Cmd gone = run_cli("validate /nonexistent/prog.loss");
  CHECK(gone.rc == 2);
}

TEST_CASE("hash prints the library digest and is stable") {
  const auto file = write_program("hash", serialize_program(make_dqn()));
  const Cmd first = run_cli("hash " + file.string());
  const Cmd second = run_cli("hash " + file.string());
  REQUIRE(first.rc == 0);
  CHECK(first.out == second.out);

  char expect[32];
  std::snprintf(expect, sizeof expect, "0x%016llx",
                static_cast<unsigned long long>(functional_hash(make_dqn())));
  CHECK(first.out == std::string(expect) + "\n");
}

TEST_CASE("evolve runs, checkpoints, and resumes") {
  const auto dir = fresh_dir("evo");
  const std::string base =
      "evolve --pop 4 --tourney 2 --envs grid:empty:5 --hurdle-env grid:empty:5 "
      "--hurdle-steps 60 --steps 60 --hidden 8 --seed 7 ";
  const Cmd r = run_cli(base + "--cycles 3 --out " + dir.string());
  CHECK(r.rc == 0);
  CHECK(r.out.find("best_score") != std::string::npos);
  CHECK(r.out.find("cycles_done 3") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "checkpoint.bin"));
  CHECK(std::filesystem::exists(dir / "metrics.jsonl"));

  // The exported best program must load and validate on its own.
  const LossProgram best = parse_program(slurp(dir / "best.loss"));
  CHECK(validate_program(best).is_valid);

  const auto dir2 = fresh_dir("evo_resume");
  const Cmd more = run_cli(base + "--cycles 6 --resume " + (dir / "checkpoint.bin").string() +
                           " --out " + dir2.string());
  CHECK(more.rc == 0);
  CHECK(more.out.find("cycles_done 6") != std::string::npos);
}

TEST_CASE("analyze reads a finished run directory") {
  const auto dir = fresh_dir("analyze");
  REQUIRE(run_cli(tiny_train(dir, 5)).rc == 0);

  const Cmd oracle = run_cli("analyze --run " + dir.string() + " --kind oracle");
  CHECK(oracle.rc == 0);
  CHECK(oracle.out.find("states 32") != std::string::npos);
  CHECK(oracle.out.find("q_star") != std::string::npos);

  const Cmd cases = run_cli("analyze --run " + dir.string() + " --kind cases");
  CHECK(cases.rc == 0);
  CHECK(cases.out.find("case_fractions") != std::string::npos);
}

TEST_CASE("bad invocations exit with code 2") {
  CHECK(run_cli("train --frobnicate").rc == 2);
  CHECK(run_cli("train --algo dqn --env nonesuch --episodes 1 --out /tmp/evoloss_cli_nowhere").rc == 2);
  const auto cfg = write_program("cfg", "nonsense=1\n");
  CHECK(run_cli("train --config " + cfg.string() +
                " --algo dqn --env cartpole --episodes 1 --out /tmp/evoloss_cli_nowhere").rc == 2);
}

}  // TEST_SUITE
