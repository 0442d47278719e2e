#include <cmath>

#include "evoloss/env.hpp"
#include "evoloss/env_grid.hpp"
#include "evoloss/rng.hpp"

namespace evoloss {
namespace {

constexpr double kPi = 3.14159265358979323846;

class ClassicEnv : public Env {
 public:
  const EnvSpec& spec() const override { return spec_; }

  Eigen::VectorXd reset(std::uint64_t seed) override {
    rng_ = fork_stream(seed, "env");
    return reset();
  }

  Eigen::VectorXd reset() override {
    steps_ = 0;
    done_ = false;
    reset_state();
    return observe();
  }

  StepResult step(int action) override {
    if (done_) throw ContractError(spec_.name + ": step after episode end");
    if (action < 0 || action >= spec_.action_count) {
      throw ContractError(spec_.name + ": action out of range");
    }
    StepResult r = advance(action);
    ++steps_;
    if (steps_ >= spec_.max_steps) r.done = true;
    done_ = r.done;
    return r;
  }

 protected:
  virtual void reset_state() = 0;
  virtual Eigen::VectorXd observe() const = 0;
  virtual StepResult advance(int action) = 0;

  EnvSpec spec_;
  Rng rng_{0};
  int steps_ = 0;
  bool done_ = false;
};

class CartPoleEnv final : public ClassicEnv {
 public:
  CartPoleEnv() {
    spec_.name = "cartpole";
    spec_.obs_dim = 4;
    spec_.action_count = 2;
    spec_.max_steps = 200;
    spec_.r_min = 0.0;
    spec_.r_max = 200.0;
    spec_.eps_decay_steps = 1000;
    spec_.default_episodes = 400;
  }

 private:
  void reset_state() override {
    for (double* v : {&x_, &xdot_, &theta_, &thetadot_}) *v = rng_.uniform(-0.05, 0.05);
  }

  Eigen::VectorXd observe() const override {
    Eigen::VectorXd o(4);
    o << x_, xdot_, theta_, thetadot_;
    return o;
  }

  StepResult advance(int action) override {
    constexpr double gravity = 9.8;
    constexpr double mass_cart = 1.0;
    constexpr double mass_pole = 0.1;
    constexpr double total_mass = mass_cart + mass_pole;
    constexpr double length = 0.5;  // half pole length
    constexpr double polemass_length = mass_pole * length;
    constexpr double force_mag = 10.0;
    constexpr double dt = 0.02;
    constexpr double theta_limit = 12.0 * 2.0 * kPi / 360.0;
    constexpr double x_limit = 2.4;

    const double force = action == 1 ? force_mag : -force_mag;
    const double cos_t = std::cos(theta_);
    const double sin_t = std::sin(theta_);
    const double temp =
        (force + polemass_length * thetadot_ * thetadot_ * sin_t) / total_mass;
    const double theta_acc =
        (gravity * sin_t - cos_t * temp) /
        (length * (4.0 / 3.0 - mass_pole * cos_t * cos_t / total_mass));
    const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

    // Explicit Euler with the pre-step derivatives.
    x_ += dt * xdot_;
    xdot_ += dt * x_acc;
    theta_ += dt * thetadot_;
    thetadot_ += dt * theta_acc;

    StepResult r;
    r.obs = observe();
    r.reward = 1.0;
    r.done = std::abs(x_) > x_limit || std::abs(theta_) > theta_limit;
    return r;
  }

  double x_ = 0, xdot_ = 0, theta_ = 0, thetadot_ = 0;
};

class MountainCarEnv final : public ClassicEnv {
 public:
  MountainCarEnv() {
    spec_.name = "mountaincar";
    spec_.obs_dim = 2;
    spec_.action_count = 3;
    spec_.max_steps = 200;
    spec_.r_min = -200.0;
    spec_.r_max = -110.0;
    spec_.eps_decay_steps = 1000;
    spec_.default_episodes = 400;
  }

 private:
  void reset_state() override {
    pos_ = rng_.uniform(-0.6, -0.4);
    vel_ = 0.0;
  }

  Eigen::VectorXd observe() const override {
    Eigen::VectorXd o(2);
    o << pos_, vel_;
    return o;
  }

  StepResult advance(int action) override {
    constexpr double force = 0.001;
    constexpr double gravity = 0.0025;
    vel_ += (action - 1) * force - std::cos(3.0 * pos_) * gravity;
    vel_ = std::clamp(vel_, -0.07, 0.07);
    pos_ += vel_;
    pos_ = std::clamp(pos_, -1.2, 0.6);
    if (pos_ <= -1.2 && vel_ < 0.0) vel_ = 0.0;

    StepResult r;
    r.obs = observe();
    r.reward = -1.0;
    r.done = pos_ >= 0.5;
    return r;
  }

  double pos_ = 0, vel_ = 0;
};

class AcrobotEnv final : public ClassicEnv {
 public:
  AcrobotEnv() {
    spec_.name = "acrobot";
    spec_.obs_dim = 6;
    spec_.action_count = 3;
    spec_.max_steps = 500;
    spec_.r_min = -500.0;
    spec_.r_max = -80.0;
    spec_.eps_decay_steps = 1000;
    spec_.default_episodes = 400;
  }

 private:
  void reset_state() override {
    for (double* v : {&t1_, &t2_, &d1_, &d2_}) *v = rng_.uniform(-0.1, 0.1);
  }

  Eigen::VectorXd observe() const override {
    Eigen::VectorXd o(6);
    o << std::cos(t1_), std::sin(t1_), std::cos(t2_), std::sin(t2_), d1_, d2_;
    return o;
  }

  StepResult advance(int action) override {
    constexpr double m1 = 1.0, m2 = 1.0;
    constexpr double l1 = 1.0;
    constexpr double lc1 = 0.5, lc2 = 0.5;
    constexpr double i1 = 1.0, i2 = 1.0;
    constexpr double g = 9.8;
    const double torque = action - 1.0;

    // Four explicit Euler substeps of 0.05s per environment step.
    for (int sub = 0; sub < 4; ++sub) {
      const double d1 = m1 * lc1 * lc1 +
                        m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * std::cos(t2_)) + i1 + i2;
      const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(t2_)) + i2;
      const double phi2 = m2 * lc2 * g * std::cos(t1_ + t2_ - kPi / 2.0);
      const double phi1 = -m2 * l1 * lc2 * d2_ * d2_ * std::sin(t2_) -
                          2.0 * m2 * l1 * lc2 * d2_ * d1_ * std::sin(t2_) +
                          (m1 * lc1 + m2 * l1) * g * std::cos(t1_ - kPi / 2.0) + phi2;
      const double acc2 =
          (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * d1_ * d1_ * std::sin(t2_) - phi2) /
          (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
      const double acc1 = -(d2 * acc2 + phi1) / d1;

      t1_ += 0.05 * d1_;
      t2_ += 0.05 * d2_;
      d1_ += 0.05 * acc1;
      d2_ += 0.05 * acc2;
    }
    t1_ = wrap_angle(t1_);
    t2_ = wrap_angle(t2_);
    d1_ = std::clamp(d1_, -4.0 * kPi, 4.0 * kPi);
    d2_ = std::clamp(d2_, -9.0 * kPi, 9.0 * kPi);

    StepResult r;
    r.obs = observe();
    r.reward = -1.0;
    r.done = -std::cos(t1_) - std::cos(t1_ + t2_) > 1.0;
    return r;
  }

  static double wrap_angle(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
  }

  double t1_ = 0, t2_ = 0, d1_ = 0, d2_ = 0;
};

}  // namespace

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "cartpole") return std::make_unique<CartPoleEnv>();
  if (name == "mountaincar") return std::make_unique<MountainCarEnv>();
  if (name == "acrobot") return std::make_unique<AcrobotEnv>();
  if (name.rfind("grid:", 0) == 0) return make_grid_env(name);
  if (name == "lunarlander" || name.rfind("atari", 0) == 0) {
    throw ConfigError("environment '" + name +
                      "' is not included in this desk-scale build; see builtin_env_names()");
  }
  throw ConfigError("unknown environment '" + name + "'");
}

std::vector<std::string> builtin_env_names() {
  return {"cartpole",
          "mountaincar",
          "acrobot",
          "grid:empty:5",
          "grid:emptyrandom:5",
          "grid:doorkey:5",
          "grid:dynobs:6",
          "grid:lavagap:5",
          "grid:simplecrossing:9:1",
          "grid:keycorridor:3:1",
          "grid:multiroom:2:4",
          "grid:fourrooms",
          "grid:unlock"};
}

}  // namespace evoloss
