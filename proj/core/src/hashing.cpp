#include "evoloss/hashing.hpp"

#include <cmath>
#include <cstdio>

#include "evoloss/interp.hpp"

namespace evoloss {
namespace {

constexpr int kProbeStateDim = 6;
constexpr int kProbeActions = 4;
constexpr int kProbeHidden = 8;
constexpr int kProbeCount = 10;
constexpr std::uint64_t kProbeStoreSeed = 0x5EEDF00D0001ULL;
constexpr std::uint64_t kProbeBindingSeed = 0x5EEDF00D0002ULL;
constexpr std::uint64_t kProbeNoiseSeed = 0x5EEDF00D0003ULL;

Bindings<double> probe_bindings() {
  Bindings<double> b;
  Rng rng = fork_stream(kProbeBindingSeed, "probes");
  b.s_t.resize(kProbeCount, kProbeStateDim);
  b.s_tp1.resize(kProbeCount, kProbeStateDim);
  b.r_t.resize(kProbeCount);
  b.gamma.resize(kProbeCount);
  b.a_t.resize(kProbeCount);
  for (int i = 0; i < kProbeCount; ++i) {
    for (int j = 0; j < kProbeStateDim; ++j) {
      b.s_t(i, j) = rng.normal();
      b.s_tp1(i, j) = rng.normal();
    }
    b.a_t[i] = static_cast<std::int32_t>(rng.uniform_int(kProbeActions));
    b.r_t(i) = rng.normal();
    b.gamma(i) = rng.uniform();
  }
  return b;
}

void format_value(std::string& out, double v) {
  char buf[40];
  if (std::isnan(v)) {
    out += "nan";  // sign of NaN is not portable
    return;
  }
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  out += buf;
}

}  // namespace

std::uint64_t functional_hash(const LossProgram& p) {
  const TypeInfo info = derive_types(p);
  if (!info.evaluable) return kInvalidDigest;

  ParameterStore<double> ps =
      ParameterStore<double>::init_for(p, kProbeStateDim, kProbeActions, kProbeHidden,
                                       kProbeStoreSeed);
  // Training starts with q_target synced to q, but the digest must separate
  // programs by their behavior as a function of both networks (DDQN and DQN
  // coincide whenever q_target == q). Probe with independent target weights.
  const int ti = ps.index_of("q_target");
  if (ti >= 0) {
    const NetShape shape = net_shape(ps.entry(ti).sig, kProbeStateDim, kProbeActions);
    Rng trng = fork_stream(kProbeStoreSeed, "probe-target");
    ps.entry(ti).mlp = Mlp<double>::init(shape.in, kProbeHidden, shape.out, trng);
  }
  static const Bindings<double> bindings = probe_bindings();
  const Tape<double> tape = eval_forward(p, bindings, ps, kProbeNoiseSeed);
  const Batch<double>& out = tape.values[p.output];

  std::string text;
  text.reserve(kProbeCount * 16);
  for (int i = 0; i < kProbeCount; ++i) {
    if (i) text += ";";
    switch (out.type) {
      case DType::Action:
        text += std::to_string(out.act[i]);
        break;
      case DType::Float:
        format_value(text, out.vec(i));
        break;
      default:
        for (int j = 0; j < out.mat.cols(); ++j) {
          if (j) text += ",";
          format_value(text, out.mat(i, j));
        }
        break;
    }
  }
  const std::uint64_t h = fnv1a64(text);
  return h == kInvalidDigest ? 1 : h;
}

}  // namespace evoloss
