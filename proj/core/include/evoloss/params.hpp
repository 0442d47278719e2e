#pragma once

#include <string>
#include <vector>

#include "evoloss/mlp.hpp"
#include "evoloss/program.hpp"

namespace evoloss {

// Network dimensions implied by a signature for a given environment shape.
struct NetShape {
  int in;
  int out;
};
NetShape net_shape(NetSig sig, int state_dim, int action_count);

// One MLP per parameter node in the program, keyed by net id. q_target is
// frozen and refreshed from q via sync_target().
template <class S>
class ParameterStore {
 public:
  struct Entry {
    std::string net_id;
    NetSig sig;
    bool trainable = true;
    Mlp<S> mlp;
    AdamState<S> adam;
  };

  ParameterStore() = default;

  static ParameterStore init_for(const LossProgram& p, int state_dim, int action_count,
                                 int hidden, std::uint64_t seed) {
    ParameterStore ps;
    ps.state_dim_ = state_dim;
    ps.action_count_ = action_count;
    ps.hidden_ = hidden;
    for (const Node& n : p.nodes) {
      if (n.kind != NodeKind::Param) continue;
      if (ps.index_of(n.net_id) >= 0) continue;
      const NetShape shape = net_shape(n.sig, state_dim, action_count);
      // Seed by net id so a net's init never depends on which other nets the
      // program mentions.
      Rng rng = fork_stream(seed, "init", fnv1a64(n.net_id));
      Entry e;
      e.net_id = n.net_id;
      e.sig = n.sig;
      e.trainable = n.trainable;
      e.mlp = Mlp<S>::init(shape.in, hidden, shape.out, rng);
      ps.entries_.push_back(std::move(e));
    }
    ps.sync_target();
    return ps;
  }

  int index_of(std::string_view net_id) const {
    for (int i = 0; i < static_cast<int>(entries_.size()); ++i) {
      if (entries_[i].net_id == net_id) return i;
    }
    return -1;
  }

  Entry& entry(int i) { return entries_[i]; }
  const Entry& entry(int i) const { return entries_[i]; }
  int size() const { return static_cast<int>(entries_.size()); }

  int state_dim() const { return state_dim_; }
  int action_count() const { return action_count_; }
  int hidden() const { return hidden_; }

  // Copies q weights into q_target. No-op when either net is absent.
  void sync_target() {
    const int q = index_of("q");
    const int t = index_of("q_target");
    if (q < 0 || t < 0) return;
    entries_[t].mlp = entries_[q].mlp;
  }

  // Shape/meta fields are serialized alongside the float32 weight arrays.
  int state_dim_ = 0, action_count_ = 0, hidden_ = 0;
  std::vector<Entry> entries_;
};

// Per-net weight gradients, indexed like the store entries. Entries stay
// unallocated for nets the loss never touched.
template <class S>
using GradMap = std::vector<MlpGrads<S>>;

template <class S>
GradMap<S> make_grad_map(const ParameterStore<S>& ps) {
  return GradMap<S>(ps.size());
}

// One Adam step on every trainable net with an allocated gradient.
template <class S>
void apply_grads(ParameterStore<S>& ps, const GradMap<S>& grads, const AdamHyper& hp) {
  for (int i = 0; i < ps.size(); ++i) {
    auto& e = ps.entry(i);
    if (!e.trainable || !grads[i].allocated) continue;
    adam_step(e.mlp, e.adam, grads[i], hp);
  }
}

// Binary container of float32 arrays plus a human-readable manifest at
// <path>.manifest. Adam state is not persisted; this is a weights snapshot,
// not a mid-run training resume point.
void save_params_file(const ParameterStore<float>& ps, const std::string& path);
void save_params_file(const ParameterStore<double>& ps, const std::string& path);
ParameterStore<float> load_params_file(const std::string& path);

}  // namespace evoloss
