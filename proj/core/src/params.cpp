#include "evoloss/params.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "evoloss/errors.hpp"

namespace evoloss {

NetShape net_shape(NetSig sig, int state_dim, int action_count) {
  switch (sig) {
    case NetSig::S2List: return {state_dim, action_count};
    case NetSig::S2R: return {state_dim, 1};
    case NetSig::S2V: return {state_dim, kVectorLen};
    case NetSig::V2V: return {kVectorLen, kVectorLen};
  }
  return {0, 0};
}

namespace {

constexpr std::uint32_t kMagic = 0x45564C50;  // "EVLP"
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void put_f32s(std::ofstream& out, const std::vector<float>& v) {
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> get_f32s(std::ifstream& in) {
  std::vector<float> v(get_u32(in));
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
  return v;
}

template <class S>
std::vector<float> flatten(const ParameterStore<S>& ps, int i) {
  const Mlp<S>& m = ps.entry(i).mlp;
  std::vector<float> flat;
  auto add_mat = [&flat](const auto& w) {
    for (int c = 0; c < w.cols(); ++c) {
      for (int r = 0; r < w.rows(); ++r) flat.push_back(static_cast<float>(w(r, c)));
    }
  };
  add_mat(m.w1);
  add_mat(m.b1);
  add_mat(m.w2);
  add_mat(m.b2);
  add_mat(m.w3);
  add_mat(m.b3);
  return flat;
}

template <class S>
void save_impl(const ParameterStore<S>& ps, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write params file: " + path);
  put_u32(out, kMagic);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ps.state_dim()));
  put_u32(out, static_cast<std::uint32_t>(ps.action_count()));
  put_u32(out, static_cast<std::uint32_t>(ps.hidden()));
  put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (int i = 0; i < ps.size(); ++i) {
    const auto& e = ps.entry(i);
    put_u32(out, static_cast<std::uint32_t>(e.net_id.size()));
    out.write(e.net_id.data(), static_cast<std::streamsize>(e.net_id.size()));
    put_u32(out, static_cast<std::uint32_t>(e.sig));
    put_u32(out, e.trainable ? 1 : 0);
    put_f32s(out, flatten(ps, i));
  }

  std::ofstream man(path + ".manifest");
  if (!man) throw ConfigError("cannot write manifest: " + path + ".manifest");
  man << "format evoloss-params v" << kVersion << "\n";
  man << "state_dim " << ps.state_dim() << "\n";
  man << "action_count " << ps.action_count() << "\n";
  man << "hidden " << ps.hidden() << "\n";
  for (int i = 0; i < ps.size(); ++i) {
    const auto& e = ps.entry(i);
    const NetShape shape = net_shape(e.sig, ps.state_dim(), ps.action_count());
    man << "net " << e.net_id << " sig=" << net_sig_name(e.sig)
        << " trainable=" << (e.trainable ? 1 : 0) << " in=" << shape.in
        << " hidden=" << ps.hidden() << " out=" << shape.out << "\n";
  }
}

}  // namespace

void save_params_file(const ParameterStore<float>& ps, const std::string& path) {
  save_impl(ps, path);
}
void save_params_file(const ParameterStore<double>& ps, const std::string& path) {
  save_impl(ps, path);
}

ParameterStore<float> load_params_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open params file: " + path);
  if (get_u32(in) != kMagic) throw ConfigError("not a params file: " + path);
  if (get_u32(in) != kVersion) throw ConfigError("unsupported params version: " + path);
  ParameterStore<float> ps;
  ps.state_dim_ = static_cast<int>(get_u32(in));
  ps.action_count_ = static_cast<int>(get_u32(in));
  ps.hidden_ = static_cast<int>(get_u32(in));
  const int count = static_cast<int>(get_u32(in));
  for (int i = 0; i < count; ++i) {
    typename ParameterStore<float>::Entry e;
    std::string id(get_u32(in), '\0');
    in.read(id.data(), static_cast<std::streamsize>(id.size()));
    e.net_id = id;
    e.sig = static_cast<NetSig>(get_u32(in));
    e.trainable = get_u32(in) != 0;
    const NetShape shape = net_shape(e.sig, ps.state_dim_, ps.action_count_);
    const std::vector<float> flat = get_f32s(in);
    auto& m = e.mlp;
    m.w1.resize(shape.in, ps.hidden_);
    m.b1.resize(ps.hidden_);
    m.w2.resize(ps.hidden_, ps.hidden_);
    m.b2.resize(ps.hidden_);
    m.w3.resize(ps.hidden_, shape.out);
    m.b3.resize(shape.out);
    const std::size_t want = static_cast<std::size_t>(m.w1.size() + m.b1.size() +
                                                      m.w2.size() + m.b2.size() +
                                                      m.w3.size() + m.b3.size());
    if (flat.size() != want) throw ConfigError("corrupt params file: " + path);
    std::size_t k = 0;
    auto read_mat = [&flat, &k](auto& w) {
      for (int c = 0; c < w.cols(); ++c) {
        for (int r = 0; r < w.rows(); ++r) w(r, c) = flat[k++];
      }
    };
    read_mat(m.w1);
    read_mat(m.b1);
    read_mat(m.w2);
    read_mat(m.b2);
    read_mat(m.w3);
    read_mat(m.b3);
    ps.entries_.push_back(std::move(e));
  }
  if (!in) throw ConfigError("corrupt params file: " + path);
  return ps;
}

}  // namespace evoloss
