#pragma once

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hosnet/data.hpp"
#include "hosnet/tensor.hpp"

namespace hosnet {

struct Parameter {
  std::string name;
  Tensor value;                   // requires_grad unless a buffer
  std::vector<double> momentum;  // same length as value
  bool buffer = false;            // persisted but never updated by the optimizer
};

// Ordered, uniquely named learnable tensors of one model.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> init) {
    for (auto& p : params_)
      if (p.name == name) throw ContractError("duplicate parameter name `" + name + "`");
    Tensor t(std::move(shape), std::move(init), true);
    params_.push_back({name, t, std::vector<double>(t.size(), 0.0)});
    return t;
  }

  // Non-learnable persistent state, e.g. running statistics.
  Tensor add_buffer(const std::string& name, Shape shape, double value) {
    const auto n = shape_size(shape);
    Tensor t = add(name, std::move(shape), std::vector<double>(n, value));
    t.set_requires_grad(false);
    params_.back().buffer = true;
    return t;
  }

  Tensor add_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = dist(rng);
    return add(name, std::move(shape), std::move(v));
  }

  Tensor add_constant(const std::string& name, Shape shape, double value) {
    const auto n = shape_size(shape);
    return add(name, std::move(shape), std::vector<double>(n, value));
  }

  const Parameter* find(const std::string& name) const {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  Tensor get(const std::string& name) const {
    auto* p = find(name);
    if (!p) throw ContractError("no parameter named `" + name + "`");
    return p->value;
  }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::vector<std::string> names() const {
    std::vector<std::string> n;
    for (auto& p : params_) n.push_back(p.name);
    return n;
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

 private:
  std::vector<Parameter> params_;
};

// ---- checkpoint files ------------------------------------------------------
//
//   hosnet-checkpoint 1
//   epoch <e>
//   config <byte count>
//   <config text>
//   rng <byte count>
//   <rng state text>
//   params <count>
// then, per parameter:
//   <name>\n<rank>\n<extent>\n... (one line per extent)
//   <product(extents) little-endian float64 values>
// followed by the matching momentum buffer in the same encoding.

struct CheckpointMeta {
  int epoch = 0;
  std::string config;
  std::string rng_state;
};

inline void save_checkpoint(const std::string& path, const ParameterStore& store,
                            const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path);
  os << "hosnet-checkpoint 1\nepoch " << meta.epoch << "\nconfig " << meta.config.size() << '\n'
     << meta.config << "\nrng " << meta.rng_state.size() << '\n'
     << meta.rng_state << "\nparams " << store.all().size() << '\n';
  for (const auto& p : store.all()) {
    os << p.name << '\n' << p.value.rank() << '\n';
    for (auto e : p.value.shape()) os << e << '\n';
    for (double v : p.value.data()) detail::write_le_f64(os, v);
    for (double v : p.momentum) detail::write_le_f64(os, v);
  }
}

namespace detail {
inline std::string read_blob(std::istream& is, const std::string& key) {
  const auto n = std::stoull(expect_line(is, key));
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw Error("truncated " + key);
  std::string nl;
  std::getline(is, nl);
  return s;
}
}  // namespace detail

// Header fields only; parameters are left unread.
inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint " + path);
  detail::expect_line(is, "hosnet-checkpoint");
  CheckpointMeta meta;
  meta.epoch = std::stoi(detail::expect_line(is, "epoch"));
  meta.config = detail::read_blob(is, "config");
  meta.rng_state = detail::read_blob(is, "rng");
  return meta;
}

// Loads values into an existing store; names, order, and shapes must match.
inline CheckpointMeta load_checkpoint(const std::string& path, ParameterStore& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint " + path);
  detail::expect_line(is, "hosnet-checkpoint");
  CheckpointMeta meta;
  meta.epoch = std::stoi(detail::expect_line(is, "epoch"));
  meta.config = detail::read_blob(is, "config");
  meta.rng_state = detail::read_blob(is, "rng");
  const auto count = std::stoull(detail::expect_line(is, "params"));
  if (count != store.all().size())
    throw ContractError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                        std::to_string(store.all().size()));
  for (auto& p : store.all()) {
    std::string name;
    std::getline(is, name);
    if (name != p.name) throw ContractError("checkpoint parameter `" + name + "` where `" + p.name + "` expected");
    std::string line;
    std::getline(is, line);
    const auto rank = std::stoull(line);
    Shape shape(rank);
    for (auto& e : shape) {
      std::getline(is, line);
      e = std::stoull(line);
    }
    if (shape != p.value.shape())
      throw ContractError("checkpoint shape mismatch for `" + name + "`");
    for (auto& v : p.value.mutable_data()) v = detail::read_le_f64(is);
    for (auto& v : p.momentum) v = detail::read_le_f64(is);
  }
  return meta;
}

inline std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw Error("malformed rng state");
}

}  // namespace hosnet
