#pragma once

// Classifier = affine output layer L composed with the time-T flow map.
// Presets:
//   ex1  K=1, two field layers, hidden width 5, V_1 = Id (frozen), a_1 = 0 (frozen)
//   ex2  K=5 blocks on [2(k-1), 2k), one field layer of width 2, V_k = Id, a_k = 0 (frozen)

#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ftnode/error.hpp"
#include "ftnode/integrator.hpp"
#include "ftnode/linalg.hpp"
#include "ftnode/rng.hpp"
#include "ftnode/vecfield.hpp"

namespace ftnode {

inline constexpr std::size_t kLabelDim = 2;

struct OutputLayer {
  Mat weight{kLabelDim, 2};
  Vec bias = Vec(kLabelDim, 0.0);

  std::array<double, kLabelDim> apply(std::span<const double> x) const {
    std::array<double, kLabelDim> out{};
    for (std::size_t r = 0; r < kLabelDim; ++r) {
      double acc = bias[r];
      for (std::size_t c = 0; c < weight.cols(); ++c) acc += weight(r, c) * x[c];
      out[r] = acc;
    }
    return out;
  }

  std::size_t num_params() const noexcept { return weight.size() + bias.size(); }
};

template <VectorField F>
struct NodeClassifier {
  F field;
  OutputLayer output;
  FlowConfig flow;

  std::size_t num_params() const { return field.num_params() + output.num_params(); }
};

using Classifier = NodeClassifier<LayeredVectorField>;

/// Identity output layer (A = Id, c = 0) for a field of dimension 2.
inline OutputLayer identity_output() {
  OutputLayer out;
  out.weight = Mat::identity(2);
  return out;
}

enum class Arch { ex1, ex2 };

inline std::string to_string(Arch a) { return a == Arch::ex1 ? "ex1" : "ex2"; }

inline Arch parse_arch(const std::string& s) {
  if (s == "ex1") return Arch::ex1;
  if (s == "ex2") return Arch::ex2;
  throw InvalidInput("unknown architecture '" + s + "' (expected ex1 or ex2)");
}

namespace detail {

inline void set_fixed_value(LayeredVectorField& f, std::size_t tensor_idx) {
  const TensorInfo& t = f.tensors()[tensor_idx];
  auto span = f.params().subspan(t.offset, t.size());
  std::fill(span.begin(), span.end(), 0.0);
  if ((t.kind == TensorKind::V || t.kind == TensorKind::W) && t.rows == t.cols)
    for (std::size_t i = 0; i < t.rows; ++i) span[i * t.cols + i] = 1.0;
}

}  // namespace detail

/// Frozen W/V tensors hold the identity (square) or zero; frozen b/a hold zero.
inline void reset_frozen_tensors(LayeredVectorField& f) {
  for (std::size_t ti = 0; ti < f.tensors().size(); ++ti)
    if (f.frozen(ti)) detail::set_fixed_value(f, ti);
}

inline Classifier make_preset(Arch arch, FlowConfig flow = {0.1, 10.0}) {
  Classifier m;
  m.flow = flow;
  if (arch == Arch::ex1) {
    m.field = LayeredVectorField(2, {{2, 5, 5}, {5, 5, 2}}, ParamSchedule({0.0, flow.t_end}));
    m.field.set_frozen_all_blocks(0, TensorKind::V, true);
    m.field.set_frozen_all_blocks(0, TensorKind::a, true);
  } else {
    m.field = LayeredVectorField(2, {{2, 2, 2}}, ParamSchedule::uniform(5, flow.t_end));
    m.field.set_frozen_all_blocks(0, TensorKind::V, true);
    m.field.set_frozen_all_blocks(0, TensorKind::a, true);
  }
  reset_frozen_tensors(m.field);
  m.output = identity_output();
  return m;
}

/// He initialization of the field: trainable W/V entries ~ N(0, 2 / fan_in)
/// in flattening order, biases and shifts zero, frozen tensors at their fixed
/// values. The output layer starts at zero, so the initial prediction is 0.5
/// everywhere.
inline void he_init(Classifier& m, std::uint64_t seed) {
  Rng rng(seed);
  auto& f = m.field;
  for (std::size_t ti = 0; ti < f.tensors().size(); ++ti) {
    const TensorInfo& t = f.tensors()[ti];
    auto span = f.params().subspan(t.offset, t.size());
    if (f.frozen(ti)) {
      detail::set_fixed_value(f, ti);
      continue;
    }
    if (t.kind == TensorKind::W || t.kind == TensorKind::V) {
      const double sd = std::sqrt(2.0 / static_cast<double>(t.cols));
      for (double& v : span) v = sd * rng.normal();
    } else {
      std::fill(span.begin(), span.end(), 0.0);
    }
  }
  std::fill(m.output.weight.data().begin(), m.output.weight.data().end(), 0.0);
  std::fill(m.output.bias.begin(), m.output.bias.end(), 0.0);
}

// ---------------------------------------------------------------------------
// Checkpoint text format
//   ftle-node-ckpt v1 d=<d> K=<K> ell=<l> dims=<d0,h1,d1,...> act=<tanh|sigmoid> dt=<dt> T=<T> breaks=<b0,...,bK>
//   block=<k> layer=<i> tensor=<W|b|V|a> shape=<r>x<c> frozen=<0|1> v v v ...
// Output layer: block=L layer=1, tensor=W (weight) and tensor=b (bias).
// ---------------------------------------------------------------------------

namespace detail {

inline std::string join_numbers(const std::vector<double>& v, char sep) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? std::string(1, sep) : "") << v[i];
  return os.str();
}

inline std::map<std::string, std::string> parse_kv_tokens(std::istringstream& is, std::vector<std::string>* rest) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) {
      if (rest) rest->push_back(tok);
      continue;
    }
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

inline std::vector<double> split_numbers(const std::string& s, char sep) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(std::stod(item));
  return out;
}

inline const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw InvalidInput("checkpoint: missing '" + key + "'");
  return it->second;
}

}  // namespace detail

inline void write_checkpoint(const Classifier& m, std::ostream& os) {
  const auto& f = m.field;
  std::vector<double> dims{static_cast<double>(f.dim())};
  for (const auto& l : f.layer_dims()) {
    dims.push_back(static_cast<double>(l.hid));
    dims.push_back(static_cast<double>(l.out));
  }
  os << "ftle-node-ckpt v1 d=" << f.dim() << " K=" << f.blocks() << " ell=" << f.num_layers()
     << " dims=" << detail::join_numbers(dims, ',') << " act=" << to_string(f.activation())
     << " dt=" << detail::join_numbers({m.flow.dt}, ',') << " T=" << detail::join_numbers({m.flow.t_end}, ',')
     << " breaks=" << detail::join_numbers(f.schedule().breakpoints(), ',') << '\n';
  os.precision(17);
  for (std::size_t ti = 0; ti < f.tensors().size(); ++ti) {
    const TensorInfo& t = f.tensors()[ti];
    os << "block=" << t.block + 1 << " layer=" << t.layer + 1 << " tensor=" << tensor_letter(t.kind)
       << " shape=" << t.rows << 'x' << t.cols << " frozen=" << (f.frozen(ti) ? 1 : 0);
    for (double v : f.params().subspan(t.offset, t.size())) os << ' ' << v;
    os << '\n';
  }
  os << "block=L layer=1 tensor=W shape=" << m.output.weight.rows() << 'x' << m.output.weight.cols() << " frozen=0";
  for (double v : m.output.weight.data()) os << ' ' << v;
  os << "\nblock=L layer=1 tensor=b shape=" << m.output.bias.size() << "x1 frozen=0";
  for (double v : m.output.bias) os << ' ' << v;
  os << '\n';
}

inline void write_checkpoint(const Classifier& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot open '" + path + "' for writing");
  write_checkpoint(m, os);
}

inline Classifier read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InvalidInput("checkpoint: empty file");
  std::istringstream hs(line);
  std::vector<std::string> words;
  const auto head = detail::parse_kv_tokens(hs, &words);
  if (words.size() < 2 || words[0] != "ftle-node-ckpt" || words[1] != "v1")
    throw InvalidInput("checkpoint: bad magic line");

  Classifier m;
  try {
    const auto d = static_cast<std::size_t>(std::stoul(detail::require(head, "d")));
    const auto ell = static_cast<std::size_t>(std::stoul(detail::require(head, "ell")));
    const auto K = static_cast<std::size_t>(std::stoul(detail::require(head, "K")));
    const auto dims = detail::split_numbers(detail::require(head, "dims"), ',');
    if (dims.size() != 2 * ell + 1) throw InvalidInput("checkpoint: dims do not match ell");
    std::vector<LayerDims> layers;
    for (std::size_t i = 0; i < ell; ++i)
      layers.push_back({static_cast<std::size_t>(dims[2 * i]), static_cast<std::size_t>(dims[2 * i + 1]),
                        static_cast<std::size_t>(dims[2 * i + 2])});
    m.flow.dt = head.count("dt") ? std::stod(head.at("dt")) : 0.1;
    m.flow.t_end = head.count("T") ? std::stod(head.at("T")) : 10.0;
    std::vector<double> breaks = head.count("breaks") ? detail::split_numbers(head.at("breaks"), ',')
                                                      : ParamSchedule::uniform(K, m.flow.t_end).breakpoints();
    if (breaks.size() != K + 1) throw InvalidInput("checkpoint: breakpoints do not match K");
    const Activation act = head.count("act") ? parse_activation(head.at("act")) : Activation::tanh;
    m.field = LayeredVectorField(d, std::move(layers), ParamSchedule(std::move(breaks)), act);
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const InvalidInput*>(&e)) throw;
    throw InvalidInput(std::string("checkpoint: malformed header: ") + e.what());
  }

  std::size_t seen = 0;
  bool saw_w = false, saw_b = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> values;
    const auto kv = detail::parse_kv_tokens(ls, &values);
    const std::string& block = detail::require(kv, "block");
    const std::string& tensor = detail::require(kv, "tensor");
    std::vector<double> nums;
    try {
      for (const auto& v : values) nums.push_back(std::stod(v));
    } catch (const std::exception&) {
      throw InvalidInput("checkpoint: malformed value in line '" + line.substr(0, 40) + "'");
    }
    if (block == "L") {
      if (tensor == "W") {
        if (nums.size() != m.output.weight.size()) throw InvalidInput("checkpoint: output weight size");
        std::copy(nums.begin(), nums.end(), m.output.weight.data().begin());
        saw_w = true;
      } else if (tensor == "b") {
        if (nums.size() != m.output.bias.size()) throw InvalidInput("checkpoint: output bias size");
        m.output.bias = nums;
        saw_b = true;
      } else {
        throw InvalidInput("checkpoint: unknown output tensor '" + tensor + "'");
      }
      continue;
    }
    const std::size_t k = std::stoul(block) - 1;
    const std::size_t i = std::stoul(detail::require(kv, "layer")) - 1;
    TensorKind kind;
    if (tensor == "W") kind = TensorKind::W;
    else if (tensor == "b") kind = TensorKind::b;
    else if (tensor == "V") kind = TensorKind::V;
    else if (tensor == "a") kind = TensorKind::a;
    else throw InvalidInput("checkpoint: unknown tensor '" + tensor + "'");
    auto dst = m.field.tensor(k, i, kind);
    if (nums.size() != dst.size()) throw InvalidInput("checkpoint: tensor size mismatch in line '" + line.substr(0, 40) + "'");
    std::copy(nums.begin(), nums.end(), dst.begin());
    m.field.set_frozen(k, i, kind, detail::require(kv, "frozen") == "1");
    ++seen;
  }
  if (seen != m.field.tensors().size() || !saw_w || !saw_b) throw InvalidInput("checkpoint: missing tensors");
  return m;
}

inline Classifier read_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace ftnode
