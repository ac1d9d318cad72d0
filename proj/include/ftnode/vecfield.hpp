#pragma once

// Layered vector fields f(theta(t), x) = f_l o ... o f_1 with
//   f_i(y) = V_i act(W_i y + b_i) + a_i
// and a piecewise-constant parameter schedule theta(t) = theta_k on [alpha_k, beta_k).
//
// Parameters live in one flat vector. Flattening order: blocks in k-order,
// layers in i-order, tensors in (W, b, V, a) order, each row-major.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ftnode/error.hpp"
#include "ftnode/linalg.hpp"

namespace ftnode {

/// Anything the integrator can step: a state-space field with an analytic
/// state Jacobian and a reverse pass over (f, D_x f) cotangents.
///
/// vjp accumulates  d/dtheta and d/dx of  <ybar, f(t,x)> + <jbar, D_x f(t,x)>
/// into `grad` (num_params) and `xbar` (dim). `jbar` may be empty.
template <class F>
concept VectorField = requires(const F& f, double t, std::span<const double> x, std::span<double> out,
                               std::span<const double> cot) {
  { f.dim() } -> std::convertible_to<std::size_t>;
  { f.num_params() } -> std::convertible_to<std::size_t>;
  { f.t_end() } -> std::convertible_to<double>;
  f.eval(t, x, out);
  f.jacobian(t, x, out);
  f.vjp(t, x, cot, cot, out, out);
};

enum class Activation { tanh, sigmoid };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "sigmoid"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw InvalidInput("unknown activation '" + s + "'");
}

enum class TensorKind { W = 0, b = 1, V = 2, a = 3 };

inline char tensor_letter(TensorKind k) {
  constexpr char letters[] = {'W', 'b', 'V', 'a'};
  return letters[static_cast<int>(k)];
}

class ParamSchedule {
 public:
  // Matching tolerance for breakpoints; step times n*dt land within it.
  static constexpr double kTimeTol = 1e-9;

  ParamSchedule() : breaks_{0.0, 1.0} {}

  explicit ParamSchedule(std::vector<double> breakpoints) : breaks_(std::move(breakpoints)) {
    if (breaks_.size() < 2) throw InvalidInput("schedule needs at least one block");
    if (breaks_.front() != 0.0) throw InvalidInput("schedule must start at t = 0");
    for (std::size_t i = 1; i < breaks_.size(); ++i)
      if (!(breaks_[i] > breaks_[i - 1])) throw InvalidInput("schedule breakpoints must increase strictly");
  }

  static ParamSchedule uniform(std::size_t blocks, double t_end) {
    if (blocks == 0 || !(t_end > 0.0)) throw InvalidInput("uniform schedule needs K >= 1 and T > 0");
    std::vector<double> b(blocks + 1);
    for (std::size_t k = 0; k <= blocks; ++k) b[k] = t_end * static_cast<double>(k) / static_cast<double>(blocks);
    b.back() = t_end;
    return ParamSchedule(std::move(b));
  }

  std::size_t blocks() const noexcept { return breaks_.size() - 1; }
  double t_end() const noexcept { return breaks_.back(); }
  double block_start(std::size_t k) const { return breaks_.at(k); }
  double block_end(std::size_t k) const { return breaks_.at(k + 1); }
  const std::vector<double>& breakpoints() const noexcept { return breaks_; }

  /// Zero-based index k with alpha_k <= t < beta_k (half-open, right-continuous).
  std::size_t active_block(double t) const {
    if (!std::isfinite(t) || t < -kTimeTol || t >= t_end() - kTimeTol)
      throw OutOfDomain("time " + std::to_string(t) + " outside [0, T)");
    for (std::size_t k = 0; k + 1 < breaks_.size(); ++k)
      if (t < breaks_[k + 1] - kTimeTol) return k;
    return blocks() - 1;
  }

  friend bool operator==(const ParamSchedule&, const ParamSchedule&) = default;

 private:
  std::vector<double> breaks_;
};

struct LayerDims {
  std::size_t in = 0;
  std::size_t hid = 0;
  std::size_t out = 0;

  friend bool operator==(const LayerDims&, const LayerDims&) = default;
};

struct TensorInfo {
  std::size_t block = 0;
  std::size_t layer = 0;
  TensorKind kind = TensorKind::W;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;  // into the flat parameter vector

  std::size_t size() const noexcept { return rows * cols; }
};

namespace detail {

struct FieldScratch {
  std::vector<double> y, z, h, s, s2, zbar, hbar, ybar;
  std::vector<double> T, P, Q, Tbar, Pbar, Qbar;
  std::vector<double> gblock;
};

inline FieldScratch& field_scratch() {
  thread_local FieldScratch s;
  return s;
}

inline void grow(std::vector<double>& v, std::size_t n) {
  if (v.size() < n) v.resize(n);
}

}  // namespace detail

class LayeredVectorField {
 public:
  LayeredVectorField() = default;

  LayeredVectorField(std::size_t dim, std::vector<LayerDims> layers, ParamSchedule schedule,
                     Activation activation = Activation::tanh)
      : dim_(dim), layers_(std::move(layers)), schedule_(std::move(schedule)), activation_(activation) {
    if (dim_ == 0) throw InvalidInput("field dimension must be positive");
    if (layers_.empty()) throw InvalidInput("field needs at least one layer");
    if (layers_.front().in != dim_ || layers_.back().out != dim_)
      throw InvalidInput("first layer input and last layer output must equal the state dimension");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.in == 0 || l.hid == 0 || l.out == 0) throw InvalidInput("layer widths must be positive");
      if (i > 0 && layers_[i - 1].out != l.in) throw InvalidInput("layer dimensions do not chain");
    }
    build_layout();
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t blocks() const noexcept { return schedule_.blocks(); }
  std::size_t block_size() const noexcept { return block_size_; }
  std::size_t num_params() const noexcept { return params_.size(); }
  double t_end() const noexcept { return schedule_.t_end(); }
  Activation activation() const noexcept { return activation_; }
  const std::vector<LayerDims>& layer_dims() const noexcept { return layers_; }
  const ParamSchedule& schedule() const noexcept { return schedule_; }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }

  std::size_t tensor_index(std::size_t block, std::size_t layer, TensorKind kind) const {
    if (block >= blocks() || layer >= num_layers()) throw InvalidInput("tensor index out of range");
    return (block * num_layers() + layer) * 4 + static_cast<std::size_t>(kind);
  }

  std::span<double> tensor(std::size_t block, std::size_t layer, TensorKind kind) {
    const auto& t = tensors_[tensor_index(block, layer, kind)];
    return std::span<double>(params_).subspan(t.offset, t.size());
  }
  std::span<const double> tensor(std::size_t block, std::size_t layer, TensorKind kind) const {
    const auto& t = tensors_[tensor_index(block, layer, kind)];
    return std::span<const double>(params_).subspan(t.offset, t.size());
  }

  bool frozen(std::size_t tensor_idx) const { return frozen_.at(tensor_idx); }
  void set_frozen(std::size_t block, std::size_t layer, TensorKind kind, bool value) {
    frozen_[tensor_index(block, layer, kind)] = value;
    rebuild_mask();
  }
  /// Freeze/unfreeze a tensor in every block.
  void set_frozen_all_blocks(std::size_t layer, TensorKind kind, bool value) {
    for (std::size_t k = 0; k < blocks(); ++k) frozen_[tensor_index(k, layer, kind)] = value;
    rebuild_mask();
  }
  /// One byte per scalar parameter, 1 = trainable.
  const std::vector<unsigned char>& trainable_mask() const noexcept { return trainable_; }

  std::size_t active_block(double t) const { return schedule_.active_block(t); }

  void eval(double t, std::span<const double> x, std::span<double> out) const {
    eval_block(active_block(t), x, out);
  }
  void jacobian(double t, std::span<const double> x, std::span<double> jac) const {
    jacobian_block(active_block(t), x, jac);
  }
  void vjp(double t, std::span<const double> x, std::span<const double> ybar, std::span<const double> jbar,
           std::span<double> grad, std::span<double> xbar) const {
    vjp_block(active_block(t), x, ybar, jbar, grad, xbar);
  }

  void eval_block(std::size_t k, std::span<const double> x, std::span<double> out) const {
    check_state(x, out.size());
    auto& sc = detail::field_scratch();
    forward(k, x, sc, false);
    std::copy_n(sc.y.begin() + y_off_.back(), dim_, out.begin());
  }

  /// D_x f as a row-major dim x dim matrix.
  void jacobian_block(std::size_t k, std::span<const double> x, std::span<double> jac) const {
    check_state(x, dim_);
    if (jac.size() != dim_ * dim_) throw InvalidInput("jacobian buffer has wrong size");
    auto& sc = detail::field_scratch();
    forward(k, x, sc, true);
    std::copy_n(sc.T.begin() + t_off_.back(), dim_ * dim_, jac.begin());
  }

  void vjp_block(std::size_t k, std::span<const double> x, std::span<const double> ybar,
                 std::span<const double> jbar, std::span<double> grad, std::span<double> xbar) const {
    check_state(x, dim_);
    if (ybar.size() != dim_) throw InvalidInput("cotangent dimension mismatch");
    if (!jbar.empty() && jbar.size() != dim_ * dim_) throw InvalidInput("tangent cotangent has wrong size");
    if (grad.size() != num_params()) throw InvalidInput("gradient buffer has wrong size");
    if (xbar.size() != dim_) throw InvalidInput("state cotangent buffer has wrong size");
    auto& sc = detail::field_scratch();
    const bool with_tangent = !jbar.empty();
    forward(k, x, sc, with_tangent);
    backward(k, sc, ybar, jbar, grad, xbar);
  }

  Mat jacobian_mat(double t, std::span<const double> x) const {
    Mat j(dim_, dim_);
    jacobian(t, x, j.data());
    return j;
  }

  Vec eval_vec(double t, std::span<const double> x) const {
    Vec out(dim_);
    eval(t, x, out);
    return out;
  }

 private:
  void check_state(std::span<const double> x, std::size_t out_size) const {
    if (x.size() != dim_ || out_size != dim_) throw InvalidInput("state dimension mismatch");
  }

  void build_layout() {
    const std::size_t ell = layers_.size();
    std::size_t off = 0;
    tensors_.clear();
    for (std::size_t k = 0; k < schedule_.blocks(); ++k) {
      for (std::size_t i = 0; i < ell; ++i) {
        const auto& l = layers_[i];
        const std::size_t shapes[4][2] = {{l.hid, l.in}, {l.hid, 1}, {l.out, l.hid}, {l.out, 1}};
        for (int kind = 0; kind < 4; ++kind) {
          tensors_.push_back(TensorInfo{k, i, static_cast<TensorKind>(kind), shapes[kind][0], shapes[kind][1], off});
          off += shapes[kind][0] * shapes[kind][1];
        }
      }
    }
    block_size_ = off / schedule_.blocks();
    params_.assign(off, 0.0);
    frozen_.assign(tensors_.size(), false);
    rebuild_mask();

    y_off_.assign(ell + 1, 0);
    hid_off_.assign(ell + 1, 0);
    t_off_.assign(ell + 1, 0);
    pq_off_.assign(ell + 1, 0);
    y_off_[0] = 0;
    t_off_[0] = 0;
    for (std::size_t i = 0; i < ell; ++i) {
      y_off_[i + 1] = y_off_[i] + layers_[i].in;
      hid_off_[i + 1] = hid_off_[i] + layers_[i].hid;
      t_off_[i + 1] = t_off_[i] + layers_[i].in * dim_;
      pq_off_[i + 1] = pq_off_[i] + layers_[i].hid * dim_;
    }
    y_total_ = y_off_[ell] + dim_;
    t_total_ = t_off_[ell] + dim_ * dim_;
  }

  void rebuild_mask() {
    trainable_.assign(params_.size(), 1);
    for (std::size_t ti = 0; ti < tensors_.size(); ++ti)
      if (frozen_[ti]) std::fill_n(trainable_.begin() + tensors_[ti].offset, tensors_[ti].size(), 0);
  }

  // Offsets of layer i tensors inside block k.
  const double* W(std::size_t k, std::size_t i) const { return params_.data() + tensors_[(k * layers_.size() + i) * 4 + 0].offset; }
  const double* B(std::size_t k, std::size_t i) const { return params_.data() + tensors_[(k * layers_.size() + i) * 4 + 1].offset; }
  const double* V(std::size_t k, std::size_t i) const { return params_.data() + tensors_[(k * layers_.size() + i) * 4 + 2].offset; }
  const double* A(std::size_t k, std::size_t i) const { return params_.data() + tensors_[(k * layers_.size() + i) * 4 + 3].offset; }

  void activate(double z, double& h, double& s, double& s2) const {
    if (activation_ == Activation::tanh) {
      h = std::tanh(z);
      s = 1.0 - h * h;
      s2 = -2.0 * h * s;
    } else {
      h = 1.0 / (1.0 + std::exp(-z));
      s = h * (1.0 - h);
      s2 = s * (1.0 - 2.0 * h);
    }
  }

  void forward(std::size_t k, std::span<const double> x, detail::FieldScratch& sc, bool tangent) const {
    const std::size_t ell = layers_.size();
    const std::size_t d = dim_;
    detail::grow(sc.y, y_total_);
    detail::grow(sc.z, hid_off_[ell]);
    detail::grow(sc.h, hid_off_[ell]);
    detail::grow(sc.s, hid_off_[ell]);
    detail::grow(sc.s2, hid_off_[ell]);
    std::copy(x.begin(), x.end(), sc.y.begin());
    if (tangent) {
      detail::grow(sc.T, t_total_);
      detail::grow(sc.P, pq_off_[ell]);
      detail::grow(sc.Q, pq_off_[ell]);
      std::fill_n(sc.T.begin(), d * d, 0.0);
      for (std::size_t r = 0; r < d; ++r) sc.T[r * d + r] = 1.0;
    }
    for (std::size_t i = 0; i < ell; ++i) {
      const auto& l = layers_[i];
      const double* w = W(k, i);
      const double* b = B(k, i);
      const double* v = V(k, i);
      const double* a = A(k, i);
      const double* yin = sc.y.data() + y_off_[i];
      double* z = sc.z.data() + hid_off_[i];
      double* h = sc.h.data() + hid_off_[i];
      double* s = sc.s.data() + hid_off_[i];
      double* s2 = sc.s2.data() + hid_off_[i];
      for (std::size_t r = 0; r < l.hid; ++r) {
        double acc = b[r];
        for (std::size_t c = 0; c < l.in; ++c) acc += w[r * l.in + c] * yin[c];
        z[r] = acc;
        activate(acc, h[r], s[r], s2[r]);
      }
      double* yout = sc.y.data() + y_off_[i + 1];
      for (std::size_t r = 0; r < l.out; ++r) {
        double acc = a[r];
        for (std::size_t c = 0; c < l.hid; ++c) acc += v[r * l.hid + c] * h[c];
        yout[r] = acc;
      }
      if (tangent) {
        const double* tin = sc.T.data() + t_off_[i];
        double* p = sc.P.data() + pq_off_[i];
        double* q = sc.Q.data() + pq_off_[i];
        double* tout = sc.T.data() + t_off_[i + 1];
        for (std::size_t r = 0; r < l.hid; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t m = 0; m < l.in; ++m) acc += w[r * l.in + m] * tin[m * d + c];
            p[r * d + c] = acc;
            q[r * d + c] = s[r] * acc;
          }
        }
        for (std::size_t r = 0; r < l.out; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t m = 0; m < l.hid; ++m) acc += v[r * l.hid + m] * q[m * d + c];
            tout[r * d + c] = acc;
          }
        }
      }
    }
  }

  void backward(std::size_t k, detail::FieldScratch& sc, std::span<const double> ybar_in,
                std::span<const double> jbar, std::span<double> grad, std::span<double> xbar) const {
    const std::size_t ell = layers_.size();
    const std::size_t d = dim_;
    const bool tangent = !jbar.empty();
    detail::grow(sc.ybar, y_total_);
    detail::grow(sc.zbar, hid_off_[ell]);
    detail::grow(sc.hbar, hid_off_[ell]);
    detail::grow(sc.gblock, block_size_);
    std::fill_n(sc.gblock.begin(), block_size_, 0.0);
    std::copy(ybar_in.begin(), ybar_in.end(), sc.ybar.begin() + y_off_[ell]);
    if (tangent) {
      detail::grow(sc.Tbar, t_total_);
      detail::grow(sc.Pbar, pq_off_[ell]);
      detail::grow(sc.Qbar, pq_off_[ell]);
      std::copy(jbar.begin(), jbar.end(), sc.Tbar.begin() + t_off_[ell]);
    }
    const std::size_t block_base = tensors_[k * ell * 4].offset;

    for (std::size_t ii = ell; ii-- > 0;) {
      const auto& l = layers_[ii];
      const std::size_t ti = (k * ell + ii) * 4;
      double* gw = sc.gblock.data() + (tensors_[ti + 0].offset - block_base);
      double* gb = sc.gblock.data() + (tensors_[ti + 1].offset - block_base);
      double* gv = sc.gblock.data() + (tensors_[ti + 2].offset - block_base);
      double* ga = sc.gblock.data() + (tensors_[ti + 3].offset - block_base);
      const double* w = W(k, ii);
      const double* v = V(k, ii);
      const double* yin = sc.y.data() + y_off_[ii];
      const double* h = sc.h.data() + hid_off_[ii];
      const double* s = sc.s.data() + hid_off_[ii];
      const double* s2 = sc.s2.data() + hid_off_[ii];
      const double* yb = sc.ybar.data() + y_off_[ii + 1];
      double* zb = sc.zbar.data() + hid_off_[ii];
      double* hb = sc.hbar.data() + hid_off_[ii];
      double* yinb = sc.ybar.data() + y_off_[ii];

      // y_out = V h + a
      for (std::size_t r = 0; r < l.out; ++r) {
        ga[r] += yb[r];
        for (std::size_t c = 0; c < l.hid; ++c) gv[r * l.hid + c] += yb[r] * h[c];
      }
      for (std::size_t c = 0; c < l.hid; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < l.out; ++r) acc += v[r * l.hid + c] * yb[r];
        hb[c] = acc;
        zb[c] = acc * s[c];
      }

      if (tangent) {
        const double* tin = sc.T.data() + t_off_[ii];
        const double* p = sc.P.data() + pq_off_[ii];
        const double* q = sc.Q.data() + pq_off_[ii];
        const double* tb = sc.Tbar.data() + t_off_[ii + 1];
        double* pb = sc.Pbar.data() + pq_off_[ii];
        double* qb = sc.Qbar.data() + pq_off_[ii];
        double* tinb = sc.Tbar.data() + t_off_[ii];
        // T_out = V Q
        for (std::size_t r = 0; r < l.out; ++r)
          for (std::size_t m = 0; m < l.hid; ++m) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += tb[r * d + c] * q[m * d + c];
            gv[r * l.hid + m] += acc;
          }
        for (std::size_t m = 0; m < l.hid; ++m)
          for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t r = 0; r < l.out; ++r) acc += v[r * l.hid + m] * tb[r * d + c];
            qb[m * d + c] = acc;
          }
        // Q = diag(act'(z)) P
        for (std::size_t m = 0; m < l.hid; ++m) {
          double sb = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            sb += qb[m * d + c] * p[m * d + c];
            pb[m * d + c] = s[m] * qb[m * d + c];
          }
          zb[m] += sb * s2[m];
        }
        // P = W T_in
        for (std::size_t r = 0; r < l.hid; ++r)
          for (std::size_t m = 0; m < l.in; ++m) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += pb[r * d + c] * tin[m * d + c];
            gw[r * l.in + m] += acc;
          }
        if (ii > 0) {
          for (std::size_t m = 0; m < l.in; ++m)
            for (std::size_t c = 0; c < d; ++c) {
              double acc = 0.0;
              for (std::size_t r = 0; r < l.hid; ++r) acc += w[r * l.in + m] * pb[r * d + c];
              tinb[m * d + c] = acc;
            }
        }
      }

      // z = W y_in + b
      for (std::size_t r = 0; r < l.hid; ++r) {
        gb[r] += zb[r];
        for (std::size_t c = 0; c < l.in; ++c) gw[r * l.in + c] += zb[r] * yin[c];
      }
      for (std::size_t c = 0; c < l.in; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < l.hid; ++r) acc += w[r * l.in + c] * zb[r];
        yinb[c] = acc;
      }
    }

    const unsigned char* mask = trainable_.data() + block_base;
    double* g = grad.data() + block_base;
    for (std::size_t j = 0; j < block_size_; ++j)
      if (mask[j]) g[j] += sc.gblock[j];
    for (std::size_t c = 0; c < d; ++c) xbar[c] += sc.ybar[c];
  }

  std::size_t dim_ = 0;
  std::vector<LayerDims> layers_;
  ParamSchedule schedule_;
  Activation activation_ = Activation::tanh;
  std::vector<double> params_;
  std::vector<TensorInfo> tensors_;
  std::vector<bool> frozen_;
  std::vector<unsigned char> trainable_;
  std::size_t block_size_ = 0;

  std::vector<std::size_t> y_off_, hid_off_, t_off_, pq_off_;
  std::size_t y_total_ = 0;
  std::size_t t_total_ = 0;
};

/// ODE right-hand side x' = A_k x + c_k with a piecewise-constant schedule.
/// Used as a closed-form reference model; its exact Euler flow is known.
class LinearField {
 public:
  LinearField(std::size_t dim, ParamSchedule schedule) : dim_(dim), schedule_(std::move(schedule)) {
    if (dim_ == 0) throw InvalidInput("field dimension must be positive");
    params_.assign(schedule_.blocks() * block_size(), 0.0);
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t blocks() const noexcept { return schedule_.blocks(); }
  std::size_t block_size() const noexcept { return dim_ * dim_ + dim_; }
  std::size_t num_params() const noexcept { return params_.size(); }
  double t_end() const noexcept { return schedule_.t_end(); }
  const ParamSchedule& schedule() const noexcept { return schedule_; }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  std::span<double> matrix(std::size_t k) { return std::span<double>(params_).subspan(k * block_size(), dim_ * dim_); }
  std::span<double> shift(std::size_t k) {
    return std::span<double>(params_).subspan(k * block_size() + dim_ * dim_, dim_);
  }

  void set_matrix(std::size_t k, const Mat& a) {
    if (a.rows() != dim_ || a.cols() != dim_) throw InvalidInput("matrix shape mismatch");
    std::copy(a.data().begin(), a.data().end(), matrix(k).begin());
  }

  void eval(double t, std::span<const double> x, std::span<double> out) const {
    const std::size_t k = schedule_.active_block(t);
    const double* a = params_.data() + k * block_size();
    const double* c = a + dim_ * dim_;
    for (std::size_t r = 0; r < dim_; ++r) {
      double acc = c[r];
      for (std::size_t j = 0; j < dim_; ++j) acc += a[r * dim_ + j] * x[j];
      out[r] = acc;
    }
  }

  void jacobian(double t, std::span<const double>, std::span<double> jac) const {
    const std::size_t k = schedule_.active_block(t);
    std::copy_n(params_.begin() + k * block_size(), dim_ * dim_, jac.begin());
  }

  void vjp(double t, std::span<const double> x, std::span<const double> ybar, std::span<const double> jbar,
           std::span<double> grad, std::span<double> xbar) const {
    const std::size_t k = schedule_.active_block(t);
    const double* a = params_.data() + k * block_size();
    double* ga = grad.data() + k * block_size();
    double* gc = ga + dim_ * dim_;
    for (std::size_t r = 0; r < dim_; ++r) {
      gc[r] += ybar[r];
      for (std::size_t j = 0; j < dim_; ++j) ga[r * dim_ + j] += ybar[r] * x[j];
    }
    if (!jbar.empty())
      for (std::size_t j = 0; j < dim_ * dim_; ++j) ga[j] += jbar[j];
    for (std::size_t j = 0; j < dim_; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < dim_; ++r) acc += a[r * dim_ + j] * ybar[r];
      xbar[j] += acc;
    }
  }

 private:
  std::size_t dim_;
  ParamSchedule schedule_;
  std::vector<double> params_;
};

static_assert(VectorField<LayeredVectorField>);
static_assert(VectorField<LinearField>);

}  // namespace ftnode
